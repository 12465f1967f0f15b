#include "ufcn/model.hpp"

#include <cmath>
#include <memory>

namespace ufcn {

std::string to_string(BamInput input) {
  return input == BamInput::Attention ? "attention" : "decoder";
}

BamInput bam_input_from_string(const std::string& s) {
  if (s == "decoder") return BamInput::Decoder;
  if (s == "attention") return BamInput::Attention;
  throw ConfigError("unknown bam_input '" + s + "' (expected decoder or attention)");
}

void ModelConfig::validate() const {
  if (num_layers < 2) throw ConfigError("num_layers must be >= 2");
  if (static_cast<int>(channel_widths.size()) != num_layers) {
    throw ConfigError("channel_widths must have num_layers entries");
  }
  for (int k = 0; k < num_layers; ++k) {
    if (channel_widths[k] <= 0) throw ConfigError("channel widths must be positive");
    if (k > 0 && channel_widths[k] <= channel_widths[k - 1]) {
      throw ConfigError("channel widths must strictly increase down the encoder");
    }
  }
  const int stride = 1 << (num_layers - 1);
  if (input_height <= 0 || input_width <= 0 || input_height % stride != 0 ||
      input_width % stride != 0) {
    throw ConfigError("input size " + std::to_string(input_height) + "x" +
                      std::to_string(input_width) + " must be divisible by 2^(L-1) = " +
                      std::to_string(stride));
  }
  Activation act{activation, 1.0, tilu_floor};
  act.validate();
  if (!(asg_threshold > 0.0 && asg_threshold < 1.0)) throw ConfigError("asg_threshold must lie in (0,1)");
  if (!(asg_floor > 0.0)) throw ConfigError("asg_floor must be > 0");
  if (!(bam_threshold > 0.0 && bam_threshold < 1.0)) throw ConfigError("bam_threshold must lie in (0,1)");
  if (!(bam_pool_sharpness > 0.0)) throw ConfigError("bam_pool_sharpness must be > 0");
  if (bam_kernel < 1 || bam_kernel % 2 == 0) throw ConfigError("bam_kernel must be a positive odd integer");
}

template <typename T>
struct UfcnModel<T>::Layout {
  struct EncoderLevel {
    ConvLayer<T> conv_a, conv_b;
    ActSite<T> act_a, act_b;
  };
  struct DecoderLevel {
    UpConvLayer<T> up;
    AsgLayer<T> asg;
    ConvLayer<T> conv_a, conv_b;
    ActSite<T> act_a, act_b;
  };
  std::vector<EncoderLevel> enc_current;
  std::vector<EncoderLevel> enc_prior;
  std::vector<ActSite<T>> fcm_act;
  ConvLayer<T> bottleneck;
  ActSite<T> bottleneck_act;
  std::vector<DecoderLevel> dec;  // indexed by level, 0..L-2
  BamLayer<T> bam;
  ConvLayer<T> out;
};

template <typename T>
UfcnModel<T>::UfcnModel(ModelConfig config) : config_(std::move(config)), layout_(new Layout) {
  config_.validate();
  const int L = config_.num_layers;
  const auto& w = config_.channel_widths;
  const auto kind = config_.activation;
  const double fl = config_.tilu_floor;
  auto& lay = *layout_;

  auto build_encoder = [&](const std::string& prefix) {
    std::vector<typename Layout::EncoderLevel> levels;
    for (int k = 0; k < L; ++k) {
      const std::string n = prefix + "." + std::to_string(k);
      const int in_c = k == 0 ? 1 : w[k - 1];
      typename Layout::EncoderLevel e;
      e.conv_a = ConvLayer<T>::create(params_, n + ".conv_a", in_c, w[k], 3);
      e.act_a = ActSite<T>::create(params_, n + ".act_a", kind, fl);
      e.conv_b = ConvLayer<T>::create(params_, n + ".conv_b", w[k], w[k], 3);
      e.act_b = ActSite<T>::create(params_, n + ".act_b", kind, fl);
      levels.push_back(e);
    }
    return levels;
  };

  if (config_.share_encoder_weights) {
    lay.enc_current = build_encoder("encoder");
    lay.enc_prior = lay.enc_current;
  } else {
    lay.enc_current = build_encoder("encoder_current");
    lay.enc_prior = build_encoder("encoder_prior");
  }
  for (int k = 0; k < L; ++k) {
    lay.fcm_act.push_back(ActSite<T>::create(params_, "fcm." + std::to_string(k) + ".act", kind, fl));
  }
  lay.bottleneck = ConvLayer<T>::create(params_, "bottleneck.conv", 2 * w[L - 1], w[L - 1], 3);
  lay.bottleneck_act = ActSite<T>::create(params_, "bottleneck.act", kind, fl);

  lay.dec.resize(L - 1);
  for (int k = L - 2; k >= 0; --k) {
    const std::string n = "decoder." + std::to_string(k);
    const int g = config_.gate_width(k);
    auto& d = lay.dec[k];
    d.up = UpConvLayer<T>::create(params_, n + ".up", w[k + 1], w[k]);
    d.asg = AsgLayer<T>::create(params_, n + ".asg", w[k], w[k], g);
    d.conv_a = ConvLayer<T>::create(params_, n + ".conv_a", g + w[k], w[k], 3);
    d.act_a = ActSite<T>::create(params_, n + ".act_a", kind, fl);
    d.conv_b = ConvLayer<T>::create(params_, n + ".conv_b", w[k], w[k], 3);
    d.act_b = ActSite<T>::create(params_, n + ".act_b", kind, fl);
  }
  lay.bam = BamLayer<T>::create(params_, "bam.w_v", config_.bam_channels(), config_.bam_kernel);
  lay.out = ConvLayer<T>::create(params_, "reconstruction.conv", w[0], 1, 1);
  init_params(params_, config_.init_seed);
}

template <typename T>
UfcnModel<T>::~UfcnModel() = default;
template <typename T>
UfcnModel<T>::UfcnModel(const UfcnModel& o)
    : config_(o.config_), params_(o.params_), layout_(new Layout(*o.layout_)) {}
template <typename T>
UfcnModel<T>& UfcnModel<T>::operator=(const UfcnModel& o) {
  if (this != &o) {
    config_ = o.config_;
    params_ = o.params_;
    layout_.reset(new Layout(*o.layout_));
  }
  return *this;
}
template <typename T>
UfcnModel<T>::UfcnModel(UfcnModel&&) noexcept = default;
template <typename T>
UfcnModel<T>& UfcnModel<T>::operator=(UfcnModel&&) noexcept = default;

template <typename T>
int UfcnModel<T>::bam_weight_index() const {
  return layout_->bam.head.weight;
}
template <typename T>
int UfcnModel<T>::bam_bias_index() const {
  return layout_->bam.head.bias;
}

namespace {

template <typename T>
void check_input(const Tensor<T>& img, const ModelConfig& cfg, const char* which) {
  if (img.c != 1 || img.h != cfg.input_height || img.w != cfg.input_width) {
    throw ShapeError(std::string(which) + " image is " + shape_string(img) + ", model expects 1x" +
                     std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width));
  }
  for (T v : img.data) {
    if (!std::isfinite(v) || v < T(0) || v > T(1)) {
      throw NumericalError(std::string(which) + " image has values outside [0,1]");
    }
  }
}

template <typename T, typename Level, typename Trace>
void run_encoder(const ParamSet<T>& ps, const std::vector<Level>& levels, const Tensor<T>& image,
                 std::vector<Trace>& trace) {
  trace.resize(levels.size());
  for (std::size_t k = 0; k < levels.size(); ++k) {
    auto& t = trace[k];
    if (k == 0) {
      t.in = image;
    } else {
      kernels::maxpool2x2_forward<T>(trace[k - 1].a, t.in, t.pool_argmax);
    }
    t.h1 = levels[k].conv_a.forward(ps, t.in);
    t.a1 = levels[k].act_a.forward(ps, t.h1);
    t.f = levels[k].conv_b.forward(ps, t.a1);
    t.a = levels[k].act_b.forward(ps, t.f);
  }
}

// d_a: gradient wrt each level's activated output a; d_f: extra gradient wrt f.
template <typename T, typename Level, typename Trace>
void backprop_encoder(const ParamSet<T>& ps, const std::vector<Level>& levels,
                      const std::vector<Trace>& trace, std::vector<Tensor<T>> d_a,
                      const std::vector<Tensor<T>>& d_f, Gradients<T>& g) {
  for (int k = static_cast<int>(levels.size()) - 1; k >= 0; --k) {
    const auto& t = trace[k];
    const auto& lv = levels[k];
    Tensor<T> df = d_a[k].empty() ? Tensor<T>(t.f.c, t.f.h, t.f.w) : lv.act_b.backward(ps, t.f, d_a[k], g);
    if (!d_f[k].empty()) add_inplace(df, d_f[k]);
    const Tensor<T> d_a1 = lv.conv_b.backward(ps, t.a1, df, g);
    const Tensor<T> d_h1 = lv.act_a.backward(ps, t.h1, d_a1, g);
    const Tensor<T> d_in = lv.conv_a.backward(ps, t.in, d_h1, g, k > 0);
    if (k > 0) {
      Tensor<T> d_prev;
      kernels::maxpool2x2_backward<T>(d_in, t.pool_argmax, trace[k - 1].a.h, trace[k - 1].a.w, d_prev);
      if (d_a[k - 1].empty()) {
        d_a[k - 1] = std::move(d_prev);
      } else {
        add_inplace(d_a[k - 1], d_prev);
      }
    }
  }
}

}  // namespace

template <typename T>
std::pair<std::vector<Tensor<T>>, std::vector<Tensor<T>>> UfcnModel<T>::encode_pair(
    const Tensor<T>& current, const Tensor<T>& prior) const {
  check_input(current, config_, "current");
  check_input(prior, config_, "prior");
  std::vector<typename UfcnTrace<T>::EncLevel> tc, tp;
  run_encoder(params_, layout_->enc_current, current, tc);
  run_encoder(params_, layout_->enc_prior, prior, tp);
  std::vector<Tensor<T>> fc, fp;
  for (auto& t : tc) fc.push_back(std::move(t.f));
  for (auto& t : tp) fp.push_back(std::move(t.f));
  return {std::move(fc), std::move(fp)};
}

template <typename T>
ForwardOutput<T> UfcnModel<T>::forward(const Tensor<T>& current, const Tensor<T>& prior) const {
  UfcnTrace<T> trace;
  return forward_traced(current, prior, trace);
}

template <typename T>
ForwardOutput<T> UfcnModel<T>::forward_traced(const Tensor<T>& current, const Tensor<T>& prior,
                                              UfcnTrace<T>& t) const {
  check_input(current, config_, "current");
  check_input(prior, config_, "prior");
  const int L = config_.num_layers;
  const auto& lay = *layout_;
  const auto& ps = params_;

  run_encoder(ps, lay.enc_current, current, t.enc_current);
  run_encoder(ps, lay.enc_prior, prior, t.enc_prior);

  t.diff.resize(L);
  for (int k = 0; k < L; ++k) {
    t.diff[k] = fcm(t.enc_current[k].f, t.enc_prior[k].f, lay.fcm_act[k].resolve(ps));
  }

  t.bn_in = concat_channels(t.enc_current[L - 1].a, t.diff[L - 1]);
  t.bn_h = lay.bottleneck.forward(ps, t.bn_in);
  t.bn_out = lay.bottleneck_act.forward(ps, t.bn_h);

  t.dec.resize(L - 1);
  ForwardOutput<T> out;
  for (int k = L - 2; k >= 0; --k) {
    const auto& d = lay.dec[k];
    auto& dt = t.dec[k];
    dt.up = d.up.forward(ps, t.decoder_output(k + 1));
    const Tensor<T>& att = d.asg.forward(ps, dt.up, t.diff[k], config_.asg_threshold,
                                         config_.asg_floor, dt.asg);
    dt.cat = concat_channels(att, t.enc_current[k].a);
    dt.h1 = d.conv_a.forward(ps, dt.cat);
    dt.a1 = d.act_a.forward(ps, dt.h1);
    dt.h2 = d.conv_b.forward(ps, dt.a1);
    dt.out = d.act_b.forward(ps, dt.h2);
    out.y_hat_per_layer.push_back(dt.asg.y_hat);
    out.attention.push_back(dt.asg.attention);
    out.gates.push_back(dt.asg.gate_eff);
  }

  const Tensor<T>& bam_in = bam_features(t);
  lay.bam.forward(ps, bam_in, config_.bam_threshold, config_.bam_pool_sharpness, bam_in.h != config_.input_height,
                  t.bam);

  t.out_logit = lay.out.forward(ps, t.dec[0].out);
  t.recon = Tensor<T>(1, t.out_logit.h, t.out_logit.w);
  for (std::size_t i = 0; i < t.recon.size(); ++i) t.recon.data[i] = sigmoid(t.out_logit.data[i]);

  out.reconstruction = t.recon;
  out.avm_prob = t.bam.prob;
  out.avm_mask = t.bam.mask;
  out.y_hat_bam = t.bam.y_hat;
  out.difference = t.diff;
  for (const auto& e : t.enc_current) out.encoder_current.push_back(e.f);
  for (const auto& e : t.enc_prior) out.encoder_prior.push_back(e.f);
  return out;
}

template <typename T>
void UfcnModel<T>::backward(const UfcnTrace<T>& t, const OutputGrads<T>& og,
                            Gradients<T>& g) const {
  const int L = config_.num_layers;
  const auto& lay = *layout_;
  const auto& ps = params_;

  // d_e[k]: gradient wrt decoder output at level k (k = L-1 is the bottleneck).
  std::vector<Tensor<T>> d_e(L);
  auto accumulate = [](Tensor<T>& dst, Tensor<T>&& src) {
    if (dst.empty()) {
      dst = std::move(src);
    } else {
      add_inplace(dst, src);
    }
  };

  if (!og.d_reconstruction.empty()) {
    Tensor<T> d_logit(1, t.recon.h, t.recon.w);
    for (std::size_t i = 0; i < d_logit.size(); ++i) {
      const T y = t.recon.data[i];
      d_logit.data[i] = og.d_reconstruction.data[i] * y * (T(1) - y);
    }
    accumulate(d_e[0], lay.out.backward(ps, t.dec[0].out, d_logit, g));
  }
  Tensor<T> d_bam = lay.bam.backward(ps, bam_features(t), t.bam, config_.bam_pool_sharpness, og.d_y_hat_bam, g);
  const bool bam_on_attention = config_.bam_input == BamInput::Attention;
  if (!bam_on_attention) accumulate(d_e[1], std::move(d_bam));

  std::vector<Tensor<T>> d_skip(L);   // wrt current-branch activated encoder output
  std::vector<Tensor<T>> d_diff(L);
  for (int k = 0; k <= L - 2; ++k) {
    const auto& d = lay.dec[k];
    const auto& dt = t.dec[k];
    // y_hat_per_layer is ordered deepest first.
    const T d_yhat = og.d_y_hat_per_layer.empty() ? T(0) : og.d_y_hat_per_layer[L - 2 - k];
    Tensor<T> d_cat;
    if (!d_e[k].empty()) {
      const Tensor<T> d_h2 = d.act_b.backward(ps, dt.h2, d_e[k], g);
      const Tensor<T> d_a1 = d.conv_b.backward(ps, dt.a1, d_h2, g);
      const Tensor<T> d_h1 = d.act_a.backward(ps, dt.h1, d_a1, g);
      d_cat = d.conv_a.backward(ps, dt.cat, d_h1, g);
    } else {
      d_cat = Tensor<T>(dt.cat.c, dt.cat.h, dt.cat.w);
    }
    Tensor<T> d_att, d_sk;
    split_channels(d_cat, d.asg.gate_c, d_att, d_sk);
    if (bam_on_attention && k == config_.bam_level()) add_inplace(d_att, d_bam);
    accumulate(d_skip[k], std::move(d_sk));
    Tensor<T> d_up, d_df;
    d.asg.backward(ps, dt.up, t.diff[k], dt.asg, config_.asg_threshold, d_att, d_yhat, g, d_up, d_df);
    d_diff[k] = std::move(d_df);
    accumulate(d_e[k + 1], d.up.backward(ps, t.decoder_output(k + 1), d_up, g));
  }

  {
    const Tensor<T> d_h = lay.bottleneck_act.backward(ps, t.bn_h, d_e[L - 1], g);
    const Tensor<T> d_in = lay.bottleneck.backward(ps, t.bn_in, d_h, g);
    Tensor<T> d_a, d_df;
    split_channels(d_in, t.enc_current[L - 1].a.c, d_a, d_df);
    accumulate(d_skip[L - 1], std::move(d_a));
    d_diff[L - 1] = std::move(d_df);
  }

  std::vector<Tensor<T>> d_fc(L), d_fp(L);
  for (int k = 0; k < L; ++k) {
    d_fc[k] = lay.fcm_act[k].backward(ps, t.enc_current[k].f, d_diff[k], g);
    Tensor<T> neg = d_diff[k];
    for (auto& v : neg.data) v = -v;
    d_fp[k] = lay.fcm_act[k].backward(ps, t.enc_prior[k].f, neg, g);
  }
  backprop_encoder(ps, lay.enc_current, t.enc_current, std::move(d_skip), d_fc, g);
  backprop_encoder(ps, lay.enc_prior, t.enc_prior, std::vector<Tensor<T>>(L), d_fp, g);
}

template <typename T>
UfcnModel<T> init_model(const ModelConfig& config) {
  return UfcnModel<T>(config);
}

template <typename T>
Tensor<T> fcm(const Tensor<T>& current_features, const Tensor<T>& prior_features,
              const Activation& act) {
  require_same_shape(current_features, prior_features, "fcm");
  Tensor<T> d = activate(current_features, act);
  const Tensor<T> p = activate(prior_features, act);
  for (std::size_t i = 0; i < d.size(); ++i) d.data[i] -= p.data[i];
  return d;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  c.validate();
  const int L = c.num_layers;
  const auto& w = c.channel_widths;
  const std::size_t beta = c.activation == ActivationKind::Silu ? 1 : 0;
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; };
  std::size_t enc = 0;
  for (int k = 0; k < L; ++k) {
    const std::size_t in = k == 0 ? 1 : w[k - 1];
    enc += conv(in, w[k], 3) + conv(w[k], w[k], 3) + 2 * beta;
  }
  std::size_t n = c.share_encoder_weights ? enc : 2 * enc;
  n += L * beta;                                      // FCM slopes
  n += conv(2 * w[L - 1], w[L - 1], 3) + beta;        // bottleneck
  for (int k = 0; k <= L - 2; ++k) {
    const std::size_t g = c.gate_width(k);
    n += static_cast<std::size_t>(w[k + 1]) * w[k] * 4 + w[k];  // upconv
    n += conv(w[k], g, 1) * 2 + conv(g, 1, 1) + g + 1;           // W_E, W_D, W_A, w_f, b_f
    n += conv(g + w[k], w[k], 3) + conv(w[k], w[k], 3) + 2 * beta;
  }
  n += conv(c.bam_channels(), 1, c.bam_kernel);  // BAM
  n += conv(w[0], 1, 1);  // reconstruction head
  return n;
}

template class UfcnModel<float>;
template class UfcnModel<double>;
template UfcnModel<float> init_model<float>(const ModelConfig&);
template UfcnModel<double> init_model<double>(const ModelConfig&);
template Tensor<float> fcm<float>(const Tensor<float>&, const Tensor<float>&, const Activation&);
template Tensor<double> fcm<double>(const Tensor<double>&, const Tensor<double>&, const Activation&);

}  // namespace ufcn
