#include "ufcn/unet.hpp"

#include <cmath>

namespace ufcn {

void UnetConfig::validate() const {
  if (num_layers < 2) throw ConfigError("unet num_layers must be >= 2");
  if (static_cast<int>(channel_widths.size()) != num_layers) {
    throw ConfigError("unet channel_widths must have num_layers entries");
  }
  for (int k = 0; k < num_layers; ++k) {
    if (channel_widths[k] <= 0 || (k > 0 && channel_widths[k] <= channel_widths[k - 1])) {
      throw ConfigError("unet channel widths must be positive and strictly increasing");
    }
  }
  const int stride = 1 << (num_layers - 1);
  if (input_height <= 0 || input_width <= 0 || input_height % stride || input_width % stride) {
    throw ConfigError("unet input size must be divisible by 2^(L-1)");
  }
  if (!(mask_threshold > 0 && mask_threshold < 1)) throw ConfigError("unet mask_threshold must lie in (0,1)");
}

template <typename T>
struct UnetModel<T>::Layout {
  struct Block {
    ConvLayer<T> conv_a, conv_b;
  };
  std::vector<Block> enc;
  std::vector<UpConvLayer<T>> up;
  std::vector<Block> dec;
  ConvLayer<T> head;
};

namespace {

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (x.data[i] < T(0)) dx.data[i] = T(0);
  return dx;
}

}  // namespace

template <typename T>
UnetModel<T>::UnetModel(UnetConfig config) : config_(std::move(config)), layout_(new Layout) {
  config_.validate();
  const int L = config_.num_layers;
  const auto& w = config_.channel_widths;
  auto& lay = *layout_;
  for (int k = 0; k < L; ++k) {
    const std::string n = "unet.encoder." + std::to_string(k);
    lay.enc.push_back({ConvLayer<T>::create(params_, n + ".conv_a", k == 0 ? 1 : w[k - 1], w[k], 3),
                       ConvLayer<T>::create(params_, n + ".conv_b", w[k], w[k], 3)});
  }
  lay.up.resize(L - 1);
  lay.dec.resize(L - 1);
  for (int k = L - 2; k >= 0; --k) {
    const std::string n = "unet.decoder." + std::to_string(k);
    lay.up[k] = UpConvLayer<T>::create(params_, n + ".up", w[k + 1], w[k]);
    lay.dec[k] = {ConvLayer<T>::create(params_, n + ".conv_a", 2 * w[k], w[k], 3),
                  ConvLayer<T>::create(params_, n + ".conv_b", w[k], w[k], 3)};
  }
  lay.head = ConvLayer<T>::create(params_, "unet.head", w[0], 1, 1);
  init_params(params_, config_.init_seed);
}

template <typename T>
UnetModel<T>::~UnetModel() = default;
template <typename T>
UnetModel<T>::UnetModel(const UnetModel& o)
    : config_(o.config_), params_(o.params_), layout_(new Layout(*o.layout_)) {}
template <typename T>
UnetModel<T>& UnetModel<T>::operator=(const UnetModel& o) {
  if (this != &o) {
    config_ = o.config_;
    params_ = o.params_;
    layout_.reset(new Layout(*o.layout_));
  }
  return *this;
}
template <typename T>
UnetModel<T>::UnetModel(UnetModel&&) noexcept = default;
template <typename T>
UnetModel<T>& UnetModel<T>::operator=(UnetModel&&) noexcept = default;

template <typename T>
Tensor<T> UnetModel<T>::forward(const Tensor<T>& image) const {
  UnetTrace<T> t;
  return forward_traced(image, t);
}

template <typename T>
Tensor<T> UnetModel<T>::forward_traced(const Tensor<T>& image, UnetTrace<T>& t) const {
  if (image.c != 1 || image.h != config_.input_height || image.w != config_.input_width) {
    throw ShapeError("unet input is " + shape_string(image) + ", expected 1x" +
                     std::to_string(config_.input_height) + "x" + std::to_string(config_.input_width));
  }
  const int L = config_.num_layers;
  const auto& lay = *layout_;
  const auto& ps = params_;
  t.enc.resize(L);
  for (int k = 0; k < L; ++k) {
    auto& e = t.enc[k];
    if (k == 0) {
      e.in = image;
    } else {
      kernels::maxpool2x2_forward<T>(t.enc[k - 1].a, e.in, e.pool_argmax);
    }
    e.h1 = lay.enc[k].conv_a.forward(ps, e.in);
    e.a1 = relu(e.h1);
    e.h2 = lay.enc[k].conv_b.forward(ps, e.a1);
    e.a = relu(e.h2);
  }
  t.dec.resize(L - 1);
  for (int k = L - 2; k >= 0; --k) {
    auto& d = t.dec[k];
    d.up = lay.up[k].forward(ps, t.decoder_output(k + 1));
    d.cat = concat_channels(d.up, t.enc[k].a);
    d.h1 = lay.dec[k].conv_a.forward(ps, d.cat);
    d.a1 = relu(d.h1);
    d.h2 = lay.dec[k].conv_b.forward(ps, d.a1);
    d.a = relu(d.h2);
  }
  t.logit = lay.head.forward(ps, t.dec[0].a);
  t.prob = Tensor<T>(1, t.logit.h, t.logit.w);
  for (std::size_t i = 0; i < t.prob.size(); ++i) t.prob.data[i] = sigmoid(t.logit.data[i]);
  return t.prob;
}

template <typename T>
void UnetModel<T>::backward(const UnetTrace<T>& t, const Tensor<T>& d_prob, Gradients<T>& g) const {
  require_same_shape(t.prob, d_prob, "unet backward");
  const int L = config_.num_layers;
  const auto& lay = *layout_;
  const auto& ps = params_;
  Tensor<T> d_logit(1, t.prob.h, t.prob.w);
  for (std::size_t i = 0; i < d_logit.size(); ++i) {
    d_logit.data[i] = d_prob.data[i] * t.prob.data[i] * (T(1) - t.prob.data[i]);
  }
  std::vector<Tensor<T>> d_out(L);  // gradient wrt decoder output per level (L-1: encoder bottom)
  std::vector<Tensor<T>> d_skip(L);
  d_out[0] = lay.head.backward(ps, t.dec[0].a, d_logit, g);
  for (int k = 0; k <= L - 2; ++k) {
    const auto& d = t.dec[k];
    const Tensor<T> d_h2 = relu_backward(d.h2, d_out[k]);
    const Tensor<T> d_a1 = lay.dec[k].conv_b.backward(ps, d.a1, d_h2, g);
    const Tensor<T> d_h1 = relu_backward(d.h1, d_a1);
    const Tensor<T> d_cat = lay.dec[k].conv_a.backward(ps, d.cat, d_h1, g);
    Tensor<T> d_up;
    split_channels(d_cat, d.up.c, d_up, d_skip[k]);
    Tensor<T> d_prev = lay.up[k].backward(ps, t.decoder_output(k + 1), d_up, g);
    if (d_out[k + 1].empty()) {
      d_out[k + 1] = std::move(d_prev);
    } else {
      add_inplace(d_out[k + 1], d_prev);
    }
  }
  // Encoder: level L-1 receives only the decoder's gradient; other levels
  // receive skip gradients plus pooled gradients from below.
  Tensor<T> d_a = d_out[L - 1];
  for (int k = L - 1; k >= 0; --k) {
    const auto& e = t.enc[k];
    if (k < L - 1) add_inplace(d_a, d_skip[k]);
    const Tensor<T> d_h2 = relu_backward(e.h2, d_a);
    const Tensor<T> d_a1 = lay.enc[k].conv_b.backward(ps, e.a1, d_h2, g);
    const Tensor<T> d_h1 = relu_backward(e.h1, d_a1);
    const Tensor<T> d_in = lay.enc[k].conv_a.backward(ps, e.in, d_h1, g, k > 0);
    if (k > 0) kernels::maxpool2x2_backward<T>(d_in, e.pool_argmax, t.enc[k - 1].a.h, t.enc[k - 1].a.w, d_a);
  }
}

template <typename T>
Tensor<std::uint8_t> UnetModel<T>::predict_mask(const Tensor<T>& image) const {
  const Tensor<T> p = forward(image);
  Tensor<std::uint8_t> m(1, p.h, p.w);
  const T thr = static_cast<T>(config_.mask_threshold);
  for (std::size_t i = 0; i < p.size(); ++i) m.data[i] = p.data[i] > thr;
  return m;
}

template class UnetModel<float>;
template class UnetModel<double>;

}  // namespace ufcn
