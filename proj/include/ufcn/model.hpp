#pragma once

// UFCN: twin encoder, per-level feature correlation (FCM), attention
// suppress gates (ASG) in the decoder, abnormality head (BAM) at half
// resolution, and a sigmoid reconstruction head.
//
// Level k (0-based) of the encoder runs at input / 2^k with
// channel_widths[k] channels. The decoder walks levels L-2 .. 0; each step
// upsamples, gates the upsampled map with the difference map D_k, and
// concatenates the gated map with the current-branch skip features.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ufcn/layers.hpp"

namespace ufcn {

// Features read by the abnormality head: the decoder block output at the
// half-resolution level, or the ASG attention features A at that level (the
// full-resolution level for a two-level model).
enum class BamInput { Decoder, Attention };
std::string to_string(BamInput input);  // "decoder", "attention"
BamInput bam_input_from_string(const std::string& s);

struct ModelConfig {
  int num_layers = 5;
  std::vector<int> channel_widths{16, 32, 64, 128, 256};
  int input_height = 256;
  int input_width = 256;
  ActivationKind activation = ActivationKind::Silu;
  double tilu_floor = 0.01;
  bool share_encoder_weights = true;
  double asg_threshold = 0.01;
  double asg_floor = 1e-3;
  double bam_threshold = 0.5;
  // r in the smooth-max pooling of the abnormality logits.
  double bam_pool_sharpness = 8.0;
  BamInput bam_input = BamInput::Attention;
  int bam_kernel = 1;  // odd spatial size of the W_V convolution
  std::uint64_t init_seed = 0;

  void validate() const;
  int gate_width(int level) const { return std::max(1, channel_widths[level] / 2); }
  // Decoder level whose ASG feeds the head when bam_input is Attention.
  int bam_level() const { return num_layers >= 3 ? 1 : 0; }
  int bam_channels() const { return bam_input == BamInput::Attention ? gate_width(bam_level()) : channel_widths[1]; }
};

template <typename T>
struct ForwardOutput {
  Tensor<T> reconstruction;           // 1 x H x W, in [0,1]
  Tensor<T> avm_prob;                 // 1 x H x W, in [0,1]
  Tensor<std::uint8_t> avm_mask;      // avm_prob > tau
  std::vector<T> y_hat_per_layer;     // one per ASG, decoder order (deepest first)
  T y_hat_bam = 0;                    // image-level probability from the BAM logits
  std::vector<Tensor<T>> difference;  // D_k, k = 0..L-1
  std::vector<Tensor<T>> attention;   // A_k, decoder order (level L-2 first)
  std::vector<Tensor<T>> gates;       // floored gate maps, decoder order
  std::vector<Tensor<T>> encoder_current;  // F_C^k (pre-activation block outputs)
  std::vector<Tensor<T>> encoder_prior;    // F_P^k
};

// Everything backward() needs. Produced by forward_traced().
template <typename T>
struct UfcnTrace {
  struct EncLevel {
    Tensor<T> in, h1, a1, f, a;
    std::vector<int> pool_argmax;  // argmax of the pooling that produced `in`
  };
  struct DecLevel {
    Tensor<T> up, cat, h1, a1, h2, out;
    AsgTrace<T> asg;
  };
  std::vector<EncLevel> enc_current, enc_prior;
  std::vector<Tensor<T>> diff;
  Tensor<T> bn_in, bn_h, bn_out;
  std::vector<DecLevel> dec;
  BamTrace<T> bam;
  Tensor<T> out_logit, recon;

  const Tensor<T>& decoder_output(int level) const {
    return level == static_cast<int>(dec.size()) ? bn_out : dec[level].out;
  }
};

// dL/d(outputs) handed to backward().
template <typename T>
struct OutputGrads {
  Tensor<T> d_reconstruction;     // empty means zero
  std::vector<T> d_y_hat_per_layer;
  T d_y_hat_bam = 0;
};

template <typename T>
class UfcnModel {
 public:
  explicit UfcnModel(ModelConfig config);
  ~UfcnModel();
  UfcnModel(const UfcnModel&);
  UfcnModel& operator=(const UfcnModel&);
  UfcnModel(UfcnModel&&) noexcept;
  UfcnModel& operator=(UfcnModel&&) noexcept;

  const ModelConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  // Twin encoder. Returns pre-activation block outputs F^k for both branches.
  std::pair<std::vector<Tensor<T>>, std::vector<Tensor<T>>> encode_pair(
      const Tensor<T>& current, const Tensor<T>& prior) const;

  ForwardOutput<T> forward(const Tensor<T>& current, const Tensor<T>& prior) const;
  ForwardOutput<T> forward_traced(const Tensor<T>& current, const Tensor<T>& prior,
                                  UfcnTrace<T>& trace) const;

  // Accumulates parameter gradients into g (shaped like params()).
  void backward(const UfcnTrace<T>& trace, const OutputGrads<T>& grads, Gradients<T>& g) const;

  // Index of the BAM 1x1 head weight / bias (for tests and zero-head models).
  int bam_weight_index() const;
  int bam_bias_index() const;

  // Number of ASG-bearing decoder levels (L - 1).
  int num_gates() const { return config_.num_layers - 1; }

 private:
  struct Layout;
  const Tensor<T>& bam_features(const UfcnTrace<T>& t) const {
    return config_.bam_input == BamInput::Attention ? t.dec[config_.bam_level()].asg.attention : t.decoder_output(1);
  }
  ModelConfig config_;
  ParamSet<T> params_;
  std::unique_ptr<Layout> layout_;
};

// Builds and initializes a model (fan-in uniform weights, zero biases, beta = 1).
template <typename T>
UfcnModel<T> init_model(const ModelConfig& config);

// D = act(F_C) - act(F_P), elementwise.
template <typename T>
Tensor<T> fcm(const Tensor<T>& current_features, const Tensor<T>& prior_features,
              const Activation& act);

// Closed-form trainable parameter count for a config.
std::size_t expected_parameter_count(const ModelConfig& config);

}  // namespace ufcn
