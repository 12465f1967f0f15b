#pragma once

// Plain supervised U-Net baseline: current image in, lesion probability map
// out. Encoder level k: two 3x3 conv + ReLU at input / 2^k; decoder mirrors
// it with 2x2 transposed convolutions and skip concatenation.

#include <memory>

#include "ufcn/layers.hpp"

namespace ufcn {

struct UnetConfig {
  int num_layers = 5;
  std::vector<int> channel_widths{64, 128, 256, 512, 1024};
  int input_height = 256;
  int input_width = 256;
  double mask_threshold = 0.5;
  std::uint64_t init_seed = 0;

  void validate() const;
};

template <typename T>
struct UnetTrace {
  struct Level {
    Tensor<T> in, h1, a1, h2, a;
    std::vector<int> pool_argmax;
  };
  struct DecLevel {
    Tensor<T> up, cat, h1, a1, h2, a;
  };
  std::vector<Level> enc;
  std::vector<DecLevel> dec;
  Tensor<T> logit, prob;

  const Tensor<T>& decoder_output(int level) const {
    return level == static_cast<int>(dec.size()) ? enc.back().a : dec[level].a;
  }
};

template <typename T>
class UnetModel {
 public:
  explicit UnetModel(UnetConfig config);
  ~UnetModel();
  UnetModel(const UnetModel&);
  UnetModel& operator=(const UnetModel&);
  UnetModel(UnetModel&&) noexcept;
  UnetModel& operator=(UnetModel&&) noexcept;

  const UnetConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  // 1 x H x W probability map.
  Tensor<T> forward(const Tensor<T>& image) const;
  Tensor<T> forward_traced(const Tensor<T>& image, UnetTrace<T>& trace) const;
  void backward(const UnetTrace<T>& trace, const Tensor<T>& d_prob, Gradients<T>& g) const;

  Tensor<std::uint8_t> predict_mask(const Tensor<T>& image) const;

 private:
  struct Layout;
  UnetConfig config_;
  ParamSet<T> params_;
  std::unique_ptr<Layout> layout_;
};

}  // namespace ufcn
