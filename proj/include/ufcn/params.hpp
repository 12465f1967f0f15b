#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ufcn/errors.hpp"

namespace ufcn {

// Weights are L2-penalized; biases and activation slopes are not.
enum class ParamRole { Weight, Bias, Beta };

template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  ParamRole role = ParamRole::Weight;
  Buffer<T> value;
  int fan_in = 0;  // weights only; scales the initializer

  std::size_t numel() const { return value.size(); }
  std::span<const T> view() const { return value; }
  std::span<T> view() { return value; }
};

// Flat, ordered parameter registry. The order is the checkpoint order.
template <typename T>
class ParamSet {
 public:
  int add(std::string name, std::vector<int> shape, ParamRole role, int fan_in = 0) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          [](std::size_t a, int b) { return a * b; });
    items_.push_back({std::move(name), std::move(shape), role, Buffer<T>(n, T(0)), fan_in});
    return static_cast<int>(items_.size()) - 1;
  }

  std::size_t count() const { return items_.size(); }
  Param<T>& operator[](int i) { return items_[i]; }
  const Param<T>& operator[](int i) const { return items_[i]; }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.numel();
    return n;
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].name == name) return static_cast<int>(i);
    throw ConfigError("no parameter named '" + name + "'");
  }

  // Zeroed buffers shaped like the parameters.
  std::vector<Buffer<T>> zeros_like() const {
    std::vector<Buffer<T>> g;
    g.reserve(items_.size());
    for (const auto& p : items_) g.emplace_back(p.numel(), T(0));
    return g;
  }

  // FNV-1a over the raw bytes of every value, in registry order.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : items_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
      for (std::size_t i = 0; i < p.value.size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

 private:
  std::vector<Param<T>> items_;
};

template <typename T>
using Gradients = std::vector<Buffer<T>>;

}  // namespace ufcn
