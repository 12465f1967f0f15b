#pragma once

// Checkpoint file layout (little-endian):
//   8 bytes  magic "UFCNCKPT"
//   u32      format version
//   u64      header length N
//   N bytes  JSON header {"kind", "config", "params": [{name, shape, offset}]}
//   float32  parameter values in registry order

#include <string>

#include "ufcn/model.hpp"
#include "ufcn/unet.hpp"

namespace ufcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const UfcnModel<float>& model, const std::string& path);
void save_checkpoint(const UnetModel<float>& model, const std::string& path);

// "ufcn" or "unet".
std::string checkpoint_kind(const std::string& path);

UfcnModel<float> load_ufcn_checkpoint(const std::string& path);
UnetModel<float> load_unet_checkpoint(const std::string& path);

// Loads into `expected`'s architecture. Any parameter name or shape that
// differs raises LoadError naming it. Non-architectural settings (thresholds)
// come from `expected`.
UfcnModel<float> load_ufcn_checkpoint(const std::string& path, const ModelConfig& expected);
UnetModel<float> load_unet_checkpoint(const std::string& path, const UnetConfig& expected);

}  // namespace ufcn
