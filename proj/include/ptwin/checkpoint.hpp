#pragma once

// Model checkpoints: magic "PTWT", u32 version, u32 tensor count, then per
// tensor: u16 name length, UTF-8 name, u8 rank, u32 dims, f32 little-endian
// payload.

#include <string>

#include "ptwin/nn.hpp"

namespace ptwin {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const nn::NamedTensors<float>& tensors);

// Loads into already-constructed tensors; every stored name must match an
// entry with the same shape and vice versa.
void load_checkpoint(const std::string& path, nn::NamedTensors<float>& tensors);

}  // namespace ptwin
