#pragma once

#include <optional>
#include <string>

#include "attnpain/optim.hpp"
#include "attnpain/vit.hpp"

namespace attnpain::harness {

// Binary checkpoint, magic "PVTC", version 1, little-endian throughout:
//   magic[4] | u32 version
//   u64 image_size, patch_size, channels, hidden_dim, num_layers,
//       num_heads, mlp_dim, num_classes | f64 head_dropout | u8 dtype
//   u32 tensor count, then per tensor:
//     u32 name length | name bytes | u8 dtype (0=f32, 1=f64) |
//     u32 rank | u64 dims[rank] | raw element data
//   u8 trainable flag per tensor (same order)
//   u8 optimizer-state marker (0 = absent, 1 = Adam moments follow)
// Round trips are bit-exact.

void save_checkpoint(const vit::ViTModel& model, const std::string& path);

vit::ViTModel load_checkpoint(const std::string& path);

// Verifies that a checkpoint's tensors match the shapes the given config
// implies; throws FormatError naming the first offending tensor.
void validate_checkpoint_config(const vit::ViTModel& loaded, const vit::ModelConfig& expected);

}  // namespace attnpain::harness
