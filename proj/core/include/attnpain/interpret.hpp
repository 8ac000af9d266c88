#pragma once

#include <string>
#include <vector>

#include "attnpain/tensor.hpp"

namespace attnpain::interpret {

// All attention layers of one sample: per layer [heads x tokens x tokens],
// rows summing to 1. Token 0 is the CLS token.
struct AttentionStack {
  std::vector<Tensor> layers;

  size_t num_layers() const { return layers.size(); }
  size_t num_heads() const;
  size_t num_tokens() const;
};

// Slices sample b out of per-layer [B x heads x tokens x tokens] tensors.
AttentionStack stack_for_sample(const std::vector<Tensor>& batch_attentions, size_t b);

// Per-patch saliency on the (image_size/patch_size)^2 grid, max-normalized
// to [0, 1] (all-zero maps stay all-zero). grid is 0 when the patch count
// is not a perfect square; such maps cannot be rendered.
struct SaliencyMap {
  size_t grid = 0;  // patches per side
  std::vector<double> values;

  double at(size_t row, size_t col) const { return values[row * grid + col]; }
};

// CLS-query attention of one head over patch tokens.
SaliencyMap head_map(const AttentionStack& stack, size_t layer, size_t head);

// Elementwise max over heads of the last layer's CLS-row patch attention.
SaliencyMap last_layer_max(const AttentionStack& stack);

enum class Fusion { max, mean };

// Attention rollout: per layer, fuse heads, mix in the residual path as
// 0.5*A + 0.5*I, re-normalize rows, left-multiply layer matrices from
// first to last, then read the CLS row over patches.
SaliencyMap rollout(const AttentionStack& stack, Fusion fusion = Fusion::max);

// Linear blue -> red colormap over [lo, hi].
struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};
Rgb saliency_color(double value, double threshold_lo, double threshold_hi);

// Writes an 8-bit PPM: patches below threshold_lo stay the grayscale
// source; patches in band are tinted 50/50 with the colormap, constant
// across the patch.
void render_overlay(const SaliencyMap& map, const Tensor& image, double threshold_lo,
                    double threshold_hi, const std::string& out_path);

}  // namespace attnpain::interpret
