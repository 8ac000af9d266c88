#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "attnpain/prng.hpp"
#include "attnpain/tensor.hpp"

namespace attnpain::vit {

struct ModelConfig {
  size_t image_size = 224;
  size_t patch_size = 16;
  size_t channels = 3;
  size_t hidden_dim = 768;
  size_t num_layers = 12;
  size_t num_heads = 12;
  size_t mlp_dim = 3072;
  double head_dropout = 0.10;
  size_t num_classes = 2;
  DType dtype = DType::f64;

  // 224px, 16px patches, 12 layers x 12 heads, 768 wide (~86M parameters).
  static ModelConfig paper_preset();
  // 32px grayscale, 8px patches, 4 layers x 4 heads, 64 wide.
  static ModelConfig tiny_preset();

  size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  size_t tokens() const { return num_patches() + 1; }  // +1 CLS
  size_t patch_dim() const { return channels * patch_size * patch_size; }
  void validate() const;
};

struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct ForwardOutput {
  Tensor logits;                  // [B, num_classes]
  std::vector<Tensor> attentions; // per layer, [B, heads, tokens, tokens], detached
};

struct Prediction {
  std::vector<double> pain_probability;  // p(label==1) per row
  std::vector<int> labels;               // 1 iff p(pain) >= 0.5
};

// [C,H,W] -> [num_patches, C*ps*ps]; patches row-major from the top-left,
// each flattened channel-major then row-major within the patch.
Tensor patchify(const Tensor& image, size_t patch_size);

// Names and shapes of every parameter tensor, in model order. The source
// of truth for initialization and checkpoint validation.
std::vector<std::pair<std::string, std::vector<size_t>>> parameter_shapes(
    const ModelConfig& config);

// Pre-norm ViT: patch projection, CLS token, learned positional embeddings,
// num_layers blocks of multi-head self-attention + GELU MLP, final layer
// norm, then dropout and an affine head on the CLS embedding.
class ViTModel {
 public:
  // Truncated-normal (std 0.02) weights and positional embeddings, zero
  // biases and CLS token, unit layer-norm gains. Deterministic per seed.
  static ViTModel init_parameters(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  const Param& param(const std::string& name) const;
  Param& param(const std::string& name);

  size_t total_scalar_count() const;
  size_t trainable_scalar_count() const;

  // Freezes every MLP block, patch projection, positional embedding, CLS
  // token and layer norm; unfreezes attention weights of the top-most n
  // layers; the classification head always trains.
  void set_trainable(size_t unfrozen_attention_layers);

  // batch: [B, C, H, W]. Dropout runs only before the head and only when
  // training. rng may be null when training is false.
  ForwardOutput forward(const Tensor& batch, bool training, Prng* rng) const;

  ViTModel deep_copy() const;

 private:
  ModelConfig config_;
  std::vector<Param> params_;
  std::unordered_map<std::string, size_t> index_;

  void rebuild_index();
  const Tensor& p(const std::string& name) const { return param(name).value; }
};

// Softmax probabilities and the pain-iff-p>=0.5 decision per row.
Prediction predict(const Tensor& logits);

}  // namespace attnpain::vit
