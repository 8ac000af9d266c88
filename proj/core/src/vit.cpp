#include "attnpain/vit.hpp"

#include <cmath>

namespace attnpain::vit {

ModelConfig ModelConfig::paper_preset() {
  ModelConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.channels = 3;
  c.hidden_dim = 768;
  c.num_layers = 12;
  c.num_heads = 12;
  c.mlp_dim = 3072;
  return c;
}

ModelConfig ModelConfig::tiny_preset() {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.channels = 1;
  c.hidden_dim = 64;
  c.num_layers = 4;
  c.num_heads = 4;
  c.mlp_dim = 128;
  return c;
}

void ModelConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
    throw ValidationError("ModelConfig: image_size " + std::to_string(image_size) +
                          " not divisible by patch_size " + std::to_string(patch_size));
  if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0)
    throw ValidationError("ModelConfig: hidden_dim " + std::to_string(hidden_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
  if (channels == 0 || num_layers == 0 || mlp_dim == 0)
    throw ValidationError("ModelConfig: zero-sized dimension");
  if (num_classes != 2) throw ValidationError("ModelConfig: binary head expected");
  if (head_dropout < 0.0 || head_dropout >= 1.0)
    throw ValidationError("ModelConfig: head_dropout must lie in [0, 1)");
}

Tensor patchify(const Tensor& image, size_t patch_size) {
  const auto& s = image.shape();
  if (s.size() != 3)
    throw ValidationError("patchify: expected [C,H,W], got " + shape_str(s));
  const size_t C = s[0], H = s[1], W = s[2];
  if (patch_size == 0 || H % patch_size != 0 || W % patch_size != 0)
    throw ValidationError("patchify: image " + shape_str(s) +
                          " not divisible by patch size " + std::to_string(patch_size));
  const size_t ph = H / patch_size, pw = W / patch_size;
  const size_t pd = C * patch_size * patch_size;
  Tensor out = Tensor::zeros({ph * pw, pd}, image.dtype());
  const auto src = image.to_vector();
  size_t o = 0;
  for (size_t py = 0; py < ph; ++py)
    for (size_t px = 0; px < pw; ++px)
      for (size_t c = 0; c < C; ++c)
        for (size_t dy = 0; dy < patch_size; ++dy)
          for (size_t dx = 0; dx < patch_size; ++dx)
            out.set_item(o++, src[c * H * W + (py * patch_size + dy) * W +
                                  px * patch_size + dx]);
  return out;
}

namespace {

// [B,C,H,W] -> [B, P, C*ps*ps] in one pass.
Tensor patchify_batch(const Tensor& batch, size_t patch_size) {
  const auto& s = batch.shape();
  const size_t B = s[0], C = s[1], H = s[2], W = s[3];
  const size_t ph = H / patch_size, pw = W / patch_size;
  const size_t pd = C * patch_size * patch_size;
  Tensor out = Tensor::zeros({B, ph * pw, pd}, batch.dtype());
  const auto src = batch.to_vector();
  size_t o = 0;
  for (size_t b = 0; b < B; ++b)
    for (size_t py = 0; py < ph; ++py)
      for (size_t px = 0; px < pw; ++px)
        for (size_t c = 0; c < C; ++c)
          for (size_t dy = 0; dy < patch_size; ++dy)
            for (size_t dx = 0; dx < patch_size; ++dx)
              out.set_item(o++, src[((b * C + c) * H + py * patch_size + dy) * W +
                                    px * patch_size + dx]);
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

constexpr double kLayerNormEps = 1e-6;

}  // namespace

std::vector<std::pair<std::string, std::vector<size_t>>> parameter_shapes(
    const ModelConfig& config) {
  config.validate();
  const size_t D = config.hidden_dim;
  std::vector<std::pair<std::string, std::vector<size_t>>> out;
  out.emplace_back("patch_embed.weight", std::vector<size_t>{config.patch_dim(), D});
  out.emplace_back("patch_embed.bias", std::vector<size_t>{D});
  out.emplace_back("cls_token", std::vector<size_t>{1, 1, D});
  out.emplace_back("pos_embed", std::vector<size_t>{1, config.tokens(), D});
  for (size_t i = 0; i < config.num_layers; ++i) {
    const std::string L = "layers." + std::to_string(i) + ".";
    out.emplace_back(L + "ln1.gain", std::vector<size_t>{D});
    out.emplace_back(L + "ln1.bias", std::vector<size_t>{D});
    for (const char* proj : {"q", "k", "v", "out"}) {
      out.emplace_back(L + "attn." + proj + ".weight", std::vector<size_t>{D, D});
      out.emplace_back(L + "attn." + proj + ".bias", std::vector<size_t>{D});
    }
    out.emplace_back(L + "ln2.gain", std::vector<size_t>{D});
    out.emplace_back(L + "ln2.bias", std::vector<size_t>{D});
    out.emplace_back(L + "mlp.fc1.weight", std::vector<size_t>{D, config.mlp_dim});
    out.emplace_back(L + "mlp.fc1.bias", std::vector<size_t>{config.mlp_dim});
    out.emplace_back(L + "mlp.fc2.weight", std::vector<size_t>{config.mlp_dim, D});
    out.emplace_back(L + "mlp.fc2.bias", std::vector<size_t>{D});
  }
  out.emplace_back("ln_final.gain", std::vector<size_t>{D});
  out.emplace_back("ln_final.bias", std::vector<size_t>{D});
  out.emplace_back("head.weight", std::vector<size_t>{D, config.num_classes});
  out.emplace_back("head.bias", std::vector<size_t>{config.num_classes});
  return out;
}

ViTModel ViTModel::init_parameters(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ViTModel m;
  m.config_ = config;
  const DType dt = config.dtype;
  Prng root = Prng(seed).split("vit-init");

  // Weights and positional embeddings draw truncated normals from a stream
  // named after the tensor, so list layout does not perturb initialization;
  // layer-norm gains start at 1, everything else (biases, CLS) at 0.
  for (auto& [name, shape] : parameter_shapes(config)) {
    Tensor t;
    const bool is_gain = name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
    const bool is_weight =
        name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    if (is_weight || name == "pos_embed") {
      Prng s = root.split(name);
      t = Tensor::truncated_normal(shape, 0.02, s, dt);
    } else if (is_gain) {
      t = Tensor::full(shape, 1.0, dt);
    } else {
      t = Tensor::zeros(shape, dt);
    }
    t.set_requires_grad(true);
    m.params_.push_back({name, std::move(t), true});
  }
  m.rebuild_index();
  return m;
}

void ViTModel::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
}

const Param& ViTModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("ViTModel: unknown parameter " + name);
  return params_[it->second];
}

Param& ViTModel::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("ViTModel: unknown parameter " + name);
  return params_[it->second];
}

size_t ViTModel::total_scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

size_t ViTModel::trainable_scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.value.numel();
  return n;
}

void ViTModel::set_trainable(size_t unfrozen_attention_layers) {
  if (unfrozen_attention_layers > config_.num_layers)
    throw ValidationError("set_trainable: " + std::to_string(unfrozen_attention_layers) +
                          " exceeds " + std::to_string(config_.num_layers) + " layers");
  const size_t first_unfrozen = config_.num_layers - unfrozen_attention_layers;
  for (auto& p : params_) {
    bool trainable = false;
    if (p.name.rfind("head.", 0) == 0) {
      trainable = true;
    } else if (p.name.rfind("layers.", 0) == 0 &&
               p.name.find(".attn.") != std::string::npos) {
      const size_t layer = std::stoul(p.name.substr(7));
      trainable = layer >= first_unfrozen;
    }
    p.trainable = trainable;
    p.value.set_requires_grad(trainable);
  }
}

ViTModel ViTModel::deep_copy() const {
  ViTModel m;
  m.config_ = config_;
  m.params_.reserve(params_.size());
  for (const auto& p : params_) m.params_.push_back({p.name, p.value.clone(), p.trainable});
  m.rebuild_index();
  return m;
}

ForwardOutput ViTModel::forward(const Tensor& batch, bool training, Prng* rng) const {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != config_.channels || s[2] != config_.image_size ||
      s[3] != config_.image_size)
    throw ValidationError(
        "forward: batch " + shape_str(s) + " does not match config [B x " +
        std::to_string(config_.channels) + " x " + std::to_string(config_.image_size) +
        " x " + std::to_string(config_.image_size) + "]");
  if (batch.dtype() != config_.dtype)
    throw ValidationError(std::string("forward: batch dtype ") + dtype_name(batch.dtype()) +
                          " does not match model dtype " + dtype_name(config_.dtype));
  if (training && config_.head_dropout > 0.0 && rng == nullptr)
    throw ValidationError("forward: training mode needs an rng for dropout");

  const size_t B = s[0];
  const size_t D = config_.hidden_dim;
  const size_t heads = config_.num_heads;
  const size_t hd = D / heads;
  const size_t T = config_.tokens();

  Tensor x = patchify_batch(batch, config_.patch_size);
  x = linear(x, p("patch_embed.weight"), p("patch_embed.bias"));
  Tensor cls = broadcast_to(p("cls_token"), {B, 1, D});
  x = concat(cls, x, 1);
  x = add(x, p("pos_embed"));

  ForwardOutput out;
  out.attentions.reserve(config_.num_layers);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  for (size_t i = 0; i < config_.num_layers; ++i) {
    const std::string L = "layers." + std::to_string(i) + ".";
    Tensor h = layer_norm(x, p(L + "ln1.gain"), p(L + "ln1.bias"), kLayerNormEps);
    auto split_heads = [&](const Tensor& t) {
      return permute(reshape(t, {B, T, heads, hd}), {0, 2, 1, 3});
    };
    Tensor q = split_heads(linear(h, p(L + "attn.q.weight"), p(L + "attn.q.bias")));
    Tensor k = split_heads(linear(h, p(L + "attn.k.weight"), p(L + "attn.k.bias")));
    Tensor v = split_heads(linear(h, p(L + "attn.v.weight"), p(L + "attn.v.bias")));
    Tensor scores = mul_scalar(matmul(q, transpose_last2(k)), scale);
    Tensor attn = softmax(scores, 3);
    out.attentions.push_back(attn.detach());
    Tensor ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {B, T, D});
    x = add(x, linear(ctx, p(L + "attn.out.weight"), p(L + "attn.out.bias")));

    Tensor h2 = layer_norm(x, p(L + "ln2.gain"), p(L + "ln2.bias"), kLayerNormEps);
    Tensor mlp = linear(gelu(linear(h2, p(L + "mlp.fc1.weight"), p(L + "mlp.fc1.bias"))),
                        p(L + "mlp.fc2.weight"), p(L + "mlp.fc2.bias"));
    x = add(x, mlp);
  }

  x = layer_norm(x, p("ln_final.gain"), p("ln_final.bias"), kLayerNormEps);
  Tensor cls_emb = reshape(slice(x, 1, 0, 1), {B, D});
  if (training && config_.head_dropout > 0.0)
    cls_emb = dropout(cls_emb, config_.head_dropout, true, *rng);
  out.logits = linear(cls_emb, p("head.weight"), p("head.bias"));
  return out;
}

Prediction predict(const Tensor& logits) {
  const auto& s = logits.shape();
  if (s.size() != 2 || s[1] != 2)
    throw ValidationError("predict: expected [B x 2] logits, got " + shape_str(s));
  Prediction pred;
  const size_t B = s[0];
  pred.pain_probability.resize(B);
  pred.labels.resize(B);
  for (size_t b = 0; b < B; ++b) {
    const double l0 = logits.item(b * 2);
    const double l1 = logits.item(b * 2 + 1);
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const double p1 = e1 / (e0 + e1);
    pred.pain_probability[b] = p1;
    pred.labels[b] = p1 >= 0.5 ? 1 : 0;
  }
  return pred;
}

}  // namespace attnpain::vit
