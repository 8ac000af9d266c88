#include "attnpain/interpret.hpp"

#include <algorithm>
#include <cmath>

#include "attnpain/image_io.hpp"

namespace attnpain::interpret {

namespace {

// 0 when the patch count is not a perfect square (hand-built stacks);
// such maps hold values but cannot be rendered on an image grid.
size_t patch_grid_side(size_t tokens) {
  const size_t patches = tokens - 1;
  const size_t side = static_cast<size_t>(std::lround(std::sqrt(static_cast<double>(patches))));
  return side * side == patches ? side : 0;
}

SaliencyMap max_normalize(size_t grid, std::vector<double> values) {
  double mx = 0.0;
  for (double v : values) mx = std::max(mx, v);
  if (mx > 0.0)
    for (double& v : values) v /= mx;
  return SaliencyMap{grid, std::move(values)};
}

}  // namespace

size_t AttentionStack::num_heads() const {
  if (layers.empty()) throw ValidationError("AttentionStack: empty");
  return layers.front().shape()[0];
}

size_t AttentionStack::num_tokens() const {
  if (layers.empty()) throw ValidationError("AttentionStack: empty");
  return layers.front().shape()[1];
}

AttentionStack stack_for_sample(const std::vector<Tensor>& batch_attentions, size_t b) {
  AttentionStack stack;
  for (const auto& layer : batch_attentions) {
    const auto& s = layer.shape();
    if (s.size() != 4)
      throw ValidationError("stack_for_sample: expected [B,H,T,T], got " + shape_str(s));
    if (b >= s[0]) throw ValidationError("stack_for_sample: sample index out of range");
    stack.layers.push_back(reshape(slice(layer, 0, b, 1), {s[1], s[2], s[3]}));
  }
  return stack;
}

SaliencyMap head_map(const AttentionStack& stack, size_t layer, size_t head) {
  if (layer >= stack.num_layers())
    throw ValidationError("head_map: layer " + std::to_string(layer) + " out of range");
  const auto& a = stack.layers[layer];
  const size_t H = a.shape()[0], T = a.shape()[1];
  if (head >= H)
    throw ValidationError("head_map: head " + std::to_string(head) + " out of range");
  const size_t grid = patch_grid_side(T);
  // CLS query row, CLS column dropped.
  std::vector<double> v(T - 1);
  for (size_t j = 1; j < T; ++j) v[j - 1] = a.item(head * T * T + 0 * T + j);
  return max_normalize(grid, std::move(v));
}

SaliencyMap last_layer_max(const AttentionStack& stack) {
  if (stack.num_layers() == 0) throw ValidationError("last_layer_max: empty stack");
  const auto& a = stack.layers.back();
  const size_t H = a.shape()[0], T = a.shape()[1];
  const size_t grid = patch_grid_side(T);
  std::vector<double> v(T - 1, 0.0);
  for (size_t h = 0; h < H; ++h)
    for (size_t j = 1; j < T; ++j)
      v[j - 1] = std::max(v[j - 1], a.item(h * T * T + j));
  return max_normalize(grid, std::move(v));
}

SaliencyMap rollout(const AttentionStack& stack, Fusion fusion) {
  if (stack.num_layers() == 0) throw ValidationError("rollout: empty stack");
  const size_t T = stack.num_tokens();
  const size_t grid = patch_grid_side(T);

  // R starts as identity; R <- A_hat(layer) * R, first layer to last.
  std::vector<double> R(T * T, 0.0);
  for (size_t i = 0; i < T; ++i) R[i * T + i] = 1.0;
  std::vector<double> fused(T * T), next(T * T);

  for (const auto& a : stack.layers) {
    const size_t H = a.shape()[0];
    if (a.shape()[1] != T || a.shape()[2] != T)
      throw ValidationError("rollout: inconsistent token counts across layers");
    for (size_t i = 0; i < T * T; ++i) {
      if (fusion == Fusion::max) {
        double mx = a.item(i);
        for (size_t h = 1; h < H; ++h) mx = std::max(mx, a.item(h * T * T + i));
        fused[i] = mx;
      } else {
        double s = 0.0;
        for (size_t h = 0; h < H; ++h) s += a.item(h * T * T + i);
        fused[i] = s / static_cast<double>(H);
      }
    }
    // Residual path: 0.5*A + 0.5*I, rows re-normalized to sum 1.
    for (size_t i = 0; i < T; ++i) {
      double row_sum = 0.0;
      for (size_t j = 0; j < T; ++j) {
        double v = 0.5 * fused[i * T + j] + (i == j ? 0.5 : 0.0);
        fused[i * T + j] = v;
        row_sum += v;
      }
      for (size_t j = 0; j < T; ++j) fused[i * T + j] /= row_sum;
    }
    for (size_t i = 0; i < T; ++i)
      for (size_t j = 0; j < T; ++j) {
        double acc = 0.0;
        for (size_t k = 0; k < T; ++k) acc += fused[i * T + k] * R[k * T + j];
        next[i * T + j] = acc;
      }
    std::swap(R, next);
  }

  // CLS row over patch tokens; the CLS self-weight is dropped.
  std::vector<double> v(T - 1);
  for (size_t j = 1; j < T; ++j) v[j - 1] = R[j];
  return max_normalize(grid, std::move(v));
}

Rgb saliency_color(double value, double threshold_lo, double threshold_hi) {
  if (threshold_hi <= threshold_lo)
    throw ValidationError("saliency_color: threshold_hi must exceed threshold_lo");
  double t = (value - threshold_lo) / (threshold_hi - threshold_lo);
  t = std::clamp(t, 0.0, 1.0);
  Rgb c;
  c.r = static_cast<uint8_t>(std::lround(255.0 * t));
  c.g = 0;
  c.b = static_cast<uint8_t>(std::lround(255.0 * (1.0 - t)));
  return c;
}

void render_overlay(const SaliencyMap& map, const Tensor& image, double threshold_lo,
                    double threshold_hi, const std::string& out_path) {
  const auto& s = image.shape();
  if (s.size() != 3) throw ValidationError("render_overlay: expected [C,H,W] image");
  const size_t C = s[0], H = s[1], W = s[2];
  if (map.grid == 0 || H % map.grid != 0 || W % map.grid != 0)
    throw ValidationError("render_overlay: map grid " + std::to_string(map.grid) +
                          " does not tile image " + shape_str(s));
  const size_t ph = H / map.grid, pw = W / map.grid;

  auto gray_at = [&](size_t y, size_t x) {
    if (C == 1) return image.item(y * W + x);
    double acc = 0.0;
    for (size_t c = 0; c < C; ++c) acc += image.item(c * H * W + y * W + x);
    return acc / static_cast<double>(C);
  };

  Tensor out = Tensor::zeros({3, H, W});
  double* od = out.data_f64();
  for (size_t y = 0; y < H; ++y)
    for (size_t x = 0; x < W; ++x) {
      const double g = gray_at(y, x);
      const double v = map.at(y / ph, x / pw);
      double r = g, gr = g, b = g;
      if (v >= threshold_lo) {
        const Rgb c = saliency_color(v, threshold_lo, threshold_hi);
        r = 0.5 * g + 0.5 * (c.r / 255.0);
        gr = 0.5 * g + 0.5 * (c.g / 255.0);
        b = 0.5 * g + 0.5 * (c.b / 255.0);
      }
      od[0 * H * W + y * W + x] = r;
      od[1 * H * W + y * W + x] = gr;
      od[2 * H * W + y * W + x] = b;
    }
  write_ppm(out, out_path);
}

}  // namespace attnpain::interpret
