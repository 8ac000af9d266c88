#include <cmath>

#include "attnpain/image_io.hpp"
#include "attnpain/interpret.hpp"
#include "doctest.h"
#include "support/test_util.hpp"

using namespace attnpain;
using namespace attnpain::interpret;

namespace {

// [H,T,T] with every row normalized.
Tensor attention_layer(size_t heads, size_t tokens, Prng& rng) {
  Tensor a = Tensor::zeros({heads, tokens, tokens});
  for (size_t h = 0; h < heads; ++h)
    for (size_t q = 0; q < tokens; ++q) {
      double sum = 0;
      std::vector<double> row(tokens);
      for (auto& v : row) {
        v = rng.uniform(0.01, 1.0);
        sum += v;
      }
      for (size_t k = 0; k < tokens; ++k)
        a.set_item((h * tokens + q) * tokens + k, row[k] / sum);
    }
  return a;
}

Tensor identity_layer(size_t heads, size_t tokens) {
  Tensor a = Tensor::zeros({heads, tokens, tokens});
  for (size_t h = 0; h < heads; ++h)
    for (size_t t = 0; t < tokens; ++t) a.set_item((h * tokens + t) * tokens + t, 1.0);
  return a;
}

Tensor uniform_layer(size_t heads, size_t tokens) {
  return Tensor::full({heads, tokens, tokens}, 1.0 / static_cast<double>(tokens));
}

}  // namespace

TEST_CASE("head_map degenerate and analytic cases") {
  AttentionStack id;
  id.layers.push_back(identity_layer(2, 17));
  SaliencyMap zero = head_map(id, 0, 0);
  for (double v : zero.values) CHECK(v == 0.0);

  AttentionStack uni;
  uni.layers.push_back(uniform_layer(2, 17));
  SaliencyMap flat = head_map(uni, 0, 1);
  CHECK(flat.grid == 4);
  for (double v : flat.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  // Hand-built 4-token attention; CLS row (0.1, 0.6, 0.2, 0.1).
  Tensor a = Tensor::zeros({1, 4, 4});
  const double cls_row[4] = {0.1, 0.6, 0.2, 0.1};
  for (size_t k = 0; k < 4; ++k) a.set_item(k, cls_row[k]);
  for (size_t q = 1; q < 4; ++q) a.set_item(q * 4 + q, 1.0);
  AttentionStack hand;
  hand.layers.push_back(a);
  SaliencyMap m = head_map(hand, 0, 0);
  CHECK(m.values[0] == doctest::Approx(1.0));
  CHECK(m.values[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(m.values[2] == doctest::Approx(1.0 / 6).epsilon(1e-12));

  CHECK_THROWS_AS(head_map(hand, 1, 0), ValidationError);
  CHECK_THROWS_AS(head_map(hand, 0, 2), ValidationError);
}

TEST_CASE("last_layer_max equals the per-patch max over heads") {
  Prng rng(3);
  AttentionStack stack;
  stack.layers.push_back(attention_layer(3, 10, rng));
  stack.layers.push_back(attention_layer(3, 10, rng));

  SaliencyMap got = last_layer_max(stack);
  const Tensor& a = stack.layers.back();
  std::vector<double> expect(9, 0.0);
  for (size_t h = 0; h < 3; ++h)
    for (size_t j = 1; j < 10; ++j)
      expect[j - 1] = std::max(expect[j - 1], a.item((h * 10) * 10 + j));
  double mx = 0;
  for (double v : expect) mx = std::max(mx, v);
  for (auto& v : expect) v /= mx;
  for (size_t i = 0; i < 9; ++i) CHECK(got.values[i] == doctest::Approx(expect[i]).epsilon(1e-12));

  // Single head: last_layer_max equals head_map of that head.
  AttentionStack single;
  single.layers.push_back(attention_layer(1, 10, rng));
  SaliencyMap hm = head_map(single, 0, 0);
  SaliencyMap lm = last_layer_max(single);
  for (size_t i = 0; i < hm.values.size(); ++i) CHECK(hm.values[i] == lm.values[i]);
}

TEST_CASE("two heads with disjoint peaks both survive the max") {
  Tensor a = uniform_layer(2, 5);
  // Head 0 peaks on patch token 1, head 1 on token 4 (CLS query row).
  a.set_item(1, 0.9);
  a.set_item(1 * 25 + 4, 0.9);
  AttentionStack stack;
  stack.layers.push_back(a);
  SaliencyMap m = last_layer_max(stack);
  CHECK(m.grid == 2);
  CHECK(m.values[0] == doctest::Approx(1.0));
  CHECK(m.values[3] == doctest::Approx(1.0));
}

TEST_CASE("identity attention rolls out to an all-zero patch map") {
  AttentionStack stack;
  stack.layers.push_back(identity_layer(2, 10));
  stack.layers.push_back(identity_layer(2, 10));
  for (Fusion f : {Fusion::max, Fusion::mean}) {
    SaliencyMap m = rollout(stack, f);
    for (double v : m.values) CHECK(v == 0.0);
  }
}

TEST_CASE("single uniform layer rolls out to a uniform patch map") {
  AttentionStack stack;
  stack.layers.push_back(uniform_layer(3, 5));
  SaliencyMap m = rollout(stack, Fusion::mean);
  for (double v : m.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rollout equals the explicit matrix product on a hand-built stack") {
  // 3 tokens, 2 layers, single head: the oracle composes the matrices
  // explicitly.
  const std::vector<double> a1{0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.25, 0.25, 0.5};
  const std::vector<double> a2{0.1, 0.8, 0.1, 0.3, 0.4, 0.3, 0.2, 0.2, 0.6};
  AttentionStack stack;
  stack.layers.push_back(Tensor::from_data({1, 3, 3}, a1));
  stack.layers.push_back(Tensor::from_data({1, 3, 3}, a2));

  auto hat = [](const std::vector<double>& a) {
    std::vector<double> h(9);
    for (size_t i = 0; i < 3; ++i) {
      double row = 0;
      for (size_t j = 0; j < 3; ++j) {
        h[i * 3 + j] = 0.5 * a[i * 3 + j] + (i == j ? 0.5 : 0.0);
        row += h[i * 3 + j];
      }
      for (size_t j = 0; j < 3; ++j) h[i * 3 + j] /= row;
    }
    return h;
  };
  const auto h1 = hat(a1);
  const auto h2 = hat(a2);
  std::vector<double> prod(9, 0.0);  // h2 * h1
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j)
      for (size_t k = 0; k < 3; ++k) prod[i * 3 + j] += h2[i * 3 + k] * h1[k * 3 + j];

  double expect[2] = {prod[1], prod[2]};
  const double mx = std::max(expect[0], expect[1]);
  expect[0] /= mx;
  expect[1] /= mx;

  SaliencyMap m = rollout(stack, Fusion::mean);
  CHECK(std::abs(m.values[0] - expect[0]) < 1e-9);
  CHECK(std::abs(m.values[1] - expect[1]) < 1e-9);

  // Single head: max fusion coincides with mean fusion.
  SaliencyMap mm = rollout(stack, Fusion::max);
  CHECK(std::abs(mm.values[0] - expect[0]) < 1e-9);
  CHECK(std::abs(mm.values[1] - expect[1]) < 1e-9);
}

TEST_CASE("mean-fused rollout with identical heads equals single-head rollout") {
  Prng rng(5);
  Tensor one_head = attention_layer(1, 10, rng);
  Tensor three_heads = Tensor::zeros({3, 10, 10});
  for (size_t h = 0; h < 3; ++h)
    for (size_t i = 0; i < 100; ++i) three_heads.set_item(h * 100 + i, one_head.item(i));

  AttentionStack single, multi;
  single.layers.push_back(one_head);
  multi.layers.push_back(three_heads);
  SaliencyMap s = rollout(single, Fusion::mean);
  SaliencyMap m = rollout(multi, Fusion::mean);
  for (size_t i = 0; i < s.values.size(); ++i)
    CHECK(s.values[i] == doctest::Approx(m.values[i]).epsilon(1e-12));
}

TEST_CASE("rollout is pure per sample") {
  Prng rng(7);
  // Batch attentions [B=2,H,T,T] differing in slot 1 only.
  Tensor layer = Tensor::zeros({2, 2, 5, 5});
  Tensor shared = attention_layer(2, 5, rng);
  Tensor other1 = attention_layer(2, 5, rng);
  Tensor other2 = attention_layer(2, 5, rng);
  for (size_t i = 0; i < 50; ++i) {
    layer.set_item(i, shared.item(i));
    layer.set_item(50 + i, other1.item(i));
  }
  Tensor layer_b = Tensor::zeros({2, 2, 5, 5});
  for (size_t i = 0; i < 50; ++i) {
    layer_b.set_item(i, shared.item(i));
    layer_b.set_item(50 + i, other2.item(i));
  }
  SaliencyMap a = rollout(stack_for_sample({layer}, 0));
  SaliencyMap b = rollout(stack_for_sample({layer_b}, 0));
  CHECK(a.values == b.values);
}

TEST_CASE("saliency maps stay in [0,1] with max exactly 1") {
  Prng rng(9);
  AttentionStack stack;
  for (int l = 0; l < 3; ++l) stack.layers.push_back(attention_layer(4, 17, rng));
  for (const SaliencyMap& m :
       {head_map(stack, 2, 1), last_layer_max(stack), rollout(stack, Fusion::max)}) {
    double mx = 0;
    for (double v : m.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      mx = std::max(mx, v);
    }
    CHECK(mx == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("colormap endpoints and midpoint") {
  Rgb lo = saliency_color(0.7, 0.7, 1.0);
  CHECK(lo.r == 0);
  CHECK(lo.b == 255);
  Rgb hi = saliency_color(1.0, 0.7, 1.0);
  CHECK(hi.r == 255);
  CHECK(hi.b == 0);
  Rgb mid = saliency_color(0.85, 0.7, 1.0);
  CHECK(mid.r == 128);
  CHECK(mid.g == 0);
  CHECK(mid.b == 128);
  CHECK_THROWS_AS(saliency_color(0.5, 1.0, 0.7), ValidationError);
}

TEST_CASE("overlay leaves cold patches untouched and tints hot ones") {
  const std::string dir = test_util::make_temp_dir("overlay");
  Prng rng(11);
  Tensor img = Tensor::uniform({1, 8, 8}, 0.2, 0.8, rng);

  SaliencyMap all_zero{2, {0, 0, 0, 0}};
  const std::string p0 = dir + "/zero.ppm";
  render_overlay(all_zero, img, 0.7, 1.0, p0);
  Tensor back = read_image(p0);
  for (size_t y = 0; y < 8; ++y)
    for (size_t x = 0; x < 8; ++x)
      for (size_t c = 0; c < 3; ++c)
        CHECK(std::abs(back.item(c * 64 + y * 8 + x) - img.item(y * 8 + x)) <=
              0.5 / 255.0 + 1e-12);

  SaliencyMap one_hot{2, {1.0, 0, 0, 0}};
  const std::string p1 = dir + "/hot.ppm";
  render_overlay(one_hot, img, 0.7, 1.0, p1);
  Tensor hot = read_image(p1);
  for (size_t y = 0; y < 4; ++y)
    for (size_t x = 0; x < 4; ++x) {
      const double g = img.item(y * 8 + x);
      CHECK(std::abs(hot.item(y * 8 + x) - (0.5 * g + 0.5)) <= 0.5 / 255.0 + 1e-12);
      CHECK(std::abs(hot.item(64 + y * 8 + x) - 0.5 * g) <= 0.5 / 255.0 + 1e-12);
      CHECK(std::abs(hot.item(128 + y * 8 + x) - 0.5 * g) <= 0.5 / 255.0 + 1e-12);
    }
  // Patch (0,1) stayed grayscale.
  CHECK(std::abs(hot.item(4) - img.item(4)) <= 0.5 / 255.0 + 1e-12);

  CHECK_THROWS_AS(render_overlay(one_hot, img, 0.7, 1.0, dir + "/no/dir/x.ppm"), IoError);
  SaliencyMap bad{3, std::vector<double>(9, 0.0)};
  CHECK_THROWS_AS(render_overlay(bad, img, 0.7, 1.0, dir + "/bad.ppm"), ValidationError);
}
