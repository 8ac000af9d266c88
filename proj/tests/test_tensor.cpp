#include <cmath>
#include <vector>

#include "attnpain/tensor.hpp"
#include "doctest.h"
#include "support/test_util.hpp"

using namespace attnpain;

TEST_CASE("matmul agrees with hand arithmetic") {
  Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(id, a);
  CHECK(r.to_vector() == std::vector<double>{1, 2, 3, 4});

  Tensor ones = Tensor::from_data({2, 1}, {1, 1});
  Tensor r2 = matmul(a, ones);
  CHECK(r2.to_vector() == std::vector<double>{3, 7});

  Tensor bad = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(matmul(bad, Tensor::zeros({2, 3})),
                       doctest::Contains("[2x3]"), ValidationError);
}

TEST_CASE("batched matmul with shared rhs") {
  Prng rng(1);
  Tensor a = Tensor::uniform({3, 2, 4}, -1, 1, rng);
  Tensor b = Tensor::uniform({4, 5}, -1, 1, rng);
  Tensor c = matmul(a, b);
  CHECK(c.shape() == std::vector<size_t>{3, 2, 5});
  for (size_t bt = 0; bt < 3; ++bt)
    for (size_t i = 0; i < 2; ++i)
      for (size_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (size_t k = 0; k < 4; ++k)
          acc += a.item(bt * 8 + i * 4 + k) * b.item(k * 5 + j);
        CHECK(c.item(bt * 10 + i * 5 + j) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("softmax examples and stability") {
  Tensor x = Tensor::from_data({3}, {1, 1, 1});
  auto v = softmax(x, 0).to_vector();
  for (double p : v) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor y = Tensor::from_data({2}, {0.0, std::log(2.0)});
  auto w = softmax(y, 0).to_vector();
  CHECK(w[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

  Tensor big = Tensor::from_data({2}, {1000.0, 1000.0});
  auto s = softmax(big, 0);
  CHECK(s.all_finite());
  CHECK(s.to_vector() == std::vector<double>{0.5, 0.5});
}

TEST_CASE("softmax slices sum to 1 and stay positive on any axis") {
  Prng rng(2);
  Tensor x = Tensor::uniform({3, 4, 5}, -30, 30, rng);
  for (size_t axis = 0; axis < 3; ++axis) {
    Tensor y = softmax(x, axis);
    const auto& shape = x.shape();
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (size_t d = axis + 1; d < 3; ++d) inner *= shape[d];
    for (size_t u = 0; u < outer; ++u)
      for (size_t in = 0; in < inner; ++in) {
        double sum = 0;
        for (size_t i = 0; i < shape[axis]; ++i) {
          double p = y.item(u * shape[axis] * inner + i * inner + in);
          CHECK(p > 0.0);
          sum += p;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
      }
  }
}

TEST_CASE("layer_norm analytic cases") {
  Tensor gain1 = Tensor::from_data({3}, {1, 1, 1});
  Tensor bias0 = Tensor::zeros({3});
  Tensor flat = Tensor::from_data({3}, {5, 5, 5});
  auto z = layer_norm(flat, gain1, bias0, 1e-5).to_vector();
  for (double v : z) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  Tensor g2 = Tensor::from_data({2}, {1, 1});
  Tensor b2 = Tensor::zeros({2});
  Tensor x = Tensor::from_data({2}, {1, 3});
  auto n = layer_norm(x, g2, b2, 1e-12).to_vector();
  CHECK(n[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(n[1] == doctest::Approx(1.0).epsilon(1e-6));

  Tensor gain2 = Tensor::from_data({2}, {2, 2});
  Tensor bias1 = Tensor::from_data({2}, {1, 1});
  auto m = layer_norm(x, gain2, bias1, 1e-12).to_vector();
  CHECK(m[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(m[1] == doctest::Approx(3.0).epsilon(1e-6));

  CHECK_THROWS_AS(layer_norm(x, g2, b2, 0.0), ValidationError);
}

TEST_CASE("backward analytic cases") {
  Tensor x = Tensor::from_data({1}, {3.0}, DType::f64, true);
  Tensor y = mul(x, x);
  backward(y);
  CHECK(x.grad_item(0) == doctest::Approx(6.0).epsilon(1e-12));

  Prng rng(4);
  Tensor v = Tensor::uniform({2, 3}, -1, 1, rng, DType::f64, true);
  Tensor s = sum(v);
  backward(s);
  for (size_t i = 0; i < v.numel(); ++i) CHECK(v.grad_item(i) == 1.0);

  Tensor notscalar = Tensor::zeros({2}, DType::f64, true);
  CHECK_THROWS_AS(backward(add(notscalar, notscalar)), ValidationError);
}

TEST_CASE("three-layer MLP gradients match finite differences") {
  Prng rng(7);
  Tensor x = Tensor::uniform({4, 5}, -1, 1, rng);
  Tensor w1 = Tensor::uniform({5, 8}, -1, 1, rng, DType::f64, true);
  Tensor b1 = Tensor::uniform({8}, -1, 1, rng, DType::f64, true);
  Tensor w2 = Tensor::uniform({8, 6}, -1, 1, rng, DType::f64, true);
  Tensor b2 = Tensor::uniform({6}, -1, 1, rng, DType::f64, true);
  Tensor w3 = Tensor::uniform({6, 3}, -1, 1, rng, DType::f64, true);
  Tensor b3 = Tensor::uniform({3}, -1, 1, rng, DType::f64, true);

  auto forward_loss = [&]() {
    Tensor h1 = gelu(add(matmul(x, w1), b1));
    Tensor h2 = gelu(add(matmul(h1, w2), b2));
    Tensor out = add(matmul(h2, w3), b3);
    return mean(mul(out, out));
  };

  Tensor loss = forward_loss();
  backward(loss);

  auto eval = [&]() {
    NoGradGuard ng;
    return forward_loss().value();
  };
  double worst = 0.0;
  for (Tensor* t : {&w1, &b1, &w2, &b2, &w3, &b3}) {
    for (size_t i = 0; i < t->numel(); ++i) {
      const double num = test_util::numeric_grad(*t, i, 1e-5, eval);
      worst = std::max(worst, test_util::rel_err(t->grad_item(i), num));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("dropout contract") {
  Prng rng(5);
  Tensor x = Tensor::uniform({4, 4}, -1, 1, rng);

  Tensor same = dropout(x, 0.0, true, rng);
  CHECK(same.to_vector() == x.to_vector());
  Tensor eval_mode = dropout(x, 0.9, false, rng);
  CHECK(eval_mode.to_vector() == x.to_vector());

  Tensor trained = dropout(x, 0.5, true, rng);
  for (size_t i = 0; i < x.numel(); ++i) {
    const double r = trained.item(i);
    const bool dropped = r == 0.0;
    const bool scaled = std::abs(r - 2.0 * x.item(i)) < 1e-12;
    CHECK((dropped || scaled));
  }
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ValidationError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ValidationError);
}

TEST_CASE("dropout preserves expectation under inverted scaling") {
  Prng rng(6);
  Tensor x = Tensor::full({1000}, 1.0);
  double acc = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    Tensor d = dropout(x, 0.3, true, rng);
    for (size_t i = 0; i < d.numel(); ++i) acc += d.item(i);
  }
  acc /= reps * 1000.0;
  CHECK(acc == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("cross entropy is linear in soft targets") {
  Prng rng(8);
  Tensor logits = Tensor::uniform({3, 4}, -2, 2, rng);
  std::vector<double> tvals = {0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25, 0.7, 0.1, 0.1, 0.1};
  const double soft = cross_entropy(logits, Tensor::from_data({3, 4}, tvals)).value();

  // Target-weighted sum of one-hot losses, row by row.
  double direct = 0.0;
  for (size_t r = 0; r < 3; ++r) {
    Tensor row = Tensor::from_data({1, 4}, {logits.item(r * 4), logits.item(r * 4 + 1),
                                            logits.item(r * 4 + 2), logits.item(r * 4 + 3)});
    for (size_t c = 0; c < 4; ++c) {
      std::vector<double> oh(4, 0.0);
      oh[c] = 1.0;
      direct += tvals[r * 4 + c] * cross_entropy(row, Tensor::from_data({1, 4}, oh)).value();
    }
  }
  direct /= 3.0;
  CHECK(soft == doctest::Approx(direct).epsilon(1e-10));
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Prng rng(9);
  Tensor logits = Tensor::uniform({4, 2}, -2, 2, rng, DType::f64, true);
  Tensor targets = Tensor::from_data({4, 2}, {1, 0, 0, 1, 0.8, 0.2, 0.5, 0.5});
  backward(cross_entropy(logits, targets));
  auto eval = [&]() {
    NoGradGuard ng;
    return cross_entropy(logits, targets).value();
  };
  for (size_t i = 0; i < logits.numel(); ++i) {
    const double num = test_util::numeric_grad(logits, i, 1e-6, eval);
    CHECK(test_util::rel_err(logits.grad_item(i), num) < 1e-6);
  }
}

TEST_CASE("broadcast add/mul and their reductions") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, DType::f64, true);
  Tensor b = Tensor::from_data({3}, {10, 20, 30}, DType::f64, true);
  Tensor s = sum(add(a, b));
  CHECK(s.value() == doctest::Approx(21 + 120).epsilon(1e-12));
  backward(s);
  CHECK(b.grad_to_vector() == std::vector<double>{2, 2, 2});
  CHECK(a.grad_to_vector() == std::vector<double>(6, 1.0));

  Tensor c = Tensor::from_data({1, 3}, {1, 2, 3}, DType::f64, true);
  Tensor d = Tensor::from_data({2, 3}, {1, 1, 1, 2, 2, 2});
  backward(sum(mul(d, c)));
  CHECK(c.grad_to_vector() == std::vector<double>{3, 3, 3});

  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), ValidationError);
}

TEST_CASE("shape ops round-trip gradients") {
  Prng rng(10);
  Tensor a = Tensor::uniform({2, 3, 4}, -1, 1, rng, DType::f64, true);

  auto loss_of = [&](const std::function<Tensor()>& f) {
    a.zero_grad();
    Tensor out = f();
    Tensor loss = mean(mul(out, out));
    backward(loss);
    auto eval = [&]() {
      NoGradGuard ng;
      Tensor o = f();
      return mean(mul(o, o)).value();
    };
    for (size_t i = 0; i < a.numel(); i += 5) {
      const double num = test_util::numeric_grad(a, i, 1e-6, eval);
      CHECK(test_util::rel_err(a.grad_item(i), num) < 1e-5);
    }
  };

  loss_of([&] { return reshape(a, {6, 4}); });
  loss_of([&] { return permute(a, {2, 0, 1}); });
  loss_of([&] { return transpose_last2(a); });
  loss_of([&] { return slice(a, 1, 1, 2); });
  loss_of([&] { return concat(a, a, 2); });
  loss_of([&] { return broadcast_to(reshape(slice(a, 0, 0, 1), {1, 3, 4}), {5, 3, 4}); });
}

TEST_CASE("permute moves data where expected") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = transpose_last2(a);
  CHECK(t.shape() == std::vector<size_t>{3, 2});
  CHECK(t.to_vector() == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("concat and slice agree") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  Tensor c = concat(a, b, 0);
  CHECK(c.to_vector() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  Tensor c1 = concat(a, b, 1);
  CHECK(c1.to_vector() == std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8});
  CHECK(slice(c1, 1, 2, 2).to_vector() == std::vector<double>{5, 6, 7, 8});
  CHECK_THROWS_AS(slice(a, 1, 1, 2), ValidationError);
}

TEST_CASE("gelu matches the erf formula and its derivative") {
  Tensor x = Tensor::from_data({3}, {-1.5, 0.0, 2.0}, DType::f64, true);
  Tensor y = gelu(x);
  for (size_t i = 0; i < 3; ++i) {
    const double v = x.item(i);
    CHECK(y.item(i) == doctest::Approx(0.5 * v * (1 + std::erf(v / std::sqrt(2.0))))
                           .epsilon(1e-12));
  }
  backward(sum(y));
  auto eval = [&]() {
    NoGradGuard ng;
    return sum(gelu(x)).value();
  };
  for (size_t i = 0; i < 3; ++i) {
    const double num = test_util::numeric_grad(x, i, 1e-6, eval);
    CHECK(test_util::rel_err(x.grad_item(i), num) < 1e-7);
  }
}

TEST_CASE("forward ops keep finite values on finite input") {
  Prng rng(11);
  Tensor x = Tensor::uniform({4, 6}, -50, 50, rng);
  Tensor g = Tensor::full({6}, 1.0);
  Tensor b = Tensor::zeros({6});
  CHECK(softmax(x, 1).all_finite());
  CHECK(layer_norm(x, g, b, 1e-5).all_finite());
  CHECK(gelu(x).all_finite());
  CHECK(matmul(x, transpose_last2(x)).all_finite());
}

TEST_CASE("tape is single-use") {
  Tensor x = Tensor::from_data({1}, {2.0}, DType::f64, true);
  Tensor y = mul(x, x);
  backward(y);
  CHECK(x.grad_item(0) == doctest::Approx(4.0));
  backward(y);  // tape already freed; must not double-accumulate
  CHECK(x.grad_item(0) == doctest::Approx(4.0));
}

TEST_CASE("f32 mode works and mixing dtypes fails") {
  Prng rng(12);
  Tensor a = Tensor::uniform({3, 3}, -1, 1, rng, DType::f32, true);
  Tensor b = Tensor::uniform({3, 3}, -1, 1, rng, DType::f32);
  Tensor loss = mean(mul(matmul(a, b), matmul(a, b)));
  CHECK(loss.dtype() == DType::f32);
  backward(loss);
  CHECK(a.has_grad());

  Tensor c64 = Tensor::zeros({3, 3});
  CHECK_THROWS_AS(add(a, c64), ValidationError);
  CHECK(c64.cast(DType::f32).dtype() == DType::f32);
}

TEST_CASE("zero-sized dimensions are rejected") {
  CHECK_THROWS_AS(Tensor::zeros({2, 0, 3}), ValidationError);
  CHECK_THROWS_AS(Tensor::zeros({0}), ValidationError);
}

TEST_CASE("truncated normal init is deterministic per seed") {
  Prng r1(99), r2(99), r3(100);
  Tensor a = Tensor::truncated_normal({16}, 0.02, r1);
  Tensor b = Tensor::truncated_normal({16}, 0.02, r2);
  Tensor c = Tensor::truncated_normal({16}, 0.02, r3);
  CHECK(a.to_vector() == b.to_vector());
  CHECK(a.to_vector() != c.to_vector());
}
