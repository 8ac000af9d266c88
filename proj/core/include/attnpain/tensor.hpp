#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "attnpain/errors.hpp"
#include "attnpain/prng.hpp"

namespace attnpain {

enum class DType : uint8_t { f32 = 0, f64 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

struct TensorNode;

// Value-semantic handle to an n-dimensional array with optional reverse-mode
// gradient tracking. Storage is contiguous row-major, f64 by default with an
// f32 mode for speed. Ops on tensors with requires_grad build a single-use
// tape that backward() consumes and frees.
//
// A tensor is immutable while a forward graph referencing it is alive; the
// mutating accessors below are for optimizers and oracles between passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, DType dt = DType::f64,
                      bool requires_grad = false);
  static Tensor full(std::vector<size_t> shape, double value, DType dt = DType::f64,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<size_t> shape, const std::vector<double>& values,
                          DType dt = DType::f64, bool requires_grad = false);
  static Tensor uniform(std::vector<size_t> shape, double lo, double hi, Prng& rng,
                        DType dt = DType::f64, bool requires_grad = false);
  // Mean 0, values resampled beyond 2 stddev.
  static Tensor truncated_normal(std::vector<size_t> shape, double stddev, Prng& rng,
                                 DType dt = DType::f64, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const;
  size_t ndim() const { return shape().size(); }
  size_t dim(size_t i) const { return shape().at(i); }
  size_t numel() const;
  DType dtype() const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  bool is_leaf() const;

  // Element access (converting to double regardless of dtype).
  double item(size_t flat_index) const;
  void set_item(size_t flat_index, double value);
  double value() const;  // single-element tensors
  std::vector<double> to_vector() const;

  // Raw typed access; throws ValidationError on dtype mismatch.
  double* data_f64();
  const double* data_f64() const;
  float* data_f32();
  const float* data_f32() const;

  bool has_grad() const;
  std::vector<double> grad_to_vector() const;
  double grad_item(size_t flat_index) const;
  const double* grad_data_f64() const;
  const float* grad_data_f32() const;
  void zero_grad();
  // Adds g (same shape) into this tensor's gradient buffer.
  void accumulate_grad(const std::vector<double>& g);

  Tensor detach() const;          // shares nothing with the tape; copies data
  Tensor clone() const;           // deep copy incl. requires_grad
  Tensor cast(DType dt) const;    // converting copy, no grad tracking

  bool all_finite() const;

  // Internal.
  const std::shared_ptr<TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

// Scoped suppression of tape construction (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// ---- elementwise ----
// add/sub/mul broadcast right-aligned numpy-style (dims equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor gelu(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& a, std::vector<size_t> shape);
Tensor permute(const Tensor& a, const std::vector<size_t>& dims);
Tensor transpose_last2(const Tensor& a);
Tensor broadcast_to(const Tensor& a, const std::vector<size_t>& shape);
Tensor concat(const Tensor& a, const Tensor& b, size_t axis);
Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len);

// ---- linear algebra ----
// a: [..., m, k]; b: [k, n] or [..., k, n] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- normalization / activations ----
Tensor softmax(const Tensor& x, size_t axis);
// Normalizes over the last axis; gain/bias are 1-d of that length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Inverted dropout: kept units scaled by 1/(1-rate) at training time;
// identity when training is false or rate is 0.
Tensor dropout(const Tensor& x, double rate, bool training, Prng& rng);

// ---- reductions / loss ----
Tensor sum(const Tensor& a);   // -> shape {1}
Tensor mean(const Tensor& a);  // -> shape {1}
// logits, targets: [rows, classes]; soft targets supported; mean over rows.
Tensor cross_entropy(const Tensor& logits, const Tensor& targets);

// Runs reverse-mode accumulation from a single-element output into every
// requires_grad leaf, then frees the tape (single use).
void backward(const Tensor& output);

std::string shape_str(const std::vector<size_t>& shape);

}  // namespace attnpain
