#include "attnpain/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace attnpain {

struct TensorNode {
  std::vector<size_t> shape;
  DType dtype = DType::f64;
  std::vector<float> f32;
  std::vector<double> f64;
  bool requires_grad = false;
  bool leaf = true;
  bool grad_present = false;
  std::vector<float> grad_f32;
  std::vector<double> grad_f64;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;

  size_t numel() const {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }
};

namespace {

thread_local int g_no_grad_depth = 0;

template <class T>
std::vector<T>& data_of(TensorNode& n);
template <>
std::vector<float>& data_of<float>(TensorNode& n) { return n.f32; }
template <>
std::vector<double>& data_of<double>(TensorNode& n) { return n.f64; }

template <class T>
const std::vector<T>& data_of(const TensorNode& n) {
  return data_of<T>(const_cast<TensorNode&>(n));
}

template <class T>
std::vector<T>& grad_of(TensorNode& n);
template <>
std::vector<float>& grad_of<float>(TensorNode& n) { return n.grad_f32; }
template <>
std::vector<double>& grad_of<double>(TensorNode& n) { return n.grad_f64; }

template <class T>
void ensure_grad(TensorNode& n) {
  auto& g = grad_of<T>(n);
  if (!n.grad_present) {
    g.assign(n.numel(), T(0));
    n.grad_present = true;
  }
}

template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f32) return f(float{});
  return f(double{});
}

std::shared_ptr<TensorNode> new_node(std::vector<size_t> shape, DType dt) {
  for (size_t d : shape)
    if (d == 0) throw ValidationError("tensor shapes need positive dimensions, got " +
                                      shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->dtype = dt;
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    data_of<T>(*n).assign(n->numel(), T(0));
  });
  return n;
}

void check_defined(const Tensor& t, const char* who) {
  if (!t.defined()) throw ValidationError(std::string(who) + ": undefined tensor");
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* who) {
  if (a.dtype() != b.dtype())
    throw ValidationError(std::string(who) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                          " vs " + dtype_name(b.dtype()) + ")");
}

std::vector<size_t> row_major_strides(const std::vector<size_t>& shape) {
  std::vector<size_t> s(shape.size(), 1);
  for (size_t d = shape.size(); d-- > 1;) s[d - 1] = s[d] * shape[d];
  return s;
}

// Right-aligned broadcast result shape, or throws.
std::vector<size_t> broadcast_shape(const std::vector<size_t>& a, const std::vector<size_t>& b,
                                    const char* who) {
  size_t nd = std::max(a.size(), b.size());
  std::vector<size_t> out(nd, 1);
  for (size_t i = 0; i < nd; ++i) {
    size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ValidationError(std::string(who) + ": shapes " + shape_str(a) + " and " +
                            shape_str(b) + " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides into `in` for iterating over `out` (0 on broadcast dims).
std::vector<size_t> broadcast_strides(const std::vector<size_t>& in,
                                      const std::vector<size_t>& out) {
  auto in_strides = row_major_strides(in);
  std::vector<size_t> s(out.size(), 0);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    s[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : in_strides[i];
  return s;
}

struct Odometer {
  explicit Odometer(const std::vector<size_t>& shape) : shape_(shape), idx_(shape.size(), 0) {}
  // Offset into a buffer described by per-axis strides.
  size_t offset(const std::vector<size_t>& strides) const {
    size_t o = 0;
    for (size_t d = 0; d < idx_.size(); ++d) o += idx_[d] * strides[d];
    return o;
  }
  void next() {
    for (size_t d = idx_.size(); d-- > 0;) {
      if (++idx_[d] < shape_[d]) return;
      idx_[d] = 0;
    }
  }
  const std::vector<size_t>& shape_;
  std::vector<size_t> idx_;
};

// Sums `full` (shaped out_shape) into a buffer shaped in_shape, undoing
// broadcasting.
template <class T>
void reduce_into(const std::vector<T>& full, const std::vector<size_t>& out_shape,
                 std::vector<T>& target, const std::vector<size_t>& in_shape) {
  if (in_shape == out_shape) {
    for (size_t i = 0; i < full.size(); ++i) target[i] += full[i];
    return;
  }
  auto tstr = broadcast_strides(in_shape, out_shape);
  Odometer od(out_shape);
  for (size_t i = 0; i < full.size(); ++i, od.next()) target[od.offset(tstr)] += full[i];
}

bool should_track(std::initializer_list<const Tensor*> inputs) {
  if (g_no_grad_depth > 0) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void attach(const std::shared_ptr<TensorNode>& out,
            std::initializer_list<const Tensor*> inputs, std::function<void()> fn) {
  out->requires_grad = true;
  out->leaf = false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) out->parents.push_back(t->node());
  out->backward_fn = std::move(fn);
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(std::vector<size_t> shape, DType dt, bool requires_grad) {
  auto n = new_node(std::move(shape), dt);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<size_t> shape, double value, DType dt, bool requires_grad) {
  auto n = new_node(std::move(shape), dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    auto& d = data_of<T>(*n);
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(std::vector<size_t> shape, const std::vector<double>& values,
                         DType dt, bool requires_grad) {
  auto n = new_node(std::move(shape), dt);
  if (n->numel() != values.size())
    throw ValidationError("from_data: shape " + shape_str(n->shape) + " needs " +
                          std::to_string(n->numel()) + " values, got " +
                          std::to_string(values.size()));
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    auto& d = data_of<T>(*n);
    for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::uniform(std::vector<size_t> shape, double lo, double hi, Prng& rng, DType dt,
                       bool requires_grad) {
  auto n = new_node(std::move(shape), dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : data_of<T>(*n)) v = static_cast<T>(rng.uniform(lo, hi));
  });
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::truncated_normal(std::vector<size_t> shape, double stddev, Prng& rng, DType dt,
                                bool requires_grad) {
  auto n = new_node(std::move(shape), dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : data_of<T>(*n)) v = static_cast<T>(rng.truncated_normal(stddev));
  });
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

const std::vector<size_t>& Tensor::shape() const {
  check_defined(*this, "shape");
  return node_->shape;
}

size_t Tensor::numel() const {
  check_defined(*this, "numel");
  return node_->numel();
}

DType Tensor::dtype() const {
  check_defined(*this, "dtype");
  return node_->dtype;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
  check_defined(*this, "set_requires_grad");
  if (!node_->leaf && rg)
    throw ValidationError("set_requires_grad: only leaf tensors may be toggled");
  node_->requires_grad = rg;
}

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

double Tensor::item(size_t i) const {
  check_defined(*this, "item");
  if (i >= numel()) throw ValidationError("item: index out of range");
  return dispatch(node_->dtype, [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(data_of<T>(*node_)[i]);
  });
}

void Tensor::set_item(size_t i, double v) {
  check_defined(*this, "set_item");
  if (i >= numel()) throw ValidationError("set_item: index out of range");
  dispatch(node_->dtype, [&](auto tag) {
    using T = decltype(tag);
    data_of<T>(*node_)[i] = static_cast<T>(v);
  });
}

double Tensor::value() const {
  if (numel() != 1)
    throw ValidationError("value: tensor has " + std::to_string(numel()) + " elements");
  return item(0);
}

std::vector<double> Tensor::to_vector() const {
  check_defined(*this, "to_vector");
  std::vector<double> out(numel());
  dispatch(node_->dtype, [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*node_);
    for (size_t i = 0; i < d.size(); ++i) out[i] = static_cast<double>(d[i]);
  });
  return out;
}

double* Tensor::data_f64() {
  check_defined(*this, "data_f64");
  if (node_->dtype != DType::f64) throw ValidationError("data_f64: tensor is f32");
  return node_->f64.data();
}
const double* Tensor::data_f64() const { return const_cast<Tensor*>(this)->data_f64(); }

float* Tensor::data_f32() {
  check_defined(*this, "data_f32");
  if (node_->dtype != DType::f32) throw ValidationError("data_f32: tensor is f64");
  return node_->f32.data();
}
const float* Tensor::data_f32() const { return const_cast<Tensor*>(this)->data_f32(); }

bool Tensor::has_grad() const { return node_ && node_->grad_present; }

std::vector<double> Tensor::grad_to_vector() const {
  check_defined(*this, "grad_to_vector");
  if (!node_->grad_present) throw ValidationError("grad_to_vector: no gradient present");
  std::vector<double> out(numel());
  dispatch(node_->dtype, [&](auto tag) {
    using T = decltype(tag);
    const auto& g = grad_of<T>(*node_);
    for (size_t i = 0; i < g.size(); ++i) out[i] = static_cast<double>(g[i]);
  });
  return out;
}

double Tensor::grad_item(size_t i) const {
  check_defined(*this, "grad_item");
  if (!node_->grad_present) throw ValidationError("grad_item: no gradient present");
  if (i >= numel()) throw ValidationError("grad_item: index out of range");
  return dispatch(node_->dtype, [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(grad_of<T>(*node_)[i]);
  });
}

const double* Tensor::grad_data_f64() const {
  check_defined(*this, "grad_data_f64");
  if (node_->dtype != DType::f64) throw ValidationError("grad_data_f64: tensor is f32");
  if (!node_->grad_present) throw ValidationError("grad_data_f64: no gradient present");
  return node_->grad_f64.data();
}

const float* Tensor::grad_data_f32() const {
  check_defined(*this, "grad_data_f32");
  if (node_->dtype != DType::f32) throw ValidationError("grad_data_f32: tensor is f64");
  if (!node_->grad_present) throw ValidationError("grad_data_f32: no gradient present");
  return node_->grad_f32.data();
}

void Tensor::zero_grad() {
  check_defined(*this, "zero_grad");
  node_->grad_present = false;
  node_->grad_f32.clear();
  node_->grad_f64.clear();
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
  check_defined(*this, "accumulate_grad");
  if (g.size() != numel()) throw ValidationError("accumulate_grad: size mismatch");
  dispatch(node_->dtype, [&](auto tag) {
    using T = decltype(tag);
    ensure_grad<T>(*node_);
    auto& dst = grad_of<T>(*node_);
    for (size_t i = 0; i < g.size(); ++i) dst[i] += static_cast<T>(g[i]);
  });
}

Tensor Tensor::detach() const {
  check_defined(*this, "detach");
  auto n = new_node(node_->shape, node_->dtype);
  n->f32 = node_->f32;
  n->f64 = node_->f64;
  return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node()->requires_grad = node_->requires_grad;
  return t;
}

Tensor Tensor::cast(DType dt) const {
  check_defined(*this, "cast");
  if (dt == node_->dtype) return detach();
  auto n = new_node(node_->shape, dt);
  auto src = to_vector();
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    auto& d = data_of<T>(*n);
    for (size_t i = 0; i < src.size(); ++i) d[i] = static_cast<T>(src[i]);
  });
  return Tensor(std::move(n));
}

bool Tensor::all_finite() const {
  check_defined(*this, "all_finite");
  return dispatch(node_->dtype, [&](auto tag) -> bool {
    using T = decltype(tag);
    for (T v : data_of<T>(*node_))
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  });
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

// ------------------------------------------------------------ elementwise

namespace {

// Shared skeleton for broadcasting binary ops. fwd(x, y) -> z;
// bwd computes (dx, dy) contributions from upstream g at full size.
template <class FwdT>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdT fwd,
                 std::function<void(const Tensor&, const Tensor&, const Tensor&)> attach_bwd) {
  check_defined(a, name);
  check_defined(b, name);
  check_same_dtype(a, b, name);
  auto out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto out_node = new_node(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& da = data_of<T>(*a.node());
    const auto& db = data_of<T>(*b.node());
    auto& dout = data_of<T>(*out_node);
    if (a.shape() == b.shape()) {
      for (size_t i = 0; i < dout.size(); ++i) dout[i] = fwd(da[i], db[i]);
    } else {
      auto sa = broadcast_strides(a.shape(), out_shape);
      auto sb = broadcast_strides(b.shape(), out_shape);
      Odometer od(out_shape);
      for (size_t i = 0; i < dout.size(); ++i, od.next())
        dout[i] = fwd(da[od.offset(sa)], db[od.offset(sb)]);
    }
  });
  Tensor out(out_node);
  if (should_track({&a, &b})) attach_bwd(out, a, b);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](auto x, auto y) { return x + y; },
      [](const Tensor& out, const Tensor& a, const Tensor& b) {
        auto on = out.node();
        auto an = a.node();
        auto bn = b.node();
        bool need_a = a.requires_grad();
        bool need_b = b.requires_grad();
        attach(on, {&a, &b}, [on, an, bn, need_a, need_b]() {
          dispatch(on->dtype, [&](auto tag) {
            using T = decltype(tag);
            const auto& g = grad_of<T>(*on);
            if (need_a) {
              ensure_grad<T>(*an);
              reduce_into<T>(g, on->shape, grad_of<T>(*an), an->shape);
            }
            if (need_b) {
              ensure_grad<T>(*bn);
              reduce_into<T>(g, on->shape, grad_of<T>(*bn), bn->shape);
            }
          });
        });
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](auto x, auto y) { return x - y; },
      [](const Tensor& out, const Tensor& a, const Tensor& b) {
        auto on = out.node();
        auto an = a.node();
        auto bn = b.node();
        bool need_a = a.requires_grad();
        bool need_b = b.requires_grad();
        attach(on, {&a, &b}, [on, an, bn, need_a, need_b]() {
          dispatch(on->dtype, [&](auto tag) {
            using T = decltype(tag);
            const auto& g = grad_of<T>(*on);
            if (need_a) {
              ensure_grad<T>(*an);
              reduce_into<T>(g, on->shape, grad_of<T>(*an), an->shape);
            }
            if (need_b) {
              std::vector<T> neg(g.size());
              for (size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
              ensure_grad<T>(*bn);
              reduce_into<T>(neg, on->shape, grad_of<T>(*bn), bn->shape);
            }
          });
        });
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](auto x, auto y) { return x * y; },
      [](const Tensor& out, const Tensor& a, const Tensor& b) {
        auto on = out.node();
        auto an = a.node();
        auto bn = b.node();
        bool need_a = a.requires_grad();
        bool need_b = b.requires_grad();
        attach(on, {&a, &b}, [on, an, bn, need_a, need_b]() {
          dispatch(on->dtype, [&](auto tag) {
            using T = decltype(tag);
            const auto& g = grad_of<T>(*on);
            auto sa = broadcast_strides(an->shape, on->shape);
            auto sb = broadcast_strides(bn->shape, on->shape);
            const auto& da = data_of<T>(*an);
            const auto& db = data_of<T>(*bn);
            if (need_a) {
              std::vector<T> full(g.size());
              Odometer od(on->shape);
              for (size_t i = 0; i < g.size(); ++i, od.next())
                full[i] = g[i] * db[od.offset(sb)];
              ensure_grad<T>(*an);
              reduce_into<T>(full, on->shape, grad_of<T>(*an), an->shape);
            }
            if (need_b) {
              std::vector<T> full(g.size());
              Odometer od(on->shape);
              for (size_t i = 0; i < g.size(); ++i, od.next())
                full[i] = g[i] * da[od.offset(sa)];
              ensure_grad<T>(*bn);
              reduce_into<T>(full, on->shape, grad_of<T>(*bn), bn->shape);
            }
          });
        });
      });
}

Tensor mul_scalar(const Tensor& a, double s) {
  check_defined(a, "mul_scalar");
  auto out_node = new_node(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*a.node());
    auto& o = data_of<T>(*out_node);
    const T ts = static_cast<T>(s);
    for (size_t i = 0; i < d.size(); ++i) o[i] = d[i] * ts;
  });
  Tensor out(out_node);
  if (should_track({&a})) {
    auto an = a.node();
    auto on = out.node();
    attach(on, {&a}, [on, an, s]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        ensure_grad<T>(*an);
        auto& ga = grad_of<T>(*an);
        const T ts = static_cast<T>(s);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ts;
      });
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  check_defined(a, "add_scalar");
  auto out_node = new_node(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*a.node());
    auto& o = data_of<T>(*out_node);
    const T ts = static_cast<T>(s);
    for (size_t i = 0; i < d.size(); ++i) o[i] = d[i] + ts;
  });
  Tensor out(out_node);
  if (should_track({&a})) {
    auto an = a.node();
    auto on = out.node();
    attach(on, {&a}, [on, an]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        ensure_grad<T>(*an);
        auto& ga = grad_of<T>(*an);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    });
  }
  return out;
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor gelu(const Tensor& x) {
  check_defined(x, "gelu");
  auto out_node = new_node(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*x.node());
    auto& o = data_of<T>(*out_node);
    for (size_t i = 0; i < d.size(); ++i) {
      double v = static_cast<double>(d[i]);
      o[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
    }
  });
  Tensor out(out_node);
  if (should_track({&x})) {
    auto xn = x.node();
    auto on = out.node();
    attach(on, {&x}, [on, xn]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        const auto& d = data_of<T>(*xn);
        ensure_grad<T>(*xn);
        auto& gx = grad_of<T>(*xn);
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (size_t i = 0; i < g.size(); ++i) {
          double v = static_cast<double>(d[i]);
          double dgelu = 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) +
                         v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
          gx[i] += g[i] * static_cast<T>(dgelu);
        }
      });
    });
  }
  return out;
}

// ------------------------------------------------------------------ shape

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
  check_defined(a, "reshape");
  size_t n = 1;
  for (size_t d : shape) n *= d;
  if (n != a.numel())
    throw ValidationError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(shape));
  auto out_node = new_node(std::move(shape), a.dtype());
  out_node->f32 = a.node()->f32;
  out_node->f64 = a.node()->f64;
  Tensor out(out_node);
  if (should_track({&a})) {
    auto an = a.node();
    auto on = out.node();
    attach(on, {&a}, [on, an]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        ensure_grad<T>(*an);
        auto& ga = grad_of<T>(*an);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    });
  }
  return out;
}

namespace {

template <class T>
void permute_copy(const std::vector<T>& src, const std::vector<size_t>& src_shape,
                  const std::vector<size_t>& dims, std::vector<T>& dst) {
  std::vector<size_t> out_shape(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) out_shape[i] = src_shape[dims[i]];
  auto src_strides = row_major_strides(src_shape);
  // Stride of out axis i in the source buffer.
  std::vector<size_t> gather(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) gather[i] = src_strides[dims[i]];
  Odometer od(out_shape);
  for (size_t i = 0; i < dst.size(); ++i, od.next()) dst[i] = src[od.offset(gather)];
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<size_t>& dims) {
  check_defined(a, "permute");
  if (dims.size() != a.ndim()) throw ValidationError("permute: rank mismatch");
  std::vector<bool> seen(dims.size(), false);
  for (size_t d : dims) {
    if (d >= dims.size() || seen[d]) throw ValidationError("permute: invalid permutation");
    seen[d] = true;
  }
  std::vector<size_t> out_shape(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) out_shape[i] = a.shape()[dims[i]];
  auto out_node = new_node(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    permute_copy<T>(data_of<T>(*a.node()), a.shape(), dims, data_of<T>(*out_node));
  });
  Tensor out(out_node);
  if (should_track({&a})) {
    auto an = a.node();
    auto on = out.node();
    std::vector<size_t> inverse(dims.size());
    for (size_t i = 0; i < dims.size(); ++i) inverse[dims[i]] = i;
    attach(on, {&a}, [on, an, inverse]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        std::vector<T> gin(g.size());
        permute_copy<T>(g, on->shape, inverse, gin);
        ensure_grad<T>(*an);
        auto& ga = grad_of<T>(*an);
        for (size_t i = 0; i < gin.size(); ++i) ga[i] += gin[i];
      });
    });
  }
  return out;
}

Tensor transpose_last2(const Tensor& a) {
  check_defined(a, "transpose_last2");
  if (a.ndim() < 2) throw ValidationError("transpose_last2: needs rank >= 2");
  std::vector<size_t> dims(a.ndim());
  for (size_t i = 0; i < dims.size(); ++i) dims[i] = i;
  std::swap(dims[dims.size() - 1], dims[dims.size() - 2]);
  return permute(a, dims);
}

Tensor broadcast_to(const Tensor& a, const std::vector<size_t>& shape) {
  check_defined(a, "broadcast_to");
  if (a.ndim() > shape.size())
    throw ValidationError("broadcast_to: cannot shrink rank " + shape_str(a.shape()) +
                          " to " + shape_str(shape));
  // Validates compatibility as a side effect.
  auto out_shape = broadcast_shape(a.shape(), shape, "broadcast_to");
  if (out_shape != shape)
    throw ValidationError("broadcast_to: " + shape_str(a.shape()) + " does not expand to " +
                          shape_str(shape));
  auto out_node = new_node(shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*a.node());
    auto& o = data_of<T>(*out_node);
    auto sa = broadcast_strides(a.shape(), shape);
    Odometer od(shape);
    for (size_t i = 0; i < o.size(); ++i, od.next()) o[i] = d[od.offset(sa)];
  });
  Tensor out(out_node);
  if (should_track({&a})) {
    auto an = a.node();
    auto on = out.node();
    attach(on, {&a}, [on, an]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        ensure_grad<T>(*an);
        reduce_into<T>(g, on->shape, grad_of<T>(*an), an->shape);
      });
    });
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, size_t axis) {
  check_defined(a, "concat");
  check_defined(b, "concat");
  check_same_dtype(a, b, "concat");
  if (a.ndim() != b.ndim() || axis >= a.ndim())
    throw ValidationError("concat: rank/axis mismatch for " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  for (size_t d = 0; d < a.ndim(); ++d)
    if (d != axis && a.shape()[d] != b.shape()[d])
      throw ValidationError("concat: shapes " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()) + " differ off-axis");
  auto out_shape = a.shape();
  out_shape[axis] += b.shape()[axis];
  size_t outer = 1;
  for (size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  size_t inner = 1;
  for (size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
  const size_t a_block = a.shape()[axis] * inner;
  const size_t b_block = b.shape()[axis] * inner;
  auto out_node = new_node(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& da = data_of<T>(*a.node());
    const auto& db = data_of<T>(*b.node());
    auto& o = data_of<T>(*out_node);
    for (size_t u = 0; u < outer; ++u) {
      std::copy_n(da.data() + u * a_block, a_block, o.data() + u * (a_block + b_block));
      std::copy_n(db.data() + u * b_block, b_block,
                  o.data() + u * (a_block + b_block) + a_block);
    }
  });
  Tensor out(out_node);
  if (should_track({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    bool need_a = a.requires_grad();
    bool need_b = b.requires_grad();
    attach(on, {&a, &b}, [on, an, bn, need_a, need_b, outer, a_block, b_block]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        if (need_a) {
          ensure_grad<T>(*an);
          auto& ga = grad_of<T>(*an);
          for (size_t u = 0; u < outer; ++u)
            for (size_t i = 0; i < a_block; ++i)
              ga[u * a_block + i] += g[u * (a_block + b_block) + i];
        }
        if (need_b) {
          ensure_grad<T>(*bn);
          auto& gb = grad_of<T>(*bn);
          for (size_t u = 0; u < outer; ++u)
            for (size_t i = 0; i < b_block; ++i)
              gb[u * b_block + i] += g[u * (a_block + b_block) + a_block + i];
        }
      });
    });
  }
  return out;
}

Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len) {
  check_defined(a, "slice");
  if (axis >= a.ndim() || start + len > a.shape()[axis] || len == 0)
    throw ValidationError("slice: range [" + std::to_string(start) + ", " +
                          std::to_string(start + len) + ") invalid for axis " +
                          std::to_string(axis) + " of " + shape_str(a.shape()));
  auto out_shape = a.shape();
  out_shape[axis] = len;
  size_t outer = 1;
  for (size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  size_t inner = 1;
  for (size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
  const size_t in_block = a.shape()[axis] * inner;
  const size_t out_block = len * inner;
  auto out_node = new_node(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*a.node());
    auto& o = data_of<T>(*out_node);
    for (size_t u = 0; u < outer; ++u)
      std::copy_n(d.data() + u * in_block + start * inner, out_block, o.data() + u * out_block);
  });
  Tensor out(out_node);
  if (should_track({&a})) {
    auto an = a.node();
    auto on = out.node();
    attach(on, {&a}, [on, an, outer, inner, in_block, out_block, start]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        ensure_grad<T>(*an);
        auto& ga = grad_of<T>(*an);
        for (size_t u = 0; u < outer; ++u)
          for (size_t i = 0; i < out_block; ++i)
            ga[u * in_block + start * inner + i] += g[u * out_block + i];
      });
    });
  }
  return out;
}

// ----------------------------------------------------------------- matmul

namespace {

template <class T>
void gemm(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  // c[m,n] += a[m,k] * b[k,n], cache-friendly ikj order; c pre-zeroed.
  for (size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
template <class T>
void gemm_nt(const T* g, const T* b, T* c, size_t m, size_t n, size_t k) {
  for (size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    T* crow = c + i * k;
    for (size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = 0;
      for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
template <class T>
void gemm_tn(const T* a, const T* g, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      T* crow = c + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += aip * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  check_same_dtype(a, b, "matmul");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto fail = [&]() {
    throw ValidationError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                          shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) fail();
  const size_t m = sa[sa.size() - 2];
  const size_t k = sa[sa.size() - 1];
  const size_t kb = sb[sb.size() - 2];
  const size_t n = sb[sb.size() - 1];
  if (k != kb) fail();
  const bool shared_b = sb.size() == 2 && sa.size() > 2;
  if (!shared_b && sa.size() != sb.size()) fail();
  size_t batch = 1;
  for (size_t d = 0; d + 2 < sa.size(); ++d) {
    batch *= sa[d];
    if (!shared_b && sb[d] != sa[d]) fail();
  }
  std::vector<size_t> out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  auto out_node = new_node(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = data_of<T>(*a.node()).data();
    const T* pb = data_of<T>(*b.node()).data();
    T* pc = data_of<T>(*out_node).data();
    for (size_t bt = 0; bt < batch; ++bt)
      gemm<T>(pa + bt * m * k, shared_b ? pb : pb + bt * k * n, pc + bt * m * n, m, k, n);
  });
  Tensor out(out_node);
  if (should_track({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    bool need_a = a.requires_grad();
    bool need_b = b.requires_grad();
    attach(on, {&a, &b}, [on, an, bn, need_a, need_b, batch, m, k, n, shared_b]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        const T* pa = data_of<T>(*an).data();
        const T* pb = data_of<T>(*bn).data();
        if (need_a) {
          ensure_grad<T>(*an);
          T* ga = grad_of<T>(*an).data();
          for (size_t bt = 0; bt < batch; ++bt)
            gemm_nt<T>(g.data() + bt * m * n, shared_b ? pb : pb + bt * k * n,
                       ga + bt * m * k, m, n, k);
        }
        if (need_b) {
          ensure_grad<T>(*bn);
          T* gb = grad_of<T>(*bn).data();
          for (size_t bt = 0; bt < batch; ++bt)
            gemm_tn<T>(pa + bt * m * k, g.data() + bt * m * n,
                       shared_b ? gb : gb + bt * k * n, m, k, n);
        }
      });
    });
  }
  return out;
}

// ------------------------------------------------- softmax / norm / dropout

Tensor softmax(const Tensor& x, size_t axis) {
  check_defined(x, "softmax");
  if (axis >= x.ndim()) throw ValidationError("softmax: axis out of range");
  const auto& shape = x.shape();
  size_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const size_t n = shape[axis];
  auto out_node = new_node(shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*x.node());
    auto& o = data_of<T>(*out_node);
    for (size_t u = 0; u < outer; ++u) {
      for (size_t v = 0; v < inner; ++v) {
        const size_t base = u * n * inner + v;
        T mx = d[base];
        for (size_t i = 1; i < n; ++i) mx = std::max(mx, d[base + i * inner]);
        double denom = 0.0;
        for (size_t i = 0; i < n; ++i) {
          double e = std::exp(static_cast<double>(d[base + i * inner] - mx));
          o[base + i * inner] = static_cast<T>(e);
          denom += e;
        }
        for (size_t i = 0; i < n; ++i)
          o[base + i * inner] = static_cast<T>(static_cast<double>(o[base + i * inner]) / denom);
      }
    }
  });
  Tensor out(out_node);
  if (should_track({&x})) {
    auto xn = x.node();
    auto on = out.node();
    attach(on, {&x}, [on, xn, outer, inner, n]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        const auto& y = data_of<T>(*on);
        ensure_grad<T>(*xn);
        auto& gx = grad_of<T>(*xn);
        for (size_t u = 0; u < outer; ++u) {
          for (size_t v = 0; v < inner; ++v) {
            const size_t base = u * n * inner + v;
            double dot = 0.0;
            for (size_t i = 0; i < n; ++i)
              dot += static_cast<double>(g[base + i * inner]) *
                     static_cast<double>(y[base + i * inner]);
            for (size_t i = 0; i < n; ++i) {
              const size_t p = base + i * inner;
              gx[p] += static_cast<T>((static_cast<double>(g[p]) - dot) *
                                      static_cast<double>(y[p]));
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_defined(x, "layer_norm");
  check_defined(gain, "layer_norm");
  check_defined(bias, "layer_norm");
  check_same_dtype(x, gain, "layer_norm");
  check_same_dtype(x, bias, "layer_norm");
  if (eps <= 0.0) throw ValidationError("layer_norm: eps must be positive");
  if (x.ndim() < 1) throw ValidationError("layer_norm: rank must be >= 1");
  const size_t n = x.shape().back();
  if (gain.shape() != std::vector<size_t>{n} || bias.shape() != std::vector<size_t>{n})
    throw ValidationError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
  const size_t rows = x.numel() / n;
  auto out_node = new_node(x.shape(), x.dtype());
  // xhat and inv_std are captured for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*x.node());
    const auto& gv = data_of<T>(*gain.node());
    const auto& bv = data_of<T>(*bias.node());
    auto& o = data_of<T>(*out_node);
    for (size_t r = 0; r < rows; ++r) {
      const size_t base = r * n;
      double mu = 0.0;
      for (size_t i = 0; i < n; ++i) mu += static_cast<double>(d[base + i]);
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double c = static_cast<double>(d[base + i]) - mu;
        var += c * c;
      }
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[r] = is;
      for (size_t i = 0; i < n; ++i) {
        double xh = (static_cast<double>(d[base + i]) - mu) * is;
        (*xhat)[base + i] = xh;
        o[base + i] = static_cast<T>(xh * static_cast<double>(gv[i]) +
                                     static_cast<double>(bv[i]));
      }
    }
  });
  Tensor out(out_node);
  if (should_track({&x, &gain, &bias})) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    auto on = out.node();
    bool need_x = x.requires_grad();
    bool need_g = gain.requires_grad();
    bool need_b = bias.requires_grad();
    attach(on, {&x, &gain, &bias},
           [on, xn, gn, bn, xhat, inv_std, rows, n, need_x, need_g, need_b]() {
             dispatch(on->dtype, [&](auto tag) {
               using T = decltype(tag);
               const auto& g = grad_of<T>(*on);
               const auto& gv = data_of<T>(*gn);
               if (need_x) ensure_grad<T>(*xn);
               if (need_g) ensure_grad<T>(*gn);
               if (need_b) ensure_grad<T>(*bn);
               for (size_t r = 0; r < rows; ++r) {
                 const size_t base = r * n;
                 const double is = (*inv_std)[r];
                 if (need_x) {
                   double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                   for (size_t i = 0; i < n; ++i) {
                     double dxh = static_cast<double>(g[base + i]) *
                                  static_cast<double>(gv[i]);
                     mean_dxhat += dxh;
                     mean_dxhat_xhat += dxh * (*xhat)[base + i];
                   }
                   mean_dxhat /= static_cast<double>(n);
                   mean_dxhat_xhat /= static_cast<double>(n);
                   auto& gx = grad_of<T>(*xn);
                   for (size_t i = 0; i < n; ++i) {
                     double dxh = static_cast<double>(g[base + i]) *
                                  static_cast<double>(gv[i]);
                     gx[base + i] += static_cast<T>(
                         is * (dxh - mean_dxhat - (*xhat)[base + i] * mean_dxhat_xhat));
                   }
                 }
                 if (need_g) {
                   auto& gg = grad_of<T>(*gn);
                   for (size_t i = 0; i < n; ++i)
                     gg[i] += static_cast<T>(static_cast<double>(g[base + i]) *
                                             (*xhat)[base + i]);
                 }
                 if (need_b) {
                   auto& gb = grad_of<T>(*bn);
                   for (size_t i = 0; i < n; ++i) gb[i] += g[base + i];
                 }
               }
             });
           });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool training, Prng& rng) {
  check_defined(x, "dropout");
  if (rate < 0.0 || rate >= 1.0)
    throw ValidationError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (auto& m : *mask) m = rng.uniform() < keep ? scale : 0.0;
  auto out_node = new_node(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& d = data_of<T>(*x.node());
    auto& o = data_of<T>(*out_node);
    for (size_t i = 0; i < d.size(); ++i)
      o[i] = static_cast<T>(static_cast<double>(d[i]) * (*mask)[i]);
  });
  Tensor out(out_node);
  if (should_track({&x})) {
    auto xn = x.node();
    auto on = out.node();
    attach(on, {&x}, [on, xn, mask]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const auto& g = grad_of<T>(*on);
        ensure_grad<T>(*xn);
        auto& gx = grad_of<T>(*xn);
        for (size_t i = 0; i < g.size(); ++i)
          gx[i] += static_cast<T>(static_cast<double>(g[i]) * (*mask)[i]);
      });
    });
  }
  return out;
}

// ------------------------------------------------------- reductions / loss

Tensor sum(const Tensor& a) {
  check_defined(a, "sum");
  auto out_node = new_node({1}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    double acc = 0.0;
    for (T v : data_of<T>(*a.node())) acc += static_cast<double>(v);
    data_of<T>(*out_node)[0] = static_cast<T>(acc);
  });
  Tensor out(out_node);
  if (should_track({&a})) {
    auto an = a.node();
    auto on = out.node();
    attach(on, {&a}, [on, an]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const T g = grad_of<T>(*on)[0];
        ensure_grad<T>(*an);
        for (auto& v : grad_of<T>(*an)) v += g;
      });
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  check_defined(a, "mean");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor cross_entropy(const Tensor& logits, const Tensor& targets) {
  check_defined(logits, "cross_entropy");
  check_defined(targets, "cross_entropy");
  check_same_dtype(logits, targets, "cross_entropy");
  if (logits.ndim() != 2 || logits.shape() != targets.shape())
    throw ValidationError("cross_entropy: expected matching [rows x classes] shapes, got " +
                          shape_str(logits.shape()) + " and " + shape_str(targets.shape()));
  if (targets.requires_grad())
    throw ValidationError("cross_entropy: gradients w.r.t. targets are not supported");
  const size_t rows = logits.shape()[0];
  const size_t classes = logits.shape()[1];
  auto out_node = new_node({1}, logits.dtype());
  // Row softmax probabilities and target mass, kept for backward.
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  auto tmass = std::make_shared<std::vector<double>>(rows);
  dispatch(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& lx = data_of<T>(*logits.node());
    const auto& tv = data_of<T>(*targets.node());
    double total = 0.0;
    for (size_t r = 0; r < rows; ++r) {
      const size_t base = r * classes;
      double mx = static_cast<double>(lx[base]);
      for (size_t c = 1; c < classes; ++c)
        mx = std::max(mx, static_cast<double>(lx[base + c]));
      double denom = 0.0;
      for (size_t c = 0; c < classes; ++c)
        denom += std::exp(static_cast<double>(lx[base + c]) - mx);
      const double lse = mx + std::log(denom);
      double mass = 0.0, dot = 0.0;
      for (size_t c = 0; c < classes; ++c) {
        const double t = static_cast<double>(tv[base + c]);
        mass += t;
        dot += t * static_cast<double>(lx[base + c]);
        (*probs)[base + c] = std::exp(static_cast<double>(lx[base + c]) - lse);
      }
      (*tmass)[r] = mass;
      total += mass * lse - dot;
    }
    data_of<T>(*out_node)[0] = static_cast<T>(total / static_cast<double>(rows));
  });
  Tensor out(out_node);
  if (should_track({&logits})) {
    auto ln = logits.node();
    auto tn = targets.node();
    auto on = out.node();
    attach(on, {&logits}, [on, ln, tn, probs, tmass, rows, classes]() {
      dispatch(on->dtype, [&](auto tag) {
        using T = decltype(tag);
        const double g = static_cast<double>(grad_of<T>(*on)[0]) / static_cast<double>(rows);
        const auto& tv = data_of<T>(*tn);
        ensure_grad<T>(*ln);
        auto& gl = grad_of<T>(*ln);
        for (size_t r = 0; r < rows; ++r) {
          const size_t base = r * classes;
          for (size_t c = 0; c < classes; ++c)
            gl[base + c] += static_cast<T>(
                g * ((*probs)[base + c] * (*tmass)[r] - static_cast<double>(tv[base + c])));
        }
      });
    });
  }
  return out;
}

// --------------------------------------------------------------- backward

void backward(const Tensor& output) {
  check_defined(output, "backward");
  if (output.numel() != 1)
    throw ValidationError("backward: output must be a single element, got " +
                          shape_str(output.shape()));
  if (!output.requires_grad())
    throw ValidationError("backward: output does not track gradients");

  // Post-order DFS; reversed, consumers run before producers.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  visited.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  dispatch(output.dtype(), [&](auto tag) {
    using T = decltype(tag);
    ensure_grad<T>(*output.node());
    grad_of<T>(*output.node())[0] += T(1);
  });

  for (size_t i = order.size(); i-- > 0;) {
    TensorNode* node = order[i];
    if (node->backward_fn && node->grad_present) node->backward_fn();
  }

  // Single-use tape: free closures, edges, and intermediate gradients.
  for (TensorNode* node : order) {
    node->backward_fn = nullptr;
    node->parents.clear();
    if (!node->leaf) {
      node->grad_present = false;
      node->grad_f32.clear();
      node->grad_f64.clear();
    }
  }
}

}  // namespace attnpain
