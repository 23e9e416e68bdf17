#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace quadnet {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Thrown when finite math breaks down (NaN/Inf in gradients or losses);
// the CLI maps it to its own exit code.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (const int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

// Dense row-major tensor, templated on scalar. float is the training
// type; double instantiations back the finite-difference checks. The
// handle is a shared pointer so recorded graphs keep operands alive;
// copying a Tensor aliases the same storage.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    const int n = shape_numel(shape);
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = std::move(shape);
    t.p_->value = ArrayX<S>::Zero(n);
    return t;
  }

  static Tensor full(std::vector<int> shape, S v) {
    Tensor t = zeros(std::move(shape));
    t.p_->value.setConstant(v);
    return t;
  }

  static Tensor scalar(S v) { return full({1}, v); }

  static Tensor from(std::vector<int> shape, ArrayX<S> data) {
    const int n = shape_numel(shape);
    if (n != static_cast<int>(data.size()))
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = std::move(shape);
    t.p_->value = std::move(data);
    return t;
  }

  static Tensor from(std::vector<int> shape, const std::vector<S>& data) {
    ArrayX<S> a(static_cast<Eigen::Index>(data.size()));
    for (size_t i = 0; i < data.size(); ++i) a[static_cast<Eigen::Index>(i)] = data[i];
    return from(std::move(shape), std::move(a));
  }

  bool defined() const { return static_cast<bool>(p_); }
  const std::vector<int>& shape() const { return p_->shape; }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(p_->value.size()); }

  ArrayX<S>& values() { return p_->value; }
  const ArrayX<S>& values() const { return p_->value; }
  S* data() { return p_->value.data(); }
  const S* data() const { return p_->value.data(); }
  S operator[](int i) const { return p_->value[i]; }
  S& at(int i) { return p_->value[i]; }

  S item() const {
    if (size() != 1) throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(shape()));
    return p_->value[0];
  }

  bool requires_grad() const { return p_ && p_->requires_grad; }

  Tensor& set_requires_grad(bool b) {
    p_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return p_ && p_->grad.size() == p_->value.size(); }

  // Lazily allocated, zero-initialized, same extent as the values.
  ArrayX<S>& grad() {
    if (p_->grad.size() != p_->value.size()) p_->grad = ArrayX<S>::Zero(p_->value.size());
    return p_->grad;
  }

  const ArrayX<S>& grad() const {
    if (p_->grad.size() != p_->value.size())
      throw std::logic_error("tensor: grad read before any backward pass");
    return p_->grad;
  }

  void zero_grad() {
    if (p_ && p_->grad.size() > 0) p_->grad.setZero();
  }

  // Deep copy of the values only; the copy is a fresh leaf.
  Tensor clone() const {
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = p_->shape;
    t.p_->value = p_->value;
    return t;
  }

  bool same_shape(const Tensor& o) const { return p_->shape == o.p_->shape; }

  bool all_finite() const { return p_->value.allFinite(); }

 private:
  struct Payload {
    std::vector<int> shape;
    ArrayX<S> value;
    ArrayX<S> grad;  // size 0 until first use
    bool requires_grad = false;
  };

  std::shared_ptr<Payload> p_;
};

// Records one training step's operations. Single-writer: a tape is
// built and consumed on one thread. The active tape is thread-local so
// independent tapes can run data-parallel.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, const Tensor<S>& out, std::function<void()> pull) {
    if (check_finite_ && !out.all_finite())
      throw numeric_error(std::string("non-finite values produced by op '") + op + "'");
    steps_.push_back(Step{op, out, std::move(pull)});
  }

  size_t num_steps() const { return steps_.size(); }

  void clear() { steps_.clear(); }

  void set_check_finite(bool b) { check_finite_ = b; }

  // Runs the recorded backward rules in reverse order, seeding the
  // adjoint of `loss` with 1. Intermediate adjoints are reset first so
  // leaf gradients accumulate across calls.
  void run_backward(Tensor<S> loss) {
    for (auto& s : steps_) s.out.zero_grad();
    loss.grad()[0] = S(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->pull();
  }

  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
    ~Scope() { active_slot() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_slot(); }

 private:
  struct Step {
    const char* op;
    Tensor<S> out;
    std::function<void()> pull;
  };

  static Tape*& active_slot() {
    thread_local Tape* t = nullptr;
    return t;
  }

  std::vector<Step> steps_;
  bool check_finite_ = false;
};

template <typename S>
void backward(Tensor<S> loss, Tape<S>& tape) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  tape.run_backward(std::move(loss));
}

namespace detail {

template <typename S>
bool recording(std::initializer_list<const Tensor<S>*> ins) {
  if (Tape<S>::active() == nullptr) return false;
  for (const Tensor<S>* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise arithmetic -------------------------------------------

template <typename S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape("add", a, b);
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values() + b.values()));
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("add", out, [a, b, out]() mutable {
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() += out.grad();
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(Tensor<S> a, S s) {
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values() + s));
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("add_scalar", out, [a, out]() mutable { a.grad() += out.grad(); });
  }
  return out;
}

template <typename S>
Tensor<S> sub(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape("sub", a, b);
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values() - b.values()));
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("sub", out, [a, b, out]() mutable {
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() -= out.grad();
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(Tensor<S> a, S s) {
  return add(a, -s);
}

// scalar minus tensor
template <typename S>
Tensor<S> sub(S s, Tensor<S> a) {
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(s - a.values()));
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("rsub_scalar", out, [a, out]() mutable { a.grad() -= out.grad(); });
  }
  return out;
}

template <typename S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape("mul", a, b);
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values() * b.values()));
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("mul", out, [a, b, out]() mutable {
      if (a.requires_grad()) a.grad() += out.grad() * b.values();
      if (b.requires_grad()) b.grad() += out.grad() * a.values();
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(Tensor<S> a, S s) {
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values() * s));
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("scale", out, [a, out, s]() mutable { a.grad() += out.grad() * s; });
  }
  return out;
}

template <typename S>
Tensor<S> div(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape("div", a, b);
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values() / b.values()));
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("div", out, [a, b, out]() mutable {
      if (a.requires_grad()) a.grad() += out.grad() / b.values();
      if (b.requires_grad()) b.grad() -= out.grad() * out.values() / b.values();
    });
  }
  return out;
}

// Elementwise square root; subgradient 0 at x == 0.
template <typename S>
Tensor<S> sqrt_elem(Tensor<S> a) {
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values().sqrt()));
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("sqrt", out, [a, out]() mutable {
      a.grad() += (out.values() > S(0)).select(out.grad() / (S(2) * out.values()),
                                               ArrayX<S>::Zero(out.size()));
    });
  }
  return out;
}

// Elementwise max; ties give the gradient to the first argument.
template <typename S>
Tensor<S> maximum(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape("maximum", a, b);
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values().max(b.values())));
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("maximum", out, [a, b, out]() mutable {
      const auto a_wins = a.values() >= b.values();
      if (a.requires_grad())
        a.grad() += a_wins.select(out.grad(), ArrayX<S>::Zero(out.size()));
      if (b.requires_grad())
        b.grad() += a_wins.select(ArrayX<S>::Zero(out.size()), out.grad());
    });
  }
  return out;
}

// max(a, s) against a constant; subgradient 0 at the kink.
template <typename S>
Tensor<S> maximum(Tensor<S> a, S s) {
  Tensor<S> out = Tensor<S>::from(a.shape(), ArrayX<S>(a.values().max(s)));
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("maximum_scalar", out, [a, out, s]() mutable {
      a.grad() += (a.values() > s).select(out.grad(), ArrayX<S>::Zero(out.size()));
    });
  }
  return out;
}

// ---- matmul ------------------------------------------------------------

template <typename S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::zeros({m, n});
  ConstMatMap<S> am(a.data(), m, k), bm(b.data(), k, n);
  MatMap<S>(out.data(), m, n).noalias() = am * bm;
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("matmul", out, [a, b, out, m, k, n]() mutable {
      ConstMatMap<S> g(out.grad().data(), m, n);
      if (a.requires_grad()) {
        ConstMatMap<S> bm2(b.data(), k, n);
        MatMap<S>(a.grad().data(), m, k).noalias() += g * bm2.transpose();
      }
      if (b.requires_grad()) {
        ConstMatMap<S> am2(a.data(), m, k);
        MatMap<S>(b.grad().data(), k, n).noalias() += am2.transpose() * g;
      }
    });
  }
  return out;
}

// ---- reductions / shape ops ---------------------------------------------

template <typename S>
Tensor<S> sum(Tensor<S> a) {
  Tensor<S> out = Tensor<S>::scalar(a.values().sum());
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("sum", out, [a, out]() mutable { a.grad() += out.grad()[0]; });
  }
  return out;
}

template <typename S>
Tensor<S> reshape(Tensor<S> a, std::vector<int> shape) {
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  Tensor<S> out = Tensor<S>::from(std::move(shape), ArrayX<S>(a.values()));
  if (detail::recording<S>({&a})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("reshape", out, [a, out]() mutable { a.grad() += out.grad(); });
  }
  return out;
}

// Per-channel spatial mean: [C,H,W] -> [C].
template <typename S>
Tensor<S> channel_mean(Tensor<S> x) {
  if (x.rank() != 3)
    throw std::invalid_argument("channel_mean: expected [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<S> out = Tensor<S>::zeros({c});
  for (int i = 0; i < c; ++i) out.at(i) = x.values().segment(i * hw, hw).mean();
  if (detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("channel_mean", out, [x, out, c, hw]() mutable {
      for (int i = 0; i < c; ++i) x.grad().segment(i * hw, hw) += out.grad()[i] / S(hw);
    });
  }
  return out;
}

// Broadcast a per-channel vector over a spatial map: [C] -> [C,H,W].
template <typename S>
Tensor<S> expand_spatial(Tensor<S> v, int h, int w) {
  if (v.rank() != 1)
    throw std::invalid_argument("expand_spatial: expected [C], got " + shape_str(v.shape()));
  const int c = v.dim(0), hw = h * w;
  Tensor<S> out = Tensor<S>::zeros({c, h, w});
  for (int i = 0; i < c; ++i) out.values().segment(i * hw, hw).setConstant(v[i]);
  if (detail::recording<S>({&v})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("expand_spatial", out, [v, out, c, hw]() mutable {
      for (int i = 0; i < c; ++i) v.grad()[i] += out.grad().segment(i * hw, hw).sum();
    });
  }
  return out;
}

// ---- euclidean distance --------------------------------------------------

// d(a,b) = ||a-b||_2 as a scalar tensor. At a == b the gradient is
// defined as the zero vector.
template <typename S>
Tensor<S> euclidean_distance(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape("euclidean_distance", a, b);
  const S d = std::sqrt((a.values() - b.values()).square().sum());
  Tensor<S> out = Tensor<S>::scalar(d);
  if (detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<S>::active()->record("euclidean_distance", out, [a, b, out]() mutable {
      const S dist = out.values()[0];
      if (dist <= S(0)) return;  // subgradient choice at coincident points
      const S g = out.grad()[0] / dist;
      ArrayX<S> diff = (a.values() - b.values()) * g;
      if (a.requires_grad()) a.grad() += diff;
      if (b.requires_grad()) b.grad() -= diff;
    });
  }
  return out;
}

// ---- gradient checking -----------------------------------------------

// Central-difference check of a scalar-valued graph builder. Returns the
// max over all coordinates of |analytic - numeric| / max(|analytic|,
// |numeric|, eps). Run with S = double.
template <typename S, typename F>
S grad_check(F&& build, std::vector<Tensor<S>> inputs, S h = S(1e-5)) {
  Tape<S> tape;
  tape.set_check_finite(true);
  std::vector<ArrayX<S>> analytic;
  {
    typename Tape<S>::Scope scope(tape);
    for (auto& t : inputs) {
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Tensor<S> loss = build(inputs);
    if (loss.size() != 1) throw std::invalid_argument("grad_check: builder must produce a scalar");
    backward(loss, tape);
  }
  for (auto& t : inputs) analytic.push_back(t.grad());

  for (auto& t : inputs) t.set_requires_grad(false);
  const S eps = S(1e-8);
  S worst = S(0);
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<S>& t = inputs[ti];
    for (int i = 0; i < t.size(); ++i) {
      const S saved = t[i];
      t.at(i) = saved + h;
      const S fp = build(inputs).item();
      t.at(i) = saved - h;
      const S fm = build(inputs).item();
      t.at(i) = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw numeric_error("grad_check: non-finite function value during probing");
      const S numeric = (fp - fm) / (S(2) * h);
      const S a = analytic[ti][i];
      const S denom = std::max({std::abs(a), std::abs(numeric), eps});
      const S rel = std::abs(a - numeric) / denom;
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace quadnet
