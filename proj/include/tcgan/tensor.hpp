#pragma once

#include <Eigen/Core>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <type_traits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tcgan {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <class Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using MapMat = Eigen::Map<MatrixRM<Scalar>>;
template <class Scalar>
using ConstMapMat = Eigen::Map<const MatrixRM<Scalar>>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline std::int64_t next_node_id() {
  static std::atomic<std::int64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class Scalar>
struct TensorNode {
  Shape shape;
  ArrayX<Scalar> values;
  ArrayX<Scalar> grad;  // empty until first needed
  bool requires_grad = false;
  std::int64_t id = next_node_id();

  void ensure_grad() {
    if (grad.size() != values.size()) grad = ArrayX<Scalar>::Zero(values.size());
  }
};

}  // namespace detail

template <class Scalar>
class Tape;

/// Dense row-major tensor. Cheap handle over shared storage; values are
/// immutable after an op creates them, gradients accumulate in place.
template <class Scalar>
class Tensor {
  using Node = detail::TensorNode<Scalar>;

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from_array(std::move(shape), ArrayX<Scalar>());
  }

  static Tensor constant(Shape shape, Scalar value) {
    const Index n = numel(shape);
    return from_array(std::move(shape), ArrayX<Scalar>::Constant(n, value));
  }

  static Tensor scalar(Scalar value) {
    return from_array(Shape{}, ArrayX<Scalar>::Constant(1, value));
  }

  static Tensor from_array(Shape shape, ArrayX<Scalar> values) {
    auto node = std::make_shared<Node>();
    const Index n = numel(shape);
    node->shape = std::move(shape);
    if (values.size() == 0 && n != 0) values = ArrayX<Scalar>::Zero(n);
    if (values.size() != n)
      throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_string(node->shape));
    node->values = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor from_vector(Shape shape, const std::vector<Scalar>& values) {
    ArrayX<Scalar> a(static_cast<Index>(values.size()));
    for (Index i = 0; i < a.size(); ++i) a[i] = values[static_cast<std::size_t>(i)];
    return from_array(std::move(shape), std::move(a));
  }

  /// Trainable leaf.
  static Tensor param(Shape shape, ArrayX<Scalar> values) {
    Tensor t = from_array(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  Index size() const { return node_->values.size(); }

  const ArrayX<Scalar>& values() const { return node_->values; }
  /// In-place access for optimizer updates and loaders only.
  ArrayX<Scalar>& values_mut() { return node_->values; }

  Scalar value() const {
    if (size() != 1)
      throw std::invalid_argument("tensor: value() requires a scalar, got shape " +
                                  shape_string(shape()));
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == size() && size() > 0; }
  const ArrayX<Scalar>& grad() const {
    if (!has_grad()) throw std::runtime_error("tensor: gradient not populated");
    return node_->grad;
  }
  void zero_grad() {
    if (node_->grad.size() == size()) node_->grad.setZero();
  }

  std::int64_t id() const { return node_->id; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Dynamic computation tape. Ops executed while a tape is active append a
/// record; backward replays the records in exact reverse order. One tape
/// belongs to one thread of execution.
template <class Scalar>
class Tape {
  using Node = detail::TensorNode<Scalar>;

 public:
  struct Record {
    std::vector<std::int64_t> inputs;
    std::int64_t output;
    std::shared_ptr<Node> output_node;
    std::function<void()> pull;  // accumulates into input grads
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active_slot() {
    thread_local Tape* active = nullptr;
    return active;
  }
  static Tape* active() { return active_slot(); }

  void record(std::vector<std::int64_t> inputs, std::int64_t output,
              std::shared_ptr<Node> output_node, std::function<void()> pull) {
    records_.push_back(Record{std::move(inputs), output, std::move(output_node), std::move(pull)});
  }

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
  /// calls; op outputs are re-seeded every call.
  void backward(const Tensor<Scalar>& loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                  shape_string(loss.shape()));
    if (records_.empty()) throw std::invalid_argument("backward: tape is empty");
    if (!loss.requires_grad()) return;  // nothing on the tape feeds this loss
    for (auto& rec : records_) {
      rec.output_node->ensure_grad();
      rec.output_node->grad.setZero();
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += Scalar(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->pull();
  }

 private:
  std::vector<Record> records_;
};

/// Makes `tape` the active tape for the enclosing scope.
template <class Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(Tape<Scalar>::active_slot()) {
    Tape<Scalar>::active_slot() = &tape;
  }
  ~TapeScope() { Tape<Scalar>::active_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

/// Suspends recording (pure inference) for the enclosing scope.
template <class Scalar>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<Scalar>::active_slot()) { Tape<Scalar>::active_slot() = nullptr; }
  ~NoGradScope() { Tape<Scalar>::active_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

template <class Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>* tape = Tape<Scalar>::active();
  if (!tape) throw std::invalid_argument("backward: no active tape");
  tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Op plumbing

namespace detail {

template <class Scalar>
bool tracks_grad(const Tensor<Scalar>& t) {
  return t.requires_grad();
}

// Records `pull` when a tape is active and any input is tracked; marks the
// output tracked in that case so downstream ops keep recording.
template <class Scalar, class... Inputs>
void maybe_record(Tensor<Scalar>& out, std::function<void()> pull, const Inputs&... inputs) {
  Tape<Scalar>* tape = Tape<Scalar>::active();
  if (!tape) return;
  const bool any = (tracks_grad(inputs) || ...);
  if (!any) return;
  out.node()->requires_grad = true;
  tape->record({inputs.id()...}, out.id(), out.node_ptr(), std::move(pull));
}

// Broadcast layout for binary elementwise ops: identical shapes, a scalar
// operand, or one operand equal to a trailing suffix of the other.
enum class BinaryLayout { kSame, kASuffixOfB, kBSuffixOfA };

struct BinaryPlan {
  BinaryLayout layout;
  Index outer;
  Index inner;
};

inline bool is_suffix(const Shape& suffix, const Shape& full) {
  if (suffix.size() > full.size()) return false;
  const std::size_t offset = full.size() - suffix.size();
  for (std::size_t i = 0; i < suffix.size(); ++i)
    if (suffix[i] != full[offset + i]) return false;
  return true;
}

inline BinaryPlan plan_binary(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return {BinaryLayout::kSame, 1, numel(a)};
  if (numel(b) == 1) return {BinaryLayout::kBSuffixOfA, numel(a), 1};
  if (numel(a) == 1) return {BinaryLayout::kASuffixOfB, numel(b), 1};
  if (is_suffix(b, a)) {
    const Index inner = numel(b);
    return {BinaryLayout::kBSuffixOfA, numel(a) / inner, inner};
  }
  if (is_suffix(a, b)) {
    const Index inner = numel(a);
    return {BinaryLayout::kASuffixOfB, numel(b) / inner, inner};
  }
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) +
                              " and " + shape_string(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (add, sub, mul) with trailing-suffix broadcast

namespace detail {

// Generic binary elementwise op. ValueOp computes the forward values,
// GradA/GradB map the output gradient to each input's local gradient
// (before broadcast reduction).
template <class Scalar, class ValueOp, class GradA, class GradB>
Tensor<Scalar> binary_op(const char* name, const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                         ValueOp value_op, GradA grad_a, GradB grad_b) {
  const BinaryPlan plan = plan_binary(a.shape(), b.shape(), name);
  const Shape& out_shape =
      plan.layout == BinaryLayout::kASuffixOfB ? b.shape() : a.shape();

  ArrayX<Scalar> out(numel(out_shape));
  const ArrayX<Scalar>& av = a.values();
  const ArrayX<Scalar>& bv = b.values();
  switch (plan.layout) {
    case BinaryLayout::kSame:
      out = value_op(av, bv);
      break;
    case BinaryLayout::kBSuffixOfA:
      if (plan.inner == 1) {
        out = value_op(av, ArrayX<Scalar>::Constant(av.size(), bv[0]));
      } else {
        for (Index o = 0; o < plan.outer; ++o)
          out.segment(o * plan.inner, plan.inner) =
              value_op(av.segment(o * plan.inner, plan.inner), bv);
      }
      break;
    case BinaryLayout::kASuffixOfB:
      if (plan.inner == 1) {
        out = value_op(ArrayX<Scalar>::Constant(bv.size(), av[0]), bv);
      } else {
        for (Index o = 0; o < plan.outer; ++o)
          out.segment(o * plan.inner, plan.inner) =
              value_op(av, bv.segment(o * plan.inner, plan.inner));
      }
      break;
  }

  Tensor<Scalar> result = Tensor<Scalar>::from_array(out_shape, std::move(out));
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [an, bn, on, plan, grad_a, grad_b]() {
        const ArrayX<Scalar>& g = on->grad;
        const bool broadcast_b = plan.layout == BinaryLayout::kBSuffixOfA;
        const bool broadcast_a = plan.layout == BinaryLayout::kASuffixOfB;
        if (an->requires_grad) {
          an->ensure_grad();
          if (!broadcast_a) {
            grad_a(an->grad, g, an->values, bn->values, plan, /*reduced=*/false);
          } else {
            grad_a(an->grad, g, an->values, bn->values, plan, /*reduced=*/true);
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          if (!broadcast_b) {
            grad_b(bn->grad, g, an->values, bn->values, plan, /*reduced=*/false);
          } else {
            grad_b(bn->grad, g, an->values, bn->values, plan, /*reduced=*/true);
          }
        }
      },
      a, b);
  return result;
}

// Accumulate `contribution(o)` either elementwise or reduced over the outer
// axis onto a suffix-shaped gradient.
template <class Scalar, class Contribution>
void accumulate_binary_grad(ArrayX<Scalar>& grad, const BinaryPlan& plan, bool reduced,
                            Contribution contribution) {
  if (!reduced) {
    if (plan.layout == BinaryLayout::kSame) {
      grad += contribution(Index(0));
    } else {
      for (Index o = 0; o < plan.outer; ++o)
        grad.segment(o * plan.inner, plan.inner) += contribution(o);
    }
    return;
  }
  if (plan.inner == 1) {
    Scalar total = 0;
    for (Index o = 0; o < plan.outer; ++o) total += contribution(o).sum();
    grad[0] += total;
  } else {
    for (Index o = 0; o < plan.outer; ++o) grad += contribution(o);
  }
}

}  // namespace detail

template <class Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using A = ArrayX<Scalar>;
  return detail::binary_op<Scalar>(
      "add", a, b, [](const auto& x, const auto& y) -> A { return x + y; },
      [](A& grad, const A& g, const A&, const A&, const detail::BinaryPlan& plan, bool reduced) {
        detail::accumulate_binary_grad<Scalar>(grad, plan, reduced, [&](Index o) {
          return plan.layout == detail::BinaryLayout::kSame
                     ? g
                     : A(g.segment(o * plan.inner, plan.inner));
        });
      },
      [](A& grad, const A& g, const A&, const A&, const detail::BinaryPlan& plan, bool reduced) {
        detail::accumulate_binary_grad<Scalar>(grad, plan, reduced, [&](Index o) {
          return plan.layout == detail::BinaryLayout::kSame
                     ? g
                     : A(g.segment(o * plan.inner, plan.inner));
        });
      });
}

template <class Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using A = ArrayX<Scalar>;
  return detail::binary_op<Scalar>(
      "sub", a, b, [](const auto& x, const auto& y) -> A { return x - y; },
      [](A& grad, const A& g, const A&, const A&, const detail::BinaryPlan& plan, bool reduced) {
        detail::accumulate_binary_grad<Scalar>(grad, plan, reduced, [&](Index o) {
          return plan.layout == detail::BinaryLayout::kSame
                     ? g
                     : A(g.segment(o * plan.inner, plan.inner));
        });
      },
      [](A& grad, const A& g, const A&, const A&, const detail::BinaryPlan& plan, bool reduced) {
        detail::accumulate_binary_grad<Scalar>(grad, plan, reduced, [&](Index o) {
          return plan.layout == detail::BinaryLayout::kSame
                     ? A(-g)
                     : A(-g.segment(o * plan.inner, plan.inner));
        });
      });
}

template <class Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using A = ArrayX<Scalar>;
  return detail::binary_op<Scalar>(
      "mul", a, b, [](const auto& x, const auto& y) -> A { return x * y; },
      [](A& grad, const A& g, const A& av, const A& bv, const detail::BinaryPlan& plan,
         bool reduced) {
        detail::accumulate_binary_grad<Scalar>(grad, plan, reduced, [&](Index o) -> A {
          switch (plan.layout) {
            case detail::BinaryLayout::kSame:
              return g * bv;
            case detail::BinaryLayout::kBSuffixOfA: {
              const auto gseg = g.segment(o * plan.inner, plan.inner);
              return plan.inner == 1 ? A(gseg * bv[0]) : A(gseg * bv);
            }
            case detail::BinaryLayout::kASuffixOfB: {
              const auto gseg = g.segment(o * plan.inner, plan.inner);
              return plan.inner == 1 ? A(gseg * bv.segment(o, 1)[0])
                                     : A(gseg * bv.segment(o * plan.inner, plan.inner));
            }
          }
          return A();
        });
      },
      [](A& grad, const A& g, const A& av, const A& bv, const detail::BinaryPlan& plan,
         bool reduced) {
        detail::accumulate_binary_grad<Scalar>(grad, plan, reduced, [&](Index o) -> A {
          switch (plan.layout) {
            case detail::BinaryLayout::kSame:
              return g * av;
            case detail::BinaryLayout::kBSuffixOfA: {
              const auto gseg = g.segment(o * plan.inner, plan.inner);
              return plan.inner == 1 ? A(gseg * av.segment(o, 1)[0])
                                     : A(gseg * av.segment(o * plan.inner, plan.inner));
            }
            case detail::BinaryLayout::kASuffixOfB: {
              const auto gseg = g.segment(o * plan.inner, plan.inner);
              return plan.inner == 1 ? A(gseg * av[0]) : A(gseg * av);
            }
          }
          return A();
        });
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

namespace detail {

template <class Scalar, class ValueOp, class GradOp>
Tensor<Scalar> unary_op(const Tensor<Scalar>& a, ValueOp value_op, GradOp grad_op) {
  Tensor<Scalar> out = Tensor<Scalar>::from_array(a.shape(), value_op(a.values()));
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  maybe_record<Scalar>(
      out,
      [an, on, grad_op]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        grad_op(an->grad, on->grad, an->values, on->values);
      },
      a);
  return out;
}

}  // namespace detail

template <class Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a) {
  using A = ArrayX<Scalar>;
  return detail::unary_op<Scalar>(
      a, [](const A& x) -> A { return -x; },
      [](A& grad, const A& g, const A&, const A&) { grad -= g; });
}

/// Pointwise natural log. Domain error on any non-positive element; GAN
/// losses clamp probabilities before calling this.
template <class Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a) {
  using A = ArrayX<Scalar>;
  if ((a.values() <= Scalar(0)).any())
    throw std::domain_error("log: non-positive input element");
  return detail::unary_op<Scalar>(
      a, [](const A& x) -> A { return x.log(); },
      [](A& grad, const A& g, const A& x, const A&) { grad += g / x; });
}

template <class Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  using A = ArrayX<Scalar>;
  return detail::unary_op<Scalar>(
      a, [](const A& x) -> A { return x.exp(); },
      [](A& grad, const A& g, const A&, const A& y) { grad += g * y; });
}

/// Clamp to [lo, hi]. Gradient passes through elements that were strictly
/// inside the range and is zero where the clamp engaged.
template <class Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, std::type_identity_t<Scalar> lo,
                     std::type_identity_t<Scalar> hi) {
  using A = ArrayX<Scalar>;
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return detail::unary_op<Scalar>(
      a, [lo, hi](const A& x) -> A { return x.max(lo).min(hi); },
      [lo, hi](A& grad, const A& g, const A& x, const A&) {
        grad += (x >= lo && x <= hi).select(g, A::Zero(g.size()));
      });
}

// Scalar-operand conveniences.
template <class Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, std::type_identity_t<Scalar> c) {
  using A = ArrayX<Scalar>;
  return detail::unary_op<Scalar>(
      a, [c](const A& x) -> A { return x + c; },
      [](A& grad, const A& g, const A&, const A&) { grad += g; });
}

template <class Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, std::type_identity_t<Scalar> c) {
  using A = ArrayX<Scalar>;
  return detail::unary_op<Scalar>(
      a, [c](const A& x) -> A { return x * c; },
      [c](A& grad, const A& g, const A&, const A&) { grad += g * c; });
}

template <class Scalar>
Tensor<Scalar> sub(std::type_identity_t<Scalar> c, const Tensor<Scalar>& a) {
  using A = ArrayX<Scalar>;
  return detail::unary_op<Scalar>(
      a, [c](const A& x) -> A { return c - x; },
      [](A& grad, const A& g, const A&, const A&) { grad -= g; });
}

template <class Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <class Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}
template <class Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}
template <class Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a) {
  return neg(a);
}

// ---------------------------------------------------------------------------
// Matrix multiply

template <class Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expects rank-2 tensors, got " +
                                shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), k2 = b.dim(0), p = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  ArrayX<Scalar> out(m * p);
  {
    ConstMapMat<Scalar> A(a.values().data(), m, k);
    ConstMapMat<Scalar> B(b.values().data(), k, p);
    MapMat<Scalar> C(out.data(), m, p);
    C.noalias() = A * B;
  }
  Tensor<Scalar> result = Tensor<Scalar>::from_array(Shape{m, p}, std::move(out));
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [an, bn, on, m, k, p]() {
        ConstMapMat<Scalar> G(on->grad.data(), m, p);
        if (an->requires_grad) {
          an->ensure_grad();
          ConstMapMat<Scalar> B(bn->values.data(), k, p);
          MapMat<Scalar> dA(an->grad.data(), m, k);
          dA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          ConstMapMat<Scalar> A(an->values.data(), m, k);
          MapMat<Scalar> dB(bn->grad.data(), k, p);
          dB.noalias() += A.transpose() * G;
        }
      },
      a, b);
  return result;
}

// ---------------------------------------------------------------------------
// Reductions

namespace detail {

struct AxisSpan {
  Index outer;
  Index axis;
  Index inner;
};

inline AxisSpan axis_span(const Shape& shape, Index axis, const char* op) {
  const Index rank = static_cast<Index>(shape.size());
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for shape " + shape_string(shape));
  AxisSpan span{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) span.outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < rank; ++i) span.inner *= shape[static_cast<std::size_t>(i)];
  return span;
}

inline Shape drop_axis(const Shape& shape, Index axis) {
  Shape out;
  for (Index i = 0; i < static_cast<Index>(shape.size()); ++i)
    if (i != axis) out.push_back(shape[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace detail

template <class Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.values().sum());
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  detail::maybe_record<Scalar>(
      out,
      [an, on]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        an->grad += on->grad[0];
      },
      a);
  return out;
}

template <class Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, Index axis) {
  const detail::AxisSpan span = detail::axis_span(a.shape(), axis, "sum");
  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(span.outer * span.inner);
  const ArrayX<Scalar>& v = a.values();
  for (Index o = 0; o < span.outer; ++o)
    for (Index j = 0; j < span.axis; ++j)
      out.segment(o * span.inner, span.inner) +=
          v.segment((o * span.axis + j) * span.inner, span.inner);
  Tensor<Scalar> result =
      Tensor<Scalar>::from_array(detail::drop_axis(a.shape(), axis), std::move(out));
  auto an = a.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [an, on, span]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (Index o = 0; o < span.outer; ++o)
          for (Index j = 0; j < span.axis; ++j)
            an->grad.segment((o * span.axis + j) * span.inner, span.inner) +=
                on->grad.segment(o * span.inner, span.inner);
      },
      a);
  return result;
}

template <class Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  Tensor<Scalar> total = sum(a);
  return mul(total, Scalar(1) / static_cast<Scalar>(a.size()));
}

template <class Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a, Index axis) {
  const detail::AxisSpan span = detail::axis_span(a.shape(), axis, "mean");
  if (span.axis == 0) throw std::invalid_argument("mean: empty axis");
  Tensor<Scalar> total = sum(a, axis);
  return mul(total, Scalar(1) / static_cast<Scalar>(span.axis));
}

/// Max over all elements (or one axis). Backward routes the gradient to the
/// recorded argmax; ties break to the lowest flat index.
template <class Scalar>
Tensor<Scalar> max(const Tensor<Scalar>& a) {
  if (a.size() == 0) throw std::invalid_argument("max: empty tensor");
  const ArrayX<Scalar>& v = a.values();
  Index arg = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v[i] > v[arg]) arg = i;
  Tensor<Scalar> out = Tensor<Scalar>::scalar(v[arg]);
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  detail::maybe_record<Scalar>(
      out,
      [an, on, arg]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        an->grad[arg] += on->grad[0];
      },
      a);
  return out;
}

template <class Scalar>
Tensor<Scalar> max(const Tensor<Scalar>& a, Index axis) {
  const detail::AxisSpan span = detail::axis_span(a.shape(), axis, "max");
  if (span.axis == 0) throw std::invalid_argument("max: empty axis");
  const ArrayX<Scalar>& v = a.values();
  ArrayX<Scalar> out(span.outer * span.inner);
  std::vector<Index> argmax(static_cast<std::size_t>(span.outer * span.inner));
  for (Index o = 0; o < span.outer; ++o) {
    for (Index i = 0; i < span.inner; ++i) {
      Index best = (o * span.axis) * span.inner + i;
      for (Index j = 1; j < span.axis; ++j) {
        const Index idx = (o * span.axis + j) * span.inner + i;
        if (v[idx] > v[best]) best = idx;
      }
      out[o * span.inner + i] = v[best];
      argmax[static_cast<std::size_t>(o * span.inner + i)] = best;
    }
  }
  Tensor<Scalar> result =
      Tensor<Scalar>::from_array(detail::drop_axis(a.shape(), axis), std::move(out));
  auto an = a.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [an, on, argmax = std::move(argmax)]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (Index i = 0; i < static_cast<Index>(argmax.size()); ++i)
          an->grad[argmax[static_cast<std::size_t>(i)]] += on->grad[i];
      },
      a);
  return result;
}

// ---------------------------------------------------------------------------
// Shape ops

template <class Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw std::invalid_argument("reshape: element count mismatch: " + shape_string(a.shape()) +
                                " -> " + shape_string(shape));
  Tensor<Scalar> out = Tensor<Scalar>::from_array(std::move(shape), a.values());
  auto an = a.node_ptr();
  auto on = out.node_ptr();
  detail::maybe_record<Scalar>(
      out,
      [an, on]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        an->grad += on->grad;
      },
      a);
  return out;
}

/// Contiguous slice [start, start+length) along one axis.
template <class Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, Index axis, Index start, Index length) {
  const detail::AxisSpan span = detail::axis_span(a.shape(), axis, "slice");
  if (start < 0 || length < 0 || start + length > span.axis)
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + length) + ") out of bounds for axis size " +
                                std::to_string(span.axis));
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  ArrayX<Scalar> out(numel(out_shape));
  const ArrayX<Scalar>& v = a.values();
  for (Index o = 0; o < span.outer; ++o)
    out.segment(o * length * span.inner, length * span.inner) =
        v.segment((o * span.axis + start) * span.inner, length * span.inner);
  Tensor<Scalar> result = Tensor<Scalar>::from_array(std::move(out_shape), std::move(out));
  auto an = a.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [an, on, span, start, length]() {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (Index o = 0; o < span.outer; ++o)
          an->grad.segment((o * span.axis + start) * span.inner, length * span.inner) +=
              on->grad.segment(o * length * span.inner, length * span.inner);
      },
      a);
  return result;
}

/// Same values, detached from the graph.
template <class Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& a) {
  return Tensor<Scalar>::from_array(a.shape(), a.values());
}

}  // namespace tcgan
