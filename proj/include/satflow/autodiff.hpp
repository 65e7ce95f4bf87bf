#pragma once
// Reverse-mode automatic differentiation on a per-forward-pass tape.
//
// Node values and gradients live in two flat arenas owned by the tape, so a
// tape that is cleared and rebuilt (the MPC solver does this every iteration)
// stops allocating after the first pass. Parameter leaves read the
// Parameter's storage in place and backward accumulates straight into
// Parameter::grad.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "satflow/tensor.hpp"

namespace satflow::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
};

enum class Op : std::uint8_t {
  input,
  param,
  constant,
  matmul,
  affine,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  concat,
  slice_cols,
  select_cols,
  tanh,
  relu,
  exp,
  sqrt,
  reciprocal,
  square,
  softmax,
  sum,
  mean,
  sum_rows,
  row_norm,
  reshape,
  bmm,
  cross,
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Drop all nodes but keep the arena capacity.
  void clear();
  std::size_t size() const { return nodes_.size(); }

  /// When false, parameter leaves are treated as constants and backward skips
  /// every weight gradient.
  void set_param_grads(bool on) { param_grads_ = on; }
  bool param_grads() const { return param_grads_; }

  Var input(const Tensor& t, bool requires_grad = false);
  Var input(Shape s, std::span<const double> values, bool requires_grad = false);
  Var constant(const Tensor& t) { return input(t, false); }
  Var param(Parameter& p);

  const Shape& shape(Var v) const { return nodes_[v.id].shape; }
  std::span<const double> value(Var v) const;
  double scalar(Var v) const;
  /// Gradient of the last backward root with respect to `v`.
  std::span<const double> grad(Var v) const;

  /// Accumulate d(root)/d(leaf) for every leaf that requires a gradient.
  void backward(Var root);

 private:
  struct Node {
    Op op;
    bool needs_grad;
    bool flag;
    Shape shape;
    std::size_t off;
    std::uint32_t a, b, c;
    double s;
    std::size_t i0;
    Parameter* param;
    const std::vector<std::size_t>* index;
  };

  friend struct OpBuilder;

  Var push(Node n);
  double* val(std::uint32_t id);
  double* grd(std::uint32_t id);
  void backward_node(const Node& n, std::uint32_t id);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
  bool param_grads_ = true;
  bool grads_valid_ = false;
};

// y = a b for a [m,k], b [k,n].
Var matmul(Var a, Var b);
// y = x W + bias for x [m,k], W [k,n], bias [n].
Var affine(Var x, Var w, Var bias);

// Elementwise with either equal shapes or `b` holding one row broadcast over
// every row of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double c);
Var add_scalar(Var a, double c);

/// Along the last axis; leading dimensions must agree.
Var concat(Var a, Var b);
Var slice_cols(Var a, std::size_t start, std::size_t len);
/// Gather columns by index. `index` must outlive the tape's use of the node.
Var select_cols(Var a, const std::vector<std::size_t>& index);

Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var reciprocal(Var a);
Var square(Var a);
/// Over the last axis.
Var softmax(Var a);

Var sum(Var a);
Var mean(Var a);
/// Column sums: [r, n] -> [n].
Var sum_rows(Var a);
/// Euclidean norm of each row: [r, n] -> [r].
Var row_norm(Var a);
Var reshape(Var a, Shape s);
/// Batched product of rank-3 operands, optionally with b transposed per batch.
Var bmm(Var a, Var b, bool transpose_b = false);
/// Row-wise cross product of [r, 3] operands.
Var cross(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace satflow::ad
