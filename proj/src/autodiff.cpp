#include "satflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "satflow/kernels.hpp"

namespace satflow::ad {

namespace kn = kernels;

namespace {

constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

[[noreturn]] void shape_error(const char* op, const Shape& a) {
  throw ShapeError(std::string(op) + ": unsupported shape " + a.str());
}

Shape with_cols(const Shape& s, std::size_t cols) {
  Shape r = s;
  if (r.rank == 0) r = Shape{cols};
  else r.dims[r.rank - 1] = cols;
  return r;
}

bool same_leading(const Shape& a, const Shape& b) {
  if (a.rank != b.rank || a.rank == 0) return false;
  for (std::size_t i = 0; i + 1 < a.rank; ++i)
    if (a.dims[i] != b.dims[i]) return false;
  return true;
}

}  // namespace

struct OpBuilder {
  static Tape& tape_of(Var a) {
    if (!a.tape) throw std::logic_error("autodiff: variable is not attached to a tape");
    return *a.tape;
  }

  static Tape& tape_of(Var a, Var b) {
    if (a.tape != b.tape) throw std::logic_error("autodiff: operands belong to different tapes");
    return tape_of(a);
  }

  static const Tape::Node& node(Var v) { return v.tape->nodes_[v.id]; }

  static Tape::Node blank(Op op, Shape shape) {
    Tape::Node n{};
    n.op = op;
    n.shape = shape;
    n.a = n.b = n.c = kNone;
    return n;
  }

  static Var unary(Op op, Var a, Shape out, double s = 0.0) {
    Tape& t = tape_of(a);
    auto n = blank(op, out);
    n.a = a.id;
    n.s = s;
    n.needs_grad = node(a).needs_grad;
    return t.push(n);
  }

  static Var binary(Op op, Var a, Var b, Shape out) {
    Tape& t = tape_of(a, b);
    auto n = blank(op, out);
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return t.push(n);
  }

  static double* val(Var v) { return v.tape->val(v.id); }
  static Var push(Tape& t, const Tape::Node& n) { return t.push(n); }
  static void set_flag(Var v, bool f) { v.tape->nodes_[v.id].flag = f; }
};

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  grads_valid_ = false;
}

Var Tape::push(Node n) {
  if (n.op != Op::param) {
    n.off = values_.size();
    values_.resize(values_.size() + n.shape.numel());
  }
  nodes_.push_back(n);
  grads_valid_ = false;
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

double* Tape::val(std::uint32_t id) {
  const Node& n = nodes_[id];
  return n.op == Op::param ? n.param->value.data.data() : values_.data() + n.off;
}

double* Tape::grd(std::uint32_t id) {
  const Node& n = nodes_[id];
  return n.op == Op::param ? n.param->grad.data.data() : grads_.data() + n.off;
}

Var Tape::input(const Tensor& t, bool requires_grad) { return input(t.shape, t.data, requires_grad); }

Var Tape::input(Shape s, std::span<const double> values, bool requires_grad) {
  if (values.size() != s.numel()) {
    throw ShapeError("input: " + std::to_string(values.size()) + " values for shape " + s.str());
  }
  auto n = OpBuilder::blank(Op::input, s);
  n.needs_grad = requires_grad;
  Var v = push(n);
  std::copy(values.begin(), values.end(), val(v.id));
  return v;
}

Var Tape::param(Parameter& p) {
  if (p.grad.shape != p.value.shape) p.grad = Tensor(p.value.shape);
  auto n = OpBuilder::blank(Op::param, p.value.shape);
  n.param = &p;
  n.needs_grad = param_grads_;
  return push(n);
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.op == Op::param) return n.param->value.data;
  return {values_.data() + n.off, n.shape.numel()};
}

double Tape::scalar(Var v) const {
  const auto s = value(v);
  if (s.size() != 1) throw ShapeError("scalar: node has shape " + nodes_[v.id].shape.str());
  return s[0];
}

std::span<const double> Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.op == Op::param) return n.param->grad.data;
  if (!grads_valid_ || !n.needs_grad) {
    throw std::logic_error("grad: node has no gradient (not on a backward path)");
  }
  return {grads_.data() + n.off, n.shape.numel()};
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::logic_error("backward: root belongs to another tape");
  const Node& r = nodes_.at(root.id);
  if (r.shape.numel() != 1) throw ShapeError("backward: root must be scalar, got " + r.shape.str());
  grads_.assign(values_.size(), 0.0);
  grads_valid_ = true;
  if (!r.needs_grad) return;
  grads_[r.off] = 1.0;
  for (std::uint32_t id = root.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.needs_grad) backward_node(n, id);
  }
}

// ---------------------------------------------------------------------------
// Forward primitives.

Var matmul(Var a, Var b) {
  const Shape sa = OpBuilder::node(a).shape;
  const Shape sb = OpBuilder::node(b).shape;
  if (sa.rank != 2 || sb.rank != 2 || sa[1] != sb[0]) shape_error("matmul", sa, sb);
  Var y = OpBuilder::binary(Op::matmul, a, b, Shape{sa[0], sb[1]});
  kn::gemm_nn(sa[0], sb[1], sa[1], OpBuilder::val(a), OpBuilder::val(b), OpBuilder::val(y), false);
  return y;
}

Var affine(Var x, Var w, Var bias) {
  const Shape sx = OpBuilder::node(x).shape;
  const Shape sw = OpBuilder::node(w).shape;
  const Shape sb = OpBuilder::node(bias).shape;
  if (sx.rank != 2 || sw.rank != 2 || sx[1] != sw[0]) shape_error("affine", sx, sw);
  if (sb.numel() != sw[1]) shape_error("affine bias", sw, sb);
  Tape& t = OpBuilder::tape_of(x, w);
  OpBuilder::tape_of(x, bias);
  auto n = OpBuilder::blank(Op::affine, Shape{sx[0], sw[1]});
  n.a = x.id;
  n.b = w.id;
  n.c = bias.id;
  n.needs_grad = OpBuilder::node(x).needs_grad || OpBuilder::node(w).needs_grad ||
                 OpBuilder::node(bias).needs_grad;
  Var y = OpBuilder::push(t, n);
  const std::size_t m = sx[0], k = sx[1], cols = sw[1];
  double* out = OpBuilder::val(y);
  const double* bv = OpBuilder::val(bias);
  for (std::size_t i = 0; i < m; ++i) std::copy(bv, bv + cols, out + i * cols);
  kn::gemm_nn(m, cols, k, OpBuilder::val(x), OpBuilder::val(w), out, true);
  return y;
}

namespace {

// Returns true when b is broadcast over the rows of a.
bool check_broadcast(const char* op, const Shape& sa, const Shape& sb) {
  if (sa == sb) return false;
  if (sb.numel() == sa.cols() && sb.cols() == sa.cols() && sb.rows() == 1) return true;
  shape_error(op, sa, sb);
}

template <typename F>
Var elementwise(Op op, const char* name, Var a, Var b, F f) {
  const Shape sa = OpBuilder::node(a).shape;
  const bool bc = check_broadcast(name, sa, OpBuilder::node(b).shape);
  Var y = OpBuilder::binary(op, a, b, sa);
  const double* av = OpBuilder::val(a);
  const double* bv = OpBuilder::val(b);
  double* out = OpBuilder::val(y);
  const std::size_t n = sa.numel(), cols = sa.cols();
  if (bc) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i % cols]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  }
  return y;
}

template <typename F>
Var map(Op op, Var a, F f, double s = 0.0) {
  const Shape sa = OpBuilder::node(a).shape;
  Var y = OpBuilder::unary(op, a, sa, s);
  const double* av = OpBuilder::val(a);
  double* out = OpBuilder::val(y);
  for (std::size_t i = 0, n = sa.numel(); i < n; ++i) out[i] = f(av[i]);
  return y;
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise(Op::add, "add", a, b, [](double x, double y) { return x + y; });
}
Var sub(Var a, Var b) {
  return elementwise(Op::sub, "sub", a, b, [](double x, double y) { return x - y; });
}
Var mul(Var a, Var b) {
  return elementwise(Op::mul, "mul", a, b, [](double x, double y) { return x * y; });
}

Var scale(Var a, double c) {
  return map(Op::scale, a, [c](double x) { return c * x; }, c);
}
Var add_scalar(Var a, double c) {
  return map(Op::add_scalar, a, [c](double x) { return x + c; }, c);
}
Var tanh(Var a) {
  return map(Op::tanh, a, [](double x) { return std::tanh(x); });
}
Var relu(Var a) {
  return map(Op::relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}
Var exp(Var a) {
  return map(Op::exp, a, [](double x) { return std::exp(x); });
}
Var sqrt(Var a) {
  return map(Op::sqrt, a, [](double x) { return std::sqrt(x); });
}
Var reciprocal(Var a) {
  return map(Op::reciprocal, a, [](double x) { return 1.0 / x; });
}
Var square(Var a) {
  return map(Op::square, a, [](double x) { return x * x; });
}

Var concat(Var a, Var b) {
  const Shape sa = OpBuilder::node(a).shape;
  const Shape sb = OpBuilder::node(b).shape;
  if (!same_leading(sa, sb)) shape_error("concat", sa, sb);
  const std::size_t ca = sa.cols(), cb = sb.cols(), rows = sa.rows();
  Var y = OpBuilder::binary(Op::concat, a, b, with_cols(sa, ca + cb));
  const double* av = OpBuilder::val(a);
  const double* bv = OpBuilder::val(b);
  double* out = OpBuilder::val(y);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(av + r * ca, av + (r + 1) * ca, out + r * (ca + cb));
    std::copy(bv + r * cb, bv + (r + 1) * cb, out + r * (ca + cb) + ca);
  }
  return y;
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
  const Shape sa = OpBuilder::node(a).shape;
  if (sa.rank == 0 || start + len > sa.cols() || len == 0) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range for shape " + sa.str());
  }
  Tape& t = OpBuilder::tape_of(a);
  auto n = OpBuilder::blank(Op::slice_cols, with_cols(sa, len));
  n.a = a.id;
  n.i0 = start;
  n.needs_grad = OpBuilder::node(a).needs_grad;
  Var y = OpBuilder::push(t, n);
  const std::size_t rows = sa.rows(), ca = sa.cols();
  const double* av = OpBuilder::val(a);
  double* out = OpBuilder::val(y);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(av + r * ca + start, av + r * ca + start + len, out + r * len);
  return y;
}

Var select_cols(Var a, const std::vector<std::size_t>& index) {
  const Shape sa = OpBuilder::node(a).shape;
  if (sa.rank == 0 || index.empty()) shape_error("select_cols", sa);
  for (std::size_t j : index)
    if (j >= sa.cols()) {
      throw ShapeError("select_cols: index " + std::to_string(j) + " out of range for shape " +
                       sa.str());
    }
  Tape& t = OpBuilder::tape_of(a);
  auto n = OpBuilder::blank(Op::select_cols, with_cols(sa, index.size()));
  n.a = a.id;
  n.index = &index;
  n.needs_grad = OpBuilder::node(a).needs_grad;
  Var y = OpBuilder::push(t, n);
  const std::size_t rows = sa.rows(), ca = sa.cols(), co = index.size();
  const double* av = OpBuilder::val(a);
  double* out = OpBuilder::val(y);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < co; ++j) out[r * co + j] = av[r * ca + index[j]];
  return y;
}

Var softmax(Var a) {
  const Shape sa = OpBuilder::node(a).shape;
  if (sa.rank == 0) shape_error("softmax", sa);
  Var y = OpBuilder::unary(Op::softmax, a, sa);
  const std::size_t rows = sa.rows(), cols = sa.cols();
  const double* av = OpBuilder::val(a);
  double* out = OpBuilder::val(y);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av + r * cols;
    double* o = out + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (o[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
  }
  return y;
}

Var sum(Var a) {
  const Shape sa = OpBuilder::node(a).shape;
  Var y = OpBuilder::unary(Op::sum, a, Shape{1});
  const double* av = OpBuilder::val(a);
  double s = 0.0;
  for (std::size_t i = 0, n = sa.numel(); i < n; ++i) s += av[i];
  OpBuilder::val(y)[0] = s;
  return y;
}

Var mean(Var a) {
  const Shape sa = OpBuilder::node(a).shape;
  if (sa.numel() == 0) shape_error("mean", sa);
  Var y = OpBuilder::unary(Op::mean, a, Shape{1});
  const double* av = OpBuilder::val(a);
  double s = 0.0;
  for (std::size_t i = 0, n = sa.numel(); i < n; ++i) s += av[i];
  OpBuilder::val(y)[0] = s / static_cast<double>(sa.numel());
  return y;
}

Var sum_rows(Var a) {
  const Shape sa = OpBuilder::node(a).shape;
  if (sa.rank == 0) shape_error("sum_rows", sa);
  const std::size_t rows = sa.rows(), cols = sa.cols();
  Var y = OpBuilder::unary(Op::sum_rows, a, Shape{cols});
  const double* av = OpBuilder::val(a);
  double* out = OpBuilder::val(y);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) out[j] += av[r * cols + j];
  return y;
}

Var row_norm(Var a) {
  const Shape sa = OpBuilder::node(a).shape;
  if (sa.rank == 0) shape_error("row_norm", sa);
  const std::size_t rows = sa.rows(), cols = sa.cols();
  Var y = OpBuilder::unary(Op::row_norm, a, Shape{rows});
  const double* av = OpBuilder::val(a);
  double* out = OpBuilder::val(y);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += av[r * cols + j] * av[r * cols + j];
    out[r] = std::sqrt(s);
  }
  return y;
}

Var reshape(Var a, Shape s) {
  const Shape sa = OpBuilder::node(a).shape;
  if (sa.numel() != s.numel()) shape_error("reshape", sa, s);
  Var y = OpBuilder::unary(Op::reshape, a, s);
  const double* av = OpBuilder::val(a);
  std::copy(av, av + sa.numel(), OpBuilder::val(y));
  return y;
}

Var bmm(Var a, Var b, bool transpose_b) {
  const Shape sa = OpBuilder::node(a).shape;
  const Shape sb = OpBuilder::node(b).shape;
  if (sa.rank != 3 || sb.rank != 3 || sa[0] != sb[0]) shape_error("bmm", sa, sb);
  const std::size_t batch = sa[0], m = sa[1], k = sa[2];
  const std::size_t kb = transpose_b ? sb[2] : sb[1];
  const std::size_t n = transpose_b ? sb[1] : sb[2];
  if (kb != k) shape_error("bmm", sa, sb);
  Var y = OpBuilder::binary(Op::bmm, a, b, Shape{batch, m, n});
  OpBuilder::set_flag(y, transpose_b);
  const double* av = OpBuilder::val(a);
  const double* bv = OpBuilder::val(b);
  double* out = OpBuilder::val(y);
  for (std::size_t i = 0; i < batch; ++i) {
    if (transpose_b) kn::gemm_nt(m, n, k, av + i * m * k, bv + i * n * k, out + i * m * n, false);
    else kn::gemm_nn(m, n, k, av + i * m * k, bv + i * k * n, out + i * m * n, false);
  }
  return y;
}

Var cross(Var a, Var b) {
  const Shape sa = OpBuilder::node(a).shape;
  const Shape sb = OpBuilder::node(b).shape;
  if (sa != sb || sa.cols() != 3) shape_error("cross", sa, sb);
  Var y = OpBuilder::binary(Op::cross, a, b, sa);
  const double* av = OpBuilder::val(a);
  const double* bv = OpBuilder::val(b);
  double* out = OpBuilder::val(y);
  for (std::size_t r = 0, rows = sa.rows(); r < rows; ++r) {
    const double* x = av + 3 * r;
    const double* z = bv + 3 * r;
    double* o = out + 3 * r;
    o[0] = x[1] * z[2] - x[2] * z[1];
    o[1] = x[2] * z[0] - x[0] * z[2];
    o[2] = x[0] * z[1] - x[1] * z[0];
  }
  return y;
}

// ---------------------------------------------------------------------------
// Backward rules. `gy` is the gradient flowing into node `id`.

void Tape::backward_node(const Node& n, std::uint32_t id) {
  const double* gy = grads_.data() + n.off;
  const double* y = values_.data() + n.off;
  const std::size_t numel = n.shape.numel();
  auto needs = [&](std::uint32_t p) { return p != kNone && nodes_[p].needs_grad; };

  switch (n.op) {
    case Op::input:
    case Op::param:
    case Op::constant:
      return;

    case Op::matmul: {
      const Shape& sa = nodes_[n.a].shape;
      const std::size_t m = sa[0], k = sa[1], cols = n.shape[1];
      if (needs(n.a)) kn::gemm_nt(m, k, cols, gy, val(n.b), grd(n.a), true);
      if (needs(n.b)) kn::gemm_tn(k, cols, m, val(n.a), gy, grd(n.b), true);
      return;
    }

    case Op::affine: {
      const Shape& sx = nodes_[n.a].shape;
      const std::size_t m = sx[0], k = sx[1], cols = n.shape[1];
      if (needs(n.a)) kn::gemm_nt(m, k, cols, gy, val(n.b), grd(n.a), true);
      if (needs(n.b)) kn::gemm_tn(k, cols, m, val(n.a), gy, grd(n.b), true);
      if (needs(n.c)) {
        double* gb = grd(n.c);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < cols; ++j) gb[j] += gy[i * cols + j];
      }
      return;
    }

    case Op::add:
    case Op::sub:
    case Op::mul: {
      const bool bc = nodes_[n.b].shape != n.shape;
      const std::size_t cols = n.shape.cols();
      const double* av = val(n.a);
      const double* bv = val(n.b);
      if (needs(n.a)) {
        double* ga = grd(n.a);
        if (n.op == Op::mul) {
          for (std::size_t i = 0; i < numel; ++i) ga[i] += gy[i] * bv[bc ? i % cols : i];
        } else {
          for (std::size_t i = 0; i < numel; ++i) ga[i] += gy[i];
        }
      }
      if (needs(n.b)) {
        double* gb = grd(n.b);
        const double sign = n.op == Op::sub ? -1.0 : 1.0;
        for (std::size_t i = 0; i < numel; ++i) {
          const double g = n.op == Op::mul ? gy[i] * av[i] : sign * gy[i];
          gb[bc ? i % cols : i] += g;
        }
      }
      return;
    }

    case Op::scale: {
      double* ga = grd(n.a);
      for (std::size_t i = 0; i < numel; ++i) ga[i] += n.s * gy[i];
      return;
    }

    case Op::add_scalar:
    case Op::reshape: {
      double* ga = grd(n.a);
      for (std::size_t i = 0; i < numel; ++i) ga[i] += gy[i];
      return;
    }

    case Op::concat: {
      const std::size_t ca = nodes_[n.a].shape.cols(), cb = nodes_[n.b].shape.cols();
      const std::size_t rows = n.shape.rows(), co = ca + cb;
      if (needs(n.a)) {
        double* ga = grd(n.a);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += gy[r * co + j];
      }
      if (needs(n.b)) {
        double* gb = grd(n.b);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += gy[r * co + ca + j];
      }
      return;
    }

    case Op::slice_cols: {
      const std::size_t ca = nodes_[n.a].shape.cols(), len = n.shape.cols();
      double* ga = grd(n.a);
      for (std::size_t r = 0, rows = n.shape.rows(); r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) ga[r * ca + n.i0 + j] += gy[r * len + j];
      return;
    }

    case Op::select_cols: {
      const std::size_t ca = nodes_[n.a].shape.cols(), co = n.shape.cols();
      const auto& index = *n.index;
      double* ga = grd(n.a);
      for (std::size_t r = 0, rows = n.shape.rows(); r < rows; ++r)
        for (std::size_t j = 0; j < co; ++j) ga[r * ca + index[j]] += gy[r * co + j];
      return;
    }

    case Op::tanh: {
      double* ga = grd(n.a);
      for (std::size_t i = 0; i < numel; ++i) ga[i] += gy[i] * (1.0 - y[i] * y[i]);
      return;
    }

    case Op::relu: {
      double* ga = grd(n.a);
      const double* av = val(n.a);
      for (std::size_t i = 0; i < numel; ++i)
        if (av[i] > 0.0) ga[i] += gy[i];
      return;
    }

    case Op::exp: {
      double* ga = grd(n.a);
      for (std::size_t i = 0; i < numel; ++i) ga[i] += gy[i] * y[i];
      return;
    }

    case Op::sqrt: {
      double* ga = grd(n.a);
      for (std::size_t i = 0; i < numel; ++i)
        if (y[i] > 0.0) ga[i] += gy[i] / (2.0 * y[i]);
      return;
    }

    case Op::reciprocal: {
      double* ga = grd(n.a);
      for (std::size_t i = 0; i < numel; ++i) ga[i] -= gy[i] * y[i] * y[i];
      return;
    }

    case Op::square: {
      double* ga = grd(n.a);
      const double* av = val(n.a);
      for (std::size_t i = 0; i < numel; ++i) ga[i] += 2.0 * av[i] * gy[i];
      return;
    }

    case Op::softmax: {
      const std::size_t rows = n.shape.rows(), cols = n.shape.cols();
      double* ga = grd(n.a);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y + r * cols;
        const double* gr = gy + r * cols;
        double d = 0.0;
        for (std::size_t j = 0; j < cols; ++j) d += gr[j] * yr[j];
        for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += yr[j] * (gr[j] - d);
      }
      return;
    }

    case Op::sum:
    case Op::mean: {
      const std::size_t na = nodes_[n.a].shape.numel();
      const double g = n.op == Op::mean ? gy[0] / static_cast<double>(na) : gy[0];
      double* ga = grd(n.a);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g;
      return;
    }

    case Op::sum_rows: {
      const std::size_t cols = n.shape.cols(), rows = nodes_[n.a].shape.rows();
      double* ga = grd(n.a);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += gy[j];
      return;
    }

    case Op::row_norm: {
      const std::size_t cols = nodes_[n.a].shape.cols();
      const double* av = val(n.a);
      double* ga = grd(n.a);
      for (std::size_t r = 0; r < numel; ++r) {
        if (y[r] <= 0.0) continue;
        const double f = gy[r] / y[r];
        for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += f * av[r * cols + j];
      }
      return;
    }

    case Op::bmm: {
      const Shape& sa = nodes_[n.a].shape;
      const std::size_t batch = sa[0], m = sa[1], k = sa[2], cols = n.shape[2];
      const double* av = val(n.a);
      const double* bv = val(n.b);
      double* ga = needs(n.a) ? grd(n.a) : nullptr;
      double* gb = needs(n.b) ? grd(n.b) : nullptr;
      for (std::size_t i = 0; i < batch; ++i) {
        const double* g = gy + i * m * cols;
        const double* ai = av + i * m * k;
        const double* bi = bv + i * k * cols;
        if (n.flag) {
          // y = a b^T with b [cols, k]
          if (ga) kn::gemm_nn(m, k, cols, g, bi, ga + i * m * k, true);
          if (gb) kn::gemm_tn(cols, k, m, g, ai, gb + i * k * cols, true);
        } else {
          if (ga) kn::gemm_nt(m, k, cols, g, bi, ga + i * m * k, true);
          if (gb) kn::gemm_tn(k, cols, m, ai, g, gb + i * k * cols, true);
        }
      }
      return;
    }

    case Op::cross: {
      const double* av = val(n.a);
      const double* bv = val(n.b);
      double* ga = needs(n.a) ? grd(n.a) : nullptr;
      double* gb = needs(n.b) ? grd(n.b) : nullptr;
      for (std::size_t r = 0, rows = n.shape.rows(); r < rows; ++r) {
        const double* x = av + 3 * r;
        const double* z = bv + 3 * r;
        const double* g = gy + 3 * r;
        if (ga) {  // z x g
          ga[3 * r + 0] += z[1] * g[2] - z[2] * g[1];
          ga[3 * r + 1] += z[2] * g[0] - z[0] * g[2];
          ga[3 * r + 2] += z[0] * g[1] - z[1] * g[0];
        }
        if (gb) {  // g x x
          gb[3 * r + 0] += g[1] * x[2] - g[2] * x[1];
          gb[3 * r + 1] += g[2] * x[0] - g[0] * x[2];
          gb[3 * r + 2] += g[0] * x[1] - g[1] * x[0];
        }
      }
      return;
    }
  }
  (void)id;
}

}  // namespace satflow::ad
