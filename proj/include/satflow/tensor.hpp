#pragma once
// Dense row-major tensors of doubles and named trainable parameters.

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace satflow::ad {

/// Up to rank 3. The last dimension is the "column" axis that concat, slice,
/// softmax and row broadcasting operate on.
struct Shape {
  std::array<std::size_t, 3> dims{};
  std::size_t rank = 0;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> d);

  std::size_t numel() const;
  std::size_t cols() const { return rank == 0 ? 1 : dims[rank - 1]; }
  std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }
  std::size_t operator[](std::size_t i) const { return dims[i]; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  bool all_finite() const;
  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v);
  void zero_grad();
};

}  // namespace satflow::ad
