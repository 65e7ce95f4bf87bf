#include "satflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace satflow::ad {

Shape::Shape(std::initializer_list<std::size_t> d) {
  if (d.size() > 3) throw std::invalid_argument("tensor rank above 3 is not supported");
  std::copy(d.begin(), d.end(), dims.begin());
  rank = d.size();
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) n *= dims[i];
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < rank; ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(s), data(s.numel(), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
  if (data.size() != shape.numel()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape.str());
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

void Parameter::zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }

}  // namespace satflow::ad
