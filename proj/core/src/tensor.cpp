#include "ift/tensor.hpp"

#include <cmath>
#include <sstream>

#include "ift/error.hpp"

namespace ift {

int64_t shape_product(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw Error(ErrorKind::Data, "tensor extent must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_product(shape)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> payload) : shape(std::move(s)), data(std::move(payload)) {
  if (shape_product(shape) != static_cast<int64_t>(data.size())) {
    throw Error(ErrorKind::Data, "tensor payload size " + std::to_string(data.size()) +
                                     " does not match shape " + shape_to_string(shape));
  }
}

Tensor Tensor::full(std::vector<int64_t> s, double value) {
  Tensor t(std::move(s));
  t.fill(value);
  return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({static_cast<int64_t>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::uniform(std::vector<int64_t> s, Rng& rng, double lo, double hi) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::gaussian(std::vector<int64_t> s, Rng& rng, double mean, double stddev) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = mean + stddev * rng.gaussian();
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double value) {
  for (auto& v : data) v = value;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::Data, std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace ift
