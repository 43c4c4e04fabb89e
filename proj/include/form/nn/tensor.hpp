#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "form/errors.hpp"

namespace form::nn {

// Dense n-d value container, row-major, slowest axis first. The leading axis
// is the batch dimension for all layer inputs/outputs.
template <typename T>
struct Tensor {
  std::vector<int> dims;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> d, T fill = T{0}) : dims(std::move(d)) {
    v.assign(numel_of(dims), fill);
  }

  static std::size_t numel_of(const std::vector<int>& d) {
    std::size_t n = 1;
    for (int x : d) n *= static_cast<std::size_t>(x);
    return n;
  }

  std::size_t numel() const { return v.size(); }
  int batch() const { return dims.empty() ? 0 : dims[0]; }
  // elements per sample
  std::size_t sample_size() const {
    return dims.empty() || dims[0] == 0 ? 0 : v.size() / dims[0];
  }
  T* sample(int n) { return v.data() + sample_size() * n; }
  const T* sample(int n) const { return v.data() + sample_size() * n; }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  void check_finite(const char* where) const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x)))
        throw NumericFault(std::string("non-finite value in ") + where);
  }
};

inline std::string shape_str(const std::vector<int>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

}  // namespace form::nn
