#pragma once

#include <random>

#include "dynstg/tensor.hpp"

namespace testutil {

inline dynstg::Tensor random_tensor(const dynstg::Shape& shape, std::mt19937_64& rng,
                                    double lo = -2.0, double hi = 2.0) {
  return dynstg::Tensor::uniform(shape, lo, hi, rng);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace testutil
