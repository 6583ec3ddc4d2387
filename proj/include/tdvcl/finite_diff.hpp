#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace tdvcl::numdiff {

/// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h for every k.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + h;
    const double up = f(x);
    x[k] = saved - h;
    const double down = f(x);
    x[k] = saved;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps coordinates whose true
/// gradient is zero (dead ReLUs, unused parameters) from dividing by zero.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, relative_error(a[k], b[k], floor));
  return worst;
}

}  // namespace tdvcl::numdiff
