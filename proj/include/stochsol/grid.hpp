#pragma once

#include <cstddef>

namespace stochsol {

// Uniform periodic-style grid: x_i = x_min + i*dx, i in [0, n_points).
class Grid1D {
 public:
  Grid1D() = default;
  Grid1D(double x_min, double x_max, std::size_t n_points);

  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  std::size_t size() const { return n_; }
  double dx() const { return dx_; }
  double extent() const { return x_max_ - x_min_; }
  double x(std::size_t i) const { return x_min_ + static_cast<double>(i) * dx_; }

  bool operator==(const Grid1D&) const = default;

 private:
  double x_min_ = 0.0;
  double x_max_ = 1.0;
  std::size_t n_ = 0;
  double dx_ = 0.0;
};

bool is_power_of_two(std::size_t n);

}  // namespace stochsol
