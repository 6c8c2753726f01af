#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace stochsol {

struct TestReport {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  std::size_t dof = 0;  // chi-square only
};

// Start indices of groups of adjacent bins, formed left to right until each
// group's expected count reaches `min_expected`; a short tail joins the last group.
std::vector<std::size_t> merge_groups(std::span<const double> expected, double min_expected);

// Pearson goodness of fit. Expected counts are p_i * sum(observed) with p
// renormalized to unit sum; adjacent bins are merged left to right until
// every group expects at least `min_expected`.
TestReport chi_square_gof(std::span<const double> observed, std::span<const double> expected_prob,
                          double min_expected = 5.0);

// Two-sided one-sample Kolmogorov-Smirnov with the asymptotic p-value.
TestReport ks_test(std::span<const double> samples, const std::function<double(double)>& cdf);

// Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
double kolmogorov_survival(double lambda);

double chi_square_survival(double statistic, double dof);

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

MeanEstimate mean_estimate(std::span<const double> xs);

double sample_variance(std::span<const double> xs);
double pearson_correlation(std::span<const double> a, std::span<const double> b);

double normal_cdf(double x, double mean = 0.0, double sd = 1.0);

// Fixed-width histogram on [lo, hi); values outside are tallied separately.
class Histogram {
 public:
  Histogram(double lo, double hi, std::size_t bins);
  void add(double x);
  void merge(const Histogram& other);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  std::size_t bins() const { return counts_.size(); }
  double width() const { return (hi_ - lo_) / static_cast<double>(counts_.size()); }
  double edge(std::size_t i) const { return lo_ + static_cast<double>(i) * width(); }
  double center(std::size_t i) const { return lo_ + (static_cast<double>(i) + 0.5) * width(); }
  const std::vector<double>& counts() const { return counts_; }
  std::size_t outside() const { return outside_; }
  double total_inside() const;

 private:
  double lo_;
  double hi_;
  std::vector<double> counts_;
  std::size_t outside_ = 0;
};

}  // namespace stochsol
