#include "stochsol/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <numbers>
#include <utility>

namespace stochsol {

namespace {

// fftw planning is not thread-safe; execution with the new-array interface is.
struct PlanCache {
  std::mutex mutex;
  std::map<std::pair<std::size_t, int>, fftw_plan> plans;

  fftw_plan get(std::size_t n, int sign) {
    std::lock_guard lock(mutex);
    auto key = std::make_pair(n, sign);
    auto it = plans.find(key);
    if (it != plans.end()) return it->second;
    auto* buf = fftw_alloc_complex(n);
    fftw_plan p = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
    plans.emplace(key, p);
    return p;
  }

  ~PlanCache() {
    for (auto& [key, p] : plans) fftw_destroy_plan(p);
  }
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

void run(std::span<cplx> data, int sign) {
  if (data.empty()) return;
  fftw_plan p = cache().get(data.size(), sign);
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(p, ptr, ptr);
}

}  // namespace

void fft_forward(std::span<cplx> data) { run(data, FFTW_FORWARD); }
void fft_backward(std::span<cplx> data) { run(data, FFTW_BACKWARD); }

std::vector<double> fft_wavenumbers(std::size_t n, double dx) {
  std::vector<double> k(n);
  const double dk = 2.0 * std::numbers::pi / (static_cast<double>(n) * dx);
  for (std::size_t i = 0; i < n; ++i) {
    auto m = static_cast<long long>(i);
    if (i >= (n + 1) / 2) m -= static_cast<long long>(n);
    k[i] = dk * static_cast<double>(m);
  }
  return k;
}

}  // namespace stochsol
