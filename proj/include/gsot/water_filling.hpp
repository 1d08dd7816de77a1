#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace gsot {

/// Closed-form solver for
///
///   minimize_x  sum_f z_f * exp(-x_f)   subject to  ||x||_1 <= budget,
///
/// with z >= 0. The minimizer is x_f = max(log z_f - log nu, 0) where nu is
/// picked so that sum_f x_f = budget; nu is located by sorting z and finding
/// the breakpoint interval of the piecewise-linear budget function.
///
/// Zero entries of z never receive budget. Ties are ordered by index so the
/// bookkeeping is deterministic. Buffers are reused across calls.
class WaterFiller {
 public:
  /// Writes the allocation into x (same length as z).
  void allocate(std::span<const double> z, double budget, std::span<double> x) {
    const std::size_t F = z.size();
    std::fill(x.begin(), x.end(), 0.0);
    if (!(budget > 0.0)) return;

    active_.clear();
    for (std::size_t f = 0; f < F; ++f)
      if (z[f] > 0.0) active_.push_back(f);
    const std::size_t L = active_.size();
    if (L == 0) return;

    std::stable_sort(active_.begin(), active_.end(),
                     [&](std::size_t a, std::size_t b) { return z[a] < z[b]; });
    logs_.resize(L);
    for (std::size_t k = 0; k < L; ++k) logs_[k] = std::log(z[active_[k]]);

    // suffix_[k] = sum_{j >= k} logs_[j]
    suffix_.assign(L + 1, 0.0);
    for (std::size_t k = L; k-- > 0;) suffix_[k] = suffix_[k + 1] + logs_[k];

    // First sorted position whose value, used as nu, does not exhaust the
    // budget. The last position always qualifies (its excess is -budget).
    std::size_t m = 0;
    for (; m + 1 < L; ++m) {
      const double excess =
          suffix_[m + 1] - static_cast<double>(L - 1 - m) * logs_[m] - budget;
      if (excess <= 0.0) break;
    }
    const double log_nu = (suffix_[m] - budget) / static_cast<double>(L - m);
    last_log_nu_ = log_nu;
    last_excluded_ = m;

    for (std::size_t k = m; k < L; ++k) x[active_[k]] = std::max(0.0, logs_[k] - log_nu);
  }

  std::vector<double> allocate(std::span<const double> z, double budget) {
    std::vector<double> x(z.size());
    allocate(z, budget, x);
    return x;
  }

  /// log(nu) of the most recent non-trivial allocation.
  double last_log_nu() const { return last_log_nu_; }
  /// Number of active entries below the breakpoint (f* in sorted order).
  std::size_t last_breakpoint() const { return last_excluded_; }

 private:
  std::vector<std::size_t> active_;
  std::vector<double> logs_;
  std::vector<double> suffix_;
  double last_log_nu_ = 0.0;
  std::size_t last_excluded_ = 0;
};

}  // namespace gsot
