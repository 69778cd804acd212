#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace dprof::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    // max |a - n| over the gradient's own scale max(|a|_inf, |n|_inf, floor).
    // Entries far below that scale are compared at the resolution central
    // differences actually have there.
    double max_scaled_error = 0.0;
    double max_abs_error = 0.0;
    std::vector<double> numeric;
};

// Central differences of f at point compared against the analytic gradient.
// Relative error is |a - n| / max(|a|, |n|, floor) so that entries whose true
// gradient is zero are judged on absolute error.
GradCheckResult grad_check_detail(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> point, std::span<const double> analytic,
                                  double step = 1e-5, double floor = 1e-6);

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point, std::span<const double> analytic,
                  double step = 1e-5, double floor = 1e-6);

}  // namespace dprof::nn
