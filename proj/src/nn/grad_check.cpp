#include "dprof/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dprof::nn {

GradCheckResult grad_check_detail(const std::function<double(std::span<const double>)>& f,
                                  std::span<const double> point, std::span<const double> analytic,
                                  double step, double floor) {
    if (point.size() != analytic.size()) throw std::invalid_argument("grad_check: gradient size mismatch");
    if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
    std::vector<double> x(point.begin(), point.end());
    GradCheckResult res;
    res.numeric.resize(x.size());
    double scale = floor, max_abs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(x);
        x[i] = orig - step;
        const double fm = f(x);
        x[i] = orig;
        const double num = (fp - fm) / (2.0 * step);
        res.numeric[i] = num;
        const double denom = std::max({std::abs(analytic[i]), std::abs(num), floor});
        const double rel = std::abs(analytic[i] - num) / denom;
        scale = std::max({scale, std::abs(analytic[i]), std::abs(num)});
        max_abs = std::max(max_abs, std::abs(analytic[i] - num));
        if (!(rel <= res.max_rel_error)) {
            res.max_rel_error = rel;
            res.worst_index = i;
        }
    }
    res.max_scaled_error = max_abs / scale;
    res.max_abs_error = max_abs;
    return res;
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point, std::span<const double> analytic, double step,
                  double floor) {
    return grad_check_detail(f, point, analytic, step, floor).max_rel_error;
}

}  // namespace dprof::nn
