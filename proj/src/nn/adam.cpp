#include "dprof/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace dprof::nn {

void adam_step(const std::vector<Param*>& params, AdamState& state) {
    if (state.m.empty() && state.step == 0) {
        for (const Param* p : params) {
            state.m.emplace_back(p->value.size(), 0.0);
            state.v.emplace_back(p->value.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k]->value.flat();
        auto g = params[k]->grad.flat();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != w.size()) throw std::invalid_argument("adam_step: parameter shape changed");
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace dprof::nn
