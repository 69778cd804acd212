#pragma once

#include "dprof/nn/layers.hpp"

#include <cstdint>
#include <vector>

namespace dprof::nn {

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// One bias-corrected update of every parameter from its accumulated grad.
// The moment buffers are sized on the first call; later calls must pass the
// same parameter list in the same order.
void adam_step(const std::vector<Param*>& params, AdamState& state);

}  // namespace dprof::nn
