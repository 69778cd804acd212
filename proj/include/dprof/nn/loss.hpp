#pragma once

#include "dprof/nn/tensor.hpp"

namespace dprof::nn {

struct LossGrad {
    double loss = 0.0;
    Tensor2 grad;
};

// sum(mask * (recon - target)^2) / max(1, sum(mask)); gradient w.r.t. recon.
LossGrad masked_mse(const Tensor2& recon, const Tensor2& target, const Tensor2& mask);

struct KlGrad {
    double loss = 0.0;
    Tensor2 dmu;
    Tensor2 dlogvar;
};

// -0.5 * sum(1 + logvar - mu^2 - exp(logvar)) / rows
KlGrad kl_divergence(const Tensor2& mu, const Tensor2& logvar);

// Mean binary cross entropy over a column of logits; gradient w.r.t. logits.
LossGrad bce_with_logits(const Tensor2& logits, const Tensor2& labels);

// Scalar BCE on a probability; p is clamped away from 0 and 1.
double bce(double p, double y);
// Stable log(1 + exp(x)).
double softplus(double x);

}  // namespace dprof::nn
