#include "dprof/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dprof::nn {

LossGrad masked_mse(const Tensor2& recon, const Tensor2& target, const Tensor2& mask) {
    require_same_shape(recon, target, "masked_mse");
    require_same_shape(recon, mask, "masked_mse");
    auto r = recon.flat();
    auto t = target.flat();
    auto m = mask.flat();
    double count = 0.0;
    for (double v : m) count += v;
    const double denom = std::max(1.0, count);
    LossGrad out{0.0, Tensor2(recon.rows(), recon.cols())};
    auto g = out.grad.flat();
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (m[i] == 0.0) continue;
        const double d = r[i] - t[i];
        out.loss += m[i] * d * d;
        g[i] = 2.0 * m[i] * d / denom;
    }
    out.loss /= denom;
    return out;
}

KlGrad kl_divergence(const Tensor2& mu, const Tensor2& logvar) {
    require_same_shape(mu, logvar, "kl_divergence");
    if (mu.rows() == 0) throw std::invalid_argument("kl_divergence: empty batch");
    const double inv_n = 1.0 / static_cast<double>(mu.rows());
    KlGrad out{0.0, Tensor2(mu.rows(), mu.cols()), Tensor2(mu.rows(), mu.cols())};
    auto m = mu.flat();
    auto lv = logvar.flat();
    auto dm = out.dmu.flat();
    auto dl = out.dlogvar.flat();
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double e = std::exp(lv[i]);
        out.loss += -0.5 * (1.0 + lv[i] - m[i] * m[i] - e);
        dm[i] = m[i] * inv_n;
        dl[i] = 0.5 * (e - 1.0) * inv_n;
    }
    out.loss *= inv_n;
    return out;
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

LossGrad bce_with_logits(const Tensor2& logits, const Tensor2& labels) {
    require_same_shape(logits, labels, "bce_with_logits");
    if (logits.size() == 0) throw std::invalid_argument("bce_with_logits: empty batch");
    const double inv_n = 1.0 / static_cast<double>(logits.size());
    LossGrad out{0.0, Tensor2(logits.rows(), logits.cols())};
    auto z = logits.flat();
    auto y = labels.flat();
    auto g = out.grad.flat();
    for (std::size_t i = 0; i < z.size(); ++i) {
        // y*softplus(-z) + (1-y)*softplus(z)
        out.loss += y[i] * softplus(-z[i]) + (1.0 - y[i]) * softplus(z[i]);
        const double s = z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-z[i])) : std::exp(z[i]) / (1.0 + std::exp(z[i]));
        g[i] = (s - y[i]) * inv_n;
    }
    out.loss *= inv_n;
    return out;
}

double bce(double p, double y) {
    constexpr double kEps = 1e-12;
    p = std::clamp(p, kEps, 1.0 - kEps);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

}  // namespace dprof::nn
