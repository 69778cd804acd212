#include "dprof/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace dprof::nn {

Linear::Linear(std::string name, std::size_t in, std::size_t out)
    : weight(name + ".weight", Tensor2(out, in)), bias(name + ".bias", Tensor2(1, out)) {
    if (in == 0 || out == 0) throw std::invalid_argument("Linear: dimensions must be positive");
}

void Linear::init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in()));
    for (auto& w : weight.value.flat()) w = rng.uniform(-bound, bound);
    for (auto& b : bias.value.flat()) b = rng.uniform(-bound, bound);
}

Tensor2 linear_forward(const Linear& layer, const Tensor2& x) {
    if (x.cols() != layer.in()) {
        throw std::invalid_argument("linear_forward: input has " + std::to_string(x.cols()) +
                                    " columns, layer expects " + std::to_string(layer.in()));
    }
    const std::size_t n = x.rows(), in = layer.in(), out = layer.out();
    const Tensor2 wt = layer.weight.value.transposed();  // in x out
    const auto b = layer.bias.value.row(0);
    Tensor2 y(n, out);
    for (std::size_t i = 0; i < n; ++i) {
        double* yr = y.row(i).data();
        for (std::size_t o = 0; o < out; ++o) yr[o] = b[o];
        const double* xr = x.row(i).data();
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = xr[k];
            const double* wr = wt.row(k).data();
            for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
        }
    }
    return y;
}

LinearGrads linear_backward(const Linear& layer, const Tensor2& x, const Tensor2& dy) {
    if (x.cols() != layer.in() || dy.cols() != layer.out() || x.rows() != dy.rows()) {
        throw std::invalid_argument("linear_backward: shape mismatch");
    }
    const std::size_t n = x.rows(), in = layer.in(), out = layer.out();
    const Tensor2& w = layer.weight.value;
    LinearGrads g{Tensor2(n, in), Tensor2(out, in), Tensor2(1, out)};
    double* db = g.db.row(0).data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* dyr = dy.row(i).data();
        const double* xr = x.row(i).data();
        double* dxr = g.dx.row(i).data();
        for (std::size_t o = 0; o < out; ++o) {
            const double d = dyr[o];
            db[o] += d;
            const double* wr = w.row(o).data();
            double* dwr = g.dW.row(o).data();
            for (std::size_t k = 0; k < in; ++k) {
                dxr[k] += d * wr[k];
                dwr[k] += d * xr[k];
            }
        }
    }
    return g;
}

BatchNorm::BatchNorm(std::string name, std::size_t n, double momentum_, double epsilon_)
    : gamma(name + ".gamma", Tensor2(1, n, 1.0)),
      beta(name + ".beta", Tensor2(1, n, 0.0)),
      running_mean(n, 0.0),
      running_var(n, 1.0),
      momentum(momentum_),
      epsilon(epsilon_) {
    if (!(momentum > 0.0 && momentum <= 1.0)) throw std::invalid_argument("BatchNorm: momentum must be in (0, 1]");
    if (!(epsilon > 0.0)) throw std::invalid_argument("BatchNorm: epsilon must be positive");
}

Tensor2 batchnorm_forward(const BatchNorm& layer, const Tensor2& x, Mode mode, BatchNormCache& cache) {
    const std::size_t n = x.rows(), f = x.cols();
    if (f != layer.features()) throw std::invalid_argument("batchnorm_forward: feature count mismatch");
    cache.mode = mode;
    cache.batch_size = n;
    cache.xhat = Tensor2(n, f);
    cache.inv_std.assign(f, 0.0);
    std::vector<double> mean(f, 0.0), var(f, 0.0);
    if (mode == Mode::train) {
        if (n < 2) throw std::invalid_argument("batchnorm_forward: train mode needs batch size >= 2");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) mean[j] += x(i, j);
        for (auto& m : mean) m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) {
                const double d = x(i, j) - mean[j];
                var[j] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(n);
        cache.batch_mean = mean;
        cache.batch_var = var;
    } else {
        mean = layer.running_mean;
        var = layer.running_var;
    }
    for (std::size_t j = 0; j < f; ++j) cache.inv_std[j] = 1.0 / std::sqrt(var[j] + layer.epsilon);
    const auto g = layer.gamma.value.row(0);
    const auto b = layer.beta.value.row(0);
    Tensor2 y(n, f);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            const double xh = (x(i, j) - mean[j]) * cache.inv_std[j];
            cache.xhat(i, j) = xh;
            y(i, j) = g[j] * xh + b[j];
        }
    return y;
}

void batchnorm_update_running(BatchNorm& layer, const BatchNormCache& cache) {
    if (cache.mode != Mode::train || cache.batch_size < 2) {
        throw std::invalid_argument("batchnorm_update_running: needs a train-mode cache");
    }
    const double unbias = static_cast<double>(cache.batch_size) / static_cast<double>(cache.batch_size - 1);
    const double mom = layer.momentum;
    for (std::size_t j = 0; j < layer.features(); ++j) {
        layer.running_mean[j] = (1.0 - mom) * layer.running_mean[j] + mom * cache.batch_mean[j];
        layer.running_var[j] = (1.0 - mom) * layer.running_var[j] + mom * cache.batch_var[j] * unbias;
    }
}

BatchNormGrads batchnorm_backward(const BatchNorm& layer, const BatchNormCache& cache,
                                  const Tensor2& dy) {
    const std::size_t n = dy.rows(), f = dy.cols();
    require_same_shape(cache.xhat, dy, "batchnorm_backward");
    BatchNormGrads g{Tensor2(n, f), Tensor2(1, f), Tensor2(1, f)};
    const auto gamma = layer.gamma.value.row(0);
    auto dgamma = g.dgamma.row(0);
    auto dbeta = g.dbeta.row(0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            dbeta[j] += dy(i, j);
            dgamma[j] += dy(i, j) * cache.xhat(i, j);
        }
    if (cache.mode == Mode::eval) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) g.dx(i, j) = dy(i, j) * gamma[j] * cache.inv_std[j];
        return g;
    }
    // dx = gamma * inv_std / n * (n * dy - sum(dy) - xhat * sum(dy * xhat))
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            g.dx(i, j) = gamma[j] * cache.inv_std[j] * inv_n *
                         (static_cast<double>(n) * dy(i, j) - dbeta[j] - cache.xhat(i, j) * dgamma[j]);
        }
    return g;
}

double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
double relu(double x) { return x > 0.0 ? x : 0.0; }
double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor2 leaky_relu_forward(const Tensor2& x, double slope) {
    Tensor2 y(x.rows(), x.cols());
    auto in = x.flat();
    auto out = y.flat();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = leaky_relu(in[i], slope);
    return y;
}

Tensor2 leaky_relu_backward(const Tensor2& x, const Tensor2& dy, double slope) {
    require_same_shape(x, dy, "leaky_relu_backward");
    Tensor2 dx(x.rows(), x.cols());
    auto in = x.flat();
    auto g = dy.flat();
    auto out = dx.flat();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? g[i] : slope * g[i];
    return dx;
}

Tensor2 relu_forward(const Tensor2& x) { return leaky_relu_forward(x, 0.0); }
Tensor2 relu_backward(const Tensor2& x, const Tensor2& dy) { return leaky_relu_backward(x, dy, 0.0); }

Tensor2 sigmoid_forward(const Tensor2& x) {
    Tensor2 y(x.rows(), x.cols());
    auto in = x.flat();
    auto out = y.flat();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid(in[i]);
    return y;
}

Tensor2 sigmoid_backward(const Tensor2& s, const Tensor2& dy) {
    require_same_shape(s, dy, "sigmoid_backward");
    Tensor2 dx(s.rows(), s.cols());
    auto sv = s.flat();
    auto g = dy.flat();
    auto out = dx.flat();
    for (std::size_t i = 0; i < sv.size(); ++i) out[i] = g[i] * sv[i] * (1.0 - sv[i]);
    return dx;
}

Tensor2 reparameterize(const Tensor2& mu, const Tensor2& logvar, const Tensor2& noise) {
    require_same_shape(mu, logvar, "reparameterize");
    require_same_shape(mu, noise, "reparameterize");
    Tensor2 z(mu.rows(), mu.cols());
    auto m = mu.flat();
    auto lv = logvar.flat();
    auto e = noise.flat();
    auto out = z.flat();
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] + std::exp(0.5 * lv[i]) * e[i];
    return z;
}

ReparamGrads reparameterize_backward(const Tensor2& logvar, const Tensor2& noise,
                                     const Tensor2& dz) {
    require_same_shape(logvar, dz, "reparameterize_backward");
    ReparamGrads g{dz, Tensor2(dz.rows(), dz.cols())};
    auto lv = logvar.flat();
    auto e = noise.flat();
    auto d = dz.flat();
    auto out = g.dlogvar.flat();
    for (std::size_t i = 0; i < lv.size(); ++i) out[i] = d[i] * e[i] * 0.5 * std::exp(0.5 * lv[i]);
    return g;
}

}  // namespace dprof::nn
