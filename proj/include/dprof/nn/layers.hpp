#pragma once

#include "dprof/nn/tensor.hpp"
#include "dprof/rng.hpp"

#include <string>
#include <vector>

namespace dprof::nn {

// Trainable tensor with its gradient accumulator.
struct Param {
    std::string name;
    Tensor2 value;
    Tensor2 grad;

    Param() = default;
    Param(std::string n, Tensor2 v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
    void zero_grad() { grad.fill(0.0); }
};

struct Linear {
    Param weight;  // out x in
    Param bias;    // 1 x out

    Linear() = default;
    Linear(std::string name, std::size_t in, std::size_t out);
    // Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
    void init(Rng& rng);

    std::size_t in() const { return weight.value.cols(); }
    std::size_t out() const { return weight.value.rows(); }
};

struct LinearGrads {
    Tensor2 dx;
    Tensor2 dW;
    Tensor2 db;
};

// y = x W^T + b
Tensor2 linear_forward(const Linear& layer, const Tensor2& x);
LinearGrads linear_backward(const Linear& layer, const Tensor2& x, const Tensor2& dy);

enum class Mode { train, eval };

struct BatchNorm {
    Param gamma;  // 1 x n
    Param beta;   // 1 x n
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    BatchNorm() = default;
    BatchNorm(std::string name, std::size_t n, double momentum = 0.1, double epsilon = 1e-5);
    std::size_t features() const { return running_mean.size(); }
};

struct BatchNormCache {
    Tensor2 xhat;
    std::vector<double> inv_std;
    std::vector<double> batch_mean;
    std::vector<double> batch_var;  // biased
    std::size_t batch_size = 0;
    Mode mode = Mode::train;
};

// Train mode normalizes with batch statistics (biased variance); eval mode
// uses the running estimates.
Tensor2 batchnorm_forward(const BatchNorm& layer, const Tensor2& x, Mode mode, BatchNormCache& cache);
// Folds the batch statistics of a train-mode pass into the running estimates,
// using the unbiased variance.
void batchnorm_update_running(BatchNorm& layer, const BatchNormCache& cache);

struct BatchNormGrads {
    Tensor2 dx;
    Tensor2 dgamma;
    Tensor2 dbeta;
};

BatchNormGrads batchnorm_backward(const BatchNorm& layer, const BatchNormCache& cache,
                                  const Tensor2& dy);

double leaky_relu(double x, double slope = 0.2);
double relu(double x);
double sigmoid(double x);

Tensor2 leaky_relu_forward(const Tensor2& x, double slope = 0.2);
Tensor2 leaky_relu_backward(const Tensor2& x, const Tensor2& dy, double slope = 0.2);
Tensor2 relu_forward(const Tensor2& x);
Tensor2 relu_backward(const Tensor2& x, const Tensor2& dy);
Tensor2 sigmoid_forward(const Tensor2& x);
// Gradient given the forward output s = sigmoid(x).
Tensor2 sigmoid_backward(const Tensor2& s, const Tensor2& dy);

// z = mu + exp(0.5 * logvar) * noise
Tensor2 reparameterize(const Tensor2& mu, const Tensor2& logvar, const Tensor2& noise);
struct ReparamGrads {
    Tensor2 dmu;
    Tensor2 dlogvar;
};
ReparamGrads reparameterize_backward(const Tensor2& logvar, const Tensor2& noise,
                                     const Tensor2& dz);

}  // namespace dprof::nn
