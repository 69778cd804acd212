#include "support/grad_suite.hpp"

#include "dprof/error.hpp"
#include "dprof/nn/adam.hpp"

#include <doctest.h>

#include <cmath>

using namespace dprof;
using namespace dprof::nn;
using dprof::testing::random_tensor;

TEST_CASE("linear layer identity and zero upstream gradient") {
    Linear lin("l", 3, 3);
    for (std::size_t i = 0; i < 3; ++i) lin.weight.value(i, i) = 1.0;
    Tensor2 x(2, 3, std::vector<double>{1, -2, 3, 0.5, 0, -1});
    CHECK(linear_forward(lin, x) == x);
    const auto g = linear_backward(lin, x, Tensor2(2, 3));
    for (double v : g.dx.flat()) CHECK(v == 0.0);
    for (double v : g.dW.flat()) CHECK(v == 0.0);
    for (double v : g.db.flat()) CHECK(v == 0.0);
}

TEST_CASE("random 3x4 linear layer passes the finite-difference check") {
    Rng rng(3);
    Linear lin("l", 4, 3);
    lin.init(rng);
    Tensor2 x = random_tensor(rng, 5, 4);
    const Tensor2 w = random_tensor(rng, 5, 3);
    const auto g = linear_backward(lin, x, w);
    auto f = [&] { return testing::weighted_sum(linear_forward(lin, x), w); };
    CHECK(testing::check_tensor(lin.weight.value, g.dW, f) < 1e-6);
    CHECK(testing::check_tensor(x, g.dx, f) < 1e-6);
}

TEST_CASE("batch norm normalizes in train mode and is identity at default eval state") {
    Rng rng(5);
    BatchNorm bn("bn", 3);
    const Tensor2 x = random_tensor(rng, 50, 3, 4.0);
    BatchNormCache cache;
    const auto y = batchnorm_forward(bn, x, Mode::train, cache);
    for (std::size_t j = 0; j < 3; ++j) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < 50; ++i) m += y(i, j);
        m /= 50;
        for (std::size_t i = 0; i < 50; ++i) v += (y(i, j) - m) * (y(i, j) - m);
        v /= 50;
        CHECK(std::abs(m) < 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    }
    BatchNormCache ec;
    const auto e = batchnorm_forward(bn, x, Mode::eval, ec);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(e.flat()[i] == doctest::Approx(x.flat()[i] / std::sqrt(1 + 1e-5)));
}

TEST_CASE("batch norm refuses a single-row training batch") {
    BatchNorm bn("bn", 2);
    BatchNormCache cache;
    CHECK_THROWS(batchnorm_forward(bn, Tensor2(1, 2), Mode::train, cache));
}

TEST_CASE("batch norm running statistics use the unbiased batch variance") {
    BatchNorm bn("bn", 1, 0.5);
    Tensor2 x(2, 1, std::vector<double>{1.0, 3.0});
    BatchNormCache cache;
    batchnorm_forward(bn, x, Mode::train, cache);
    batchnorm_update_running(bn, cache);
    CHECK(bn.running_mean[0] == doctest::Approx(1.0));      // 0.5 * 0 + 0.5 * 2
    CHECK(bn.running_var[0] == doctest::Approx(1.5));       // 0.5 * 1 + 0.5 * 2
}

TEST_CASE("activation values") {
    CHECK(leaky_relu(-1.0) == doctest::Approx(-0.2));
    CHECK(relu(-3.0) == 0.0);
    CHECK(relu(3.0) == 3.0);
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) <= 1.0);
}

TEST_CASE("reparameterization") {
    Rng rng(1);
    const Tensor2 mu = random_tensor(rng, 3, 2);
    const Tensor2 n = random_tensor(rng, 3, 2);
    CHECK(reparameterize(mu, Tensor2(3, 2), Tensor2(3, 2)) == mu);
    const auto z = reparameterize(mu, Tensor2(3, 2), n);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.flat()[i] == doctest::Approx(mu.flat()[i] + n.flat()[i]));
    const Tensor2 dz = random_tensor(rng, 3, 2);
    CHECK(reparameterize_backward(random_tensor(rng, 3, 2), n, dz).dmu == dz);
}

TEST_CASE("masked mse") {
    Rng rng(2);
    const Tensor2 r = random_tensor(rng, 3, 4);
    const Tensor2 t = random_tensor(rng, 3, 4);
    CHECK(masked_mse(r, t, Tensor2(3, 4)).loss == 0.0);
    CHECK(masked_mse(r, r, Tensor2(3, 4, 1.0)).loss == 0.0);
    Tensor2 shifted = t;
    Tensor2 mask(3, 4);
    for (std::size_t k : {0u, 5u, 7u}) {
        shifted.flat()[k] += 1.0;
        mask.flat()[k] = 1.0;
    }
    const auto g = masked_mse(shifted, t, mask);
    CHECK(g.loss == doctest::Approx(1.0));
    for (std::size_t k = 0; k < 12; ++k) {
        if (mask.flat()[k] == 0.0) CHECK(g.grad.flat()[k] == 0.0);
    }
}

TEST_CASE("kl divergence") {
    CHECK(kl_divergence(Tensor2(2, 3), Tensor2(2, 3)).loss == 0.0);
    CHECK(kl_divergence(Tensor2(1, 1, 1.0), Tensor2(1, 1)).loss == doctest::Approx(0.5));
    Rng rng(9);
    for (int i = 0; i < 50; ++i) CHECK(kl_divergence(random_tensor(rng, 4, 3, 3), random_tensor(rng, 4, 3, 3)).loss >= 0.0);
}

TEST_CASE("binary cross entropy") {
    CHECK(bce(0.5, 1.0) == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(bce(1.0 - 1e-15, 1.0) < 1e-9);
    CHECK(std::isfinite(bce(0.0, 1.0)));
    CHECK(bce_with_logits(Tensor2(1, 1), Tensor2(1, 1, 1.0)).loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("adam first step moves each parameter by about lr against the gradient sign") {
    Param p("p", Tensor2(1, 4, std::vector<double>{1, 2, 3, 4}));
    p.grad = Tensor2(1, 4, std::vector<double>{0.3, -2.0, 1e-3, -50.0});
    AdamState st;
    st.lr = 1e-3;
    adam_step({&p}, st);
    const std::vector<double> before{1, 2, 3, 4};
    for (std::size_t i = 0; i < 4; ++i) {
        const double delta = p.value.flat()[i] - before[i];
        const double g = p.grad.flat()[i];
        CHECK(delta * g < 0.0);
        CHECK(std::abs(delta) <= st.lr);
        CHECK(std::abs(delta) >= st.lr * (1 - 1e-4));
    }
}

TEST_CASE("adam leaves parameters alone under zero gradients and is deterministic") {
    Param p("p", Tensor2(2, 2, 1.5));
    AdamState st;
    for (int i = 0; i < 100; ++i) adam_step({&p}, st);
    CHECK(p.value == Tensor2(2, 2, 1.5));

    auto trajectory = [] {
        Param q("q", Tensor2(1, 3, std::vector<double>{1, -1, 0.5}));
        AdamState s;
        for (int i = 0; i < 200; ++i) {
            for (std::size_t k = 0; k < 3; ++k) q.grad.flat()[k] = 2 * q.value.flat()[k];
            adam_step({&q}, s);
        }
        return q.value;
    };
    CHECK(trajectory() == trajectory());
}

TEST_CASE("gradient checker on a quadratic and on a broken gradient") {
    auto f = [](std::span<const double> x) { return x[0] * x[0]; };
    const std::vector<double> x{3.0};
    const auto r = grad_check_detail(f, x, std::vector<double>{6.0});
    CHECK(std::abs(r.numeric[0] - 6.0) < 1e-8);
    CHECK(r.max_rel_error < 1e-9);
    CHECK(grad_check(f, x, std::vector<double>{4.0}) > 0.1);

    // A tiny entry next to a large one: entrywise error is large, scaled error is not.
    auto g = [](std::span<const double> v) { return 1e4 * v[0] + 1e-9 * v[1]; };
    const std::vector<double> y{1.0, 1.0};
    const auto s = grad_check_detail(g, y, std::vector<double>{1e4, 2e-9});
    CHECK(s.max_rel_error > 1e-4);
    CHECK(s.max_scaled_error < 1e-10);
    CHECK(s.max_abs_error == doctest::Approx(std::abs(2e-9 - s.numeric[1])));
    const auto broken = grad_check_detail(g, y, std::vector<double>{1e4, 5.0});
    CHECK(broken.max_scaled_error > 1e-4);
}

TEST_CASE("layer and loss gradients across randomized cases") {
    const auto res = testing::run_layer_grad_suite(11, 8);
    CHECK(res.cases >= 100);
    for (const auto& [op, e] : res.max_error) {
        INFO(op << " max relative error " << e);
        CHECK(e < res.tolerance.at(op));
    }
}

TEST_CASE("full profiler loss gradient on a tiny model") {
    for (std::uint64_t seed : {1u, 2u, 3u}) CHECK(testing::full_loss_grad_error(seed) < 1e-4);
}

TEST_CASE("broken backward is caught by the checker") {
    Rng rng(4);
    Linear lin("l", 3, 2);
    lin.init(rng);
    Tensor2 x = random_tensor(rng, 4, 3);
    const Tensor2 w = random_tensor(rng, 4, 2);
    auto g = linear_backward(lin, x, w);
    for (auto& v : g.dW.flat()) v *= 1.5;
    auto f = [&] { return testing::weighted_sum(linear_forward(lin, x), w); };
    CHECK(testing::check_tensor(lin.weight.value, g.dW, f) > 0.1);
}
