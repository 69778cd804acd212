#include "support/shap_models.hpp"

#include "dprof/error.hpp"
#include "dprof/explain.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace dprof;
using namespace dprof::testing;
using nn::Tensor2;

namespace {

double efficiency_residual(const ShapResult& r) {
    return std::abs(std::accumulate(r.phi.begin(), r.phi.end(), 0.0) + r.base_value - r.fx);
}

ShapConfig exact_config() { return ShapConfig{}; }

ShapConfig sampling_config(std::size_t pairs, std::uint64_t seed) {
    ShapConfig c;
    c.exact_max_features = 0;
    c.permutation_pairs = pairs;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("normalized likelihood ratio") {
    CHECK(normalize_lr(5.0) == 0.5);
    CHECK(normalize_lr(0.0) == doctest::Approx(1.0 / (1.0 + std::exp(10.0))));
    CHECK(normalize_lr(0.0) > 0.0);
    double prev = -1.0;
    for (double lr = 0.0; lr < 20.0; lr += 0.25) {
        CHECK(normalize_lr(lr) > prev);
        prev = normalize_lr(lr);
    }
}

TEST_CASE("constant function has zero attributions") {
    Rng rng(1);
    Tensor2 bv, bm;
    random_background(rng, 20, 6, bv, bm);
    const BatchFn constant = [](const Tensor2& v, const Tensor2&) { return std::vector<double>(v.rows(), 0.7); };
    const auto r = shap_values(constant, random_sample(rng, 6), bv, bm, exact_config());
    for (double p : r.phi) CHECK(p == 0.0);
}

TEST_CASE("linear model reproduces the closed form exactly") {
    Rng rng(2);
    for (std::size_t d : {1u, 3u, 6u, 10u}) {
        std::vector<double> w(d);
        for (auto& x : w) x = rng.uniform(-2, 2);
        Tensor2 bv, bm;
        random_background(rng, 15, d, bv, bm);
        const auto x = random_sample(rng, d);
        const auto r = shap_values(linear_model(w, 0.3), x, bv, bm, exact_config());
        CHECK(r.method == ShapMethod::exact_enumeration);
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < bv.rows(); ++i) mean += bv(i, j);
            mean /= static_cast<double>(bv.rows());
            CHECK(r.phi[j] == doctest::Approx(w[j] * (x.values[j] - mean)).epsilon(1e-12));
        }
        CHECK(efficiency_residual(r) <= 1e-9);
    }
}

TEST_CASE("exact mode satisfies efficiency on interacting models") {
    Rng rng(3);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const std::size_t d = 4 + s;
        Tensor2 bv, bm;
        random_background(rng, 12, d, bv, bm);
        const auto r = shap_values(interaction_model(d, s), random_sample(rng, d), bv, bm, exact_config());
        CHECK(efficiency_residual(r) <= 1e-9);
    }
}

TEST_CASE("sampling estimates cover the exact values at the stated 99% level") {
    Rng rng(4);
    std::size_t covered = 0, total = 0;
    double worst_ratio = 0.0;
    for (std::uint64_t s = 0; s < 40; ++s) {
        const std::size_t d = 8;
        Tensor2 bv, bm;
        random_background(rng, 16, d, bv, bm);
        const auto x = random_sample(rng, d);
        const auto fn = interaction_model(d, 100 + s);
        const auto exact = shap_values(fn, x, bv, bm, exact_config());
        const auto est = shap_values(fn, x, bv, bm, sampling_config(64, 1000 + s));
        CHECK(est.method == ShapMethod::permutation_sampling);
        CHECK(efficiency_residual(est) <= 1e-9);
        for (std::size_t j = 0; j < d; ++j) {
            const double err = std::abs(est.phi[j] - exact.phi[j]);
            if (est.ci99(j) > 0) worst_ratio = std::max(worst_ratio, err / est.ci99(j));
            covered += err <= est.ci99(j) + 1e-12;
            ++total;
        }
    }
    INFO("covered " << covered << " of " << total << ", worst error / half-width " << worst_ratio);
    CHECK(static_cast<double>(covered) / static_cast<double>(total) >= 0.97);
    CHECK(worst_ratio < 2.0);
}

TEST_CASE("sample equal to its only background row has zero attributions") {
    Rng rng(5);
    const auto x = random_sample(rng, 7);
    Tensor2 bv(1, 7, x.values), bm(1, 7, x.mask);
    const auto r = shap_values(interaction_model(7, 1), x, bv, bm, exact_config());
    for (double p : r.phi) CHECK(p == 0.0);
    CHECK(r.active_features == 0u);
}

TEST_CASE("more than twelve active features switches to sampling") {
    Rng rng(6);
    Tensor2 bv, bm;
    random_background(rng, 10, 16, bv, bm, 0.0);
    const auto r = shap_values(interaction_model(16, 3), random_sample(rng, 16, 0.0), bv, bm, sampling_config(8, 1));
    CHECK(r.method == ShapMethod::permutation_sampling);
    ShapConfig c;
    c.permutation_pairs = 8;
    const auto auto_mode = shap_values(interaction_model(16, 3), random_sample(rng, 16, 0.0), bv, bm, c);
    CHECK(auto_mode.method == ShapMethod::permutation_sampling);
    CHECK(efficiency_residual(auto_mode) <= 1e-9);
}

TEST_CASE("cohort summary ranks a planted marker first, treats symmetric markers alike, and is seeded") {
    const std::size_t d = 6;
    // Uses marker 0 strongly, markers 1 and 2 symmetrically, ignores the rest.
    const BatchFn fn = [](const Tensor2& v, const Tensor2&) {
        std::vector<double> out(v.rows());
        for (std::size_t i = 0; i < v.rows(); ++i) out[i] = 3.0 * v(i, 0) + v(i, 1) + v(i, 2);
        return out;
    };
    Rng rng(7);
    Tensor2 bv, bm;
    random_background(rng, 40, d, bv, bm, 0.0);
    std::vector<FeatureVector> rows;
    for (int i = 0; i < 200; ++i) rows.push_back(random_sample(rng, d, 0.0));
    const auto samples = Dataset::from_vectors(rows, std::vector<double>(rows.size(), 1.0), std::vector<std::string>(rows.size(), "p"));
    const std::vector<std::string> names{"a", "b", "c", "d", "e", "f"};
    auto cfg = sampling_config(8, 3);
    const auto s = cohort_summary(fn, samples, bv, bm, cfg, names, 3);
    CHECK(s.ranking[0] == 0u);
    for (std::size_t j = 3; j < d; ++j) CHECK(s.mean_abs_phi[j] == 0.0);
    // Symmetric pair: difference well inside the spread of per-sample |phi|.
    double var = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const double diff = std::abs(s.phi[1][k]) - std::abs(s.phi[2][k]);
        var += diff * diff;
    }
    const double se = std::sqrt(var / rows.size() / rows.size());
    CHECK(std::abs(s.mean_abs_phi[1] - s.mean_abs_phi[2]) < 4.0 * se);
    const auto again = cohort_summary(fn, samples, bv, bm, cfg, names, 3);
    CHECK(again.ranking == s.ranking);
    CHECK(again.mean_abs_phi == s.mean_abs_phi);
    CHECK(beeswarm_tsv(s).rfind("rank\tfeature\tsample\tphi\tnormalized_value\tobserved", 0) == 0);
}

TEST_CASE("waterfall needs 24 observed lab markers") {
    const std::size_t labs = 30, d = labs + 2;
    Rng rng(8);
    Tensor2 bv, bm;
    random_background(rng, 8, d, bv, bm, 0.0);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < d; ++j) names.push_back("m" + std::to_string(j));
    auto x = random_sample(rng, d, 0.0);
    for (std::size_t j = 23; j < labs; ++j) x.values[j] = x.mask[j] = 0.0;
    auto cfg = sampling_config(2, 1);
    CHECK_THROWS_AS(waterfall(linear_model(std::vector<double>(d, 1.0)), x, bv, bm, cfg, names, labs), ValidationError);
    x.mask[23] = 1.0;
    x.values[23] = 0.5;
    const auto w = waterfall(linear_model(std::vector<double>(d, 1.0)), x, bv, bm, cfg, names, labs, 9);
    CHECK(w.items.size() == 9u);
    CHECK(w.rest_count == d - 9);
    double total = w.base_value + w.rest_phi;
    for (const auto& it : w.items) total += it.phi;
    CHECK(total == doctest::Approx(w.fx).epsilon(1e-9));
    for (std::size_t k = 1; k < w.items.size(); ++k) CHECK(std::abs(w.items[k - 1].phi) >= std::abs(w.items[k].phi));
    CHECK(to_json(w).contains("items"));
}

TEST_CASE("background selection keeps both classes") {
    Rng rng(9);
    std::vector<FeatureVector> rows;
    std::vector<double> labels;
    for (int i = 0; i < 500; ++i) {
        rows.push_back(random_sample(rng, 3));
        labels.push_back(i < 50 ? 1.0 : 0.0);
    }
    const auto dev = Dataset::from_vectors(rows, labels, std::vector<std::string>(500, "p"));
    const auto idx = select_background(dev, 100, 4);
    CHECK(idx.size() == 100u);
    std::size_t pos = 0;
    for (auto i : idx) pos += labels[i] > 0.5;
    CHECK(pos == 10u);
    CHECK(select_background(dev, 100, 4) == idx);
    CHECK(select_background(dev, 1000, 4).size() == 500u);
}
