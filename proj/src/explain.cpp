#include "dprof/explain.hpp"

#include "dprof/error.hpp"
#include "dprof/rng.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace dprof {

using nlohmann::json;
using nn::Tensor2;

double normalize_lr(double lr, double mean, double scale) {
    return 1.0 / (1.0 + std::exp(-(lr - mean) / scale));
}

NormalizedLrFn::NormalizedLrFn(const ProfilerEnsemble& ensemble, const ScoredCohort& dev, std::size_t min_n, double mean,
                               double scale)
    : ensemble_(&ensemble), index_(dev), min_n_(min_n), mean_(mean), scale_(scale) {
    if (dev.size() == 0) throw ValidationError("normalized LR: empty development cohort");
    const auto pos = dev.positives();
    if (pos == 0 || pos == dev.size()) throw ValidationError("normalized LR: development cohort needs both classes");
}

double NormalizedLrFn::lr(const RiskAssessment& a) const {
    const auto c = index_.counts(a, min_n_);
    return lr_from_counts(c.positives, c.n, index_.positives(), index_.size()).lr;
}

std::vector<double> NormalizedLrFn::operator()(const Tensor2& values, const Tensor2& mask) const {
    const auto preds = predict_batch(*ensemble_, values, mask);
    std::vector<double> out;
    out.reserve(preds.size());
    for (const auto& a : preds) out.push_back(normalize_lr(lr(a), mean_, scale_));
    return out;
}

namespace {

// Evaluates fn over rows produced on demand, in chunks.
class ChunkedEval {
public:
    ChunkedEval(const BatchFn& fn, std::size_t dim, std::size_t chunk) : fn_(fn), dim_(dim), chunk_(std::max<std::size_t>(chunk, 1)) {}

    std::vector<double> run(std::size_t rows, const std::function<void(std::size_t, std::span<double>, std::span<double>)>& fill) const {
        std::vector<double> out;
        out.reserve(rows);
        for (std::size_t start = 0; start < rows; start += chunk_) {
            const std::size_t n = std::min(chunk_, rows - start);
            Tensor2 v(n, dim_), m(n, dim_);
            for (std::size_t r = 0; r < n; ++r) fill(start + r, v.row(r), m.row(r));
            const auto y = fn_(v, m);
            if (y.size() != n) throw std::runtime_error("shap: model returned the wrong number of outputs");
            out.insert(out.end(), y.begin(), y.end());
        }
        return out;
    }

private:
    const BatchFn& fn_;
    std::size_t dim_;
    std::size_t chunk_;
};

}  // namespace

ShapResult shap_values(const BatchFn& fn, const FeatureVector& sample, const Tensor2& bv, const Tensor2& bm,
                       const ShapConfig& config) {
    const std::size_t d = sample.values.size();
    const std::size_t B = bv.rows();
    if (B == 0) throw ValidationError("shap: empty background");
    if (sample.mask.size() != d || bv.cols() != d || !bv.same_shape(bm)) throw ValidationError("shap: dimension mismatch");

    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t b = 0; b < B; ++b) {
            if (bv(b, j) != sample.values[j] || bm(b, j) != sample.mask[j]) {
                active.push_back(j);
                break;
            }
        }
    }
    const std::size_t n = active.size();
    const ChunkedEval eval(fn, d, config.batch_rows);

    ShapResult res;
    res.phi.assign(d, 0.0);
    res.phi_se.assign(d, 0.0);
    res.active_features = n;
    res.seed = config.seed;
    res.fx = fn(Tensor2(1, d, sample.values), Tensor2(1, d, sample.mask)).at(0);
    {
        const Tensor2 bvc = bv, bmc = bm;
        const auto fb = fn(bvc, bmc);
        res.base_value = std::accumulate(fb.begin(), fb.end(), 0.0) / static_cast<double>(B);
    }
    if (n == 0) {
        res.method = ShapMethod::exact_enumeration;
        return res;
    }

    auto hybrid = [&](std::size_t b, std::span<double> v, std::span<double> m) {
        auto sv = bv.row(b);
        auto sm = bm.row(b);
        std::copy(sv.begin(), sv.end(), v.begin());
        std::copy(sm.begin(), sm.end(), m.begin());
    };

    if (n <= config.exact_max_features) {
        res.method = ShapMethod::exact_enumeration;
        const std::size_t coalitions = std::size_t{1} << n;
        res.n_samples = coalitions;
        const auto y = eval.run(coalitions * B, [&](std::size_t r, std::span<double> v, std::span<double> m) {
            const std::size_t S = r / B, b = r % B;
            hybrid(b, v, m);
            for (std::size_t k = 0; k < n; ++k) {
                if (S >> k & 1U) {
                    v[active[k]] = sample.values[active[k]];
                    m[active[k]] = sample.mask[active[k]];
                }
            }
        });
        std::vector<double> value(coalitions, 0.0);
        for (std::size_t S = 0; S < coalitions; ++S) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b) s += y[S * B + b];
            value[S] = s / static_cast<double>(B);
        }
        // weight[k] = k! (n - k - 1)! / n!
        std::vector<double> weight(n);
        for (std::size_t k = 0; k < n; ++k) {
            weight[k] = std::exp(std::lgamma(static_cast<double>(k) + 1) + std::lgamma(static_cast<double>(n - k)) -
                                 std::lgamma(static_cast<double>(n) + 1));
        }
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t bit = std::size_t{1} << k;
            double phi = 0.0;
            for (std::size_t S = 0; S < coalitions; ++S) {
                if (S & bit) continue;
                phi += weight[static_cast<std::size_t>(std::popcount(S))] * (value[S | bit] - value[S]);
            }
            res.phi[active[k]] = phi;
        }
        return res;
    }

    res.method = ShapMethod::permutation_sampling;
    const std::size_t pairs = std::max<std::size_t>(config.permutation_pairs, 2);
    res.n_samples = 2 * pairs;
    res.ci_multiplier = boost::math::quantile(boost::math::students_t(static_cast<double>(pairs - 1)), 0.995);
    Rng rng(config.seed);
    std::vector<std::vector<double>> pair_est(pairs, std::vector<double>(n, 0.0));
    std::vector<std::size_t> perm(n);
    for (std::size_t p = 0; p < pairs; ++p) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(perm));
        for (int dir = 0; dir < 2; ++dir) {
            if (dir == 1) std::reverse(perm.begin(), perm.end());
            // Row (b, k): background b with the first k features of perm set to the sample.
            const auto y = eval.run((n + 1) * B, [&](std::size_t r, std::span<double> v, std::span<double> m) {
                const std::size_t b = r / (n + 1), k = r % (n + 1);
                hybrid(b, v, m);
                for (std::size_t t = 0; t < k; ++t) {
                    const std::size_t j = active[perm[t]];
                    v[j] = sample.values[j];
                    m[j] = sample.mask[j];
                }
            });
            for (std::size_t b = 0; b < B; ++b) {
                const double* row = y.data() + b * (n + 1);
                for (std::size_t t = 0; t < n; ++t) pair_est[p][perm[t]] += (row[t + 1] - row[t]) / (2.0 * static_cast<double>(B));
            }
        }
    }
    for (std::size_t k = 0; k < n; ++k) {
        double mean = 0.0;
        for (std::size_t p = 0; p < pairs; ++p) mean += pair_est[p][k];
        mean /= static_cast<double>(pairs);
        double ss = 0.0;
        for (std::size_t p = 0; p < pairs; ++p) ss += (pair_est[p][k] - mean) * (pair_est[p][k] - mean);
        res.phi[active[k]] = mean;
        res.phi_se[active[k]] = std::sqrt(ss / static_cast<double>(pairs - 1) / static_cast<double>(pairs));
    }
    return res;
}

std::vector<std::size_t> select_background(const Dataset& dev, std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < dev.size(); ++i) {
        const bool p = !dev.labels.empty() && dev.labels[i] > 0.5;
        (p ? pos : neg).push_back(i);
    }
    if (dev.size() <= n) {
        std::vector<std::size_t> all(dev.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(pos));
    rng.shuffle(std::span<std::size_t>(neg));
    auto n_pos = static_cast<std::size_t>(std::lround(static_cast<double>(n) * static_cast<double>(pos.size()) /
                                                      static_cast<double>(dev.size())));
    if (!pos.empty() && n_pos == 0 && n >= 2) n_pos = 1;
    n_pos = std::min(n_pos, pos.size());
    const std::size_t n_neg = std::min(n - n_pos, neg.size());
    std::vector<std::size_t> out(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_pos));
    out.insert(out.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg));
    std::sort(out.begin(), out.end());
    return out;
}

CohortShapSummary cohort_summary(const BatchFn& fn, const Dataset& samples, const Tensor2& bv, const Tensor2& bm,
                                 const ShapConfig& config, const std::vector<std::string>& features, std::size_t top_k,
                                 std::size_t min_samples) {
    if (samples.size() < std::max<std::size_t>(min_samples, 1)) {
        throw ValidationError("shap summary: " + std::to_string(samples.size()) + " samples, need at least " +
                              std::to_string(std::max<std::size_t>(min_samples, 1)));
    }
    const std::size_t d = samples.dim();
    if (features.size() != d) throw ValidationError("shap summary: feature names do not match dimension");
    CohortShapSummary s;
    s.features = features;
    s.top_k = std::min(top_k, d);
    s.phi.assign(d, {});
    s.value.assign(d, {});
    s.observed.assign(d, {});
    s.mean_abs_phi.assign(d, 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        FeatureVector fv;
        auto v = samples.values.row(i);
        auto m = samples.mask.row(i);
        fv.values.assign(v.begin(), v.end());
        fv.mask.assign(m.begin(), m.end());
        ShapConfig c = config;
        c.seed = derive_seed(config.seed, i);
        const auto r = shap_values(fn, fv, bv, bm, c);
        for (std::size_t j = 0; j < d; ++j) {
            s.phi[j].push_back(r.phi[j]);
            s.value[j].push_back(fv.values[j]);
            s.observed[j].push_back(fv.mask[j]);
            s.mean_abs_phi[j] += std::abs(r.phi[j]);
        }
    }
    for (auto& x : s.mean_abs_phi) x /= static_cast<double>(samples.size());
    s.ranking.resize(d);
    std::iota(s.ranking.begin(), s.ranking.end(), std::size_t{0});
    std::stable_sort(s.ranking.begin(), s.ranking.end(),
                     [&](std::size_t a, std::size_t b) { return s.mean_abs_phi[a] > s.mean_abs_phi[b]; });
    return s;
}

Waterfall waterfall(const BatchFn& fn, const FeatureVector& sample, const Tensor2& bv, const Tensor2& bm,
                    const ShapConfig& config, const std::vector<std::string>& features, std::size_t lab_count,
                    std::size_t top, std::size_t min_observed) {
    const std::size_t d = sample.values.size();
    if (features.size() != d || lab_count > d) throw ValidationError("waterfall: feature names do not match dimension");
    std::size_t observed = 0;
    for (std::size_t j = 0; j < lab_count; ++j) observed += sample.mask[j] != 0.0 ? 1 : 0;
    if (observed < min_observed) {
        throw ValidationError("waterfall: sample has " + std::to_string(observed) + " observed laboratory markers, need " +
                              std::to_string(min_observed));
    }
    Waterfall w;
    w.shap = shap_values(fn, sample, bv, bm, config);
    w.base_value = w.shap.base_value;
    w.fx = w.shap.fx;
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(w.shap.phi[a]) > std::abs(w.shap.phi[b]); });
    for (std::size_t k = 0; k < d; ++k) {
        const std::size_t j = order[k];
        if (k < top) {
            w.items.push_back({features[j], w.shap.phi[j], sample.values[j], sample.mask[j] != 0.0});
        } else {
            w.rest_phi += w.shap.phi[j];
            ++w.rest_count;
        }
    }
    return w;
}

json to_json(const ShapResult& r) {
    return json{{"phi", r.phi},
                {"phi_se", r.phi_se},
                {"base_value", r.base_value},
                {"fx", r.fx},
                {"method", r.method == ShapMethod::exact_enumeration ? "exact_enumeration" : "permutation_sampling"},
                {"n_samples", r.n_samples},
                {"active_features", r.active_features},
                {"seed", r.seed}};
}

json to_json(const CohortShapSummary& s) {
    json ranking = json::array();
    for (std::size_t k = 0; k < s.ranking.size(); ++k) {
        const std::size_t j = s.ranking[k];
        ranking.push_back({{"feature", s.features[j]}, {"mean_abs_phi", s.mean_abs_phi[j]}, {"top", k < s.top_k}});
    }
    return json{{"top_k", s.top_k}, {"n_samples", s.phi.empty() ? 0 : s.phi[0].size()}, {"ranking", ranking}};
}

json to_json(const Waterfall& w) {
    json items = json::array();
    for (const auto& it : w.items) {
        items.push_back({{"feature", it.feature}, {"phi", it.phi}, {"normalized_value", it.value}, {"observed", it.observed}});
    }
    return json{{"base_value", w.base_value},
                {"fx", w.fx},
                {"items", items},
                {"rest_phi", w.rest_phi},
                {"rest_count", w.rest_count},
                {"shap", to_json(w.shap)}};
}

std::string beeswarm_tsv(const CohortShapSummary& s) {
    std::ostringstream out;
    out << "rank\tfeature\tsample\tphi\tnormalized_value\tobserved\n";
    char buf[96];
    for (std::size_t k = 0; k < s.top_k && k < s.ranking.size(); ++k) {
        const std::size_t j = s.ranking[k];
        for (std::size_t i = 0; i < s.phi[j].size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.10g\t%.10g\t%d", s.phi[j][i], s.value[j][i], s.observed[j][i] != 0.0 ? 1 : 0);
            out << k + 1 << '\t' << s.features[j] << '\t' << i << '\t' << buf << '\n';
        }
    }
    return out.str();
}

std::string waterfall_tsv(const Waterfall& w) {
    std::ostringstream out;
    char buf[128];
    out << "step\tfeature\tphi\tnormalized_value\tobserved\trunning_total\n";
    double running = w.base_value;
    std::snprintf(buf, sizeof buf, "%.10g", running);
    out << "0\tE[f(x)]\t\t\t\t" << buf << '\n';
    std::size_t step = 1;
    // Smallest contributions first so the largest bars sit next to f(x).
    std::vector<WaterfallItem> items(w.items.rbegin(), w.items.rend());
    if (w.rest_count > 0) {
        running += w.rest_phi;
        std::snprintf(buf, sizeof buf, "%.10g\t\t\t%.10g", w.rest_phi, running);
        out << step++ << '\t' << w.rest_count << " other features\t" << buf << '\n';
    }
    for (const auto& it : items) {
        running += it.phi;
        std::snprintf(buf, sizeof buf, "%.10g\t%.10g\t%d\t%.10g", it.phi, it.value, it.observed ? 1 : 0, running);
        out << step++ << '\t' << it.feature << '\t' << buf << '\n';
    }
    std::snprintf(buf, sizeof buf, "%.10g", w.fx);
    out << step << "\tf(x)\t\t\t\t" << buf << '\n';
    return out.str();
}

}  // namespace dprof
