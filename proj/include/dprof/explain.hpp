#pragma once

#include "dprof/likelihood.hpp"
#include "dprof/nn/tensor.hpp"
#include "dprof/preprocess.hpp"
#include "dprof/profiler.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dprof {

// 1 / (1 + exp(-(lr - mean) / scale))
double normalize_lr(double lr, double mean = 5.0, double scale = 0.5);

// Model function over a batch of (values, mask) rows.
using BatchFn = std::function<std::vector<double>(const nn::Tensor2& values, const nn::Tensor2& mask)>;

// Feature vector -> ensemble risk -> similar-cohort LR -> logistic.
class NormalizedLrFn {
public:
    NormalizedLrFn(const ProfilerEnsemble& ensemble, const ScoredCohort& dev, std::size_t min_n = 50,
                   double mean = 5.0, double scale = 0.5);
    std::vector<double> operator()(const nn::Tensor2& values, const nn::Tensor2& mask) const;
    double lr(const RiskAssessment& assessment) const;

private:
    const ProfilerEnsemble* ensemble_;
    SimilarCohortIndex index_;
    std::size_t min_n_;
    double mean_;
    double scale_;
};

enum class ShapMethod { exact_enumeration, permutation_sampling };

struct ShapConfig {
    std::size_t exact_max_features = 12;
    std::size_t permutation_pairs = 32;  // each pair is a permutation and its reverse
    std::uint64_t seed = 1;
    std::size_t batch_rows = 8192;
};

struct ShapResult {
    std::vector<double> phi;
    std::vector<double> phi_se;  // Monte-Carlo standard error; zero in exact mode
    double base_value = 0.0;
    double fx = 0.0;
    ShapMethod method = ShapMethod::exact_enumeration;
    std::size_t n_samples = 0;  // permutations evaluated (coalitions in exact mode)
    std::size_t active_features = 0;
    std::uint64_t seed = 0;
    double ci_multiplier = 0.0;  // two-sided 99% Student-t quantile over permutation pairs

    // 99% half-width.
    double ci99(std::size_t i) const { return ci_multiplier * phi_se[i]; }
};

// Interventional Shapley values: a feature outside the coalition takes both
// value and mask bit from a background row, and the value of a coalition is
// the mean over the background. Features equal to the sample in every
// background row are inactive and get zero.
ShapResult shap_values(const BatchFn& fn, const FeatureVector& sample, const nn::Tensor2& background_values,
                       const nn::Tensor2& background_mask, const ShapConfig& config);

// Label-stratified draw of up to n rows.
std::vector<std::size_t> select_background(const Dataset& dev, std::size_t n, std::uint64_t seed);

struct CohortShapSummary {
    std::vector<std::string> features;
    // [feature][sample]
    std::vector<std::vector<double>> phi;
    std::vector<std::vector<double>> value;
    std::vector<std::vector<double>> observed;
    std::vector<double> mean_abs_phi;
    std::vector<std::size_t> ranking;  // features by mean |phi|, descending
    std::size_t top_k = 15;
};

// Per-sample seeds derive from (config.seed, sample index).
CohortShapSummary cohort_summary(const BatchFn& fn, const Dataset& samples, const nn::Tensor2& background_values,
                                 const nn::Tensor2& background_mask, const ShapConfig& config,
                                 const std::vector<std::string>& features, std::size_t top_k = 15,
                                 std::size_t min_samples = 1);

struct WaterfallItem {
    std::string feature;
    double phi = 0.0;
    double value = 0.0;  // normalized value
    bool observed = false;
};

struct Waterfall {
    double base_value = 0.0;
    double fx = 0.0;
    std::vector<WaterfallItem> items;  // by |phi|, descending
    double rest_phi = 0.0;
    std::size_t rest_count = 0;
    ShapResult shap;
};

// Refuses (ValidationError) samples with fewer than min_observed observed lab
// markers, the first lab_count features.
Waterfall waterfall(const BatchFn& fn, const FeatureVector& sample, const nn::Tensor2& background_values,
                    const nn::Tensor2& background_mask, const ShapConfig& config,
                    const std::vector<std::string>& features, std::size_t lab_count, std::size_t top = 9,
                    std::size_t min_observed = 24);

nlohmann::json to_json(const ShapResult& r);
nlohmann::json to_json(const CohortShapSummary& s);
nlohmann::json to_json(const Waterfall& w);
// feature, sample, phi, value, observed
std::string beeswarm_tsv(const CohortShapSummary& s);
std::string waterfall_tsv(const Waterfall& w);

}  // namespace dprof
