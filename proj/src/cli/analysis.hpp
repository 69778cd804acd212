#pragma once

#include "context.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dprof::cli {

// Validation split scored by the trained ensemble.
struct ScoredRun {
    PreparedData prep;
    ProfilerEnsemble ensemble;
    std::vector<RiskAssessment> predictions;
    ScoredCohort validation;  // ensemble mean per row
};

ScoredRun score_validation(StageRun& run);

struct Baseline {
    std::string name;
    ScoredCohort cohort;
};

// Largest standardized class-mean shifts in the catalog.
std::vector<std::string> default_baseline_markers(const MarkerCatalog& catalog, CancerType type, std::size_t n);
// Out-of-range share, age and single-marker scores on the validation split;
// single-marker cohorts keep only rows where the marker was measured.
std::vector<Baseline> compute_baselines(const ScoredRun& s, const MarkerCatalog& catalog, const RunConfig& config);
std::string baselines_lr_csv(const std::vector<Baseline>& baselines, std::span<const double> thresholds);

// Per-member LR curves and their spread; NaN where a curve is truncated.
struct MemberRibbon {
    std::vector<double> thresholds;
    std::vector<double> ensemble;
    std::vector<std::vector<double>> members;
    std::vector<double> mean, std, min, max;
    std::vector<std::size_t> defined;
};

MemberRibbon member_ribbon(const ScoredRun& s, std::span<const double> thresholds);
std::string member_ribbon_csv(const MemberRibbon& r);
std::optional<LrCurvePoint> lr_at(const LrCurve& curve, double threshold);

}  // namespace dprof::cli
