#pragma once

#include "dprof/catalog.hpp"
#include "dprof/profiler.hpp"
#include "dprof/record.hpp"

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dprof {

struct ScoredEntry {
    std::string patient_id;
    double score = 0.0;
    bool label = false;
};

struct ScoredCohort {
    std::vector<ScoredEntry> entries;

    std::size_t size() const { return entries.size(); }
    std::size_t positives() const;
    // Throws ValidationError for an empty cohort.
    double prevalence() const;
    std::vector<double> scores() const;
    std::vector<int> labels() const;
};

// p / (1 - p); infinite at p = 1.
double odds(double p);
// odds(post_p) / odds(pre_p). Throws ValidationError unless pre_p is in (0, 1).
double likelihood_ratio(double post_p, double pre_p);

struct LrEstimate {
    double lr = 1.0;
    double pre_odds = 0.0;
    double post_odds = 0.0;
    bool corrected = false;  // subgroup was all-positive or all-negative
    bool infinite = false;   // all-positive subgroup without correction
};

// Post-test odds from subgroup counts against pre-test odds from the whole
// cohort. A degenerate subgroup gets 0.5 added to both cells when correction
// is on. Throws ValidationError for an empty subgroup or a cohort without
// both classes.
LrEstimate lr_from_counts(std::size_t sub_pos, std::size_t sub_n, std::size_t pos, std::size_t n,
                          bool correction = true);

struct SimilarCohort {
    ScoredCohort cohort;
    bool expanded = false;
};

// Entries with score inside [ci_low, ci_high]; fewer than min_n expands to the
// min_n nearest by |score - mean|, ties broken by lower score then by
// position in the development cohort.
SimilarCohort similar_cohort(const ScoredCohort& dev, const RiskAssessment& assessment, std::size_t min_n = 50);

// Same selection as similar_cohort, returning only the counts, in
// O(log n + min_n) after construction.
class SimilarCohortIndex {
public:
    explicit SimilarCohortIndex(const ScoredCohort& dev);
    struct Counts {
        std::size_t n = 0;
        std::size_t positives = 0;
        bool expanded = false;
    };
    Counts counts(const RiskAssessment& assessment, std::size_t min_n = 50) const;
    std::size_t size() const { return scores_.size(); }
    std::size_t positives() const { return prefix_pos_.back(); }

private:
    std::vector<double> scores_;            // ascending, ties by original position
    std::vector<std::size_t> prefix_pos_;  // positives among the first k
    // Group boundaries of equal scores.
    std::vector<std::size_t> group_start_;
};

struct LrCurvePoint {
    double threshold = 0.0;
    double lr = 1.0;
    std::size_t n_above = 0;
    std::size_t n_pos_above = 0;
    bool corrected = false;
};

struct LrCurve {
    std::vector<LrCurvePoint> points;
    // Set when a threshold left an empty subgroup; later thresholds are dropped.
    std::optional<double> truncated_at;
};

std::vector<double> default_thresholds(std::size_t n = 101);

// Subgroup at t is every entry with score >= t.
LrCurve lr_curve(const ScoredCohort& cohort, std::span<const double> thresholds, bool correction = true);
std::string lr_curve_csv(const LrCurve& curve);

// Simultaneous band for LR(t) under label permutation: the pointwise
// quantile level is widened until `level` of the permuted curves lie inside
// the band at every threshold.
struct LrNullBand {
    std::vector<double> thresholds;
    std::vector<double> lower;
    std::vector<double> upper;
    double pointwise_level = 0.0;
};
LrNullBand lr_permutation_band(const ScoredCohort& cohort, std::span<const double> thresholds,
                               std::size_t permutations, std::uint64_t seed, double level = 0.95);

struct OorScore {
    double score = 0.0;
    std::size_t out_of_range = 0;
    std::size_t ranged = 0;
    bool no_ranged_markers = false;
};

// Share of measured markers that have a reference range and fall outside it.
OorScore oor_score(const EncounterRecord& record, const MarkerCatalog& catalog);

// Min-max scaling of one marker over the development cohort, log10 first when
// flagged, flipped for low_is_risk markers.
struct SingleMarkerScaler {
    std::string marker;
    bool log_transform = false;
    bool flip = false;
    double lo = 0.0;
    double hi = 1.0;
    double detection_limit = 0.0;

    std::optional<double> score(const EncounterRecord& record) const;
};

// Throws ValidationError when the marker has fewer than two distinct values.
SingleMarkerScaler fit_single_marker(std::span<const EncounterRecord> development, const MarkerCatalog& catalog,
                                     const std::string& marker);

// (age - 40) / (85 - 40), clamped to [0, 1].
double age_score(double age);

struct CancerLrEntry {
    std::string cancer_type;
    RiskAssessment assessment;
    std::size_t similar_n = 0;
    std::size_t similar_positives = 0;
    bool expanded = false;
    double pre_test_probability = 0.0;
    double post_test_probability = 0.0;
    LrEstimate estimate;
};

struct LrReport {
    std::string patient_id;
    std::vector<CancerLrEntry> entries;
};

CancerLrEntry build_lr_entry(const std::string& cancer_type, const ScoredCohort& dev,
                             const RiskAssessment& assessment, std::size_t min_n = 50);
nlohmann::json to_json(const LrReport& report);
std::string render_lr_report(const LrReport& report);

}  // namespace dprof
