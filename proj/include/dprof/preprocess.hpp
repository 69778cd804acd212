#pragma once

#include "dprof/catalog.hpp"
#include "dprof/record.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dprof {

// Marker ids involved in derived-marker completion.
struct DerivedRules {
    std::string bun = "bun";
    std::string creatinine = "creatinine";
    std::string ratio = "bun_creatinine_ratio";
    std::string wbc = "wbc";
    // (absolute count, percentage of WBC) pairs.
    std::vector<std::pair<std::string, std::string>> differentials{
        {"lymphocytes", "lymphocytes_pct"},
        {"basophils", "basophils_pct"},
        {"eosinophils", "eosinophils_pct"},
        {"neutrophils", "neutrophils_pct"},
        {"monocytes", "monocytes_pct"}};

    // Rules restricted to markers the catalog defines.
    static DerivedRules for_catalog(const MarkerCatalog& catalog);
    bool has_ratio() const { return !ratio.empty(); }
};

// Fills absent derived markers from reported ones; never overwrites a
// reported value. Zero creatinine or WBC leaves the derived value absent.
EncounterRecord complete_derived(EncounterRecord record, const DerivedRules& rules);

// Linear interpolation between closest ranks: position (n - 1) * q.
double percentile(std::span<const double> sorted, double q);

struct NormalizationEntry {
    std::string id;
    double median = 0.0;
    double iqd = 1.0;
    bool log_transform = false;
    // Non-positive values of log-scaled markers are clamped to this first.
    double detection_limit = 0.0;

    bool operator==(const NormalizationEntry&) const = default;
};

struct NormalizationParams {
    static constexpr int kVersion = 1;
    // Lab markers in catalog order, then "age" and "sex".
    std::vector<NormalizationEntry> features;
    std::string fitted_on = "development";
    bool scale_demographics = true;

    std::size_t dim() const { return features.size(); }
    std::size_t lab_count() const { return features.size() - 2; }
    std::vector<std::string> feature_order() const;
    std::size_t index_of(std::string_view id) const;

    bool operator==(const NormalizationParams&) const = default;
};

struct NormalizationOptions {
    bool scale_demographics = true;
};

// Median/IQD per feature over the observed development values, after log10
// for flagged markers. Throws NumericError naming a marker with zero IQD.
NormalizationParams fit_normalization(std::span<const EncounterRecord> development,
                                      const MarkerCatalog& catalog,
                                      NormalizationOptions options = {});

// mask[i] == 0 implies values[i] == 0.
struct FeatureVector {
    std::vector<double> values;
    std::vector<double> mask;

    std::size_t observed() const;
    bool operator==(const FeatureVector&) const = default;
};

FeatureVector vectorize(const EncounterRecord& record, const NormalizationParams& params);

nlohmann::json to_json(const NormalizationParams& params);
NormalizationParams normalization_from_json(const nlohmann::json& j);

}  // namespace dprof
