#include "dprof/pipeline.hpp"

#include "dprof/error.hpp"
#include "dprof/rng.hpp"

namespace dprof {

Dataset vectorize_all(const std::vector<EncounterRecord>& records, const std::vector<double>& labels,
                      const NormalizationParams& params) {
    std::vector<FeatureVector> rows;
    std::vector<std::string> groups;
    rows.reserve(records.size());
    for (const auto& r : records) {
        rows.push_back(vectorize(r, params));
        groups.push_back(r.patient_id);
    }
    return Dataset::from_vectors(rows, labels, std::move(groups));
}

PreparedData prepare_datasets(const std::vector<LabeledEncounter>& encounters, const MarkerCatalog& catalog,
                              NormalizationOptions options) {
    const auto rules = DerivedRules::for_catalog(catalog);
    PreparedData out;
    std::vector<double> dev_labels, val_labels;
    for (const auto& e : encounters) {
        if (e.split == Split::unassigned) continue;
        auto rec = complete_derived(e.record, rules);
        if (e.split == Split::development) {
            out.development.records.push_back(std::move(rec));
            dev_labels.push_back(e.label ? 1.0 : 0.0);
        } else {
            out.validation.records.push_back(std::move(rec));
            val_labels.push_back(e.label ? 1.0 : 0.0);
        }
    }
    if (out.development.records.empty()) throw ValidationError("prepare: development split is empty");
    out.normalization = fit_normalization(out.development.records, catalog, options);
    out.development.data = vectorize_all(out.development.records, dev_labels, out.normalization);
    out.validation.data = vectorize_all(out.validation.records, val_labels, out.normalization);
    return out;
}

ScoredCohort score_cohort(const ProfilerEnsemble& ensemble, const Dataset& data) {
    ScoredCohort c;
    if (data.size() == 0) return c;
    const auto preds = predict_batch(ensemble, data.values, data.mask);
    c.entries.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        c.entries.push_back({data.groups.empty() ? std::to_string(i) : data.groups[i], preds[i].mean,
                             !data.labels.empty() && data.labels[i] > 0.5});
    }
    return c;
}

Dataset delete_observed(const Dataset& data, double fraction, std::uint64_t seed) {
    Dataset out = data;
    Rng rng(seed);
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t j = 0; j < out.dim(); ++j) {
            if (out.mask(i, j) != 0.0 && rng.bernoulli(fraction)) {
                out.mask(i, j) = 0.0;
                out.values(i, j) = 0.0;
            }
        }
    }
    return out;
}

}  // namespace dprof
