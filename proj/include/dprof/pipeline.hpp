#pragma once

#include "dprof/catalog.hpp"
#include "dprof/cohort.hpp"
#include "dprof/likelihood.hpp"
#include "dprof/preprocess.hpp"
#include "dprof/profiler.hpp"

#include <vector>

namespace dprof {

// One split after derived-marker completion and vectorization.
struct PreparedSplit {
    std::vector<EncounterRecord> records;  // completed
    Dataset data;
};

struct PreparedData {
    NormalizationParams normalization;
    PreparedSplit development;
    PreparedSplit validation;
};

// Completes derived markers, fits normalization on the development split and
// vectorizes both splits. Unassigned encounters are ignored.
PreparedData prepare_datasets(const std::vector<LabeledEncounter>& encounters, const MarkerCatalog& catalog,
                              NormalizationOptions options = {});

Dataset vectorize_all(const std::vector<EncounterRecord>& records, const std::vector<double>& labels,
                      const NormalizationParams& params);

// Ensemble mean score per row, with patient ids from the dataset groups.
ScoredCohort score_cohort(const ProfilerEnsemble& ensemble, const Dataset& data);

// Removes each observed entry independently with probability fraction.
Dataset delete_observed(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace dprof
