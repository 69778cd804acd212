#pragma once

#include "dprof/catalog.hpp"
#include "dprof/date.hpp"
#include "dprof/record.hpp"
#include "dprof/rng.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dprof {

// A pre-diagnosis condition planted at class-specific prevalences.
struct ComorbidityPlant {
    std::string icd10;
    std::map<std::string, double> prevalence;  // cohort class -> probability
};

struct SynthConfig {
    std::map<std::string, std::size_t> n_per_class;  // patients per cohort class
    double missing_cmp = 0.1;                        // per-value absence within CMP
    double missing_cbc = 0.1;                        // per-value absence within CBC
    double panel_dropout = 0.05;                     // P(one whole panel absent)
    int min_encounters = 1;
    int max_encounters = 4;

    // Claim-code injection for cancer classes: route probabilities.
    double diagnostic_only_fraction = 0.15;  // diagnostic procedure instead of screening
    double unscreened_fraction = 0.0;        // no screening/diagnostic procedure at all
    double unconfirmed_fraction = 0.0;       // no post-diagnosis confirmation code
    double control_screening_prob = 0.6;     // per cancer type, for no_cancer patients
    double chronic_disease_fraction = 0.15;  // controls with CKD / chronic liver disease
    double infection_rate = 0.02;            // per-encounter acute infection code

    // Leakage mode for robustness tests only: extra missingness for cancer classes.
    bool class_dependent_missingness = false;
    double leakage_extra_missing = 0.2;

    std::vector<ComorbidityPlant> comorbidities = default_comorbidities();
    std::uint64_t seed = 1;

    static std::vector<ComorbidityPlant> default_comorbidities();
    // Throws ValidationError naming the offending field.
    void validate() const;
};

nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j);

// Per-class sampling model for one marker in native units.
struct MarginalModel {
    enum class Family { normal, truncated_normal, lognormal };
    Family family = Family::normal;
    double mu = 0.0;     // location (natural-log space for lognormal)
    double sigma = 1.0;  // scale

    // Maps a standard-normal latent draw to a marker value.
    double transform(double z) const;
    // Population mean and standard deviation implied by the model.
    double mean() const;
    double sd() const;
};

// Moment-matched model: lognormal for log-scaled markers, zero-truncated
// normal otherwise (lognormal when the truncated family cannot reach the
// requested coefficient of variation).
MarginalModel fit_marginal(double mean, double sd, bool log_transform);

// Adds screening/diagnostic procedure, diagnosis and confirmation codes to a
// record. no_cancer records receive screening codes only, probabilistically.
EncounterRecord inject_claim_codes(EncounterRecord record, CohortClass cls, Date diagnosis_date,
                                   const SynthConfig& config, Rng& rng);

std::vector<EncounterRecord> synthesize_cohort(const MarkerCatalog& catalog,
                                               const SynthConfig& config);

}  // namespace dprof
