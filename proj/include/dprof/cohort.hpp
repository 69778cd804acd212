#pragma once

#include "dprof/catalog.hpp"
#include "dprof/codes.hpp"
#include "dprof/preprocess.hpp"
#include "dprof/record.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dprof {

struct CohortSpec {
    CancerType cancer_type = CancerType::colorectal;
    std::vector<std::string> screening_codes;
    std::vector<std::string> encounter_codes;
    std::vector<std::string> diagnostic_codes;
    std::vector<std::string> diagnosis_icd_prefixes;
    // Codes that count as confirmation when dated after the first diagnosis:
    // the diagnosis prefixes, diagnostic procedures and therapy codes.
    std::vector<std::string> confirmation_codes;
    bool confirmation_required = true;
    int min_markers = 18;
    double age_low = 40.0;
    double age_high = 89.0;
    int lookback_days = 365;
    int infection_window_days = 30;
    std::vector<std::string> infection_codes;
    // Count markers after derived-marker completion for the min_markers filter.
    bool count_derived_markers = true;

    static CohortSpec defaults(CancerType type);
    void validate() const;
};

enum class Split { unassigned, development, validation };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct LabeledEncounter {
    EncounterRecord record;
    bool label = false;
    CancerType cancer_type = CancerType::colorectal;
    Split split = Split::unassigned;
    std::optional<Date> diagnosis_date;
    bool split_fallback = false;  // assigned through the pooled small-strata group
    bool enrichment = false;      // added outside the screening population
};

// All encounters and the merged, date-sorted claim history of one patient.
struct Patient {
    std::string id;
    std::vector<EncounterRecord> encounters;  // sorted by date
    std::vector<ClaimCode> codes;             // sorted by date
};

std::vector<Patient> group_by_patient(const std::vector<EncounterRecord>& records);

// ICD-10 entries match by prefix (dots ignored); CPT entries match exactly.
bool code_matches(const ClaimCode& code, const std::vector<std::string>& list);

enum class SelectionReason { none, screening, diagnostic_fallback };
SelectionReason screening_reason(const Patient& patient, const CohortSpec& spec);

std::set<std::string> select_screening_population(const std::vector<Patient>& patients,
                                                  const CohortSpec& spec);

struct LabelInfo {
    bool label = false;
    std::optional<Date> diagnosis_date;
    bool has_diagnosis_code = false;  // true also for unconfirmed diagnoses
    bool any_malignancy = false;      // any C00-C97 code on record
};

LabelInfo assign_label(const Patient& patient, const CohortSpec& spec);

// Individual encounter predicates used by filter_encounters.
bool in_label_window(const EncounterRecord& e, const Patient& p, const LabelInfo& info,
                     const CohortSpec& spec);
bool age_in_range(const EncounterRecord& e, const CohortSpec& spec);
bool no_prior_cancer(const EncounterRecord& e, const Patient& p);
std::size_t marker_count(const EncounterRecord& e, const CohortSpec& spec,
                         const DerivedRules& rules);

std::vector<LabeledEncounter> filter_encounters(const Patient& patient, const LabelInfo& info,
                                                const CohortSpec& spec, const DerivedRules& rules);

// Patient code histories keyed by patient id.
using CodeHistory = std::map<std::string, std::vector<ClaimCode>>;
CodeHistory code_history(const std::vector<Patient>& patients);

std::vector<LabeledEncounter> exclude_acute_infection(std::vector<LabeledEncounter> encounters,
                                                      const CodeHistory& history,
                                                      const std::vector<std::string>& codes,
                                                      int window_days = 30);

struct SplitParams {
    int ratio_development = 2;
    int ratio_validation = 1;
    int age_bin_width_years = 5;
    std::uint64_t seed = 1;
};

struct StratumSummary {
    std::string key;
    std::size_t patients = 0;
    std::size_t development = 0;
    std::size_t validation = 0;
    bool fallback = false;
};

// Patient-level split stratified by (age bin, sex, label). Encounters that
// already carry a split are left untouched.
std::vector<LabeledEncounter> split_dev_val(std::vector<LabeledEncounter> encounters,
                                            const SplitParams& params,
                                            std::vector<StratumSummary>* summary = nullptr);

// Appends qualifying cancer-free controls (split unassigned) and confirmed
// cases outside the screening population (development split only).
std::vector<LabeledEncounter> enrich_controls(std::vector<LabeledEncounter> encounters,
                                              const std::vector<Patient>& extra,
                                              const CohortSpec& spec, const DerivedRules& rules);

struct ConsortStage {
    std::string stage;
    std::size_t positive_patients = 0;
    std::size_t negative_patients = 0;
    std::size_t positive_encounters = 0;
    std::size_t negative_encounters = 0;
};

ConsortStage tally(std::string stage, const std::vector<LabeledEncounter>& encounters);
std::string consort_to_tsv(const std::vector<ConsortStage>& stages);

struct CohortResult {
    std::vector<LabeledEncounter> encounters;
    std::vector<ConsortStage> consort;
    std::vector<StratumSummary> strata;
};

CohortResult run_cohort_pipeline(const std::vector<EncounterRecord>& records,
                                 const CohortSpec& spec, const SplitParams& split,
                                 const DerivedRules& rules);

nlohmann::json to_json(const LabeledEncounter& e);
LabeledEncounter labeled_from_json(const nlohmann::json& j);
std::string labeled_to_jsonl(const std::vector<LabeledEncounter>& encounters);
std::vector<LabeledEncounter> load_labeled(const std::filesystem::path& path);

}  // namespace dprof
