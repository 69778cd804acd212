#include "dprof/cohort.hpp"

#include "dprof/error.hpp"
#include "dprof/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace dprof {

using nlohmann::json;

CohortSpec CohortSpec::defaults(CancerType type) {
    const auto& t = codes::table_for(type);
    CohortSpec s;
    s.cancer_type = type;
    s.screening_codes = t.screening_procedures;
    s.encounter_codes = t.screening_encounters;
    s.diagnostic_codes = t.diagnostic_procedures;
    s.diagnosis_icd_prefixes = t.diagnosis_icd_prefixes;
    s.confirmation_codes = t.diagnosis_icd_prefixes;
    for (const auto& c : t.diagnostic_procedures) s.confirmation_codes.push_back(c);
    for (const auto& c : codes::therapy_cpt()) s.confirmation_codes.push_back(c);
    for (const auto& c : codes::therapy_icd()) s.confirmation_codes.push_back(c);
    s.infection_codes = codes::default_infection_codes();
    return s;
}

void CohortSpec::validate() const {
    if (min_markers < 1) throw ValidationError("cohort spec: min_markers must be >= 1");
    if (!(age_low < age_high)) throw ValidationError("cohort spec: age_range low must be < high");
    if (lookback_days < 1) throw ValidationError("cohort spec: lookback_days must be >= 1");
    if (infection_window_days < 0) throw ValidationError("cohort spec: infection_window_days must be >= 0");
    if (diagnosis_icd_prefixes.empty()) throw ValidationError("cohort spec: no diagnosis ICD-10 prefixes");
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::unassigned: return "unassigned";
        case Split::development: return "development";
        case Split::validation: return "validation";
    }
    return "?";
}

Split split_from_string(std::string_view s) {
    if (s == "unassigned") return Split::unassigned;
    if (s == "development") return Split::development;
    if (s == "validation") return Split::validation;
    throw ParseError("unknown split '" + std::string(s) + "'");
}

std::vector<Patient> group_by_patient(const std::vector<EncounterRecord>& records) {
    std::map<std::string, Patient> by_id;
    for (const auto& r : records) {
        auto& p = by_id[r.patient_id];
        p.id = r.patient_id;
        p.encounters.push_back(r);
        for (const auto& c : r.codes) p.codes.push_back(c);
    }
    std::vector<Patient> out;
    out.reserve(by_id.size());
    for (auto& [id, p] : by_id) {
        std::stable_sort(p.encounters.begin(), p.encounters.end(),
                         [](const auto& a, const auto& b) { return a.date < b.date; });
        std::stable_sort(p.codes.begin(), p.codes.end(),
                         [](const auto& a, const auto& b) { return a.date < b.date; });
        out.push_back(std::move(p));
    }
    return out;
}

bool code_matches(const ClaimCode& code, const std::vector<std::string>& list) {
    for (const auto& entry : list) {
        if (code.system == CodeSystem::ICD10 ? icd_has_prefix(code.code, entry)
                                             : code.code == entry) {
            return true;
        }
    }
    return false;
}

SelectionReason screening_reason(const Patient& patient, const CohortSpec& spec) {
    bool diagnostic = false;
    for (const auto& c : patient.codes) {
        if (code_matches(c, spec.screening_codes) || code_matches(c, spec.encounter_codes)) {
            return SelectionReason::screening;
        }
        diagnostic = diagnostic || code_matches(c, spec.diagnostic_codes);
    }
    return diagnostic ? SelectionReason::diagnostic_fallback : SelectionReason::none;
}

std::set<std::string> select_screening_population(const std::vector<Patient>& patients,
                                                  const CohortSpec& spec) {
    std::set<std::string> out;
    for (const auto& p : patients)
        if (screening_reason(p, spec) != SelectionReason::none) out.insert(p.id);
    return out;
}

namespace {

bool is_diagnosis(const ClaimCode& c, const CohortSpec& spec) {
    if (c.system != CodeSystem::ICD10) return false;
    for (const auto& prefix : spec.diagnosis_icd_prefixes)
        if (icd_has_prefix(c.code, prefix)) return true;
    return false;
}

}  // namespace

LabelInfo assign_label(const Patient& patient, const CohortSpec& spec) {
    LabelInfo info;
    for (const auto& c : patient.codes) {
        if (c.system == CodeSystem::ICD10 && codes::is_malignant_icd(c.code)) info.any_malignancy = true;
    }
    std::optional<Date> first;
    for (const auto& c : patient.codes) {
        if (is_diagnosis(c, spec) && (!first || c.date < *first)) first = c.date;
    }
    if (!first) return info;
    info.has_diagnosis_code = true;
    bool confirmed = !spec.confirmation_required;
    for (const auto& c : patient.codes) {
        if (c.date > *first && code_matches(c, spec.confirmation_codes)) confirmed = true;
    }
    if (confirmed) {
        info.label = true;
        info.diagnosis_date = first;
    }
    return info;
}

bool in_label_window(const EncounterRecord& e, const Patient& p, const LabelInfo& info,
                     const CohortSpec& spec) {
    if (info.label) {
        const Date dx = *info.diagnosis_date;
        return e.date > dx - spec.lookback_days && e.date <= dx;
    }
    // Negatives need follow-up: a later encounter on record.
    return std::any_of(p.encounters.begin(), p.encounters.end(),
                       [&](const auto& other) { return other.date > e.date; });
}

bool age_in_range(const EncounterRecord& e, const CohortSpec& spec) {
    return e.age_years >= spec.age_low && e.age_years <= spec.age_high;
}

bool no_prior_cancer(const EncounterRecord& e, const Patient& p) {
    for (const auto& c : p.codes) {
        if (c.date >= e.date) break;
        if (c.system == CodeSystem::ICD10 && codes::is_malignant_icd(c.code)) return false;
    }
    return true;
}

std::size_t marker_count(const EncounterRecord& e, const CohortSpec& spec,
                         const DerivedRules& rules) {
    if (!spec.count_derived_markers) return e.measurements.size();
    return complete_derived(e, rules).measurements.size();
}

namespace {

// Negatives must be free of any malignancy; positives must be confirmed.
bool eligible(const LabelInfo& info) { return info.label || !info.any_malignancy; }

LabeledEncounter make_labeled(const EncounterRecord& e, const LabelInfo& info,
                              const CohortSpec& spec) {
    LabeledEncounter le;
    le.record = e;
    le.label = info.label;
    le.cancer_type = spec.cancer_type;
    le.diagnosis_date = info.diagnosis_date;
    return le;
}

}  // namespace

std::vector<LabeledEncounter> filter_encounters(const Patient& patient, const LabelInfo& info,
                                                const CohortSpec& spec, const DerivedRules& rules) {
    std::vector<LabeledEncounter> out;
    if (!eligible(info)) return out;
    for (const auto& e : patient.encounters) {
        if (!in_label_window(e, patient, info, spec)) continue;
        if (!age_in_range(e, spec)) continue;
        if (!no_prior_cancer(e, patient)) continue;
        if (marker_count(e, spec, rules) < static_cast<std::size_t>(spec.min_markers)) continue;
        out.push_back(make_labeled(e, info, spec));
    }
    return out;
}

CodeHistory code_history(const std::vector<Patient>& patients) {
    CodeHistory h;
    for (const auto& p : patients) h[p.id] = p.codes;
    return h;
}

std::vector<LabeledEncounter> exclude_acute_infection(std::vector<LabeledEncounter> encounters,
                                                      const CodeHistory& history,
                                                      const std::vector<std::string>& codes,
                                                      int window_days) {
    std::erase_if(encounters, [&](const LabeledEncounter& e) {
        auto it = history.find(e.record.patient_id);
        const auto& list = it == history.end() ? e.record.codes : it->second;
        for (const auto& c : list) {
            if (c.system != CodeSystem::ICD10) continue;
            if (std::labs(c.date - e.record.date) > window_days) continue;
            for (const auto& prefix : codes)
                if (icd_has_prefix(c.code, prefix)) return true;
        }
        return false;
    });
    return encounters;
}

std::vector<LabeledEncounter> split_dev_val(std::vector<LabeledEncounter> encounters,
                                            const SplitParams& params,
                                            std::vector<StratumSummary>* summary) {
    if (params.ratio_development <= 0 || params.ratio_validation <= 0) {
        throw ValidationError("split: ratio components must be positive");
    }
    if (params.age_bin_width_years <= 0) throw ValidationError("split: age bin width must be positive");

    struct PatientKey {
        Date first;
        double age = 0.0;
        Sex sex = Sex::female;
        bool label = false;
        bool preassigned = false;
    };
    std::map<std::string, PatientKey> patients;
    for (const auto& e : encounters) {
        auto [it, fresh] = patients.try_emplace(e.record.patient_id);
        auto& k = it->second;
        if (fresh || e.record.date < k.first) {
            k.first = e.record.date;
            k.age = e.record.age_years;
            k.sex = e.record.sex;
        }
        k.label = k.label || e.label;
        k.preassigned = k.preassigned || e.split != Split::unassigned;
    }

    std::map<std::string, std::vector<std::string>> strata;
    for (const auto& [id, k] : patients) {
        if (k.preassigned) continue;
        const int bin = static_cast<int>(std::floor(k.age / params.age_bin_width_years));
        std::string key = "age" + std::to_string(bin * params.age_bin_width_years) + "|" +
                          std::string(to_string(k.sex)) + "|" + (k.label ? "pos" : "neg");
        strata[key].push_back(id);
    }

    const double dev_share = static_cast<double>(params.ratio_development) /
                             (params.ratio_development + params.ratio_validation);
    std::map<std::string, std::pair<Split, bool>> assignment;
    auto assign = [&](const std::string& key, std::vector<std::string> ids, bool fallback) {
        Rng rng(derive_seed(params.seed, key));
        rng.shuffle(std::span<std::string>(ids));
        const auto n_dev = static_cast<std::size_t>(std::lround(dev_share * ids.size()));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            assignment[ids[i]] = {i < n_dev ? Split::development : Split::validation, fallback};
        }
        if (summary) summary->push_back({key, ids.size(), n_dev, ids.size() - n_dev, fallback});
    };

    std::vector<std::string> pooled;
    for (auto& [key, ids] : strata) {
        if (ids.size() < 3) {
            pooled.insert(pooled.end(), ids.begin(), ids.end());
        } else {
            assign(key, ids, false);
        }
    }
    if (!pooled.empty()) {
        std::sort(pooled.begin(), pooled.end());
        assign("pooled-small-strata", pooled, true);
    }

    for (auto& e : encounters) {
        auto it = assignment.find(e.record.patient_id);
        if (it == assignment.end()) continue;
        e.split = it->second.first;
        e.split_fallback = it->second.second;
    }
    return encounters;
}

std::vector<LabeledEncounter> enrich_controls(std::vector<LabeledEncounter> encounters,
                                              const std::vector<Patient>& extra,
                                              const CohortSpec& spec, const DerivedRules& rules) {
    std::set<std::string> present;
    for (const auto& e : encounters) present.insert(e.record.patient_id);
    for (const auto& p : extra) {
        if (present.contains(p.id)) continue;
        const LabelInfo info = assign_label(p, spec);
        if (info.label) {
            // Confirmed cases without a screening visit enrich development only.
            if (screening_reason(p, spec) != SelectionReason::none) continue;
            for (auto& le : filter_encounters(p, info, spec, rules)) {
                le.split = Split::development;
                le.enrichment = true;
                encounters.push_back(std::move(le));
            }
        } else if (!info.any_malignancy) {
            for (auto& le : filter_encounters(p, info, spec, rules)) {
                le.enrichment = true;
                encounters.push_back(std::move(le));
            }
        }
    }
    return encounters;
}

ConsortStage tally(std::string stage, const std::vector<LabeledEncounter>& encounters) {
    ConsortStage s;
    s.stage = std::move(stage);
    std::set<std::string> pos, neg;
    for (const auto& e : encounters) {
        if (e.label) {
            pos.insert(e.record.patient_id);
            ++s.positive_encounters;
        } else {
            neg.insert(e.record.patient_id);
            ++s.negative_encounters;
        }
    }
    s.positive_patients = pos.size();
    s.negative_patients = neg.size();
    return s;
}

std::string consort_to_tsv(const std::vector<ConsortStage>& stages) {
    std::ostringstream os;
    os << "stage\tpositive_patients\tpositive_encounters\tnegative_patients\tnegative_encounters\n";
    for (const auto& s : stages) {
        os << s.stage << '\t' << s.positive_patients << '\t' << s.positive_encounters << '\t'
           << s.negative_patients << '\t' << s.negative_encounters << '\n';
    }
    return os.str();
}

CohortResult run_cohort_pipeline(const std::vector<EncounterRecord>& records,
                                 const CohortSpec& spec, const SplitParams& split,
                                 const DerivedRules& rules) {
    spec.validate();
    CohortResult result;
    const auto patients = group_by_patient(records);
    const auto screened = select_screening_population(patients, spec);

    struct Working {
        const Patient* patient;
        LabelInfo info;
    };
    std::vector<Working> cohort;
    std::vector<Patient> rest;
    for (const auto& p : patients) {
        if (screened.contains(p.id)) {
            cohort.push_back({&p, assign_label(p, spec)});
        } else {
            rest.push_back(p);
        }
    }

    // Stage-by-stage filtering mirrors filter_encounters, recording counts.
    using Pred = std::function<bool(const EncounterRecord&, const Working&)>;
    std::vector<std::pair<std::string, Pred>> steps{
        {"confirmed diagnosis or cancer-free",
         [](const EncounterRecord&, const Working& w) { return eligible(w.info); }},
        {"within 12 months before diagnosis / has follow-up",
         [&](const EncounterRecord& e, const Working& w) {
             return in_label_window(e, *w.patient, w.info, spec);
         }},
        {"age in range",
         [&](const EncounterRecord& e, const Working&) { return age_in_range(e, spec); }},
        {"no prior cancer",
         [](const EncounterRecord& e, const Working& w) { return no_prior_cancer(e, *w.patient); }},
        {"minimum marker count",
         [&](const EncounterRecord& e, const Working&) {
             return marker_count(e, spec, rules) >= static_cast<std::size_t>(spec.min_markers);
         }},
    };

    std::vector<std::pair<const EncounterRecord*, const Working*>> current;
    for (const auto& w : cohort)
        for (const auto& e : w.patient->encounters) current.emplace_back(&e, &w);

    auto snapshot = [&](const std::string& stage) {
        std::vector<LabeledEncounter> tmp;
        tmp.reserve(current.size());
        for (const auto& [e, w] : current) tmp.push_back(make_labeled(*e, w->info, spec));
        result.consort.push_back(tally(stage, tmp));
    };
    snapshot("screening population");
    for (const auto& [name, pred] : steps) {
        std::erase_if(current, [&](const auto& item) { return !pred(*item.first, *item.second); });
        snapshot(name);
    }

    std::vector<LabeledEncounter> encounters;
    for (const auto& [e, w] : current) encounters.push_back(make_labeled(*e, w->info, spec));

    encounters = enrich_controls(std::move(encounters), rest, spec, rules);
    result.consort.push_back(tally("after enrichment", encounters));

    encounters = split_dev_val(std::move(encounters), split, &result.strata);
    auto split_tally = [&](const std::string& suffix) {
        std::vector<LabeledEncounter> dev, val;
        for (const auto& e : encounters) (e.split == Split::development ? dev : val).push_back(e);
        result.consort.push_back(tally("development" + suffix, dev));
        result.consort.push_back(tally("validation" + suffix, val));
    };
    split_tally("");

    encounters = exclude_acute_infection(std::move(encounters), code_history(patients),
                                         spec.infection_codes, spec.infection_window_days);
    split_tally(" after infection exclusion");
    result.encounters = std::move(encounters);
    return result;
}

json to_json(const LabeledEncounter& e) {
    json j = to_json(e.record);
    j["label"] = e.label;
    j["cancer_type"] = to_string(e.cancer_type);
    j["split"] = to_string(e.split);
    j["diagnosis_date"] = e.diagnosis_date ? json(e.diagnosis_date->str()) : json(nullptr);
    j["split_fallback"] = e.split_fallback;
    j["enrichment"] = e.enrichment;
    return j;
}

LabeledEncounter labeled_from_json(const json& j) {
    try {
        LabeledEncounter e;
        e.record = record_from_json(j);
        e.label = j.at("label").get<bool>();
        e.cancer_type = cancer_type_from_string(j.at("cancer_type").get<std::string>());
        e.split = split_from_string(j.at("split").get<std::string>());
        if (j.contains("diagnosis_date") && !j["diagnosis_date"].is_null()) {
            e.diagnosis_date = Date::parse(j["diagnosis_date"].get<std::string>());
        }
        e.split_fallback = j.value("split_fallback", false);
        e.enrichment = j.value("enrichment", false);
        return e;
    } catch (const json::exception& ex) {
        throw ParseError(std::string("labeled encounter: ") + ex.what());
    }
}

std::string labeled_to_jsonl(const std::vector<LabeledEncounter>& encounters) {
    std::string out;
    for (const auto& e : encounters) {
        out += to_json(e).dump();
        out += '\n';
    }
    return out;
}

std::vector<LabeledEncounter> load_labeled(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::vector<LabeledEncounter> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(labeled_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace dprof
