#include "dprof/synth.hpp"

#include "dprof/codes.hpp"
#include "dprof/error.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace dprof {

using nlohmann::json;

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
// Upper tail P(Z > x).
double norm_sf(double x) { return 0.5 * std::erfc(x / kSqrt2); }
// Inverse of the upper tail: returns x with P(Z > x) = q.
double norm_isf(double q) { return kSqrt2 * boost::math::erfc_inv(2.0 * q); }

// Coefficient of variation of N(mu, sigma) truncated to [0, inf), as a
// function of alpha = -mu / sigma.
double truncated_cv(double alpha) {
    const double lambda = norm_pdf(alpha) / norm_sf(alpha);
    const double var = 1.0 + alpha * lambda - lambda * lambda;
    return std::sqrt(std::max(var, 0.0)) / (lambda - alpha);
}

// Shared latent factors: each entry couples markers through a common
// standard-normal factor, leaving every marginal distribution unchanged.
struct Loading {
    const char* marker;
    double weight;
};
struct Factor {
    std::vector<Loading> loadings;
};

const std::vector<Factor>& coupling_factors() {
    static const std::vector<Factor> f{
        {{{"hemoglobin", 0.95}, {"hematocrit", 0.95}}},
        {{{"mch", 0.8}, {"mcv", 0.8}, {"mchc", 0.4}}},
        {{{"wbc", 0.9}, {"neutrophils", 0.8}, {"lymphocytes", 0.45}, {"monocytes", 0.5},
          {"eosinophils", 0.3}, {"basophils", 0.3}}},
        {{{"lymphocytes", 0.8}, {"lymphocytes_pct", 0.8}}},
        {{{"eosinophils", 0.85}, {"eosinophils_pct", 0.85}}},
        {{{"basophils", 0.85}, {"basophils_pct", 0.85}}},
        {{{"bun", 0.75}, {"creatinine", 0.75}}},
        {{{"bun", 0.5}, {"creatinine", -0.5}, {"bun_creatinine_ratio", 0.8}}},
        {{{"alt", 0.7}, {"ast", 0.7}}},
    };
    return f;
}

const std::vector<std::string>& diagnosis_codes(CancerType t) {
    static const std::vector<std::string> crc{"C18.9", "C18.7", "C19", "C20"};
    static const std::vector<std::string> liver{"C22.0", "C22.8"};
    static const std::vector<std::string> lung{"C34.90", "C34.11"};
    switch (t) {
        case CancerType::colorectal: return crc;
        case CancerType::liver: return liver;
        case CancerType::lung: return lung;
    }
    return crc;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<std::size_t>(rng.below(v.size()))];
}

double round4(double x) { return std::round(x * 1e4) / 1e4; }

void check_prob(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ValidationError(std::string("synth config: ") + name + " must be in [0, 1]");
    }
}

const Date kStudyStart = Date::from_ymd(2017, 1, 1);

}  // namespace

std::vector<ComorbidityPlant> SynthConfig::default_comorbidities() {
    auto plant = [](std::string code, double control, double crc, double liver, double lung) {
        return ComorbidityPlant{std::move(code),
                                {{"no_cancer", control},
                                 {"colorectal", crc},
                                 {"liver", liver},
                                 {"lung", lung}}};
    };
    return {
        plant("K63.89", 0.03, 0.14, 0.04, 0.03),   // other disorders of intestine
        plant("D12.6", 0.04, 0.16, 0.04, 0.04),    // benign neoplasm of colon
        plant("K62.5", 0.02, 0.12, 0.02, 0.02),    // hemorrhage of rectum and anus
        plant("R19.5", 0.015, 0.09, 0.015, 0.015), // occult blood in feces
        plant("K92.2", 0.015, 0.07, 0.03, 0.015),  // GI hemorrhage
        plant("K74.60", 0.02, 0.02, 0.25, 0.02),   // cirrhosis
        plant("B18.2", 0.01, 0.01, 0.10, 0.01),    // chronic hepatitis C
        plant("K76.0", 0.05, 0.05, 0.14, 0.05),    // fatty liver
        plant("F17.210", 0.10, 0.12, 0.14, 0.36),  // nicotine dependence
        plant("J44.9", 0.06, 0.06, 0.07, 0.26),    // COPD
        plant("R91.8", 0.02, 0.02, 0.02, 0.15),    // abnormal lung imaging finding
        plant("I10", 0.35, 0.36, 0.37, 0.38),      // hypertension
        plant("E11.9", 0.15, 0.16, 0.20, 0.16),    // type 2 diabetes
        plant("E78.5", 0.30, 0.30, 0.28, 0.30),    // hyperlipidemia
    };
}

void SynthConfig::validate() const {
    for (const auto& [cls, n] : n_per_class) (void)cohort_class_from_string(cls);
    check_prob(missing_cmp, "missing_cmp");
    check_prob(missing_cbc, "missing_cbc");
    check_prob(panel_dropout, "panel_dropout");
    check_prob(diagnostic_only_fraction, "diagnostic_only_fraction");
    check_prob(unscreened_fraction, "unscreened_fraction");
    check_prob(unconfirmed_fraction, "unconfirmed_fraction");
    check_prob(control_screening_prob, "control_screening_prob");
    check_prob(chronic_disease_fraction, "chronic_disease_fraction");
    check_prob(infection_rate, "infection_rate");
    check_prob(leakage_extra_missing, "leakage_extra_missing");
    if (diagnostic_only_fraction + unscreened_fraction > 1.0) {
        throw ValidationError(
            "synth config: diagnostic_only_fraction + unscreened_fraction must be <= 1");
    }
    if (min_encounters < 1 || max_encounters < min_encounters) {
        throw ValidationError("synth config: need 1 <= min_encounters <= max_encounters");
    }
    if (missing_cmp >= 1.0 && missing_cbc >= 1.0) {
        throw ValidationError("synth config: zero markers would remain for every encounter");
    }
    for (const auto& c : comorbidities) {
        if (c.icd10.empty()) throw ValidationError("synth config: comorbidity with empty code");
        for (const auto& [cls, p] : c.prevalence) {
            (void)cohort_class_from_string(cls);
            check_prob(p, "comorbidity prevalence");
        }
    }
}

json to_json(const SynthConfig& c) {
    json plants = json::array();
    for (const auto& p : c.comorbidities) plants.push_back({{"icd10", p.icd10}, {"prevalence", p.prevalence}});
    return {{"n_per_class", c.n_per_class},
            {"missing_cmp", c.missing_cmp},
            {"missing_cbc", c.missing_cbc},
            {"panel_dropout", c.panel_dropout},
            {"min_encounters", c.min_encounters},
            {"max_encounters", c.max_encounters},
            {"diagnostic_only_fraction", c.diagnostic_only_fraction},
            {"unscreened_fraction", c.unscreened_fraction},
            {"unconfirmed_fraction", c.unconfirmed_fraction},
            {"control_screening_prob", c.control_screening_prob},
            {"chronic_disease_fraction", c.chronic_disease_fraction},
            {"infection_rate", c.infection_rate},
            {"class_dependent_missingness", c.class_dependent_missingness},
            {"leakage_extra_missing", c.leakage_extra_missing},
            {"comorbidities", plants},
            {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
    SynthConfig c;
    try {
        if (j.contains("n_per_class")) c.n_per_class = j["n_per_class"].get<std::map<std::string, std::size_t>>();
        c.missing_cmp = j.value("missing_cmp", c.missing_cmp);
        c.missing_cbc = j.value("missing_cbc", c.missing_cbc);
        c.panel_dropout = j.value("panel_dropout", c.panel_dropout);
        c.min_encounters = j.value("min_encounters", c.min_encounters);
        c.max_encounters = j.value("max_encounters", c.max_encounters);
        c.diagnostic_only_fraction = j.value("diagnostic_only_fraction", c.diagnostic_only_fraction);
        c.unscreened_fraction = j.value("unscreened_fraction", c.unscreened_fraction);
        c.unconfirmed_fraction = j.value("unconfirmed_fraction", c.unconfirmed_fraction);
        c.control_screening_prob = j.value("control_screening_prob", c.control_screening_prob);
        c.chronic_disease_fraction = j.value("chronic_disease_fraction", c.chronic_disease_fraction);
        c.infection_rate = j.value("infection_rate", c.infection_rate);
        c.class_dependent_missingness =
            j.value("class_dependent_missingness", c.class_dependent_missingness);
        c.leakage_extra_missing = j.value("leakage_extra_missing", c.leakage_extra_missing);
        if (j.contains("comorbidities")) {
            c.comorbidities.clear();
            for (const auto& p : j["comorbidities"]) {
                c.comorbidities.push_back({p.at("icd10").get<std::string>(),
                                           p.at("prevalence").get<std::map<std::string, double>>()});
            }
        }
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("synth config: ") + e.what());
    }
    return c;
}

double MarginalModel::transform(double z) const {
    switch (family) {
        case Family::lognormal: return std::exp(mu + sigma * z);
        case Family::normal: return std::max(0.0, mu + sigma * z);
        case Family::truncated_normal: {
            // Inverse-CDF of the zero-truncated normal, evaluated through upper
            // tails so large z keeps full precision.
            const double alpha = -mu / sigma;
            const double tail = norm_sf(alpha);  // P(X >= 0) before truncation
            const double upper = norm_sf(z) * tail;
            return std::max(0.0, mu + sigma * norm_isf(upper));
        }
    }
    return 0.0;
}

double MarginalModel::mean() const {
    switch (family) {
        case Family::lognormal: return std::exp(mu + 0.5 * sigma * sigma);
        case Family::normal: return mu;
        case Family::truncated_normal: {
            const double alpha = -mu / sigma;
            return mu + sigma * norm_pdf(alpha) / norm_sf(alpha);
        }
    }
    return 0.0;
}

double MarginalModel::sd() const {
    switch (family) {
        case Family::lognormal:
            return std::sqrt(std::expm1(sigma * sigma)) * std::exp(mu + 0.5 * sigma * sigma);
        case Family::normal: return sigma;
        case Family::truncated_normal: {
            const double alpha = -mu / sigma;
            const double lambda = norm_pdf(alpha) / norm_sf(alpha);
            return sigma * std::sqrt(1.0 + alpha * lambda - lambda * lambda);
        }
    }
    return 0.0;
}

MarginalModel fit_marginal(double mean, double sd, bool log_transform) {
    if (!(mean > 0.0) || !(sd > 0.0)) {
        throw ValidationError("fit_marginal: need positive mean and sd");
    }
    const double cv = sd / mean;
    constexpr double kMaxTruncatedCv = 0.98;
    constexpr double kNegligibleAlpha = -8.0;
    MarginalModel m;
    if (log_transform || cv >= kMaxTruncatedCv) {
        m.family = MarginalModel::Family::lognormal;
        const double s2 = std::log1p(cv * cv);
        m.sigma = std::sqrt(s2);
        m.mu = std::log(mean) - 0.5 * s2;
        return m;
    }
    if (cv <= truncated_cv(kNegligibleAlpha)) {
        m.family = MarginalModel::Family::normal;
        m.mu = mean;
        m.sigma = sd;
        return m;
    }
    // truncated_cv is increasing in alpha; bisect for the requested cv.
    double lo = kNegligibleAlpha, hi = 40.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (truncated_cv(mid) < cv ? lo : hi) = mid;
    }
    const double alpha = 0.5 * (lo + hi);
    const double lambda = norm_pdf(alpha) / norm_sf(alpha);
    m.family = MarginalModel::Family::truncated_normal;
    m.sigma = mean / (lambda - alpha);
    m.mu = -alpha * m.sigma;
    return m;
}

EncounterRecord inject_claim_codes(EncounterRecord record, CohortClass cls, Date diagnosis_date,
                                   const SynthConfig& config, Rng& rng) {
    auto add = [&](const std::string& code, CodeSystem sys, Date d) {
        record.codes.push_back({code, sys, d});
    };
    auto screening_code = [&](const codes::CodeTable& t, Date d) {
        if (rng.bernoulli(0.7)) {
            add(pick(t.screening_procedures, rng), CodeSystem::CPT, d);
        } else {
            add(pick(t.screening_encounters, rng), CodeSystem::ICD10, d);
        }
    };

    if (cls == CohortClass::no_cancer) {
        for (auto type : {CancerType::colorectal, CancerType::liver, CancerType::lung}) {
            if (rng.bernoulli(config.control_screening_prob)) {
                screening_code(codes::table_for(type), record.date);
            }
        }
        return record;
    }

    const auto type = static_cast<CancerType>(static_cast<int>(cls) - 1);
    const auto& table = codes::table_for(type);
    const double route = rng.uniform();
    const Date procedure_date = diagnosis_date - static_cast<long>(rng.below(31));
    if (route < config.unscreened_fraction) {
        // No screening or diagnostic procedure on record.
    } else if (route < config.unscreened_fraction + config.diagnostic_only_fraction) {
        add(pick(table.diagnostic_procedures, rng), CodeSystem::CPT, procedure_date);
    } else {
        screening_code(table, procedure_date);
    }
    add(pick(diagnosis_codes(type), rng), CodeSystem::ICD10, diagnosis_date);

    if (!rng.bernoulli(config.unconfirmed_fraction)) {
        const Date after = diagnosis_date + 7 + static_cast<long>(rng.below(114));
        const double kind = rng.uniform();
        if (kind < 0.5) {
            add(pick(codes::therapy_cpt(), rng), CodeSystem::CPT, after);
        } else if (kind < 0.75) {
            add(pick(codes::therapy_icd(), rng), CodeSystem::ICD10, after);
        } else {
            add(pick(diagnosis_codes(type), rng), CodeSystem::ICD10, after);
        }
    }
    return record;
}

namespace {

struct LatentLoading {
    std::size_t factor;
    double weight;
};

// Per-class marginal models and latent coupling for every lab marker.
struct SamplingPlan {
    std::vector<const MarkerDef*> labs;
    std::map<std::string, std::vector<MarginalModel>> marginals;  // class -> per lab
    std::vector<std::vector<LatentLoading>> loadings;             // per lab
    std::vector<double> residual;                                 // per lab
    std::size_t n_factors = 0;
};

SamplingPlan make_plan(const MarkerCatalog& catalog, const std::vector<std::string>& classes) {
    SamplingPlan plan;
    plan.labs = catalog.lab_markers();
    const auto& factors = coupling_factors();
    plan.n_factors = factors.size();
    plan.loadings.resize(plan.labs.size());
    plan.residual.assign(plan.labs.size(), 1.0);
    for (std::size_t i = 0; i < plan.labs.size(); ++i) {
        double sum_sq = 0.0;
        for (std::size_t f = 0; f < factors.size(); ++f) {
            for (const auto& l : factors[f].loadings) {
                if (plan.labs[i]->id == l.marker) {
                    plan.loadings[i].push_back({f, l.weight});
                    sum_sq += l.weight * l.weight;
                }
            }
        }
        plan.residual[i] = std::sqrt(1.0 - sum_sq);
    }
    for (const auto& cls : classes) {
        auto& models = plan.marginals[cls];
        for (const auto* m : plan.labs) {
            auto it = m->class_distributions.find(cls);
            if (it == m->class_distributions.end()) {
                throw ValidationError("marker '" + m->id + "' has no distribution for class '" +
                                      cls + "'");
            }
            models.push_back(fit_marginal(it->second.mean, it->second.sd, m->log_transform));
        }
    }
    return plan;
}

std::map<std::string, double> draw_measurements(const SamplingPlan& plan, const std::string& cls,
                                                bool leak, const SynthConfig& config, Rng& rng) {
    std::vector<double> factor(plan.n_factors);
    for (auto& f : factor) f = rng.normal();

    bool drop_cmp = false, drop_cbc = false;
    if (rng.bernoulli(config.panel_dropout)) (rng.bernoulli(0.5) ? drop_cmp : drop_cbc) = true;

    const auto& models = plan.marginals.at(cls);
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < plan.labs.size(); ++i) {
        double z = plan.residual[i] * rng.normal();
        for (const auto& l : plan.loadings[i]) z += l.weight * factor[l.factor];
        const double value = round4(models[i].transform(z));
        // Absence draws are consumed unconditionally to keep streams aligned.
        const double u = rng.uniform();
        const double u_leak = rng.uniform();
        const bool is_cmp = plan.labs[i]->panel == Panel::cmp;
        if (is_cmp ? drop_cmp : drop_cbc) continue;
        if (u < (is_cmp ? config.missing_cmp : config.missing_cbc)) continue;
        if (leak && u_leak < config.leakage_extra_missing) continue;
        out.emplace(plan.labs[i]->id, value);
    }
    return out;
}

std::string padded(const char* prefix, std::size_t n, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, n);
    return buf;
}

}  // namespace

std::vector<EncounterRecord> synthesize_cohort(const MarkerCatalog& catalog,
                                               const SynthConfig& config) {
    config.validate();
    std::vector<std::string> classes;
    for (const auto& [cls, n] : config.n_per_class) classes.push_back(cls);
    const SamplingPlan plan = make_plan(catalog, classes);
    const auto& age_def = catalog.at("age");
    const auto& sex_def = catalog.at("sex");

    // Fixed class order so patient numbering does not depend on map layout.
    std::vector<std::pair<std::string, std::size_t>> order;
    for (auto cls : kRequiredClasses) {
        auto it = config.n_per_class.find(std::string(cls));
        if (it != config.n_per_class.end()) order.emplace_back(it->first, it->second);
    }

    std::vector<EncounterRecord> out;
    std::size_t patient_index = 0;
    for (const auto& [cls_name, count] : order) {
        const CohortClass cls = cohort_class_from_string(cls_name);
        const bool cancer = cls != CohortClass::no_cancer;
        const bool leak = cancer && config.class_dependent_missingness;
        for (std::size_t k = 0; k < count; ++k, ++patient_index) {
            Rng rng(derive_seed(config.seed, patient_index));
            const std::string pid = padded("P", patient_index + 1, 7);
            const auto age_dist = age_def.class_distributions.at(cls_name);
            const double male_p = sex_def.class_distributions.at(cls_name).mean;
            const Sex sex = rng.bernoulli(male_p) ? Sex::male : Sex::female;
            const double last_age =
                std::clamp(age_dist.mean + age_dist.sd * rng.normal(), 18.0, 110.0);
            const int n_enc = config.min_encounters +
                              static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                  config.max_encounters - config.min_encounters + 1)));

            // Encounter dates, newest last.
            std::vector<Date> dates(static_cast<std::size_t>(n_enc));
            Date diagnosis;
            if (cancer) {
                diagnosis = Date::from_ymd(2018, 1, 1) + static_cast<long>(rng.below(1277));
                dates.back() = diagnosis - static_cast<long>(rng.below(300));
                for (int e = n_enc - 2; e >= 0; --e)
                    dates[e] = dates[e + 1] - (60 + static_cast<long>(rng.below(240)));
            } else {
                dates.front() = kStudyStart + static_cast<long>(rng.below(1400));
                for (int e = 1; e < n_enc; ++e)
                    dates[e] = dates[e - 1] + (60 + static_cast<long>(rng.below(340)));
            }

            std::vector<EncounterRecord> records;
            for (int e = 0; e < n_enc; ++e) {
                EncounterRecord r;
                r.patient_id = pid;
                r.encounter_id = pid + "-E" + std::to_string(e + 1);
                r.date = dates[e];
                const double years_before_last =
                    static_cast<double>(dates.back() - dates[e]) / 365.25;
                r.age_years = std::round((last_age - years_before_last) * 100.0) / 100.0;
                r.sex = sex;
                r.measurements = draw_measurements(plan, cls_name, leak, config, rng);
                if (rng.bernoulli(config.infection_rate)) {
                    r.codes.push_back({rng.bernoulli(0.7) ? "A41.9" : "R65.20",
                                       CodeSystem::ICD10, r.date});
                }
                records.push_back(std::move(r));
            }

            // Patient-level codes hang off the most recent encounter.
            auto& anchor = records.back();
            const Date history_end = cancer ? diagnosis : dates.back();
            for (const auto& plant : config.comorbidities) {
                auto it = plant.prevalence.find(cls_name);
                if (it == plant.prevalence.end() || !rng.bernoulli(it->second)) continue;
                anchor.codes.push_back({plant.icd10, CodeSystem::ICD10,
                                        history_end - (30 + static_cast<long>(rng.below(700)))});
            }
            if (!cancer && rng.bernoulli(config.chronic_disease_fraction)) {
                static const std::vector<std::string> chronic{"N18.3", "N18.4", "K70.30", "K76.9"};
                anchor.codes.push_back({pick(chronic, rng), CodeSystem::ICD10,
                                        history_end - static_cast<long>(rng.below(365))});
            }
            anchor = inject_claim_codes(std::move(anchor), cls, diagnosis, config, rng);
            for (auto& r : records) out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace dprof
