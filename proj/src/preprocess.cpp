#include "dprof/preprocess.hpp"

#include "dprof/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dprof {

using nlohmann::json;

DerivedRules DerivedRules::for_catalog(const MarkerCatalog& catalog) {
    DerivedRules r;
    if (!catalog.contains(r.bun) || !catalog.contains(r.creatinine) || !catalog.contains(r.ratio)) {
        r.ratio.clear();
    }
    std::erase_if(r.differentials, [&](const auto& p) {
        return !catalog.contains(p.first) || !catalog.contains(p.second) ||
               !catalog.contains(r.wbc);
    });
    return r;
}

EncounterRecord complete_derived(EncounterRecord record, const DerivedRules& rules) {
    auto& m = record.measurements;
    auto get = [&](const std::string& id) -> const double* {
        auto it = m.find(id);
        return it == m.end() ? nullptr : &it->second;
    };
    if (rules.has_ratio() && !get(rules.ratio)) {
        const double* bun = get(rules.bun);
        const double* cr = get(rules.creatinine);
        if (bun && cr && *cr > 0.0) m[rules.ratio] = *bun / *cr;
    }
    const double* wbc = get(rules.wbc);
    if (wbc && *wbc > 0.0) {
        const double w = *wbc;
        for (const auto& [abs_id, pct_id] : rules.differentials) {
            const double* a = get(abs_id);
            const double* p = get(pct_id);
            if (a && !p) {
                m[pct_id] = 100.0 * *a / w;
            } else if (p && !a) {
                m[abs_id] = *p * w / 100.0;
            }
        }
    }
    return record;
}

double percentile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("percentile of empty sequence");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile q must be in [0, 1]");
    const double h = static_cast<double>(sorted.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted[lo];
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::vector<std::string> NormalizationParams::feature_order() const {
    std::vector<std::string> out;
    for (const auto& f : features) out.push_back(f.id);
    return out;
}

std::size_t NormalizationParams::index_of(std::string_view id) const {
    for (std::size_t i = 0; i < features.size(); ++i)
        if (features[i].id == id) return i;
    throw ValidationError("feature '" + std::string(id) + "' not in normalization params");
}

namespace {

double clamp_and_log(double v, const NormalizationEntry& e) {
    if (!e.log_transform) return v;
    return std::log10(v > 0.0 ? v : e.detection_limit);
}

NormalizationEntry fit_entry(std::string id, std::vector<double> values, bool log_transform) {
    NormalizationEntry e;
    e.id = std::move(id);
    e.log_transform = log_transform;
    if (values.empty()) throw NumericError("marker '" + e.id + "' has no observed development values");
    if (log_transform) {
        double smallest = std::numeric_limits<double>::infinity();
        for (double v : values)
            if (v > 0.0) smallest = std::min(smallest, v);
        if (!std::isfinite(smallest)) {
            throw NumericError("marker '" + e.id + "' has no positive values to log-transform");
        }
        e.detection_limit = 0.5 * smallest;
        for (auto& v : values) v = clamp_and_log(v, e);
    }
    std::sort(values.begin(), values.end());
    if (values.front() == values.back()) {
        throw NumericError("marker '" + e.id + "' has a degenerate (constant) distribution");
    }
    e.median = percentile(values, 0.5);
    e.iqd = percentile(values, 0.75) - percentile(values, 0.25);
    if (!(e.iqd > 0.0)) {
        throw NumericError("marker '" + e.id + "' has zero inter-quartile distance");
    }
    return e;
}

}  // namespace

NormalizationParams fit_normalization(std::span<const EncounterRecord> development,
                                      const MarkerCatalog& catalog, NormalizationOptions options) {
    if (development.empty()) throw ValidationError("fit_normalization: empty development set");
    NormalizationParams p;
    p.scale_demographics = options.scale_demographics;
    for (const auto* m : catalog.lab_markers()) {
        std::vector<double> values;
        for (const auto& r : development) {
            auto it = r.measurements.find(m->id);
            if (it != r.measurements.end()) values.push_back(it->second);
        }
        p.features.push_back(fit_entry(m->id, std::move(values), m->log_transform));
    }
    if (options.scale_demographics) {
        std::vector<double> ages, sexes;
        for (const auto& r : development) {
            ages.push_back(r.age_years);
            sexes.push_back(r.sex == Sex::male ? 1.0 : 0.0);
        }
        p.features.push_back(fit_entry("age", std::move(ages), false));
        p.features.push_back(fit_entry("sex", std::move(sexes), false));
    } else {
        p.features.push_back({"age", 0.0, 1.0, false, 0.0});
        p.features.push_back({"sex", 0.0, 1.0, false, 0.0});
    }
    return p;
}

std::size_t FeatureVector::observed() const {
    std::size_t n = 0;
    for (double m : mask) n += m != 0.0 ? 1 : 0;
    return n;
}

FeatureVector vectorize(const EncounterRecord& record, const NormalizationParams& params) {
    FeatureVector fv;
    const std::size_t d = params.dim();
    fv.values.assign(d, 0.0);
    fv.mask.assign(d, 0.0);
    auto put = [&](std::size_t i, double raw) {
        const auto& e = params.features[i];
        fv.values[i] = (clamp_and_log(raw, e) - e.median) / e.iqd;
        fv.mask[i] = 1.0;
    };
    for (std::size_t i = 0; i < params.lab_count(); ++i) {
        auto it = record.measurements.find(params.features[i].id);
        if (it != record.measurements.end()) put(i, it->second);
    }
    put(d - 2, record.age_years);
    put(d - 1, record.sex == Sex::male ? 1.0 : 0.0);
    return fv;
}

json to_json(const NormalizationParams& p) {
    json feats = json::array();
    for (const auto& f : p.features) {
        feats.push_back({{"id", f.id},
                         {"median", f.median},
                         {"iqd", f.iqd},
                         {"log_transform", f.log_transform},
                         {"detection_limit", f.detection_limit}});
    }
    return {{"version", NormalizationParams::kVersion},
            {"fitted_on", p.fitted_on},
            {"scale_demographics", p.scale_demographics},
            {"features", feats}};
}

NormalizationParams normalization_from_json(const json& j) {
    try {
        if (j.at("version").get<int>() != NormalizationParams::kVersion) {
            throw IntegrityError("normalization params: unsupported version");
        }
        NormalizationParams p;
        p.fitted_on = j.at("fitted_on").get<std::string>();
        p.scale_demographics = j.at("scale_demographics").get<bool>();
        for (const auto& f : j.at("features")) {
            p.features.push_back({f.at("id").get<std::string>(), f.at("median").get<double>(),
                                  f.at("iqd").get<double>(), f.at("log_transform").get<bool>(),
                                  f.at("detection_limit").get<double>()});
        }
        if (p.features.size() < 3 || p.features[p.dim() - 2].id != "age" ||
            p.features[p.dim() - 1].id != "sex") {
            throw IntegrityError("normalization params: feature order must end with age, sex");
        }
        for (const auto& f : p.features) {
            if (!(f.iqd > 0.0)) throw IntegrityError("normalization params: non-positive iqd for " + f.id);
        }
        return p;
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("normalization params: ") + e.what());
    }
}

}  // namespace dprof
