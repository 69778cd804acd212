#include "dprof/catalog.hpp"

#include "dprof/error.hpp"
#include "dprof/io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <unordered_set>

namespace dprof {

using nlohmann::json;

std::string_view to_string(Panel p) {
    switch (p) {
        case Panel::cmp: return "CMP";
        case Panel::cbc: return "CBC";
        case Panel::demographic: return "demographic";
    }
    return "?";
}

std::string_view to_string(RiskDirection r) {
    switch (r) {
        case RiskDirection::high_is_risk: return "high_is_risk";
        case RiskDirection::low_is_risk: return "low_is_risk";
        case RiskDirection::unsigned_: return "unsigned";
    }
    return "?";
}

std::string_view to_string(CohortClass c) {
    switch (c) {
        case CohortClass::no_cancer: return "no_cancer";
        case CohortClass::colorectal: return "colorectal";
        case CohortClass::liver: return "liver";
        case CohortClass::lung: return "lung";
    }
    return "?";
}

std::string_view to_string(CancerType c) { return to_string(as_cohort_class(c)); }

Panel panel_from_string(std::string_view s) {
    if (s == "CMP") return Panel::cmp;
    if (s == "CBC") return Panel::cbc;
    if (s == "demographic") return Panel::demographic;
    throw ParseError("unknown panel '" + std::string(s) + "'");
}

RiskDirection risk_direction_from_string(std::string_view s) {
    if (s == "high_is_risk") return RiskDirection::high_is_risk;
    if (s == "low_is_risk") return RiskDirection::low_is_risk;
    if (s == "unsigned") return RiskDirection::unsigned_;
    throw ParseError("unknown risk_direction '" + std::string(s) + "'");
}

CohortClass cohort_class_from_string(std::string_view s) {
    if (s == "no_cancer") return CohortClass::no_cancer;
    if (s == "colorectal") return CohortClass::colorectal;
    if (s == "liver") return CohortClass::liver;
    if (s == "lung") return CohortClass::lung;
    throw ValidationError("unknown cohort class '" + std::string(s) + "'");
}

CancerType cancer_type_from_string(std::string_view s) {
    if (s == "colorectal") return CancerType::colorectal;
    if (s == "liver") return CancerType::liver;
    if (s == "lung") return CancerType::lung;
    throw ValidationError("unknown cancer type '" + std::string(s) + "'");
}

MarkerCatalog::MarkerCatalog(std::string version, std::vector<MarkerDef> entries,
                             std::vector<std::string> exclusion_codes)
    : version_(std::move(version)),
      entries_(std::move(entries)),
      exclusion_codes_(std::move(exclusion_codes)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!index_.emplace(entries_[i].id, i).second) {
            throw ValidationError("duplicate marker id '" + entries_[i].id + "'");
        }
    }
    validate();
}

void MarkerCatalog::validate() const {
    bool seen_demographic = false;
    for (const auto& m : entries_) {
        if (m.id.empty()) throw ValidationError("marker with empty id");
        if (m.reference_range && !(m.reference_range->first < m.reference_range->second)) {
            throw ValidationError("marker '" + m.id + "': reference_range low must be < high");
        }
        for (auto cls : kRequiredClasses) {
            auto it = m.class_distributions.find(std::string(cls));
            if (it == m.class_distributions.end()) {
                throw ValidationError("marker '" + m.id + "': missing class distribution '" +
                                      std::string(cls) + "'");
            }
        }
        for (const auto& [cls, dist] : m.class_distributions) {
            if (!std::isfinite(dist.mean) || !std::isfinite(dist.sd) || dist.sd < 0.0) {
                throw ValidationError("marker '" + m.id + "': invalid distribution for class '" +
                                      cls + "'");
            }
            if (m.is_lab() && dist.mean <= 0.0) {
                throw ValidationError("marker '" + m.id + "': lab marker mean must be positive");
            }
        }
        if (m.panel == Panel::demographic) {
            if (m.id != "age" && m.id != "sex") {
                throw ValidationError("demographic entry must be 'age' or 'sex', got '" + m.id +
                                      "'");
            }
            seen_demographic = true;
        } else if (seen_demographic) {
            throw ValidationError("lab marker '" + m.id + "' listed after demographic entries");
        }
    }
    if (!contains("age") || !contains("sex")) {
        throw ValidationError("catalog must define demographic entries 'age' and 'sex'");
    }
}

const MarkerDef* MarkerCatalog::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &entries_[it->second];
}

const MarkerDef& MarkerCatalog::at(std::string_view id) const {
    const auto* m = find(id);
    if (!m) throw ValidationError("unknown marker '" + std::string(id) + "'");
    return *m;
}

std::vector<const MarkerDef*> MarkerCatalog::lab_markers() const {
    std::vector<const MarkerDef*> out;
    for (const auto& m : entries_)
        if (m.is_lab()) out.push_back(&m);
    return out;
}

std::size_t MarkerCatalog::lab_count() const {
    std::size_t n = 0;
    for (const auto& m : entries_) n += m.is_lab() ? 1 : 0;
    return n;
}

namespace {

MarkerDef marker_from_json(const json& j) {
    MarkerDef m;
    m.id = j.at("id").get<std::string>();
    m.display_name = j.value("display_name", m.id);
    m.unit = j.value("unit", "");
    m.panel = panel_from_string(j.at("panel").get<std::string>());
    if (j.contains("reference_range") && !j["reference_range"].is_null()) {
        const auto& rr = j["reference_range"];
        if (!rr.is_array() || rr.size() != 2) {
            throw ParseError("marker '" + m.id + "': reference_range must be [low, high]");
        }
        m.reference_range = std::make_pair(rr[0].get<double>(), rr[1].get<double>());
    }
    m.log_transform = j.value("log_transform", false);
    m.risk_direction = risk_direction_from_string(j.value("risk_direction", "unsigned"));
    for (const auto& [cls, d] : j.at("class_distributions").items()) {
        m.class_distributions[cls] = {d.at("mean").get<double>(), d.at("sd").get<double>()};
    }
    return m;
}

}  // namespace

MarkerCatalog parse_marker_catalog(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("marker catalog: ") + e.what());
    }
    try {
        std::vector<MarkerDef> markers;
        for (const auto& j : doc.at("markers")) markers.push_back(marker_from_json(j));
        std::vector<std::string> excl;
        if (doc.contains("exclusion_codes")) excl = doc["exclusion_codes"].get<std::vector<std::string>>();
        return MarkerCatalog(doc.value("version", "unversioned"), std::move(markers),
                             std::move(excl));
    } catch (const json::exception& e) {
        throw ParseError(std::string("marker catalog: ") + e.what());
    }
}

MarkerCatalog load_marker_catalog(const std::filesystem::path& path) {
    return parse_marker_catalog(io::read_file(path));
}

json catalog_to_json(const MarkerCatalog& catalog) {
    json markers = json::array();
    for (const auto& m : catalog.entries()) {
        json j;
        j["id"] = m.id;
        j["display_name"] = m.display_name;
        j["unit"] = m.unit;
        j["panel"] = to_string(m.panel);
        j["reference_range"] = m.reference_range
                                   ? json::array({m.reference_range->first, m.reference_range->second})
                                   : json(nullptr);
        j["log_transform"] = m.log_transform;
        j["risk_direction"] = to_string(m.risk_direction);
        json dists = json::object();
        for (const auto& [cls, d] : m.class_distributions) dists[cls] = {{"mean", d.mean}, {"sd", d.sd}};
        j["class_distributions"] = dists;
        markers.push_back(j);
    }
    return {{"version", catalog.version()},
            {"exclusion_codes", catalog.exclusion_codes()},
            {"markers", markers}};
}

}  // namespace dprof
