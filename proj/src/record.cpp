#include "dprof/record.hpp"

#include "dprof/error.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dprof {

using nlohmann::json;

std::string_view to_string(Sex s) { return s == Sex::male ? "male" : "female"; }
std::string_view to_string(CodeSystem s) { return s == CodeSystem::ICD10 ? "ICD10" : "CPT"; }

Sex sex_from_string(std::string_view s) {
    if (s == "male") return Sex::male;
    if (s == "female") return Sex::female;
    throw ValidationError("sex must be 'male' or 'female', got '" + std::string(s) + "'");
}

CodeSystem code_system_from_string(std::string_view s) {
    if (s == "ICD10") return CodeSystem::ICD10;
    if (s == "CPT") return CodeSystem::CPT;
    throw ValidationError("code system must be 'ICD10' or 'CPT', got '" + std::string(s) + "'");
}

void validate_record(const EncounterRecord& r, const MarkerCatalog& catalog) {
    if (r.patient_id.empty()) throw ValidationError("record with empty patient_id");
    if (!(r.age_years >= 0.0 && r.age_years <= 130.0)) {
        throw ValidationError("record " + r.encounter_id + ": age_years out of [0, 130]");
    }
    for (const auto& [id, v] : r.measurements) {
        const auto* m = catalog.find(id);
        if (!m || !m->is_lab()) {
            throw ValidationError("record " + r.encounter_id + ": unknown marker '" + id + "'");
        }
        if (!std::isfinite(v)) {
            throw ValidationError("record " + r.encounter_id + ": non-finite value for '" + id + "'");
        }
        if (v < 0.0) {
            throw ValidationError("record " + r.encounter_id + ": negative value for '" + id + "'");
        }
    }
    for (const auto& c : r.codes) {
        if (c.code.empty()) throw ValidationError("record " + r.encounter_id + ": empty claim code");
    }
}

json to_json(const ClaimCode& c) {
    return {{"code", c.code}, {"system", to_string(c.system)}, {"date", c.date.str()}};
}

json to_json(const EncounterRecord& r) {
    json codes = json::array();
    for (const auto& c : r.codes) codes.push_back(to_json(c));
    return {{"patient_id", r.patient_id},
            {"encounter_id", r.encounter_id},
            {"date", r.date.str()},
            {"age_years", r.age_years},
            {"sex", to_string(r.sex)},
            {"measurements", r.measurements},
            {"codes", codes}};
}

ClaimCode claim_code_from_json(const json& j) {
    return {j.at("code").get<std::string>(),
            code_system_from_string(j.at("system").get<std::string>()),
            Date::parse(j.at("date").get<std::string>())};
}

EncounterRecord record_from_json(const json& j) {
    try {
        EncounterRecord r;
        r.patient_id = j.at("patient_id").get<std::string>();
        r.encounter_id = j.value("encounter_id", r.patient_id);
        r.date = Date::parse(j.at("date").get<std::string>());
        r.age_years = j.at("age_years").get<double>();
        r.sex = sex_from_string(j.at("sex").get<std::string>());
        if (j.contains("measurements")) {
            for (const auto& [k, v] : j["measurements"].items()) {
                if (!v.is_number()) {
                    throw ValidationError("measurement '" + k + "' is not a number");
                }
                r.measurements[k] = v.get<double>();
            }
        }
        if (j.contains("codes"))
            for (const auto& c : j["codes"]) r.codes.push_back(claim_code_from_json(c));
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("encounter record: ") + e.what());
    }
}

std::string records_to_jsonl(const std::vector<EncounterRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

std::vector<EncounterRecord> records_from_jsonl(std::istream& in) {
    std::vector<EncounterRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<EncounterRecord> load_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    return records_from_jsonl(in);
}

std::string normalize_icd(std::string_view code) {
    std::string out;
    out.reserve(code.size());
    for (char c : code) {
        if (c == '.' || std::isspace(static_cast<unsigned char>(c))) continue;
        out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

bool icd_has_prefix(std::string_view code, std::string_view prefix) {
    const auto c = normalize_icd(code);
    const auto p = normalize_icd(prefix);
    return c.compare(0, p.size(), p) == 0;
}

}  // namespace dprof
