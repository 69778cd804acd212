#pragma once

#include "dprof/catalog.hpp"
#include "dprof/date.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dprof {

enum class Sex { male, female };
enum class CodeSystem { ICD10, CPT };

std::string_view to_string(Sex s);
std::string_view to_string(CodeSystem s);
Sex sex_from_string(std::string_view s);
CodeSystem code_system_from_string(std::string_view s);

struct ClaimCode {
    std::string code;
    CodeSystem system = CodeSystem::ICD10;
    Date date;

    bool operator==(const ClaimCode&) const = default;
};

// One patient visit. Measurements are in native catalog units.
struct EncounterRecord {
    std::string patient_id;
    std::string encounter_id;
    Date date;
    double age_years = 0.0;
    Sex sex = Sex::female;
    std::map<std::string, double> measurements;
    std::vector<ClaimCode> codes;

    bool operator==(const EncounterRecord&) const = default;
};

// Throws ValidationError naming the offending field or marker.
void validate_record(const EncounterRecord& record, const MarkerCatalog& catalog);

nlohmann::json to_json(const ClaimCode& code);
nlohmann::json to_json(const EncounterRecord& record);
ClaimCode claim_code_from_json(const nlohmann::json& j);
EncounterRecord record_from_json(const nlohmann::json& j);

// JSON Lines: one EncounterRecord object per line.
std::string records_to_jsonl(const std::vector<EncounterRecord>& records);
std::vector<EncounterRecord> records_from_jsonl(std::istream& in);
std::vector<EncounterRecord> load_records(const std::filesystem::path& path);

// ICD-10 codes compare with dots removed and upper-cased ("K62.5" == "K625").
std::string normalize_icd(std::string_view code);
bool icd_has_prefix(std::string_view code, std::string_view prefix);

}  // namespace dprof
