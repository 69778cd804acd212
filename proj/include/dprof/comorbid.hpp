#pragma once

#include "dprof/date.hpp"
#include "dprof/record.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dprof {

// ICD-10 prefix (normalized, no dot) -> phecode.
class PhecodeMap {
public:
    // Throws ValidationError when the same prefix maps to two phecodes.
    void add(std::string_view icd_prefix, std::string phecode, std::string label = {});
    // Longest matching prefix.
    std::optional<std::string> lookup(std::string_view icd10) const;
    std::string label(const std::string& phecode) const;
    std::size_t size() const { return prefixes_.size(); }

private:
    std::map<std::string, std::string> prefixes_;
    std::map<std::string, std::string> labels_;
    std::size_t longest_ = 0;
};

// Tab- or comma-separated rows: icd10_prefix, phecode[, label]. Blank lines,
// '#' comments and a header row starting with "icd10" are skipped.
PhecodeMap parse_phecode_map(std::string_view text);
PhecodeMap load_phecode_map(const std::filesystem::path& path);

struct PhecodeTally {
    std::size_t mapped = 0;
    std::size_t unmapped = 0;
    std::size_t censored = 0;
};

// ICD-10 codes only. With a diagnosis date, codes on or after it are dropped.
std::set<std::string> map_patient_phecodes(std::span<const ClaimCode> codes, std::optional<Date> diagnosis_date,
                                           const PhecodeMap& map, PhecodeTally* tally = nullptr);

// Two-sided Fisher exact test on [[a, b], [c, d]]: sum of the probabilities of
// all tables with the same margins no more likely than the observed one.
double fisher_exact(long long a, long long b, long long c, long long d);
// Natural log of the same p-value, usable when it underflows.
double fisher_exact_log(long long a, long long b, long long c, long long d);

struct OddsRatio {
    double value = 1.0;
    bool corrected = false;
};
// (a d) / (b c), with 0.5 added to every cell when any is zero.
OddsRatio odds_ratio(long long a, long long b, long long c, long long d);

struct ComorbidityRow {
    std::string phecode;
    std::string label;
    long long a = 0;  // cancer with
    long long b = 0;  // cancer without
    long long c = 0;  // control with
    long long d = 0;  // control without
    OddsRatio odds_ratio;
    double p_value = 1.0;
    double neg_log10_p = 0.0;
    double prevalence_cancer = 0.0;
    double prevalence_control = 0.0;
};

struct ComorbidityTable {
    std::size_t n_cancer = 0;
    std::size_t n_control = 0;
    std::vector<ComorbidityRow> rows;  // phecode order
};

ComorbidityTable build_comorbidity_table(const std::vector<std::set<std::string>>& cancer,
                                         const std::vector<std::set<std::string>>& control, const PhecodeMap& map);

// Phecodes with at least min_each carriers in both cohorts, ascending p.
std::vector<ComorbidityRow> rank_comorbidities(const ComorbidityTable& table, long long min_each = 50);

std::string comorbidity_tsv(const std::vector<ComorbidityRow>& rows);
nlohmann::json to_json(const std::vector<ComorbidityRow>& rows);

}  // namespace dprof
