#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dprof {

enum class Panel { cmp, cbc, demographic };
enum class RiskDirection { high_is_risk, low_is_risk, unsigned_ };

// Cohort classes used for synthesis and labeling.
enum class CohortClass { no_cancer, colorectal, liver, lung };
// Cancer types a cohort can be built for.
enum class CancerType { colorectal, liver, lung };

std::string_view to_string(Panel p);
std::string_view to_string(RiskDirection r);
std::string_view to_string(CohortClass c);
std::string_view to_string(CancerType c);
Panel panel_from_string(std::string_view s);
RiskDirection risk_direction_from_string(std::string_view s);
CohortClass cohort_class_from_string(std::string_view s);
CancerType cancer_type_from_string(std::string_view s);
constexpr CohortClass as_cohort_class(CancerType c) {
    return static_cast<CohortClass>(static_cast<int>(c) + 1);
}

struct ClassDistribution {
    double mean = 0.0;
    double sd = 0.0;
};

struct MarkerDef {
    std::string id;
    std::string display_name;
    std::string unit;
    Panel panel = Panel::cmp;
    std::optional<std::pair<double, double>> reference_range;
    bool log_transform = false;
    RiskDirection risk_direction = RiskDirection::unsigned_;
    std::map<std::string, ClassDistribution> class_distributions;

    bool is_lab() const { return panel != Panel::demographic; }
};

// Ordered marker universe. Lab-marker order defines feature-vector indices;
// demographic entries ("age", "sex") are appended after the lab markers.
class MarkerCatalog {
public:
    MarkerCatalog() = default;
    MarkerCatalog(std::string version, std::vector<MarkerDef> entries,
                  std::vector<std::string> exclusion_codes = {});

    const std::string& version() const { return version_; }
    const std::vector<MarkerDef>& entries() const { return entries_; }
    // Acute-infection ICD-10 prefixes used by the cohort exclusion step.
    const std::vector<std::string>& exclusion_codes() const { return exclusion_codes_; }

    const MarkerDef* find(std::string_view id) const;
    const MarkerDef& at(std::string_view id) const;
    bool contains(std::string_view id) const { return find(id) != nullptr; }

    // Lab markers in catalog order.
    std::vector<const MarkerDef*> lab_markers() const;
    std::size_t lab_count() const;

private:
    void validate() const;

    std::string version_;
    std::vector<MarkerDef> entries_;
    std::vector<std::string> exclusion_codes_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kRequiredClasses[] = {"no_cancer", "colorectal", "liver",
                                                         "lung"};

MarkerCatalog parse_marker_catalog(std::string_view text);
MarkerCatalog load_marker_catalog(const std::filesystem::path& path);
nlohmann::json catalog_to_json(const MarkerCatalog& catalog);

}  // namespace dprof
