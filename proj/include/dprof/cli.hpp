#pragma once

#include "dprof/catalog.hpp"
#include "dprof/preprocess.hpp"
#include "dprof/profiler.hpp"
#include "dprof/synth.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dprof::cli {

enum ExitCode { kOk = 0, kUsage = 2, kValidation = 3, kRuntime = 4 };

struct CohortOptions {
    int min_markers = 18;
    double age_low = 40.0;
    double age_high = 89.0;
    bool confirmation_required = true;
    int lookback_days = 365;
    int infection_window_days = 30;
    bool count_derived_markers = true;
    int ratio_development = 2;
    int ratio_validation = 1;
    int age_bin_width_years = 5;
};

struct EvaluateOptions {
    std::size_t thresholds = 101;
    std::vector<std::string> baseline_markers;  // empty: five largest catalog shifts
    double deletion_fraction = 0.3;
    std::size_t min_subgroup = 50;
    std::size_t permutations = 200;
};

struct ExplainOptions {
    std::size_t background = 256;
    std::size_t samples = 20;
    std::size_t permutation_pairs = 4;
    std::size_t exact_max_features = 12;
    std::size_t top_k = 15;
    std::size_t waterfalls = 3;
    std::size_t min_observed = 24;
    std::size_t min_similar = 50;
};

struct ComorbidOptions {
    long long min_each = 50;
    std::size_t subgroups = 5;
    std::size_t min_subgroup = 50;
};

struct RunConfig {
    std::uint64_t seed = 20240101;
    CancerType cancer_type = CancerType::liver;
    std::filesystem::path catalog;
    std::filesystem::path phecode_map;
    std::filesystem::path cohort_file;  // external cohort JSONL; empty uses the synth output
    std::filesystem::path work_dir = "dprof_run";
    SynthConfig synth;
    CohortOptions cohort;
    NormalizationOptions prepare;
    ProfilerConfig train;
    EnsembleOptions ensemble;
    EvaluateOptions evaluate;
    ExplainOptions explain;
    ComorbidOptions comorbid;
    std::size_t min_similar = 50;

    // Effective configuration as a canonical document.
    nlohmann::json to_json() const;
};

// Relative paths resolve against base_dir. Unknown fields and invalid values
// throw ValidationError naming the field.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

// Sets a dotted path ("train.lr") in a config document; the value is parsed
// as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

int dispatch(int argc, char** argv);

}  // namespace dprof::cli
