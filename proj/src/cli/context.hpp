#pragma once

#include "dprof/cli.hpp"
#include "dprof/cohort.hpp"
#include "dprof/likelihood.hpp"
#include "dprof/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dprof::cli {

inline constexpr const char* kToolVersion = "1.0.0";

// A stage input that an earlier stage has not produced yet.
class MissingInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Context {
    RunConfig config;
    std::string config_sha256;
    std::vector<std::string> argv;
    bool quiet = false;

    std::filesystem::path work(const std::string& rel) const { return config.work_dir / rel; }
    std::filesystem::path cohort_path() const {
        return config.cohort_file.empty() ? work("cohort.jsonl") : config.cohort_file;
    }
    void log(const std::string& stage, const std::string& message) const;
};

// Tracks the inputs and outputs of one stage and writes its manifest.
class StageRun {
public:
    StageRun(Context& ctx, std::string stage);

    Context& ctx;

    // Reads a file and records its digest. A missing file raises MissingInput
    // naming the stage that produces it.
    std::string read(const std::filesystem::path& path);

    const MarkerCatalog& catalog();
    std::vector<EncounterRecord> records();
    std::vector<LabeledEncounter> labeled();
    PreparedData prepared();
    ProfilerEnsemble ensemble();
    ScoredCohort dev_scores();

    void write(const std::string& rel, std::string_view contents);
    void seed(const std::string& name, std::uint64_t value);
    void note(const std::string& key, nlohmann::json value);
    void finish();

private:
    std::string key_for(const std::filesystem::path& path) const;

    std::string stage_;
    nlohmann::json inputs_ = nlohmann::json::object();
    nlohmann::json outputs_ = nlohmann::json::object();
    nlohmann::json seeds_ = nlohmann::json::object();
    nlohmann::json notes_ = nlohmann::json::object();
    std::optional<MarkerCatalog> catalog_;
};

std::string fmt(double v, int precision = 10);
std::string scored_cohort_csv(const ScoredCohort& cohort);
ScoredCohort parse_scored_cohort_csv(std::string_view text);

void run_synth(Context& ctx);
void run_cohort(Context& ctx);
void run_prepare(Context& ctx);
void run_train(Context& ctx);
void run_predict(Context& ctx, const std::filesystem::path& patient, const std::vector<std::filesystem::path>& runs,
                 const std::filesystem::path& out_dir);
void run_lr(Context& ctx);
void run_evaluate(Context& ctx);
void run_explain(Context& ctx);
void run_comorbid(Context& ctx);
void run_report(Context& ctx);

}  // namespace dprof::cli
