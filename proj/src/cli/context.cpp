#include "context.hpp"

#include "dprof/error.hpp"
#include "dprof/io.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

namespace dprof::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void Context::log(const std::string& stage, const std::string& message) const {
    if (!quiet) std::cerr << "[" << stage << "] " << message << "\n";
}

std::string fmt(double v, int precision) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

std::string scored_cohort_csv(const ScoredCohort& cohort) {
    std::string out = "patient_id,score,label\n";
    for (const auto& e : cohort.entries) out += e.patient_id + "," + fmt(e.score, 17) + "," + (e.label ? "1" : "0") + "\n";
    return out;
}

ScoredCohort parse_scored_cohort_csv(std::string_view text) {
    ScoredCohort c;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;
        const auto a = line.find(',');
        const auto b = line.rfind(',');
        if (a == std::string::npos || a == b) throw ParseError("scores line " + std::to_string(lineno) + ": expected 3 fields");
        ScoredEntry e;
        e.patient_id = line.substr(0, a);
        try {
            e.score = std::stod(line.substr(a + 1, b - a - 1));
        } catch (const std::exception&) {
            throw ParseError("scores line " + std::to_string(lineno) + ": bad score");
        }
        e.label = line.substr(b + 1) == "1";
        c.entries.push_back(std::move(e));
    }
    return c;
}

StageRun::StageRun(Context& c, std::string stage) : ctx(c), stage_(std::move(stage)) {
    fs::create_directories(ctx.config.work_dir);
}

std::string StageRun::key_for(const fs::path& path) const {
    const auto rel = path.lexically_relative(ctx.config.work_dir);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return path.generic_string();
}

std::string StageRun::read(const fs::path& path) {
    if (!fs::exists(path)) {
        const auto name = path.filename().string();
        std::string producer;
        if (name == "cohort.jsonl") producer = "synth";
        else if (name == "labeled.jsonl") producer = "cohort";
        else if (name == "normalization.json") producer = "prepare";
        else if (name == "model.json" || name == "dev_scores.csv") producer = "train";
        std::string msg = "stage '" + stage_ + "' needs " + path.string();
        if (!producer.empty()) msg += "; run 'dprof " + producer + "' first";
        throw MissingInput(msg);
    }
    std::string text = io::read_file(path);
    inputs_[key_for(path)] = io::sha256_hex(text);
    return text;
}

const MarkerCatalog& StageRun::catalog() {
    if (!catalog_) catalog_ = parse_marker_catalog(read(ctx.config.catalog));
    return *catalog_;
}

std::vector<EncounterRecord> StageRun::records() {
    std::istringstream in(read(ctx.cohort_path()));
    return records_from_jsonl(in);
}

std::vector<LabeledEncounter> StageRun::labeled() {
    std::istringstream in(read(ctx.work("labeled.jsonl")));
    std::vector<LabeledEncounter> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(labeled_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError("labeled.jsonl line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

PreparedData StageRun::prepared() {
    const auto labeled_encounters = labeled();
    const auto saved = normalization_from_json(json::parse(read(ctx.work("normalization.json"))));
    auto prep = prepare_datasets(labeled_encounters, catalog(), ctx.config.prepare);
    if (!(prep.normalization == saved)) {
        throw IntegrityError("normalization.json does not match labeled.jsonl; rerun 'dprof prepare'");
    }
    return prep;
}

ProfilerEnsemble StageRun::ensemble() {
    auto ens = deserialize_ensemble(read(ctx.work("model.json")));
    if (ens.catalog_version != catalog().version()) {
        throw IntegrityError("model.json was trained with catalog version '" + ens.catalog_version + "', loaded '" +
                             catalog().version() + "'");
    }
    return ens;
}

ScoredCohort StageRun::dev_scores() { return parse_scored_cohort_csv(read(ctx.work("dev_scores.csv"))); }

void StageRun::write(const std::string& rel, std::string_view contents) {
    const auto path = ctx.work(rel);
    fs::create_directories(path.parent_path());
    io::write_file_atomic(path, contents);
    outputs_[key_for(path)] = io::sha256_hex(contents);
}

void StageRun::seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }

void StageRun::note(const std::string& key, json value) { notes_[key] = std::move(value); }

void StageRun::finish() {
    json m{{"stage", stage_},
           {"tool_version", kToolVersion},
           {"config_sha256", ctx.config_sha256},
           {"config", ctx.config.to_json()},
           {"master_seed", ctx.config.seed},
           {"seeds", seeds_},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"summary", notes_},
           {"argv", ctx.argv}};
    const auto path = ctx.work("manifests/" + stage_ + ".json");
    fs::create_directories(path.parent_path());
    io::write_file_atomic(path, m.dump(2) + "\n");
}

}  // namespace dprof::cli
