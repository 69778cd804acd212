#include "context.hpp"

#include "dprof/error.hpp"
#include "dprof/io.hpp"
#include "dprof/synth.hpp"

#include <algorithm>
#include <cctype>
#include <iostream>
#include <sstream>
#include <tuple>

namespace dprof::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void run_synth(Context& ctx) {
    StageRun run(ctx, "synth");
    const auto records = synthesize_cohort(run.catalog(), ctx.config.synth);
    run.seed("synth", ctx.config.synth.seed);
    run.write("cohort.jsonl", records_to_jsonl(records));
    run.note("encounters", records.size());
    run.finish();
    ctx.log("synth", std::to_string(records.size()) + " encounters");
}

void run_cohort(Context& ctx) {
    StageRun run(ctx, "cohort");
    const auto& cat = run.catalog();
    const auto records = run.records();
    for (const auto& r : records) {
        try {
            validate_record(r, cat);
        } catch (const ValidationError& e) {
            throw ValidationError("encounter '" + r.encounter_id + "': " + e.what());
        }
    }
    const auto& o = ctx.config.cohort;
    auto spec = CohortSpec::defaults(ctx.config.cancer_type);
    spec.min_markers = o.min_markers;
    spec.age_low = o.age_low;
    spec.age_high = o.age_high;
    spec.confirmation_required = o.confirmation_required;
    spec.lookback_days = o.lookback_days;
    spec.infection_window_days = o.infection_window_days;
    spec.count_derived_markers = o.count_derived_markers;
    spec.validate();
    SplitParams split;
    split.ratio_development = o.ratio_development;
    split.ratio_validation = o.ratio_validation;
    split.age_bin_width_years = o.age_bin_width_years;
    split.seed = derive_seed(ctx.config.seed, "split");
    run.seed("split", split.seed);

    const auto result = run_cohort_pipeline(records, spec, split, DerivedRules::for_catalog(cat));
    run.write("labeled.jsonl", labeled_to_jsonl(result.encounters));
    run.write("consort.tsv", consort_to_tsv(result.consort));
    std::string strata = "stratum\tpatients\tdevelopment\tvalidation\tfallback\n";
    for (const auto& s : result.strata) {
        strata += s.key + "\t" + std::to_string(s.patients) + "\t" + std::to_string(s.development) + "\t" +
                  std::to_string(s.validation) + "\t" + (s.fallback ? "1" : "0") + "\n";
    }
    run.write("strata.tsv", strata);
    const auto final_stage = tally("final", result.encounters);
    run.note("positive_patients", final_stage.positive_patients);
    run.note("negative_patients", final_stage.negative_patients);
    run.finish();
    ctx.log("cohort", std::to_string(result.encounters.size()) + " labeled encounters, " +
                          std::to_string(final_stage.positive_patients) + " positive patients");
}

void run_prepare(Context& ctx) {
    StageRun run(ctx, "prepare");
    const auto labeled = run.labeled();
    const auto prep = prepare_datasets(labeled, run.catalog(), ctx.config.prepare);
    run.write("normalization.json", to_json(prep.normalization).dump(2) + "\n");
    run.note("development_rows", prep.development.data.size());
    run.note("validation_rows", prep.validation.data.size());
    run.finish();
    ctx.log("prepare", std::to_string(prep.development.data.size()) + " development rows, " +
                           std::to_string(prep.validation.data.size()) + " validation rows");
}

void run_train(Context& ctx) {
    StageRun run(ctx, "train");
    const auto prep = run.prepared();
    ProfilerConfig pc = ctx.config.train;
    pc.input_dim = prep.normalization.dim();
    pc.seed = derive_seed(ctx.config.seed, "profiler");
    pc.validate();
    run.seed("profiler", pc.seed);
    run.seed("ensemble", ctx.config.ensemble.master_seed);
    ctx.log("train", std::to_string(ctx.config.ensemble.members) + " members on " +
                         std::to_string(prep.development.data.size()) + " rows");

    std::vector<TrainLogRow> log;
    auto ens = train_ensemble(prep.development.data, pc, ctx.config.ensemble, &log);
    ens.normalization = prep.normalization;
    ens.catalog_version = run.catalog().version();
    ens.cancer_type = std::string(to_string(ctx.config.cancer_type));

    run.write("model.json", serialize_ensemble(ens));
    run.write("training_log.tsv", training_log_tsv(log));
    run.write("dev_scores.csv", scored_cohort_csv(score_cohort(ens, prep.development.data)));
    run.finish();
    ctx.log("train", "model written");
}

namespace {

std::vector<EncounterRecord> parse_patient_file(const std::string& text) {
    std::vector<EncounterRecord> out;
    json doc;
    bool single = true;
    try {
        doc = json::parse(text);
    } catch (const json::exception&) {
        single = false;
    }
    try {
        if (single && doc.is_array()) {
            for (const auto& r : doc) out.push_back(record_from_json(r));
        } else if (single) {
            out.push_back(record_from_json(doc));
        } else {
            std::istringstream in(text);
            out = records_from_jsonl(in);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("patient file: ") + e.what());
    }
    if (out.empty()) throw ValidationError("patient file holds no encounter");
    for (const auto& r : out) {
        if (r.patient_id != out.front().patient_id) throw ValidationError("patient file mixes patient ids");
    }
    return out;
}

std::string safe_name(const std::string& id) {
    std::string s;
    for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return s.empty() ? "patient" : s;
}

}  // namespace

void run_predict(Context& ctx, const fs::path& patient, const std::vector<fs::path>& runs, const fs::path& out_dir) {
    StageRun run(ctx, "predict");
    const auto& cat = run.catalog();
    if (!fs::exists(patient)) throw ValidationError("patient file " + patient.string() + " does not exist");
    auto encounters = parse_patient_file(run.read(patient));
    for (const auto& r : encounters) validate_record(r, cat);
    // Latest encounter; the encounter id breaks date ties.
    const auto latest = *std::max_element(encounters.begin(), encounters.end(), [](const auto& a, const auto& b) {
        return std::tie(a.date, a.encounter_id) < std::tie(b.date, b.encounter_id);
    });
    const auto record = complete_derived(latest, DerivedRules::for_catalog(cat));

    LrReport report;
    report.patient_id = record.patient_id;
    std::vector<fs::path> dirs = runs;
    if (dirs.empty()) dirs.push_back(ctx.config.work_dir);
    for (const auto& dir : dirs) {
        const auto model_path = dir / "model.json";
        const auto scores_path = dir / "dev_scores.csv";
        const auto ens = deserialize_ensemble(run.read(model_path));
        if (ens.catalog_version != cat.version()) {
            throw IntegrityError(model_path.string() + " was trained with catalog version '" + ens.catalog_version + "'");
        }
        const auto dev = parse_scored_cohort_csv(run.read(scores_path));
        const auto assessment = predict(ens, vectorize(record, ens.normalization));
        report.entries.push_back(build_lr_entry(ens.cancer_type, dev, assessment, ctx.config.min_similar));
    }
    const auto text = render_lr_report(report);
    const auto base = (out_dir.empty() ? fs::path("predictions") : out_dir) / ("lr_report_" + safe_name(record.patient_id));
    run.write(base.generic_string() + ".json", to_json(report).dump(2) + "\n");
    run.write(base.generic_string() + ".txt", text);
    run.note("patient_id", record.patient_id);
    run.note("encounter_id", record.encounter_id);
    run.finish();
    std::cout << text;
}

}  // namespace dprof::cli
