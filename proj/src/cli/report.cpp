#include "context.hpp"

#include "dprof/io.hpp"

#include <sstream>

namespace dprof::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct StageDef {
    const char* name;
    void (*run)(Context&);
};

constexpr StageDef kStages[] = {
    {"synth", run_synth},       {"cohort", run_cohort}, {"prepare", run_prepare},  {"train", run_train},
    {"lr", run_lr},             {"evaluate", run_evaluate}, {"explain", run_explain}, {"comorbid", run_comorbid},
};

// A stage is current when its manifest matches the config and every output
// still has the recorded digest.
bool stage_current(const Context& ctx, const std::string& stage) {
    const auto path = ctx.work("manifests/" + stage + ".json");
    if (!fs::exists(path)) return false;
    try {
        const auto m = json::parse(io::read_file(path));
        if (m.at("config_sha256") != ctx.config_sha256 || m.at("tool_version") != kToolVersion) return false;
        for (const auto& [rel, digest] : m.at("outputs").items()) {
            const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : ctx.work(rel);
            if (!fs::exists(p) || io::sha256_hex(io::read_file(p)) != digest.get<std::string>()) return false;
        }
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

const char* const kPerformance[] = {"roc.csv",          "pr.csv",       "lr_curve.csv", "lr_members.csv",
                                    "lr_baselines.csv", "lr_null_band.csv", "subgroups.csv", "metrics.json",
                                    "roc.svg",          "pr.svg",       "lr_curve.svg"};
const char* const kExplanations[] = {"shap_summary.json", "shap_beeswarm.tsv", "shap_top.csv"};
const char* const kComorbidities[] = {"comorbidities.tsv", "comorbidities.json", "comorbid_subgroups.csv"};
const char* const kCohort[] = {"consort.tsv", "strata.tsv", "training_log.tsv"};

}  // namespace

void run_report(Context& ctx) {
    bool rerun = false;
    for (const auto& stage : kStages) {
        const std::string name = stage.name;
        if (name == "synth" && !ctx.config.cohort_file.empty()) continue;
        if (!rerun && stage_current(ctx, name)) {
            ctx.log("report", name + " is current");
            continue;
        }
        stage.run(ctx);
        rerun = true;
    }

    StageRun run(ctx, "report");
    auto copy = [&](const std::string& file, const std::string& dir) {
        const auto src = ctx.work(file);
        if (!fs::exists(src)) return false;
        run.write("report/" + dir + "/" + file, run.read(src));
        return true;
    };
    for (const char* f : kPerformance) copy(f, "performance");
    for (const char* f : kExplanations) copy(f, "explanations");
    std::vector<json> waterfalls;
    for (int k = 1;; ++k) {
        const auto base = "waterfall_" + std::to_string(k);
        if (!copy(base + ".json", "explanations")) break;
        copy(base + ".tsv", "explanations");
        waterfalls.push_back(json::parse(io::read_file(ctx.work(base + ".json"))));
    }
    for (const char* f : kComorbidities) copy(f, "comorbidities");
    for (const char* f : kCohort) copy(f, "cohort");

    const auto metrics = json::parse(io::read_file(ctx.work("metrics.json")));
    const auto shap = json::parse(io::read_file(ctx.work("shap_summary.json")));
    const auto comorbid = json::parse(io::read_file(ctx.work("comorbidities.json")));

    json manifests = json::object();
    for (const auto& stage : kStages) {
        const auto p = ctx.work(std::string("manifests/") + stage.name + ".json");
        if (fs::exists(p)) manifests[stage.name] = io::sha256_hex(io::read_file(p));
    }
    json top_features = json::array();
    for (const auto& r : shap.at("ranking")) {
        if (r.at("top").get<bool>()) top_features.push_back({{"feature", r.at("feature")}, {"mean_abs_phi", r.at("mean_abs_phi")}});
    }
    json top_comorbid = json::array();
    for (const auto& r : comorbid.at("ranked")) {
        if (top_comorbid.size() == 10) break;
        top_comorbid.push_back(r);
    }
    const json report{{"cancer_type", metrics.at("cancer_type")},
                      {"master_seed", ctx.config.seed},
                      {"config_sha256", ctx.config_sha256},
                      {"performance", metrics},
                      {"top_features", top_features},
                      {"waterfalls", waterfalls.size()},
                      {"comorbidities", top_comorbid},
                      {"stage_manifests", manifests}};
    run.write("report/report.json", report.dump(2) + "\n");

    std::ostringstream md;
    md << "# Risk profile report: " << metrics.at("cancer_type").get<std::string>() << "\n\n";
    md << "Master seed " << ctx.config.seed << ", config sha256 `" << ctx.config_sha256 << "`.\n\n";
    md << "## Performance on the validation split\n\n";
    md << "| metric | value |\n|---|---|\n";
    md << "| encounters | " << metrics.at("n") << " |\n";
    md << "| positives | " << metrics.at("positives") << " |\n";
    md << "| prevalence | " << fmt(metrics.at("prevalence").get<double>(), 4) << " |\n";
    md << "| AUC | " << fmt(metrics.at("auc").get<double>(), 4) << " |\n";
    md << "| average precision | " << fmt(metrics.at("ap").get<double>(), 4) << " |\n";
    for (const auto& p : metrics.at("lr_at")) {
        md << "| LR at " << fmt(p.at("threshold").get<double>(), 2) << " | " << fmt(p.at("lr").get<double>(), 4)
           << " (n=" << p.at("n_above") << ") |\n";
    }
    const auto& rob = metrics.at("robustness");
    md << "| AUC after deleting " << fmt(rob.at("deletion_fraction").get<double>(), 2) << " of observed values | "
       << fmt(rob.at("auc_deleted").get<double>(), 4) << " |\n\n";
    md << "### Baselines\n\n| method | n | AUC | AP |\n|---|---|---|---|\n";
    for (const auto& b : metrics.at("baselines")) {
        md << "| " << b.at("name").get<std::string>() << " | " << b.at("n") << " | "
           << (b.contains("auc") ? fmt(b.at("auc").get<double>(), 4) : std::string("NA")) << " | "
           << (b.contains("ap") ? fmt(b.at("ap").get<double>(), 4) : std::string("NA")) << " |\n";
    }
    md << "\n### Subgroups\n\n| subgroup | status | n | AUC |\n|---|---|---|---|\n";
    for (const auto& g : metrics.at("subgroups")) {
        md << "| " << g.at("subgroup").get<std::string>() << " | " << g.at("status").get<std::string>() << " | "
           << (g.contains("n") ? g.at("n").dump() : std::string("NA")) << " | "
           << (g.contains("auc") ? fmt(g.at("auc").get<double>(), 4) : std::string("NA")) << " |\n";
    }
    md << "\n## Marker attributions (mean |Shapley value| of the normalized LR)\n\n| rank | feature | mean abs phi |\n|---|---|---|\n";
    int rank = 1;
    for (const auto& f : top_features) {
        md << "| " << rank++ << " | " << f.at("feature").get<std::string>() << " | "
           << fmt(f.at("mean_abs_phi").get<double>(), 4) << " |\n";
    }
    md << "\n## Comorbidities (Fisher exact test, cancer vs control)\n\n";
    md << "| phecode | label | cancer | control | odds ratio | -log10 p |\n|---|---|---|---|---|---|\n";
    for (const auto& r : top_comorbid) {
        md << "| " << r.at("phecode").get<std::string>() << " | " << r.at("label").get<std::string>() << " | "
           << r.at("counts").at("cancer_with") << " | " << r.at("counts").at("control_with") << " | " << fmt(r.at("odds_ratio").get<double>(), 4) << " | "
           << fmt(r.at("neg_log10_p").get<double>(), 4) << " |\n";
    }
    md << "\nCurves, ribbons and per-sample waterfalls are in the performance/, explanations/ and comorbidities/ "
          "folders next to this file.\n";
    run.write("report/report.md", md.str());
    run.finish();
    ctx.log("report", "bundle written to " + ctx.work("report").string());
}

}  // namespace dprof::cli
