#include "context.hpp"

#include "dprof/error.hpp"
#include "dprof/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace dprof::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string config_digest(const RunConfig& config) {
    json doc = config.to_json();
    // Neither changes any output.
    doc["train"].erase("threads");
    doc["paths"].erase("work_dir");
    return io::sha256_hex(doc.dump());
}

}  // namespace

int dispatch(int argc, char** argv) {
    CLI::App app{"Blood-marker cancer risk profiling pipeline", "dprof"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string work_dir;
    std::uint64_t seed = 0;
    std::string cancer;
    std::vector<std::string> overrides;
    bool quiet = false;
    app.add_option("--config", config_path, "Run configuration (JSON); defaults to $DPROF_CONFIG");
    auto* seed_opt = app.add_option("--seed", seed, "Master seed");
    app.add_option("--work-dir", work_dir, "Directory for stage outputs");
    app.add_option("--cancer-type", cancer, "colorectal, liver or lung")
        ->check(CLI::IsMember({"colorectal", "liver", "lung"}));
    app.add_option("--set", overrides, "Override a config field: key.path=value (repeatable)")
        ->allow_extra_args(false);
    app.add_flag("-q,--quiet", quiet, "No progress messages");

    app.add_subcommand("synth", "Generate a synthetic encounter cohort");
    app.add_subcommand("cohort", "Select, label and split the study cohort");
    app.add_subcommand("prepare", "Fit normalization on the development split");
    auto* train = app.add_subcommand("train", "Train the profiler ensemble");
    unsigned threads = 0;
    auto* threads_opt = train->add_option("--threads", threads, "Members trained in parallel");
    auto* predict = app.add_subcommand("predict", "Likelihood-ratio report for one patient");
    std::string patient;
    std::vector<std::string> runs;
    std::string out_dir;
    predict->add_option("--patient", patient, "Patient encounters (JSON object, array or JSON Lines)")->required();
    predict->add_option("--run", runs, "Trained run directory, one per cancer type (repeatable)")
        ->allow_extra_args(false);
    predict->add_option("--out", out_dir, "Output directory for the report");
    app.add_subcommand("lr", "Likelihood-ratio curves, baselines and member ribbons");
    app.add_subcommand("evaluate", "ROC, precision-recall and robustness on the validation split");
    app.add_subcommand("explain", "Shapley attributions of the normalized likelihood ratio");
    app.add_subcommand("comorbid", "Phecode comorbidity enrichment");
    app.add_subcommand("report", "Run missing stages and assemble the report bundle");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
            std::cerr << "dprof: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
            return kUsage;
        }
        std::cerr << "dprof: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        if (config_path.empty()) {
            if (const char* env = std::getenv("DPROF_CONFIG")) config_path = env;
        }
        json doc = json::object();
        fs::path base = fs::current_path();
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw ValidationError("config file " + config_path + " does not exist");
            try {
                doc = json::parse(io::read_file(config_path));
            } catch (const json::exception& e) {
                throw ParseError("config file " + config_path + ": " + e.what());
            }
            base = fs::absolute(config_path).parent_path();
        }
        for (const auto& o : overrides) apply_override(doc, o);
        if (*seed_opt) doc["seed"] = seed;
        if (!cancer.empty()) doc["cancer_type"] = cancer;
        if (!work_dir.empty()) doc["paths"]["work_dir"] = fs::absolute(work_dir).string();
        if (*threads_opt) doc["train"]["threads"] = threads;

        Context ctx;
        ctx.config = run_config_from_json(doc, base);
        ctx.config_sha256 = config_digest(ctx.config);
        ctx.argv.assign(argv, argv + argc);
        ctx.quiet = quiet;

        if (command == "synth") run_synth(ctx);
        else if (command == "cohort") run_cohort(ctx);
        else if (command == "prepare") run_prepare(ctx);
        else if (command == "train") run_train(ctx);
        else if (command == "predict") {
            std::vector<fs::path> dirs(runs.begin(), runs.end());
            run_predict(ctx, patient, dirs, out_dir);
        } else if (command == "lr") run_lr(ctx);
        else if (command == "evaluate") run_evaluate(ctx);
        else if (command == "explain") run_explain(ctx);
        else if (command == "comorbid") run_comorbid(ctx);
        else if (command == "report") run_report(ctx);
        return kOk;
    } catch (const ValidationError& e) {
        std::cerr << "dprof " << command << ": invalid input: " << e.what() << "\n";
        return kValidation;
    } catch (const ParseError& e) {
        std::cerr << "dprof " << command << ": parse error: " << e.what() << "\n";
        return kValidation;
    } catch (const MissingInput& e) {
        std::cerr << "dprof " << command << ": " << e.what() << "\n";
        return kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "dprof " << command << ": error: " << e.what() << "\n";
        return kRuntime;
    }
}

}  // namespace dprof::cli
