#include "dprof/cli.hpp"

#include "dprof/error.hpp"

#include <set>

namespace dprof::cli {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section, const std::set<std::string>& known) {
    if (!j.is_object()) throw ValidationError(section + ": expected an object");
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ValidationError("config field '" + (section.empty() ? k : section + "." + k) + "' is unknown");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config field '" + section + "." + key + "' has the wrong type");
    }
}

void require(bool ok, const std::string& field, const std::string& why) {
    if (!ok) throw ValidationError("config field '" + field + "' " + why);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    check_keys(j, "", {"seed", "cancer_type", "paths", "synth", "cohort", "prepare", "train", "evaluate", "explain",
                       "comorbid", "predict"});
    RunConfig c;
    c.catalog = std::filesystem::path(DPROF_DATA_DIR) / "marker_catalog.json";
    c.phecode_map = std::filesystem::path(DPROF_DATA_DIR) / "phecode_demo.tsv";
    read(j, "seed", c.seed, "");
    if (j.contains("cancer_type")) {
        try {
            c.cancer_type = cancer_type_from_string(j["cancer_type"].get<std::string>());
        } catch (const std::exception&) {
            throw ValidationError("config field 'cancer_type' must be colorectal, liver or lung");
        }
    }
    if (j.contains("paths")) {
        const auto& p = j["paths"];
        check_keys(p, "paths", {"catalog", "phecode_map", "cohort", "work_dir"});
        std::string s;
        if (p.contains("catalog")) { read(p, "catalog", s, "paths"); c.catalog = resolve(base_dir, s); }
        if (p.contains("phecode_map")) { read(p, "phecode_map", s, "paths"); c.phecode_map = resolve(base_dir, s); }
        if (p.contains("cohort")) { read(p, "cohort", s, "paths"); c.cohort_file = resolve(base_dir, s); }
        if (p.contains("work_dir")) { read(p, "work_dir", s, "paths"); c.work_dir = resolve(base_dir, s); }
    }
    if (j.contains("synth")) {
        check_keys(j["synth"], "synth",
                   {"n_per_class", "missing_cmp", "missing_cbc", "panel_dropout", "min_encounters", "max_encounters",
                    "diagnostic_only_fraction", "unscreened_fraction", "unconfirmed_fraction", "control_screening_prob",
                    "chronic_disease_fraction", "infection_rate", "class_dependent_missingness", "leakage_extra_missing",
                    "comorbidities", "seed"});
        if (j["synth"].contains("seed")) throw ValidationError("config field 'synth.seed' is derived from 'seed'; set that instead");
        c.synth = synth_config_from_json(j["synth"]);
    } else {
        c.synth.n_per_class = {{"no_cancer", 3000}, {"liver", 300}};
    }
    c.synth.seed = derive_seed(c.seed, "synth");
    c.synth.validate();

    if (j.contains("cohort")) {
        const auto& s = j["cohort"];
        check_keys(s, "cohort", {"min_markers", "age_low", "age_high", "confirmation_required", "lookback_days",
                                 "infection_window_days", "count_derived_markers", "ratio", "age_bin_width_years"});
        auto& o = c.cohort;
        read(s, "min_markers", o.min_markers, "cohort");
        read(s, "age_low", o.age_low, "cohort");
        read(s, "age_high", o.age_high, "cohort");
        read(s, "confirmation_required", o.confirmation_required, "cohort");
        read(s, "lookback_days", o.lookback_days, "cohort");
        read(s, "infection_window_days", o.infection_window_days, "cohort");
        read(s, "count_derived_markers", o.count_derived_markers, "cohort");
        read(s, "age_bin_width_years", o.age_bin_width_years, "cohort");
        if (s.contains("ratio")) {
            std::vector<int> r;
            read(s, "ratio", r, "cohort");
            require(r.size() == 2, "cohort.ratio", "must hold two integers");
            o.ratio_development = r[0];
            o.ratio_validation = r[1];
        }
        require(o.min_markers >= 1, "cohort.min_markers", "must be >= 1");
        require(o.age_low < o.age_high, "cohort.age_low", "must be below age_high");
        require(o.ratio_development > 0 && o.ratio_validation > 0, "cohort.ratio", "components must be positive");
        require(o.age_bin_width_years > 0, "cohort.age_bin_width_years", "must be positive");
        require(o.lookback_days > 0, "cohort.lookback_days", "must be positive");
        require(o.infection_window_days >= 0, "cohort.infection_window_days", "must be >= 0");
    }
    if (j.contains("prepare")) {
        check_keys(j["prepare"], "prepare", {"scale_demographics"});
        read(j["prepare"], "scale_demographics", c.prepare.scale_demographics, "prepare");
    }
    if (j.contains("train")) {
        json t = j["train"];
        json ens = json::object();
        for (const char* k : {"members", "subsample_fraction", "ci_multiplier", "threads"}) {
            if (t.contains(k)) {
                ens[k] = t[k];
                t.erase(k);
            }
        }
        if (t.contains("seed")) throw ValidationError("config field 'train.seed' is derived from 'seed'; set that instead");
        if (t.contains("input_dim")) throw ValidationError("config field 'train.input_dim' is set from the catalog");
        try {
            c.train = profiler_config_from_json(t);
        } catch (const ValidationError& e) {
            throw ValidationError(std::string("train: ") + e.what());
        }
        read(ens, "members", c.ensemble.members, "train");
        read(ens, "subsample_fraction", c.ensemble.subsample_fraction, "train");
        read(ens, "ci_multiplier", c.ensemble.ci_multiplier, "train");
        read(ens, "threads", c.ensemble.threads, "train");
    }
    c.ensemble.master_seed = derive_seed(c.seed, "train");
    require(c.ensemble.members >= 1, "train.members", "must be >= 1");
    require(c.ensemble.subsample_fraction > 0.0 && c.ensemble.subsample_fraction <= 1.0, "train.subsample_fraction",
            "must be in (0, 1]");
    require(c.ensemble.ci_multiplier >= 0.0, "train.ci_multiplier", "must be >= 0");
    {
        ProfilerConfig probe = c.train;
        probe.input_dim = 1;
        probe.validate();
    }
    if (j.contains("evaluate")) {
        const auto& s = j["evaluate"];
        check_keys(s, "evaluate", {"thresholds", "baseline_markers", "deletion_fraction", "min_subgroup", "permutations"});
        read(s, "thresholds", c.evaluate.thresholds, "evaluate");
        read(s, "baseline_markers", c.evaluate.baseline_markers, "evaluate");
        read(s, "deletion_fraction", c.evaluate.deletion_fraction, "evaluate");
        read(s, "min_subgroup", c.evaluate.min_subgroup, "evaluate");
        read(s, "permutations", c.evaluate.permutations, "evaluate");
        require(c.evaluate.permutations >= 20, "evaluate.permutations", "must be >= 20");
        require(c.evaluate.thresholds >= 2, "evaluate.thresholds", "must be >= 2");
        require(c.evaluate.deletion_fraction >= 0.0 && c.evaluate.deletion_fraction < 1.0, "evaluate.deletion_fraction",
                "must be in [0, 1)");
    }
    if (j.contains("explain")) {
        const auto& s = j["explain"];
        check_keys(s, "explain", {"background", "samples", "permutation_pairs", "exact_max_features", "top_k", "waterfalls",
                                  "min_observed"});
        auto& o = c.explain;
        read(s, "background", o.background, "explain");
        read(s, "samples", o.samples, "explain");
        read(s, "permutation_pairs", o.permutation_pairs, "explain");
        read(s, "exact_max_features", o.exact_max_features, "explain");
        read(s, "top_k", o.top_k, "explain");
        read(s, "waterfalls", o.waterfalls, "explain");
        read(s, "min_observed", o.min_observed, "explain");
        require(o.background >= 1, "explain.background", "must be >= 1");
        require(o.samples >= 1, "explain.samples", "must be >= 1");
        require(o.permutation_pairs >= 2, "explain.permutation_pairs", "must be >= 2");
        require(o.exact_max_features <= 20, "explain.exact_max_features", "must be <= 20");
    }
    if (j.contains("comorbid")) {
        const auto& s = j["comorbid"];
        check_keys(s, "comorbid", {"min_each", "subgroups", "min_subgroup"});
        read(s, "min_each", c.comorbid.min_each, "comorbid");
        read(s, "subgroups", c.comorbid.subgroups, "comorbid");
        read(s, "min_subgroup", c.comorbid.min_subgroup, "comorbid");
        require(c.comorbid.min_each >= 0, "comorbid.min_each", "must be >= 0");
    }
    if (j.contains("predict")) {
        check_keys(j["predict"], "predict", {"min_similar"});
        read(j["predict"], "min_similar", c.min_similar, "predict");
        require(c.min_similar >= 1, "predict.min_similar", "must be >= 1");
    }
    c.explain.min_similar = c.min_similar;
    return c;
}

json RunConfig::to_json() const {
    json train_j = dprof::to_json(train);
    train_j.erase("input_dim");
    train_j.erase("seed");
    train_j["members"] = ensemble.members;
    train_j["subsample_fraction"] = ensemble.subsample_fraction;
    train_j["ci_multiplier"] = ensemble.ci_multiplier;
    train_j["threads"] = ensemble.threads;
    json synth_j = dprof::to_json(synth);
    synth_j.erase("seed");
    return json{
        {"seed", seed},
        {"cancer_type", std::string(dprof::to_string(cancer_type))},
        {"paths",
         {{"catalog", catalog.string()},
          {"phecode_map", phecode_map.string()},
          {"cohort", cohort_file.string()},
          {"work_dir", work_dir.string()}}},
        {"synth", synth_j},
        {"cohort",
         {{"min_markers", cohort.min_markers},
          {"age_low", cohort.age_low},
          {"age_high", cohort.age_high},
          {"confirmation_required", cohort.confirmation_required},
          {"lookback_days", cohort.lookback_days},
          {"infection_window_days", cohort.infection_window_days},
          {"count_derived_markers", cohort.count_derived_markers},
          {"ratio", {cohort.ratio_development, cohort.ratio_validation}},
          {"age_bin_width_years", cohort.age_bin_width_years}}},
        {"prepare", {{"scale_demographics", prepare.scale_demographics}}},
        {"train", train_j},
        {"evaluate",
         {{"thresholds", evaluate.thresholds},
          {"baseline_markers", evaluate.baseline_markers},
          {"deletion_fraction", evaluate.deletion_fraction},
          {"min_subgroup", evaluate.min_subgroup},
          {"permutations", evaluate.permutations}}},
        {"explain",
         {{"background", explain.background},
          {"samples", explain.samples},
          {"permutation_pairs", explain.permutation_pairs},
          {"exact_max_features", explain.exact_max_features},
          {"top_k", explain.top_k},
          {"waterfalls", explain.waterfalls},
          {"min_observed", explain.min_observed}}},
        {"comorbid",
         {{"min_each", comorbid.min_each}, {"subgroups", comorbid.subgroups}, {"min_subgroup", comorbid.min_subgroup}}},
        {"predict", {{"min_similar", min_similar}}}};
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' must look like key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ValidationError("override '" + assignment + "' has an empty key segment");
        if (!node->is_object()) *node = json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

}  // namespace dprof::cli
