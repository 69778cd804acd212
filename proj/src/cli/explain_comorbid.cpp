#include "analysis.hpp"

#include "dprof/comorbid.hpp"
#include "dprof/error.hpp"
#include "dprof/explain.hpp"
#include "dprof/io.hpp"
#include "dprof/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace dprof::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void run_explain(Context& ctx) {
    StageRun run(ctx, "explain");
    const auto& cfg = ctx.config;
    const auto& opt = cfg.explain;
    const auto s = score_validation(run);
    const auto dev_scores = run.dev_scores();
    const NormalizedLrFn target(s.ensemble, dev_scores, opt.min_similar);
    const BatchFn fn = [&target](const nn::Tensor2& v, const nn::Tensor2& m) { return target(v, m); };
    const auto features = s.prep.normalization.feature_order();

    const std::uint64_t bg_seed = derive_seed(cfg.seed, "background");
    const auto bg = s.prep.development.data.subset(select_background(s.prep.development.data, opt.background, bg_seed));

    const auto& val = s.prep.validation.data;
    std::vector<std::size_t> positives;
    for (std::size_t i = 0; i < val.size(); ++i) {
        if (val.labels[i] > 0.5) positives.push_back(i);
    }
    if (positives.empty()) throw ValidationError("explain: validation split has no positive encounters");

    const std::uint64_t sample_seed = derive_seed(cfg.seed, "explain_samples");
    std::vector<std::size_t> drawn = positives;
    Rng rng(sample_seed);
    rng.shuffle(std::span<std::size_t>(drawn));
    drawn.resize(std::min(drawn.size(), opt.samples));
    std::sort(drawn.begin(), drawn.end());

    ShapConfig sc;
    sc.exact_max_features = opt.exact_max_features;
    sc.permutation_pairs = opt.permutation_pairs;
    sc.seed = derive_seed(cfg.seed, "shap");
    ctx.log("explain", "Shapley values for " + std::to_string(drawn.size()) + " cases against " +
                           std::to_string(bg.size()) + " background rows");
    const auto summary = cohort_summary(fn, val.subset(drawn), bg.values, bg.mask, sc, features, opt.top_k);

    json summary_j = to_json(summary);
    json sampled = json::array();
    for (auto i : drawn) sampled.push_back({{"row", i}, {"patient_id", val.groups[i]}});
    summary_j["samples"] = sampled;
    run.write("shap_summary.json", summary_j.dump(2) + "\n");
    run.write("shap_beeswarm.tsv", beeswarm_tsv(summary));
    std::string top = "rank,feature,mean_abs_phi\n";
    for (std::size_t k = 0; k < summary.ranking.size() && k < opt.top_k; ++k) {
        const auto j = summary.ranking[k];
        top += std::to_string(k + 1) + "," + features[j] + "," + fmt(summary.mean_abs_phi[j]) + "\n";
    }
    run.write("shap_top.csv", top);

    // Waterfalls for the highest-scoring cases with enough observed labs.
    std::vector<std::size_t> order = positives;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return s.validation.entries[a].score > s.validation.entries[b].score;
    });
    std::size_t written = 0, refused = 0;
    for (std::size_t i : order) {
        if (written == opt.waterfalls) break;
        FeatureVector fv;
        const auto vr = val.values.row(i);
        const auto mr = val.mask.row(i);
        fv.values.assign(vr.begin(), vr.end());
        fv.mask.assign(mr.begin(), mr.end());
        ShapConfig wc = sc;
        wc.seed = derive_seed(derive_seed(cfg.seed, "waterfall"), i);
        try {
            const auto w = waterfall(fn, fv, bg.values, bg.mask, wc, features, s.prep.normalization.lab_count(), 9,
                                     opt.min_observed);
            json j = to_json(w);
            j["patient_id"] = val.groups[i];
            j["row"] = i;
            j["ensemble_score"] = s.validation.entries[i].score;
            const auto name = "waterfall_" + std::to_string(written + 1);
            run.write(name + ".json", j.dump(2) + "\n");
            run.write(name + ".tsv", waterfall_tsv(w));
            ++written;
        } catch (const ValidationError&) {
            ++refused;
        }
    }
    run.seed("background", bg_seed);
    run.seed("explain_samples", sample_seed);
    run.seed("shap", sc.seed);
    run.note("waterfalls", written);
    run.note("waterfall_candidates_refused", refused);
    run.finish();
    ctx.log("explain", std::to_string(written) + " waterfalls");
}

void run_comorbid(Context& ctx) {
    StageRun run(ctx, "comorbid");
    const auto& cfg = ctx.config;
    const auto map = parse_phecode_map(run.read(cfg.phecode_map));
    const auto records = run.records();
    const auto labeled = run.labeled();

    struct Status {
        bool label = false;
        std::optional<Date> diagnosis;
    };
    std::map<std::string, Status> status;
    for (const auto& e : labeled) {
        auto& st = status[e.record.patient_id];
        if (e.label) {
            st.label = true;
            if (e.diagnosis_date) st.diagnosis = e.diagnosis_date;
        }
    }
    std::vector<std::set<std::string>> cancer, control;
    std::map<std::string, std::set<std::string>> carried;
    PhecodeTally tally;
    for (const auto& p : group_by_patient(records)) {
        const auto it = status.find(p.id);
        if (it == status.end()) continue;
        auto codes = map_patient_phecodes(p.codes, it->second.label ? it->second.diagnosis : std::nullopt, map, &tally);
        (it->second.label ? cancer : control).push_back(codes);
        carried[p.id] = std::move(codes);
    }
    const auto table = build_comorbidity_table(cancer, control, map);
    const auto ranked = rank_comorbidities(table, cfg.comorbid.min_each);
    run.write("comorbidities.tsv", comorbidity_tsv(ranked));
    run.write("comorbidities_all.tsv", comorbidity_tsv(table.rows));
    json cj{{"n_cancer", table.n_cancer},
            {"n_control", table.n_control},
            {"min_each", cfg.comorbid.min_each},
            {"codes", {{"mapped", tally.mapped}, {"unmapped", tally.unmapped}, {"censored", tally.censored}}},
            {"ranked", to_json(ranked)}};
    run.write("comorbidities.json", cj.dump(2) + "\n");

    // Model performance inside the leading comorbidity subgroups, when a
    // trained model is present.
    if (fs::exists(ctx.work("model.json"))) {
        const auto s = score_validation(run);
        const auto thresholds = default_thresholds(cfg.evaluate.thresholds);
        std::string csv = "phecode,label,status,n,positives,prevalence,auc,ap,lr_at_0.5\n";
        auto add = [&](const std::string& code, const std::string& label,
                       const std::function<bool(const ScoredEntry&)>& member) {
            try {
                const auto ev = evaluate_subgroup(s.validation, member, cfg.comorbid.min_subgroup, thresholds);
                const auto p = lr_at(ev.lr, 0.5);
                csv += code + "," + label + ",ok," + std::to_string(ev.n) + "," + std::to_string(ev.positives) + "," +
                       fmt(ev.prevalence) + "," + fmt(ev.roc.auc) + "," + fmt(ev.pr.ap) + "," +
                       (p ? fmt(p->lr) : std::string("NA")) + "\n";
            } catch (const ValidationError&) {
                csv += code + "," + label + ",refused,NA,NA,NA,NA,NA,NA\n";
            }
        };
        add("all", "all patients", [](const ScoredEntry&) { return true; });
        for (std::size_t k = 0; k < ranked.size() && k < cfg.comorbid.subgroups; ++k) {
            const auto& code = ranked[k].phecode;
            std::string label = ranked[k].label;
            std::replace(label.begin(), label.end(), ',', ';');
            add(code, label, [&](const ScoredEntry& e) {
                const auto it = carried.find(e.patient_id);
                return it != carried.end() && it->second.count(code) > 0;
            });
        }
        run.write("comorbid_subgroups.csv", csv);
    }
    run.note("ranked_phecodes", ranked.size());
    run.finish();
    ctx.log("comorbid", std::to_string(ranked.size()) + " phecodes pass the carrier floor");
}

}  // namespace dprof::cli
