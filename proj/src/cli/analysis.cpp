#include "analysis.hpp"

#include "dprof/error.hpp"
#include "dprof/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dprof::cli {

using nlohmann::json;

ScoredRun score_validation(StageRun& run) {
    ScoredRun s;
    s.prep = run.prepared();
    s.ensemble = run.ensemble();
    if (!(s.ensemble.normalization == s.prep.normalization)) {
        throw IntegrityError("model.json was trained on a different preparation; rerun 'dprof train'");
    }
    const auto& data = s.prep.validation.data;
    if (data.size() == 0) throw ValidationError("validation split is empty");
    s.predictions = predict_batch(s.ensemble, data.values, data.mask);
    for (std::size_t i = 0; i < data.size(); ++i) {
        s.validation.entries.push_back({data.groups[i], s.predictions[i].mean, data.labels[i] > 0.5});
    }
    return s;
}

std::vector<std::string> default_baseline_markers(const MarkerCatalog& catalog, CancerType type, std::size_t n) {
    const std::string cls(to_string(type));
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto* m : catalog.lab_markers()) {
        const auto c = m->class_distributions.find(cls);
        const auto z = m->class_distributions.find("no_cancer");
        if (c == m->class_distributions.end() || z == m->class_distributions.end()) continue;
        const double pooled = std::sqrt(0.5 * (c->second.sd * c->second.sd + z->second.sd * z->second.sd));
        if (!(pooled > 0.0)) continue;
        ranked.emplace_back(std::abs(c->second.mean - z->second.mean) / pooled, m->id);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < n; ++i) out.push_back(ranked[i].second);
    return out;
}

std::vector<Baseline> compute_baselines(const ScoredRun& s, const MarkerCatalog& catalog, const RunConfig& config) {
    std::vector<Baseline> out;
    const auto& recs = s.prep.validation.records;
    const auto& entries = s.validation.entries;

    Baseline oor{"out_of_range", {}};
    Baseline age{"age", {}};
    for (std::size_t i = 0; i < recs.size(); ++i) {
        oor.cohort.entries.push_back({entries[i].patient_id, oor_score(recs[i], catalog).score, entries[i].label});
        age.cohort.entries.push_back({entries[i].patient_id, age_score(recs[i].age_years), entries[i].label});
    }
    out.push_back(std::move(oor));
    out.push_back(std::move(age));

    auto markers = config.evaluate.baseline_markers;
    if (markers.empty()) markers = default_baseline_markers(catalog, config.cancer_type, 5);
    for (const auto& id : markers) {
        if (!catalog.contains(id)) throw ValidationError("config field 'evaluate.baseline_markers': unknown marker '" + id + "'");
        const auto scaler = fit_single_marker(s.prep.development.records, catalog, id);
        Baseline b{"marker:" + id, {}};
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (const auto v = scaler.score(recs[i])) b.cohort.entries.push_back({entries[i].patient_id, *v, entries[i].label});
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::string baselines_lr_csv(const std::vector<Baseline>& baselines, std::span<const double> thresholds) {
    std::string out = "method,threshold,lr,n_above,n_pos_above,corrected\n";
    for (const auto& b : baselines) {
        if (b.cohort.positives() == 0 || b.cohort.positives() == b.cohort.size()) continue;
        const auto curve = lr_curve(b.cohort, thresholds);
        for (const auto& p : curve.points) {
            out += b.name + "," + fmt(p.threshold, 4) + "," + fmt(p.lr) + "," + std::to_string(p.n_above) + "," +
                   std::to_string(p.n_pos_above) + "," + (p.corrected ? "1" : "0") + "\n";
        }
    }
    return out;
}

MemberRibbon member_ribbon(const ScoredRun& s, std::span<const double> thresholds) {
    MemberRibbon r;
    r.thresholds.assign(thresholds.begin(), thresholds.end());
    const std::size_t k = s.ensemble.members.size();
    const std::size_t m = thresholds.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.ensemble.assign(m, nan);
    r.members.assign(k, std::vector<double>(m, nan));
    const auto ens_curve = lr_curve(s.validation, thresholds);
    for (std::size_t t = 0; t < ens_curve.points.size(); ++t) r.ensemble[t] = ens_curve.points[t].lr;
    for (std::size_t j = 0; j < k; ++j) {
        ScoredCohort c;
        for (std::size_t i = 0; i < s.validation.size(); ++i) {
            c.entries.push_back({s.validation.entries[i].patient_id, s.predictions[i].member_scores[j],
                                 s.validation.entries[i].label});
        }
        const auto curve = lr_curve(c, thresholds);
        for (std::size_t t = 0; t < curve.points.size(); ++t) r.members[j][t] = curve.points[t].lr;
    }
    r.mean.assign(m, nan);
    r.std.assign(m, nan);
    r.min.assign(m, nan);
    r.max.assign(m, nan);
    r.defined.assign(m, 0);
    for (std::size_t t = 0; t < m; ++t) {
        double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
        std::size_t n = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const double v = r.members[j][t];
            if (std::isnan(v)) continue;
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            ++n;
        }
        r.defined[t] = n;
        if (n == 0) continue;
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double v = r.members[j][t];
            if (!std::isnan(v)) ss += (v - mean) * (v - mean);
        }
        r.mean[t] = mean;
        r.std[t] = std::sqrt(ss / static_cast<double>(n));
        r.min[t] = lo;
        r.max[t] = hi;
    }
    return r;
}

std::string member_ribbon_csv(const MemberRibbon& r) {
    auto cell = [](double v) { return std::isnan(v) ? std::string("NA") : fmt(v); };
    std::string out = "threshold,lr,member_mean,member_std,member_min,member_max,members_defined";
    for (std::size_t j = 0; j < r.members.size(); ++j) out += ",member_" + std::to_string(j);
    out += "\n";
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
        out += fmt(r.thresholds[t], 4) + "," + cell(r.ensemble[t]) + "," + cell(r.mean[t]) + "," + cell(r.std[t]) + "," +
               cell(r.min[t]) + "," + cell(r.max[t]) + "," + std::to_string(r.defined[t]);
        for (const auto& member : r.members) out += "," + cell(member[t]);
        out += "\n";
    }
    return out;
}

std::optional<LrCurvePoint> lr_at(const LrCurve& curve, double threshold) {
    for (const auto& p : curve.points) {
        if (std::abs(p.threshold - threshold) < 1e-9) return p;
    }
    return std::nullopt;
}

namespace {

std::string lr_svg(const MemberRibbon& r, const std::vector<Baseline>& baselines, std::span<const double> thresholds,
                   const std::string& cancer) {
    std::vector<PlotSeries> series;
    PlotSeries ens{"profiler ensemble", {}, {}, {}};
    double lo = 0.0, hi = 0.0;
    auto track = [&](double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    };
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
        if (std::isnan(r.ensemble[t]) || !(r.ensemble[t] > 0.0)) continue;
        const double y = std::log10(r.ensemble[t]);
        ens.points.emplace_back(r.thresholds[t], y);
        track(y);
        if (!std::isnan(r.mean[t]) && r.defined[t] == r.members.size()) {
            const double a = std::max(r.mean[t] - r.std[t], 1e-6), b = r.mean[t] + r.std[t];
            ens.band_low.emplace_back(r.thresholds[t], std::log10(a));
            ens.band_high.emplace_back(r.thresholds[t], std::log10(b));
            track(std::log10(a));
            track(std::log10(b));
        }
    }
    series.push_back(std::move(ens));
    for (const auto& b : baselines) {
        if (b.name != "out_of_range" && b.name != "age") continue;
        if (b.cohort.positives() == 0 || b.cohort.positives() == b.cohort.size()) continue;
        PlotSeries s{b.name, {}, {}, {}};
        for (const auto& p : lr_curve(b.cohort, thresholds).points) {
            if (!(p.lr > 0.0)) continue;
            s.points.emplace_back(p.threshold, std::log10(p.lr));
            track(std::log10(p.lr));
        }
        series.push_back(std::move(s));
    }
    PlotSpec spec;
    spec.title = "Likelihood ratio by risk threshold (" + cancer + ")";
    spec.x_label = "risk threshold";
    spec.y_label = "log10 likelihood ratio";
    spec.y_min = std::floor(lo);
    spec.y_max = std::max(std::ceil(hi), spec.y_min + 1.0);
    spec.annotation = "band: member mean +/- 1 sd";
    return svg_line_plot(spec, series);
}

}  // namespace

void run_lr(Context& ctx) {
    StageRun run(ctx, "lr");
    const auto s = score_validation(run);
    const auto thresholds = default_thresholds(ctx.config.evaluate.thresholds);
    const auto curve = lr_curve(s.validation, thresholds);
    const auto baselines = compute_baselines(s, run.catalog(), ctx.config);
    const auto ribbon = member_ribbon(s, thresholds);
    run.write("lr_curve.csv", lr_curve_csv(curve));
    run.write("lr_baselines.csv", baselines_lr_csv(baselines, thresholds));
    run.write("lr_members.csv", member_ribbon_csv(ribbon));
    run.write("lr_curve.svg", lr_svg(ribbon, baselines, thresholds, s.ensemble.cancer_type));
    for (double t : {0.2, 0.5, 0.8}) {
        if (const auto p = lr_at(curve, t)) run.note("lr_at_" + fmt(t, 2), p->lr);
    }
    run.finish();
    ctx.log("lr", "curve over " + std::to_string(curve.points.size()) + " thresholds");
}

namespace {

json metric_entry(const std::string& name, const ScoredCohort& c) {
    json j{{"name", name}, {"n", c.size()}, {"positives", c.positives()}};
    if (c.positives() == 0 || c.positives() == c.size()) {
        j["status"] = "single class";
        return j;
    }
    const auto sc = c.scores();
    const auto lb = c.labels();
    j["auc"] = roc(sc, lb).auc;
    j["ap"] = average_precision(sc, lb);
    j["status"] = "ok";
    return j;
}

std::string curve_svg(const std::string& title, const std::string& xl, const std::string& yl,
                      const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& curves, bool diagonal,
                      const std::string& annotation) {
    std::vector<PlotSeries> series;
    for (const auto& [name, pts] : curves) {
        PlotSeries s{name, {}, {}, {}};
        for (const auto& p : pts) s.points.emplace_back(p.x, p.y);
        series.push_back(std::move(s));
    }
    PlotSpec spec;
    spec.title = title;
    spec.x_label = xl;
    spec.y_label = yl;
    spec.diagonal = diagonal;
    spec.annotation = annotation;
    return svg_line_plot(spec, series);
}

}  // namespace

void run_evaluate(Context& ctx) {
    StageRun run(ctx, "evaluate");
    const auto& cfg = ctx.config;
    const auto s = score_validation(run);
    const auto& val = s.validation;
    const auto thresholds = default_thresholds(cfg.evaluate.thresholds);
    const auto scores = val.scores();
    const auto labels = val.labels();
    const auto roc_curve = roc(scores, labels);
    const auto pr = pr_curve(scores, labels);
    const auto lr = lr_curve(val, thresholds);
    const auto baselines = compute_baselines(s, run.catalog(), cfg);

    const std::uint64_t band_seed = derive_seed(cfg.seed, "permutation_band");
    const auto band = lr_permutation_band(val, thresholds, cfg.evaluate.permutations, band_seed);
    std::string band_csv = "threshold,null_lower,null_upper,lr\n";
    for (std::size_t t = 0; t < band.thresholds.size(); ++t) {
        const auto p = lr_at(lr, band.thresholds[t]);
        band_csv += fmt(band.thresholds[t], 4) + "," + fmt(band.lower[t]) + "," + fmt(band.upper[t]) + "," +
                    (p ? fmt(p->lr) : std::string("NA")) + "\n";
    }

    const std::uint64_t del_seed = derive_seed(cfg.seed, "deletion");
    const auto deleted = delete_observed(s.prep.validation.data, cfg.evaluate.deletion_fraction, del_seed);
    const auto deleted_scores = score_cohort(s.ensemble, deleted);
    const double auc_deleted = roc(deleted_scores.scores(), deleted_scores.labels()).auc;

    json base_j = json::array();
    std::vector<std::pair<std::string, std::vector<CurvePoint>>> roc_series{{"profiler", roc_curve.points}};
    std::vector<std::pair<std::string, std::vector<CurvePoint>>> pr_series{{"profiler", pr.points}};
    for (const auto& b : baselines) {
        auto j = metric_entry(b.name, b.cohort);
        if (j["status"] == "ok" && (b.name == "out_of_range" || b.name == "age")) {
            roc_series.emplace_back(b.name, roc(b.cohort.scores(), b.cohort.labels()).points);
            pr_series.emplace_back(b.name, pr_curve(b.cohort.scores(), b.cohort.labels()).points);
        }
        base_j.push_back(std::move(j));
    }

    // Demographic subgroups, refused below the size floor.
    const auto& recs = s.prep.validation.records;
    struct Group {
        std::string name;
        std::function<bool(const EncounterRecord&)> keep;
    };
    const std::vector<Group> groups{
        {"sex=female", [](const EncounterRecord& r) { return r.sex == Sex::female; }},
        {"sex=male", [](const EncounterRecord& r) { return r.sex == Sex::male; }},
        {"age=40-59", [](const EncounterRecord& r) { return r.age_years < 60.0; }},
        {"age=60-74", [](const EncounterRecord& r) { return r.age_years >= 60.0 && r.age_years < 75.0; }},
        {"age=75-89", [](const EncounterRecord& r) { return r.age_years >= 75.0; }},
    };
    json sub_j = json::array();
    std::string sub_csv = "subgroup,status,n,positives,prevalence,auc,ap\n";
    for (const auto& g : groups) {
        const auto* base = val.entries.data();
        auto member = [&](const ScoredEntry& e) { return g.keep(recs[static_cast<std::size_t>(&e - base)]); };
        try {
            const auto ev = evaluate_subgroup(val, member, cfg.evaluate.min_subgroup, thresholds);
            sub_j.push_back({{"subgroup", g.name}, {"status", "ok"}, {"n", ev.n}, {"positives", ev.positives},
                             {"prevalence", ev.prevalence}, {"auc", ev.roc.auc}, {"ap", ev.pr.ap}});
            sub_csv += g.name + ",ok," + std::to_string(ev.n) + "," + std::to_string(ev.positives) + "," +
                       fmt(ev.prevalence) + "," + fmt(ev.roc.auc) + "," + fmt(ev.pr.ap) + "\n";
        } catch (const ValidationError& e) {
            sub_j.push_back({{"subgroup", g.name}, {"status", "refused"}, {"reason", e.what()}});
            sub_csv += g.name + ",refused,NA,NA,NA,NA,NA\n";
        }
    }

    json lr_points = json::array();
    for (double t : {0.2, 0.5, 0.8}) {
        if (const auto p = lr_at(lr, t)) {
            lr_points.push_back({{"threshold", t}, {"lr", p->lr}, {"n_above", p->n_above}, {"n_pos_above", p->n_pos_above}});
        }
    }
    json metrics{{"cancer_type", s.ensemble.cancer_type},
                 {"n", val.size()},
                 {"positives", val.positives()},
                 {"prevalence", val.prevalence()},
                 {"auc", roc_curve.auc},
                 {"ap", pr.ap},
                 {"lr_at", lr_points},
                 {"baselines", base_j},
                 {"robustness",
                  {{"deletion_fraction", cfg.evaluate.deletion_fraction},
                   {"seed", del_seed},
                   {"auc_full", roc_curve.auc},
                   {"auc_deleted", auc_deleted},
                   {"delta", roc_curve.auc - auc_deleted}}},
                 {"null_band",
                  {{"permutations", cfg.evaluate.permutations},
                   {"seed", band_seed},
                   {"pointwise_level", band.pointwise_level}}},
                 {"subgroups", sub_j}};

    run.seed("permutation_band", band_seed);
    run.seed("deletion", del_seed);
    run.write("roc.csv", roc_csv(roc_curve));
    run.write("pr.csv", pr_csv(pr));
    run.write("lr_curve.csv", lr_curve_csv(lr));
    run.write("lr_null_band.csv", band_csv);
    run.write("subgroups.csv", sub_csv);
    run.write("metrics.json", metrics.dump(2) + "\n");
    run.write("roc.svg", curve_svg("ROC (" + s.ensemble.cancer_type + ")", "false positive rate", "true positive rate",
                                   roc_series, true, "AUC " + fmt(roc_curve.auc, 4)));
    run.write("pr.svg", curve_svg("Precision-recall (" + s.ensemble.cancer_type + ")", "recall", "precision", pr_series,
                                  false, "AP " + fmt(pr.ap, 4) + ", prevalence " + fmt(val.prevalence(), 3)));
    run.note("auc", roc_curve.auc);
    run.note("ap", pr.ap);
    run.note("auc_deleted", auc_deleted);
    run.finish();
    ctx.log("evaluate", "AUC " + fmt(roc_curve.auc, 4) + ", AP " + fmt(pr.ap, 4) + ", AUC after deletion " +
                            fmt(auc_deleted, 4));
}

}  // namespace dprof::cli
