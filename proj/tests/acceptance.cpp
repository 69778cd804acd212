// Acceptance checks, one PASS/FAIL line per criterion.

#include "support/grad_suite.hpp"
#include "support/oracles.hpp"
#include "support/shap_models.hpp"

#include "dprof/codes.hpp"
#include "dprof/cohort.hpp"
#include "dprof/comorbid.hpp"
#include "dprof/explain.hpp"
#include "dprof/likelihood.hpp"
#include "dprof/metrics.hpp"
#include "dprof/pipeline.hpp"
#include "dprof/profiler.hpp"
#include "dprof/synth.hpp"

#include <nlohmann/json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dprof;
using namespace dprof::testing;

namespace {

// Pinned tolerances and limits.
constexpr double kGradTol = 1e-4;
constexpr int kMinGradCases = 100;
constexpr double kExactTol = 1e-12;
constexpr double kEfficiencyTol = 1e-9;
constexpr double kShapMinCoverage = 0.97;   // nominal 0.99
constexpr double kShapMaxMissRatio = 2.0;   // worst |error| / half-width
constexpr double kNullBandMinCoverage = 0.90;  // nominal 0.95
constexpr double kMinAuc = 0.80;
constexpr double kMinLrGain = 2.0;
constexpr double kMinAucOverOor = 0.05;
constexpr double kMaxDeletionDelta = 0.08;
constexpr double kDeletionFraction = 0.3;
constexpr int kRatioSlack = 1;

const std::string kCli = DPROF_CLI_PATH;
const fs::path kCatalog = fs::path(DPROF_DATA_DIR) / "marker_catalog.json";

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- 1: gradients ----

Outcome gradients() {
    const auto suite = run_layer_grad_suite(20240101, 8);
    const double full = full_loss_grad_error(7);
    std::string worst_op;
    double worst_ratio = 0.0;
    for (const auto& [op, e] : suite.max_error) {
        const double r = e / suite.tolerance.at(op);
        if (r >= worst_ratio) {
            worst_ratio = r;
            worst_op = op;
        }
    }
    const bool all_within = suite.passed();
    bool tol_ok = true;
    for (const auto& [op, t] : suite.tolerance) tol_ok = tol_ok && t <= kGradTol;
    Outcome o;
    o.pass = all_within && tol_ok && suite.cases >= kMinGradCases && full < kGradTol;
    o.detail = std::to_string(suite.cases) + " cases, worst " + worst_op + " at " + fmt("%.2g", worst_ratio) +
               " of tolerance; full loss rel err " + fmt("%.2e", full);
    return o;
}

// ---- 2: exact statistics ----

Outcome exact_statistics() {
    double fisher_worst = 0.0;
    std::size_t tables = 0;
    for (int n = 0; n <= 40; ++n)
        for (int a = 0; a <= n; ++a)
            for (int b = 0; a + b <= n; ++b)
                for (int c = 0; a + b + c <= n; ++c) {
                    const int d = n - a - b - c;
                    fisher_worst = std::max(fisher_worst, std::abs(fisher_exact(a, b, c, d) - fisher_oracle(a, b, c, d)));
                    ++tables;
                }

    Rng rng(2);
    double auc_worst = 0.0, ap_worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        const std::size_t n = 10 + rng.below(400);
        const double prevalence = rng.uniform(0.05, 0.6);
        const int grid = k % 3 == 0 ? 0 : 5 + k % 40;  // many sets with ties
        std::vector<double> s;
        std::vector<int> y;
        int pos = 0;
        do {
            s.clear();
            y.clear();
            pos = 0;
            for (std::size_t i = 0; i < n; ++i) {
                double v = rng.uniform();
                if (grid) v = std::floor(v * grid) / grid;
                s.push_back(v);
                y.push_back(rng.bernoulli(prevalence) ? 1 : 0);
                pos += y.back();
            }
        } while (pos == 0 || pos == static_cast<int>(n));
        auc_worst = std::max(auc_worst, std::abs(roc(s, y).auc - auc_oracle(s, y)));
        ap_worst = std::max(ap_worst, std::abs(average_precision(s, y) - ap_oracle(s, y)));
    }
    Outcome o;
    o.pass = fisher_worst <= kExactTol && auc_worst <= kExactTol && ap_worst <= kExactTol;
    o.detail = std::to_string(tables) + " Fisher tables worst " + fmt("%.1e", fisher_worst) + "; 200 sets AUC worst " +
               fmt("%.1e", auc_worst) + ", AP worst " + fmt("%.1e", ap_worst);
    return o;
}

// ---- 3: Shapley ----

Outcome shapley() {
    Rng rng(3);
    std::size_t covered = 0, total = 0;
    double worst_ratio = 0.0, efficiency = 0.0, linear = 0.0;
    for (std::size_t d = 2; d <= 10; ++d) {
        for (std::uint64_t m = 0; m < 6; ++m) {
            nn::Tensor2 bv, bm;
            random_background(rng, 16, d, bv, bm);
            const auto x = random_sample(rng, d);
            const auto fn = interaction_model(d, 1000 * d + m);
            const auto exact = shap_values(fn, x, bv, bm, ShapConfig{});
            double sum = exact.base_value;
            for (double p : exact.phi) sum += p;
            efficiency = std::max(efficiency, std::abs(sum - exact.fx));

            ShapConfig sc;
            sc.exact_max_features = 0;
            sc.permutation_pairs = 64;
            sc.seed = 77 * d + m;
            const auto est = shap_values(fn, x, bv, bm, sc);
            for (std::size_t j = 0; j < d; ++j) {
                if (est.phi_se[j] == 0.0 && exact.phi[j] == 0.0) continue;  // inactive feature
                // Rounding floor: at d = 2 an antithetic pair is exact and the interval collapses.
                const double err = std::abs(est.phi[j] - exact.phi[j]);
                const double hw = std::max(est.ci99(j), kExactTol);
                covered += err <= hw;
                ++total;
                worst_ratio = std::max(worst_ratio, err / hw);
            }

            std::vector<double> w(d);
            for (auto& v : w) v = rng.uniform(-2, 2);
            const auto lin = shap_values(linear_model(w, 0.5), x, bv, bm, ShapConfig{});
            for (std::size_t j = 0; j < d; ++j) {
                double mean = 0.0;
                for (std::size_t i = 0; i < bv.rows(); ++i) mean += bv(i, j);
                mean /= static_cast<double>(bv.rows());
                linear = std::max(linear, std::abs(lin.phi[j] - w[j] * (x.values[j] - mean)));
            }
        }
    }
    const double coverage = static_cast<double>(covered) / static_cast<double>(total);
    Outcome o;
    o.pass = coverage >= kShapMinCoverage && worst_ratio < kShapMaxMissRatio && efficiency <= kEfficiencyTol &&
             linear <= kExactTol;
    o.detail = "99% CI coverage " + std::to_string(covered) + "/" + std::to_string(total) + ", worst miss " +
               fmt("%.2f", worst_ratio) + " half-widths; efficiency " + fmt("%.1e", efficiency) + "; linear " +
               fmt("%.1e", linear);
    return o;
}

// ---- 4: likelihood ratios ----

Outcome likelihood_ratios() {
    Rng rng(4);
    bool lr0 = true;
    for (int k = 0; k < 50; ++k) {
        ScoredCohort c;
        const std::size_t n = 20 + rng.below(2000);
        for (std::size_t i = 0; i < n; ++i) c.entries.push_back({"p" + std::to_string(i), rng.uniform(), rng.bernoulli(0.15)});
        if (c.positives() == 0 || c.positives() == n) continue;
        const auto curve = lr_curve(c, default_thresholds());
        lr0 = lr0 && curve.points.front().threshold == 0.0 && curve.points.front().lr == 1.0;
    }
    const double hand = lr_from_counts(3, 5, 2, 10).lr;

    ScoredCohort null;
    for (int i = 0; i < 4000; ++i) null.entries.push_back({"q" + std::to_string(i), rng.uniform(), rng.bernoulli(0.1)});
    const auto t = default_thresholds(21);
    const auto band = lr_permutation_band(null, t, 400, 41);
    auto inside = [&](const ScoredCohort& c) {
        const auto curve = lr_curve(c, t);
        for (std::size_t i = 0; i < curve.points.size(); ++i)
            if (curve.points[i].lr < band.lower[i] || curve.points[i].lr > band.upper[i]) return false;
        return true;
    };
    bool band_holds_one = true;
    for (std::size_t i = 0; i < band.lower.size(); ++i) band_holds_one = band_holds_one && band.lower[i] <= 1.0 && band.upper[i] >= 1.0;
    const bool observed_inside = inside(null);
    // Fresh null draws: labels permuted independently of the band's own permutations.
    std::size_t fresh_inside = 0;
    const std::size_t fresh = 200;
    Rng prng(404);
    for (std::size_t k = 0; k < fresh; ++k) {
        auto c = null;
        std::vector<bool> labels;
        for (const auto& e : c.entries) labels.push_back(e.label);
        for (std::size_t i = labels.size(); i > 1; --i) {
            const auto j = prng.below(i);
            const bool tmp = labels[i - 1];
            labels[i - 1] = labels[j];
            labels[j] = tmp;
        }
        for (std::size_t i = 0; i < labels.size(); ++i) c.entries[i].label = labels[i];
        fresh_inside += inside(c);
    }
    const double coverage = static_cast<double>(fresh_inside) / fresh;
    Outcome o;
    o.pass = lr0 && std::abs(hand - 6.0) <= kExactTol && band_holds_one && observed_inside && coverage >= kNullBandMinCoverage;
    o.detail = std::string("LR(0)=1 ") + (lr0 ? "on all cohorts" : "VIOLATED") + "; hand example " + fmt("%.15g", hand) +
               "; null cohort inside band: " + (observed_inside ? "yes" : "no") + ", fresh permutations inside " +
               std::to_string(fresh_inside) + "/" + std::to_string(fresh);
    return o;
}

// ---- 5-7: planted-signal runs through the CLI ----

struct PlantedRun {
    fs::path dir;
    double seconds = 0.0;
    bool ok = false;
    std::string error;
};

fs::path scratch_root() {
    static const fs::path root = [] {
        auto r = fs::temp_directory_path() / ("dprof_acceptance_" + std::to_string(::getpid()));
        fs::remove_all(r);
        fs::create_directories(r);
        return r;
    }();
    return root;
}

PlantedRun planted_run(const std::string& name) {
    PlantedRun run;
    run.dir = scratch_root() / name;
    const auto cfg = scratch_root() / "planted.json";
    if (!fs::exists(cfg)) {
        std::ofstream out(cfg);
        out << json{{"seed", 20240101},
                    {"cancer_type", "liver"},
                    {"synth", {{"n_per_class", {{"no_cancer", 8000}, {"liver", 800}}}}},
                    {"train", {{"members", 10}}},
                    {"evaluate", {{"deletion_fraction", kDeletionFraction}}}}
                   .dump(2);
    }
    const auto t0 = std::chrono::steady_clock::now();
    for (const char* stage : {"synth", "cohort", "prepare", "train", "lr", "evaluate"}) {
        const std::string cmd = "'" + kCli + "' -q --config '" + cfg.string() + "' --work-dir '" + run.dir.string() +
                                "' " + stage + " > '" + (scratch_root() / (name + ".log")).string() + "' 2>&1";
        const int status = std::system(cmd.c_str());
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
            run.error = std::string("stage ") + stage + " failed: " + slurp(scratch_root() / (name + ".log"));
            return run;
        }
    }
    run.seconds = seconds_since(t0);
    run.ok = true;
    return run;
}

struct Rescored {
    ScoredCohort profiler;
    ScoredCohort oor;
    ScoredCohort deleted;
};

// Recomputes validation scores from the saved model, independently of evaluate.
Rescored rescore(const fs::path& dir, std::uint64_t deletion_seed) {
    const auto catalog = load_marker_catalog(kCatalog);
    const auto ensemble = load_ensemble(dir / "model.json");
    const auto prep = prepare_datasets(load_labeled(dir / "labeled.jsonl"), catalog);
    Rescored r;
    r.profiler = score_cohort(ensemble, prep.validation.data);
    r.deleted = score_cohort(ensemble, delete_observed(prep.validation.data, kDeletionFraction, deletion_seed));
    for (std::size_t i = 0; i < prep.validation.records.size(); ++i) {
        r.oor.entries.push_back({prep.validation.data.groups[i], oor_score(prep.validation.records[i], catalog).score,
                                 prep.validation.data.labels[i] > 0.5});
    }
    return r;
}

double oracle_auc(const ScoredCohort& c) { return auc_oracle(c.scores(), c.labels()); }

// Post-test over pre-test odds with the half-count correction for a one-class subgroup.
double oracle_lr(const ScoredCohort& c, double t) {
    double n = 0, pos = 0;
    for (const auto& e : c.entries)
        if (e.score >= t) {
            n += 1;
            pos += e.label;
        }
    double neg = n - pos;
    if (pos == 0 || neg == 0) {
        pos += 0.5;
        neg += 0.5;
    }
    const double P = static_cast<double>(c.positives());
    return (pos / neg) / (P / (static_cast<double>(c.size()) - P));
}

double metric_lr_at(const json& m, double t) {
    for (const auto& e : m.at("lr_at"))
        if (std::abs(e.at("threshold").get<double>() - t) < 1e-12) return e.at("lr").get<double>();
    throw std::runtime_error("metrics.json lacks lr_at " + std::to_string(t));
}

double metric_baseline_auc(const json& m, const std::string& name) {
    for (const auto& b : m.at("baselines"))
        if (b.at("name") == name) return b.at("auc").get<double>();
    throw std::runtime_error("metrics.json lacks baseline " + name);
}

struct PlantedState {
    PlantedRun first;
    json metrics;
    Rescored rescored;
};

Outcome planted_signal(PlantedState& st) {
    st.first = planted_run("run_a");
    if (!st.first.ok) return {false, st.first.error};
    st.metrics = json::parse(slurp(st.first.dir / "metrics.json"));
    st.rescored = rescore(st.first.dir, st.metrics.at("robustness").at("seed").get<std::uint64_t>());

    const double auc = oracle_auc(st.rescored.profiler);
    const double oor_auc = oracle_auc(st.rescored.oor);
    const double lr2 = oracle_lr(st.rescored.profiler, 0.2);
    const double lr8 = oracle_lr(st.rescored.profiler, 0.8);
    // evaluate must agree with the independent recomputation.
    const bool consistent = std::abs(auc - st.metrics.at("auc").get<double>()) <= kExactTol &&
                            std::abs(oor_auc - metric_baseline_auc(st.metrics, "out_of_range")) <= kExactTol &&
                            std::abs(lr2 / metric_lr_at(st.metrics, 0.2) - 1) <= 1e-9 &&
                            std::abs(lr8 / metric_lr_at(st.metrics, 0.8) - 1) <= 1e-9;
    Outcome o;
    o.pass = consistent && auc >= kMinAuc && lr8 >= kMinLrGain * lr2 && auc >= oor_auc + kMinAucOverOor &&
             st.first.seconds <= 600.0;
    o.detail = "n=" + std::to_string(st.rescored.profiler.size()) + " validation encounters; AUC " + fmt("%.4f", auc) +
               ", OoR AUC " + fmt("%.4f", oor_auc) + ", LR(0.2) " + fmt("%.3g", lr2) + ", LR(0.8) " + fmt("%.3g", lr8) +
               "; evaluate " + (consistent ? "agrees" : "DISAGREES") + "; " + fmt("%.0f", st.first.seconds) + " s";
    return o;
}

Outcome missingness_robustness(const PlantedState& st) {
    if (!st.first.ok) return {false, "planted-signal run unavailable"};
    const double full = oracle_auc(st.rescored.profiler);
    const double cut = oracle_auc(st.rescored.deleted);
    const double delta = std::abs(full - cut);
    const bool consistent = std::abs(cut - st.metrics.at("robustness").at("auc_deleted").get<double>()) <= kExactTol;
    Outcome o;
    o.pass = consistent && delta < kMaxDeletionDelta;
    o.detail = "AUC " + fmt("%.4f", full) + " -> " + fmt("%.4f", cut) + " after deleting " +
               fmt("%.0f%%", 100 * kDeletionFraction) + " of observed values; |delta| " + fmt("%.4f", delta) +
               "; evaluate " + (consistent ? "agrees" : "DISAGREES");
    return o;
}

Outcome reproducibility(const PlantedState& st) {
    if (!st.first.ok) return {false, "planted-signal run unavailable"};
    const auto second = planted_run("run_b");
    if (!second.ok) return {false, second.error};
    const std::vector<std::string> files{"cohort.jsonl",   "labeled.jsonl",  "normalization.json", "model.json",
                                         "dev_scores.csv", "lr_curve.csv",   "lr_baselines.csv",   "lr_members.csv",
                                         "roc.csv",        "pr.csv",         "lr_null_band.csv",   "subgroups.csv",
                                         "metrics.json",   "training_log.tsv"};
    std::vector<std::string> differing;
    for (const auto& f : files) {
        const auto a = slurp(st.first.dir / f);
        const auto b = slurp(second.dir / f);
        if (a.empty() || a != b) differing.push_back(f);
    }
    // The serialized ensemble must also survive a reload bit-for-bit.
    const auto model = slurp(st.first.dir / "model.json");
    const bool reload = serialize_ensemble(deserialize_ensemble(model)) == model;
    Outcome o;
    o.pass = differing.empty() && reload;
    o.detail = std::to_string(files.size() - differing.size()) + "/" + std::to_string(files.size()) +
               " artifacts bit-identical across two runs";
    for (const auto& f : differing) o.detail += "; differs: " + f;
    if (!reload) o.detail += "; model reload changed bytes";
    return o;
}

// ---- 8: cohort logic on randomized synthetic cohorts ----

// Marker count after derived completion, recomputed from the raw record.
// Only markers the catalog defines can be derived.
std::size_t oracle_marker_count(const EncounterRecord& r, const MarkerCatalog& catalog) {
    const auto& m = r.measurements;
    std::size_t n = m.size();
    auto has = [&](const char* id) { return m.contains(id); };
    auto derivable = [&](const char* a, const char* b) { return catalog.contains(a) && catalog.contains(b); };
    if (catalog.contains("bun_creatinine_ratio") && !has("bun_creatinine_ratio") && has("bun") && has("creatinine") &&
        m.at("creatinine") > 0)
        ++n;
    if (has("wbc") && m.at("wbc") > 0) {
        for (const auto& [a, p] : std::vector<std::pair<const char*, const char*>>{{"lymphocytes", "lymphocytes_pct"},
                                                                                    {"basophils", "basophils_pct"},
                                                                                    {"eosinophils", "eosinophils_pct"},
                                                                                    {"neutrophils", "neutrophils_pct"},
                                                                                    {"monocytes", "monocytes_pct"}})
            if (derivable(a, p) && has(a) != has(p)) ++n;
    }
    return n;
}

bool oracle_malignant(const ClaimCode& c) {
    if (c.system != CodeSystem::ICD10 || c.code.size() < 3 || c.code[0] != 'C') return false;
    if (!std::isdigit(static_cast<unsigned char>(c.code[1])) || !std::isdigit(static_cast<unsigned char>(c.code[2]))) return false;
    return (c.code[1] - '0') * 10 + (c.code[2] - '0') <= 97;
}

bool oracle_prefix(const std::string& code, const std::string& prefix) {
    std::string a, b;
    for (char ch : code)
        if (ch != '.') a += ch;
    for (char ch : prefix)
        if (ch != '.') b += ch;
    return a.rfind(b, 0) == 0;
}

struct CohortCheck {
    std::size_t encounters_in = 0, encounters_out = 0, below_markers_in = 0, out_of_age_in = 0, outside_window_in = 0;
    std::vector<std::string> violations;
    void fail(const std::string& what) {
        if (violations.size() < 5) violations.push_back(what);
        else if (violations.size() == 5) violations.push_back("...");
    }
};

// Independent re-derivation of which encounters of a kept patient qualify.
bool oracle_qualifies(const EncounterRecord& e, const std::vector<EncounterRecord>& visits,
                      const std::vector<ClaimCode>& history, bool label, std::optional<Date> dx,
                      const MarkerCatalog& catalog) {
    if (oracle_marker_count(e, catalog) < 18) return false;
    if (e.age_years < 40.0 || e.age_years > 89.0) return false;
    if (label) {
        const long before = *dx - e.date;
        if (before < 0 || before >= 365) return false;
    } else {
        bool follow_up = false;
        for (const auto& v : visits) follow_up = follow_up || v.date > e.date;
        if (!follow_up) return false;
    }
    for (const auto& c : history) {
        if (oracle_malignant(c) && c.date < e.date) return false;
        if (c.system == CodeSystem::ICD10 && std::labs(c.date - e.date) <= 30 &&
            (oracle_prefix(c.code, "A41") || oracle_prefix(c.code, "R65.1") || oracle_prefix(c.code, "R65.2")))
            return false;
    }
    return true;
}

void check_split(const std::vector<LabeledEncounter>& encounters, std::uint64_t seed, CohortCheck& chk) {
    // Re-split everything not pinned to development, then recount per stratum.
    auto fresh = encounters;
    for (auto& e : fresh)
        if (!(e.enrichment && e.label)) e.split = Split::unassigned;
    SplitParams sp;
    sp.seed = seed;
    fresh = split_dev_val(fresh, sp);

    struct Key {
        Date first;
        double age = 0;
        Sex sex = Sex::female;
        bool label = false;
        bool pinned = false;
        std::set<Split> splits;
    };
    std::map<std::string, Key> patients;
    for (const auto& e : fresh) {
        auto [it, is_new] = patients.try_emplace(e.record.patient_id);
        auto& k = it->second;
        if (is_new || e.record.date < k.first) {
            k.first = e.record.date;
            k.age = e.record.age_years;
            k.sex = e.record.sex;
        }
        k.label = k.label || e.label;
        k.pinned = k.pinned || (e.enrichment && e.label);
        k.splits.insert(e.split);
    }
    std::map<std::string, std::pair<int, int>> strata;  // key -> (development, validation)
    std::pair<int, int> pooled{0, 0};
    std::map<std::string, int> sizes;
    for (const auto& [id, k] : patients) {
        if (k.splits.size() != 1) chk.fail("patient " + id + " spans both splits");
        if (k.pinned) {
            if (*k.splits.begin() != Split::development) chk.fail("pinned case " + id + " left development");
            continue;
        }
        const std::string key = std::to_string(static_cast<int>(std::floor(k.age / 5))) + (k.sex == Sex::male ? "m" : "f") +
                                (k.label ? "+" : "-");
        ++sizes[key];
        auto& slot = strata[key];
        (*k.splits.begin() == Split::development ? slot.first : slot.second)++;
    }
    for (const auto& [key, dv] : strata) {
        if (sizes[key] < 3) {
            pooled.first += dv.first;
            pooled.second += dv.second;
            continue;
        }
        const double n = dv.first + dv.second;
        if (std::abs(dv.first - 2.0 * n / 3.0) > kRatioSlack) chk.fail("stratum " + key + " split " + std::to_string(dv.first) + ":" + std::to_string(dv.second));
    }
    const double pn = pooled.first + pooled.second;
    if (pn > 0 && std::abs(pooled.first - 2.0 * pn / 3.0) > kRatioSlack) chk.fail("pooled strata split off 2:1");
}

Outcome cohort_logic() {
    const auto catalog = load_marker_catalog(kCatalog);
    const auto rules = DerivedRules::for_catalog(catalog);
    CohortCheck chk;
    Rng meta(8);
    const CancerType types[] = {CancerType::colorectal, CancerType::liver, CancerType::lung};
    for (int trial = 0; trial < 6; ++trial) {
        const auto type = types[trial % 3];
        SynthConfig sc;
        sc.n_per_class = {{"no_cancer", 1200 + meta.below(600)}, {std::string(to_string(type)), 150 + meta.below(100)}};
        sc.seed = 100 + trial;
        sc.missing_cmp = meta.uniform(0.05, 0.35);  // pushes many encounters near the 18-marker cut
        sc.missing_cbc = meta.uniform(0.05, 0.35);
        sc.max_encounters = 3 + static_cast<int>(meta.below(4));
        sc.unscreened_fraction = 0.1;
        sc.unconfirmed_fraction = 0.1;
        sc.infection_rate = 0.05;
        const auto records = synthesize_cohort(catalog, sc);
        SplitParams sp;
        sp.seed = 900 + trial;
        const auto spec = CohortSpec::defaults(type);
        const auto result = run_cohort_pipeline(records, spec, sp, rules);

        std::map<std::string, std::vector<EncounterRecord>> visits;
        std::map<std::string, std::vector<ClaimCode>> history;
        for (const auto& r : records) {
            visits[r.patient_id].push_back(r);
            for (const auto& c : r.codes) history[r.patient_id].push_back(c);
            ++chk.encounters_in;
            chk.below_markers_in += oracle_marker_count(r, catalog) < 18;
            chk.out_of_age_in += r.age_years < 40 || r.age_years > 89;
        }

        std::map<std::string, std::set<std::string>> kept;
        std::map<std::string, std::pair<bool, std::optional<Date>>> labels;
        for (const auto& e : result.encounters) {
            ++chk.encounters_out;
            const auto& pid = e.record.patient_id;
            kept[pid].insert(e.record.encounter_id);
            labels[pid] = {e.label, e.diagnosis_date};
            if (oracle_marker_count(e.record, catalog) < 18) chk.fail(e.record.encounter_id + " has < 18 markers");
            if (e.record.age_years < 40 || e.record.age_years > 89) chk.fail(e.record.encounter_id + " outside ages 40-89");
            if (e.label) {
                std::optional<Date> first;
                for (const auto& c : history[pid])
                    for (const auto& p : spec.diagnosis_icd_prefixes)
                        if (c.system == CodeSystem::ICD10 && oracle_prefix(c.code, p) && (!first || c.date < *first)) first = c.date;
                if (!first || !e.diagnosis_date || *first != *e.diagnosis_date) chk.fail(pid + " diagnosis date mismatch");
                else if (*first - e.record.date < 0 || *first - e.record.date >= 365) chk.fail(e.record.encounter_id + " outside 365 days");
            } else {
                for (const auto& c : history[pid])
                    if (oracle_malignant(c)) chk.fail(pid + " control with a malignancy code");
            }
            if (e.split == Split::unassigned) chk.fail(e.record.encounter_id + " unassigned");
        }
        for (const auto& r : records) {
            if (!labels.contains(r.patient_id)) continue;
            const auto& [label, dx] = labels[r.patient_id];
            if (label && r.date > *dx) continue;
            const bool want = oracle_qualifies(r, visits[r.patient_id], history[r.patient_id], label, dx, catalog);
            const bool have = kept[r.patient_id].contains(r.encounter_id);
            if (want != have) chk.fail(r.encounter_id + (want ? " wrongly dropped" : " wrongly kept"));
            if (label && !have) chk.outside_window_in += (*dx - r.date) >= 365;
        }
        // Split disjointness of the pipeline output itself.
        std::map<std::string, std::set<Split>> splits;
        for (const auto& e : result.encounters) splits[e.record.patient_id].insert(e.split);
        for (const auto& [pid, s] : splits)
            if (s.size() != 1) chk.fail(pid + " in both splits");
        check_split(result.encounters, 5000 + trial, chk);
    }
    // Every filter must have had something to reject.
    const bool exercised = chk.below_markers_in > 0 && chk.out_of_age_in > 0 && chk.outside_window_in > 0;
    Outcome o;
    o.pass = chk.violations.empty() && exercised && chk.encounters_out > 0;
    o.detail = "6 cohorts, " + std::to_string(chk.encounters_in) + " encounters in, " + std::to_string(chk.encounters_out) +
               " kept; rejected candidates: " + std::to_string(chk.below_markers_in) + " under 18 markers, " +
               std::to_string(chk.out_of_age_in) + " outside ages, " + std::to_string(chk.outside_window_in) + " outside window";
    for (const auto& v : chk.violations) o.detail += "; " + v;
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double limit_seconds;
        std::function<Outcome()> run;
    };
    PlantedState planted;
    const std::vector<Criterion> criteria{
        {1, "gradient checks", 60, gradients},
        {2, "exact-statistics oracles", 120, exact_statistics},
        {3, "Shapley correctness", 120, shapley},
        {4, "likelihood-ratio arithmetic", 60, likelihood_ratios},
        {5, "planted-signal end to end", 600, [&] { return planted_signal(planted); }},
        {6, "missingness robustness", 60, [&] { return missingness_robustness(planted); }},
        {7, "reproducibility", 600, [&] { return reproducibility(planted); }},
        {8, "cohort-logic conformance", 300, cohort_logic},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        if (secs > c.limit_seconds) {
            o.pass = false;
            o.detail += "; exceeded " + fmt("%.0f", c.limit_seconds) + " s";
        }
        failures += !o.pass;
        std::printf("criterion %d %-30s %s  (%.1f s) %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
        std::fflush(stdout);
    }
    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
