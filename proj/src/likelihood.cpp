#include "dprof/likelihood.hpp"

#include "dprof/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace dprof {

using nlohmann::json;

std::size_t ScoredCohort::positives() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.label ? 1 : 0;
    return n;
}

double ScoredCohort::prevalence() const {
    if (entries.empty()) throw ValidationError("scored cohort is empty");
    return static_cast<double>(positives()) / static_cast<double>(entries.size());
}

std::vector<double> ScoredCohort::scores() const {
    std::vector<double> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.score);
    return out;
}

std::vector<int> ScoredCohort::labels() const {
    std::vector<int> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.label ? 1 : 0);
    return out;
}

double odds(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("odds: probability outside [0, 1]");
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    return p / (1.0 - p);
}

double likelihood_ratio(double post_p, double pre_p) {
    if (!(pre_p > 0.0 && pre_p < 1.0)) throw ValidationError("likelihood_ratio: pre-test probability must be in (0, 1)");
    return odds(post_p) / odds(pre_p);
}

LrEstimate lr_from_counts(std::size_t sub_pos, std::size_t sub_n, std::size_t pos, std::size_t n, bool correction) {
    if (sub_n == 0) throw ValidationError("likelihood ratio: empty subgroup");
    if (sub_pos > sub_n || pos > n || sub_n > n) throw ValidationError("likelihood ratio: inconsistent counts");
    if (pos == 0 || pos == n) throw ValidationError("likelihood ratio: cohort must contain both classes");
    LrEstimate e;
    e.pre_odds = static_cast<double>(pos) / static_cast<double>(n - pos);
    if (sub_n == n) {
        // Subgroup is the whole cohort.
        e.post_odds = e.pre_odds;
        e.lr = 1.0;
        return e;
    }
    const std::size_t sub_neg = sub_n - sub_pos;
    if (sub_pos == 0 || sub_neg == 0) {
        if (correction) {
            e.corrected = true;
            e.post_odds = (static_cast<double>(sub_pos) + 0.5) / (static_cast<double>(sub_neg) + 0.5);
        } else if (sub_neg == 0) {
            e.infinite = true;
            e.post_odds = std::numeric_limits<double>::infinity();
        } else {
            e.post_odds = 0.0;
        }
    } else {
        e.post_odds = static_cast<double>(sub_pos) / static_cast<double>(sub_neg);
    }
    e.lr = e.post_odds / e.pre_odds;
    return e;
}

SimilarCohort similar_cohort(const ScoredCohort& dev, const RiskAssessment& a, std::size_t min_n) {
    SimilarCohort out;
    for (const auto& e : dev.entries) {
        if (e.score >= a.ci_low && e.score <= a.ci_high) out.cohort.entries.push_back(e);
    }
    if (out.cohort.size() >= min_n || out.cohort.size() == dev.size()) return out;
    std::vector<std::size_t> order(dev.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const double dx = std::abs(dev.entries[x].score - a.mean);
        const double dy = std::abs(dev.entries[y].score - a.mean);
        if (dx != dy) return dx < dy;
        if (dev.entries[x].score != dev.entries[y].score) return dev.entries[x].score < dev.entries[y].score;
        return x < y;
    });
    out.expanded = true;
    out.cohort.entries.clear();
    for (std::size_t k = 0; k < std::min(min_n, order.size()); ++k) out.cohort.entries.push_back(dev.entries[order[k]]);
    return out;
}

SimilarCohortIndex::SimilarCohortIndex(const ScoredCohort& dev) {
    std::vector<std::size_t> order(dev.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return dev.entries[x].score < dev.entries[y].score; });
    prefix_pos_.assign(1, 0);
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& e = dev.entries[order[k]];
        if (k == 0 || e.score != scores_.back()) group_start_.push_back(k);
        scores_.push_back(e.score);
        prefix_pos_.push_back(prefix_pos_.back() + (e.label ? 1 : 0));
    }
    group_start_.push_back(order.size());
}

SimilarCohortIndex::Counts SimilarCohortIndex::counts(const RiskAssessment& a, std::size_t min_n) const {
    Counts c;
    const auto lo = std::lower_bound(scores_.begin(), scores_.end(), a.ci_low) - scores_.begin();
    const auto hi = std::upper_bound(scores_.begin(), scores_.end(), a.ci_high) - scores_.begin();
    if (hi > lo) {
        c.n = static_cast<std::size_t>(hi - lo);
        c.positives = prefix_pos_[static_cast<std::size_t>(hi)] - prefix_pos_[static_cast<std::size_t>(lo)];
    }
    if (c.n >= min_n || c.n == scores_.size()) return c;

    // Walk equal-score groups outward from the mean.
    c = Counts{};
    c.expanded = true;
    const std::size_t groups = group_start_.size() - 1;
    const auto split = static_cast<std::size_t>(std::lower_bound(scores_.begin(), scores_.end(), a.mean) - scores_.begin());
    // First group whose score is >= mean; groups before it lie below the mean.
    std::size_t right = static_cast<std::size_t>(
        std::lower_bound(group_start_.begin(), group_start_.end() - 1, split) - group_start_.begin());
    std::ptrdiff_t left = static_cast<std::ptrdiff_t>(right) - 1;
    std::size_t need = std::min(min_n, scores_.size());
    while (need > 0) {
        const bool has_left = left >= 0;
        const bool has_right = right < groups;
        bool take_left;
        if (has_left && has_right) {
            const double dl = a.mean - scores_[group_start_[static_cast<std::size_t>(left)]];
            const double dr = scores_[group_start_[right]] - a.mean;
            take_left = dl <= dr;
        } else {
            take_left = has_left;
        }
        const std::size_t g = take_left ? static_cast<std::size_t>(left) : right;
        const std::size_t start = group_start_[g];
        const std::size_t size = group_start_[g + 1] - start;
        const std::size_t k = std::min(need, size);
        c.n += k;
        c.positives += prefix_pos_[start + k] - prefix_pos_[start];
        need -= k;
        if (take_left) {
            --left;
        } else {
            ++right;
        }
    }
    return c;
}

std::vector<double> default_thresholds(std::size_t n) {
    if (n < 2) throw std::invalid_argument("default_thresholds: need at least two points");
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i) / static_cast<double>(n - 1);
    return t;
}

LrCurve lr_curve(const ScoredCohort& cohort, std::span<const double> thresholds, bool correction) {
    if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ValidationError("lr_curve: thresholds must ascend");
    std::vector<std::pair<double, bool>> sorted;
    for (const auto& e : cohort.entries) sorted.emplace_back(e.score, e.label);
    std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    const std::size_t n = sorted.size();
    const std::size_t pos = cohort.positives();
    std::vector<std::size_t> prefix_pos(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) prefix_pos[i + 1] = prefix_pos[i] + (sorted[i].second ? 1 : 0);
    LrCurve curve;
    for (double t : thresholds) {
        const auto above = static_cast<std::size_t>(
            std::partition_point(sorted.begin(), sorted.end(), [t](const auto& x) { return x.first >= t; }) -
            sorted.begin());
        if (above == 0) {
            curve.truncated_at = t;
            break;
        }
        const auto est = lr_from_counts(prefix_pos[above], above, pos, n, correction);
        curve.points.push_back({t, est.lr, above, prefix_pos[above], est.corrected});
    }
    return curve;
}

std::string lr_curve_csv(const LrCurve& curve) {
    std::ostringstream out;
    out << "threshold,lr,n_above,n_pos_above,corrected\n";
    char buf[64];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%.4f,%.10g,", p.threshold, p.lr);
        out << buf << p.n_above << ',' << p.n_pos_above << ',' << (p.corrected ? 1 : 0) << '\n';
    }
    if (curve.truncated_at) {
        std::snprintf(buf, sizeof buf, "%.4f", *curve.truncated_at);
        out << "# end: empty subgroup at threshold " << buf << '\n';
    }
    return out.str();
}

LrNullBand lr_permutation_band(const ScoredCohort& cohort, std::span<const double> thresholds,
                               std::size_t permutations, std::uint64_t seed, double level) {
    if (permutations < 20) throw ValidationError("lr_permutation_band: need at least 20 permutations");
    const LrCurve base = lr_curve(cohort, thresholds);
    const std::size_t m = base.points.size();
    std::vector<std::vector<double>> curves;
    ScoredCohort perm = cohort;
    std::vector<bool> labels;
    for (const auto& e : cohort.entries) labels.push_back(e.label);
    Rng rng(seed);
    for (std::size_t k = 0; k < permutations; ++k) {
        for (std::size_t i = labels.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.below(i));
            std::swap(perm.entries[i - 1].label, perm.entries[j].label);
        }
        const auto c = lr_curve(perm, thresholds);
        std::vector<double> lr(m);
        for (std::size_t t = 0; t < m; ++t) lr[t] = c.points[t].lr;
        curves.push_back(std::move(lr));
    }
    std::vector<std::vector<double>> sorted_at(m, std::vector<double>(permutations));
    for (std::size_t t = 0; t < m; ++t) {
        for (std::size_t k = 0; k < permutations; ++k) sorted_at[t][k] = curves[k][t];
        std::sort(sorted_at[t].begin(), sorted_at[t].end());
    }
    LrNullBand band;
    band.thresholds.assign(thresholds.begin(), thresholds.begin() + static_cast<std::ptrdiff_t>(m));
    // Trim j permutations from each tail; shrink j until enough curves fit.
    for (std::size_t j = permutations / 2; ; --j) {
        std::vector<double> lo(m), hi(m);
        for (std::size_t t = 0; t < m; ++t) {
            lo[t] = sorted_at[t][j];
            hi[t] = sorted_at[t][permutations - 1 - j];
        }
        std::size_t inside = 0;
        for (const auto& c : curves) {
            bool ok = true;
            for (std::size_t t = 0; t < m && ok; ++t) ok = c[t] >= lo[t] && c[t] <= hi[t];
            inside += ok ? 1 : 0;
        }
        if (static_cast<double>(inside) >= level * static_cast<double>(permutations) || j == 0) {
            band.lower = std::move(lo);
            band.upper = std::move(hi);
            band.pointwise_level = 1.0 - 2.0 * static_cast<double>(j) / static_cast<double>(permutations);
            break;
        }
    }
    return band;
}

OorScore oor_score(const EncounterRecord& record, const MarkerCatalog& catalog) {
    OorScore s;
    for (const auto& [id, value] : record.measurements) {
        const MarkerDef* def = catalog.find(id);
        if (def == nullptr || !def->reference_range) continue;
        ++s.ranged;
        if (value < def->reference_range->first || value > def->reference_range->second) ++s.out_of_range;
    }
    if (s.ranged == 0) {
        s.no_ranged_markers = true;
        return s;
    }
    s.score = static_cast<double>(s.out_of_range) / static_cast<double>(s.ranged);
    return s;
}

std::optional<double> SingleMarkerScaler::score(const EncounterRecord& record) const {
    const auto it = record.measurements.find(marker);
    if (it == record.measurements.end()) return std::nullopt;
    double v = it->second;
    if (log_transform) v = std::log10(std::max(v, detection_limit));
    double s = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    return flip ? 1.0 - s : s;
}

SingleMarkerScaler fit_single_marker(std::span<const EncounterRecord> development, const MarkerCatalog& catalog,
                                     const std::string& marker) {
    const MarkerDef& def = catalog.at(marker);
    SingleMarkerScaler sc;
    sc.marker = marker;
    sc.log_transform = def.log_transform;
    sc.flip = def.risk_direction == RiskDirection::low_is_risk;
    std::vector<double> raw;
    for (const auto& r : development) {
        const auto it = r.measurements.find(marker);
        if (it != r.measurements.end()) raw.push_back(it->second);
    }
    double min_pos = std::numeric_limits<double>::infinity();
    for (double v : raw)
        if (v > 0.0) min_pos = std::min(min_pos, v);
    sc.detection_limit = std::isfinite(min_pos) ? min_pos / 2.0 : 1e-6;
    if (raw.empty()) throw ValidationError("single marker baseline: no development values for " + marker);
    sc.lo = std::numeric_limits<double>::infinity();
    sc.hi = -std::numeric_limits<double>::infinity();
    for (double v : raw) {
        const double t = sc.log_transform ? std::log10(std::max(v, sc.detection_limit)) : v;
        sc.lo = std::min(sc.lo, t);
        sc.hi = std::max(sc.hi, t);
    }
    if (!(sc.hi > sc.lo)) throw ValidationError("single marker baseline: constant development values for " + marker);
    return sc;
}

double age_score(double age) { return std::clamp((age - 40.0) / (85.0 - 40.0), 0.0, 1.0); }

CancerLrEntry build_lr_entry(const std::string& cancer_type, const ScoredCohort& dev, const RiskAssessment& assessment,
                             std::size_t min_n) {
    CancerLrEntry e;
    e.cancer_type = cancer_type;
    e.assessment = assessment;
    const auto sim = similar_cohort(dev, assessment, min_n);
    e.similar_n = sim.cohort.size();
    e.similar_positives = sim.cohort.positives();
    e.expanded = sim.expanded;
    e.pre_test_probability = dev.prevalence();
    e.post_test_probability = sim.cohort.prevalence();
    e.estimate = lr_from_counts(e.similar_positives, e.similar_n, dev.positives(), dev.size());
    return e;
}

json to_json(const LrReport& report) {
    json entries = json::array();
    for (const auto& e : report.entries) {
        entries.push_back({{"cancer_type", e.cancer_type},
                           {"score", e.assessment.mean},
                           {"std", e.assessment.std},
                           {"ci", {e.assessment.ci_low, e.assessment.ci_high}},
                           {"member_scores", e.assessment.member_scores},
                           {"similar_cohort_size", e.similar_n},
                           {"similar_cohort_positives", e.similar_positives},
                           {"similar_cohort_expanded", e.expanded},
                           {"pre_test_probability", e.pre_test_probability},
                           {"post_test_probability", e.post_test_probability},
                           {"pre_test_odds", e.estimate.pre_odds},
                           {"post_test_odds", e.estimate.post_odds},
                           {"lr", e.estimate.lr},
                           {"continuity_corrected", e.estimate.corrected}});
    }
    return json{{"patient_id", report.patient_id}, {"entries", entries}};
}

std::string render_lr_report(const LrReport& report) {
    std::ostringstream out;
    char buf[256];
    out << "Patient " << report.patient_id << '\n';
    for (const auto& e : report.entries) {
        std::snprintf(buf, sizeof buf, "  %s cancer: risk score %.3f (CI %.3f - %.3f)\n", e.cancer_type.c_str(),
                      e.assessment.mean, e.assessment.ci_low, e.assessment.ci_high);
        out << buf;
        std::snprintf(buf, sizeof buf, "    pre-test  %.2f%% (odds %.4f)\n", 100.0 * e.pre_test_probability,
                      e.estimate.pre_odds);
        out << buf;
        std::snprintf(buf, sizeof buf, "    post-test %.2f%% (odds %.4f)\n", 100.0 * e.post_test_probability,
                      e.estimate.post_odds);
        out << buf;
        std::snprintf(buf, sizeof buf, "    likelihood ratio %.2f%s, similar cohort %zu encounters (%zu with cancer)%s\n",
                      e.estimate.lr, e.estimate.corrected ? " (continuity corrected)" : "", e.similar_n,
                      e.similar_positives, e.expanded ? ", expanded to nearest scores" : "");
        out << buf;
    }
    return out.str();
}

}  // namespace dprof
