#include "dprof/metrics.hpp"

#include "dprof/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace dprof {

namespace {

struct Block {
    double score;
    std::uint64_t tp;
    std::uint64_t fp;
};

// Distinct scores in descending order with the class counts at each.
std::vector<Block> tie_blocks(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ValidationError("metrics: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<Block> blocks;
    for (std::size_t i : order) {
        if (!std::isfinite(scores[i])) throw ValidationError("metrics: non-finite score");
        if (blocks.empty() || blocks.back().score != scores[i]) blocks.push_back({scores[i], 0, 0});
        (labels[i] != 0 ? blocks.back().tp : blocks.back().fp) += 1;
    }
    return blocks;
}

}  // namespace

RocCurve roc(std::span<const double> scores, std::span<const int> labels) {
    const auto blocks = tie_blocks(scores, labels);
    std::uint64_t P = 0, N = 0;
    for (const auto& b : blocks) {
        P += b.tp;
        N += b.fp;
    }
    if (P == 0 || N == 0) throw ValidationError("roc: labels contain a single class");
    RocCurve c;
    c.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::uint64_t tp = 0, fp = 0;
    // Twice the area in units of 1/(P N), kept integral so the sum is exact.
    std::uint64_t area2 = 0;
    for (const auto& b : blocks) {
        area2 += b.fp * (2 * tp + b.tp);
        tp += b.tp;
        fp += b.fp;
        c.points.push_back({static_cast<double>(fp) / static_cast<double>(N), static_cast<double>(tp) / static_cast<double>(P),
                            b.score});
    }
    c.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(P) * static_cast<double>(N));
    return c;
}

PrCurve pr_curve(std::span<const double> scores, std::span<const int> labels) {
    const auto blocks = tie_blocks(scores, labels);
    std::uint64_t P = 0;
    for (const auto& b : blocks) P += b.tp;
    if (P == 0) throw ValidationError("average precision: no positive labels");
    PrCurve c;
    std::uint64_t tp = 0, fp = 0;
    double prev_recall = 0.0;
    for (const auto& b : blocks) {
        tp += b.tp;
        fp += b.fp;
        const double recall = static_cast<double>(tp) / static_cast<double>(P);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        c.ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        c.points.push_back({recall, precision, b.score});
    }
    return c;
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    return pr_curve(scores, labels).ap;
}

std::string roc_csv(const RocCurve& curve) {
    std::ostringstream out;
    out << "fpr,tpr,threshold\n";
    char buf[96];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", p.x, p.y, p.threshold);
        out << buf;
    }
    return out.str();
}

std::string pr_csv(const PrCurve& curve) {
    std::ostringstream out;
    out << "recall,precision,threshold\n";
    char buf[96];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", p.x, p.y, p.threshold);
        out << buf;
    }
    return out.str();
}

SubgroupEvaluation evaluate_subgroup(const ScoredCohort& cohort, const std::function<bool(const ScoredEntry&)>& member,
                                     std::size_t floor, std::span<const double> thresholds) {
    ScoredCohort sub;
    for (const auto& e : cohort.entries)
        if (member(e)) sub.entries.push_back(e);
    if (sub.size() < floor) {
        throw ValidationError("subgroup has " + std::to_string(sub.size()) + " entries, below the floor of " +
                              std::to_string(floor));
    }
    SubgroupEvaluation ev;
    ev.n = sub.size();
    ev.positives = sub.positives();
    ev.prevalence = sub.prevalence();
    const auto s = sub.scores();
    const auto l = sub.labels();
    ev.roc = roc(s, l);
    ev.pr = pr_curve(s, l);
    const auto t = thresholds.empty() ? default_thresholds() : std::vector<double>(thresholds.begin(), thresholds.end());
    ev.lr = lr_curve(sub, t);
    return ev;
}

namespace {

std::string esc(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += ch;
        }
    }
    return out;
}

}  // namespace

std::string svg_line_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    const double W = 480, H = 400, left = 60, right = 20, top = 40, bottom = 50;
    const double pw = W - left - right, ph = H - top - bottom;
    const double xs = spec.x_max > spec.x_min ? spec.x_max - spec.x_min : 1.0;
    const double ys = spec.y_max > spec.y_min ? spec.y_max - spec.y_min : 1.0;
    auto px = [&](double x) { return left + pw * (std::clamp(x, spec.x_min, spec.x_max) - spec.x_min) / xs; };
    auto py = [&](double y) { return top + ph * (1.0 - (std::clamp(y, spec.y_min, spec.y_max) - spec.y_min) / ys); };
    std::ostringstream o;
    char buf[128];
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(spec.title) << "</text>\n";
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = spec.x_min + xs * i / 5.0, fy = spec.y_min + ys * i / 5.0;
        std::snprintf(buf, sizeof buf, "%.3g", fx);
        o << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << buf << "</text>\n";
        std::snprintf(buf, sizeof buf, "%.3g", fy);
        o << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << esc(spec.x_label)
      << "</text>\n";
    o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << esc(spec.y_label) << "</text>\n";
    if (spec.diagonal) {
        o << "<line x1=\"" << px(spec.x_min) << "\" y1=\"" << py(spec.y_min) << "\" x2=\"" << px(spec.x_max) << "\" y2=\""
          << py(spec.y_max) << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* col = colors[s % 8];
        const auto& sr = series[s];
        if (!sr.band_low.empty() && sr.band_low.size() == sr.band_high.size()) {
            o << "<polygon fill=\"" << col << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
            for (const auto& [x, y] : sr.band_high) o << px(x) << ',' << py(y) << ' ';
            for (auto it = sr.band_low.rbegin(); it != sr.band_low.rend(); ++it) o << px(it->first) << ',' << py(it->second) << ' ';
            o << "\"/>\n";
        }
        o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : sr.points) o << px(x) << ',' << py(y) << ' ';
        o << "\"/>\n";
        o << "<text x=\"" << left + 10 << "\" y=\"" << top + 16 + 15 * static_cast<double>(s) << "\" fill=\"" << col << "\">"
          << esc(sr.name) << "</text>\n";
    }
    if (!spec.annotation.empty()) {
        o << "<text x=\"" << left + pw - 8 << "\" y=\"" << top + ph - 10 << "\" text-anchor=\"end\">" << esc(spec.annotation)
          << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace dprof
