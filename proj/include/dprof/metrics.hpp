#pragma once

#include "dprof/likelihood.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dprof {

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
    double threshold = 0.0;
};

// Points run from (0, 0) to (1, 1) as (fpr, tpr); one point per distinct score.
struct RocCurve {
    std::vector<CurvePoint> points;
    double auc = 0.0;
};

// Points as (recall, precision), one per distinct score in descending order.
struct PrCurve {
    std::vector<CurvePoint> points;
    double ap = 0.0;
};

// Throws ValidationError when labels hold a single class.
RocCurve roc(std::span<const double> scores, std::span<const int> labels);
// Throws ValidationError when there are no positives.
PrCurve pr_curve(std::span<const double> scores, std::span<const int> labels);
double average_precision(std::span<const double> scores, std::span<const int> labels);

std::string roc_csv(const RocCurve& curve);
std::string pr_csv(const PrCurve& curve);

struct SubgroupEvaluation {
    std::size_t n = 0;
    std::size_t positives = 0;
    double prevalence = 0.0;
    RocCurve roc;
    PrCurve pr;
    LrCurve lr;
};

// Refuses (ValidationError) subgroups smaller than floor.
SubgroupEvaluation evaluate_subgroup(const ScoredCohort& cohort, const std::function<bool(const ScoredEntry&)>& member,
                                     std::size_t floor = 50, std::span<const double> thresholds = {});

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
    // Optional band drawn under the line.
    std::vector<std::pair<double, double>> band_low;
    std::vector<std::pair<double, double>> band_high;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    double x_min = 0.0, x_max = 1.0;
    double y_min = 0.0, y_max = 1.0;
    std::string annotation;
    bool diagonal = false;
};

std::string svg_line_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace dprof
