#pragma once

#include <string>
#include <vector>

#include "subsel/model.hpp"
#include "subsel/partition.hpp"

namespace subsel {

struct MetricCurve {
    std::vector<double> xs;  // fraction of steps, 0 to 1, strictly increasing
    std::vector<double> ys;  // probability of the explained class
    double auc = 0.0;        // trapezoidal area
};

/// Step 0 shows the fill image; step t reveals the first t elements of
/// `order`. ys are softmax probabilities of class_id, xs = t/|order|.
MetricCurve insertion_curve(const LayeredModel& model, const CandidateSet& candidates,
                            const std::vector<int>& order, int class_id);

/// Step 0 shows the full image; step t masks the first t elements of
/// `order`.
MetricCurve deletion_curve(const LayeredModel& model, const CandidateSet& candidates,
                           const std::vector<int>& order, int class_id);

/// Composite trapezoid rule; xs must be strictly increasing and match ys
/// in length.
double trapezoid_auc(const std::vector<double>& xs, const std::vector<double>& ys);

/// CSV with header "step,x,y".
std::string curve_to_csv(const MetricCurve& curve);

}  // namespace subsel
