#include "subsel/metrics.hpp"

#include <cstdio>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

void check_order(const CandidateSet& candidates, const std::vector<int>& order) {
    if (order.empty()) {
        throw ConfigError("metric curve: order must be non-empty");
    }
    std::vector<bool> seen(static_cast<std::size_t>(candidates.size()), false);
    for (int id : order) {
        if (id < 0 || id >= candidates.size()) {
            throw ConfigError("metric curve: unknown element id in order");
        }
        if (seen[static_cast<std::size_t>(id)]) {
            throw ConfigError("metric curve: duplicate element id in order");
        }
        seen[static_cast<std::size_t>(id)] = true;
    }
}

}  // namespace

MetricCurve insertion_curve(const LayeredModel& model, const CandidateSet& candidates,
                            const std::vector<int>& order, int class_id) {
    check_order(candidates, order);
    MetricCurve curve;
    const int steps = static_cast<int>(order.size());
    std::vector<int> revealed;
    for (int t = 0; t <= steps; ++t) {
        if (t > 0) {
            revealed.push_back(order[static_cast<std::size_t>(t - 1)]);
        }
        curve.xs.push_back(static_cast<double>(t) / steps);
        curve.ys.push_back(class_probability(model, compose(candidates, revealed), class_id));
    }
    curve.auc = trapezoid_auc(curve.xs, curve.ys);
    return curve;
}

MetricCurve deletion_curve(const LayeredModel& model, const CandidateSet& candidates,
                           const std::vector<int>& order, int class_id) {
    check_order(candidates, order);
    MetricCurve curve;
    const int steps = static_cast<int>(order.size());
    for (int t = 0; t <= steps; ++t) {
        std::vector<int> masked(order.begin(), order.begin() + t);
        const std::vector<int> kept = complement_of(candidates, masked);
        curve.xs.push_back(static_cast<double>(t) / steps);
        curve.ys.push_back(class_probability(model, compose(candidates, kept), class_id));
    }
    curve.auc = trapezoid_auc(curve.xs, curve.ys);
    return curve;
}

double trapezoid_auc(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) {
        throw ConfigError("trapezoid_auc: xs and ys differ in length");
    }
    if (xs.size() < 2) {
        throw ConfigError("trapezoid_auc: need at least two points");
    }
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
        const double dx = xs[i + 1] - xs[i];
        if (dx <= 0.0) {
            throw ConfigError("trapezoid_auc: xs must be strictly increasing");
        }
        area += dx * (ys[i] + ys[i + 1]) / 2.0;
    }
    return area;
}

std::string curve_to_csv(const MetricCurve& curve) {
    std::string out = "step,x,y\n";
    char buf[96];
    for (std::size_t i = 0; i < curve.xs.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i, curve.xs[i], curve.ys[i]);
        out += buf;
    }
    return out;
}

}  // namespace subsel
