#include "subsel/submodular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include <json.hpp>

#include "subsel/errors.hpp"
#include "subsel/rng.hpp"

namespace subsel {

Objective::Objective(ObjectiveKind kind, std::vector<Component> components)
    : kind_(kind), components_(std::move(components)) {
    if (components_.empty()) {
        throw ConfigError("objective: needs at least one component");
    }
    bool any_positive = false;
    for (const Component& c : components_) {
        if (c.weight < 0.0) {
            throw ConfigError("objective: component weights must be >= 0");
        }
        if (c.weight > 0.0) {
            any_positive = true;
        }
        if (!c.fn) {
            throw ConfigError("objective: component function missing: " + c.name);
        }
    }
    if (!any_positive) {
        throw ConfigError("objective: all component weights are zero");
    }
}

double Objective::evaluate(const std::vector<int>& subset) const {
    double total = 0.0;
    for (const Component& c : components_) {
        if (c.weight == 0.0) {
            continue;
        }
        total += c.weight * c.fn(subset);
    }
    return total;
}

std::vector<double> Objective::component_values(const std::vector<int>& subset) const {
    std::vector<double> out;
    out.reserve(components_.size());
    for (const Component& c : components_) {
        out.push_back(c.fn(subset));
    }
    return out;
}

Objective Objective::modular(std::vector<double> element_weights) {
    auto weights = std::make_shared<std::vector<double>>(std::move(element_weights));
    Component c;
    c.name = "modular";
    c.weight = 1.0;
    c.fn = [weights](const std::vector<int>& subset) {
        double acc = 0.0;
        for (int id : subset) {
            acc += weights->at(static_cast<std::size_t>(id));
        }
        return acc;
    };
    return Objective(ObjectiveKind::Attribution, {std::move(c)});
}

std::string SelectionTrace::to_json(const std::vector<std::string>& component_names) const {
    nlohmann::json steps = nlohmann::json::array();
    for (std::size_t t = 0; t < order.size(); ++t) {
        nlohmann::json components = nlohmann::json::object();
        if (t < component_breakdown.size()) {
            for (std::size_t c = 0; c < component_breakdown[t].size(); ++c) {
                const std::string name =
                    c < component_names.size() ? component_names[c] : "component_" + std::to_string(c);
                components[name] = component_breakdown[t][c];
            }
        }
        steps.push_back({{"step", t},
                         {"element", order[t]},
                         {"gain", gains[t]},
                         {"objective_value", objective_values[t]},
                         {"components", components}});
    }
    nlohmann::json j = {{"format_version", 1},
                        {"order", order},
                        {"gains", gains},
                        {"objective_values", objective_values},
                        {"empty_value", empty_value},
                        {"evaluations", evaluations},
                        {"steps", steps}};
    return j.dump(2);
}

namespace {

void check_selection_args(int ground_size, int k) {
    if (ground_size < 1) {
        throw ConfigError("selection: empty ground set");
    }
    if (k < 1 || k > ground_size) {
        throw ConfigError("selection: k must lie in [1, |V|]");
    }
}

}  // namespace

SelectionTrace greedy(const Objective& objective, int ground_size, int k) {
    check_selection_args(ground_size, k);
    SelectionTrace trace;
    trace.empty_value = objective.evaluate({});
    ++trace.evaluations;

    std::vector<int> subset;
    std::vector<bool> chosen(static_cast<std::size_t>(ground_size), false);
    double current = trace.empty_value;

    for (int step = 0; step < k; ++step) {
        int best_id = -1;
        double best_value = -std::numeric_limits<double>::infinity();
        for (int u = 0; u < ground_size; ++u) {
            if (chosen[static_cast<std::size_t>(u)]) {
                continue;
            }
            subset.push_back(u);
            const double value = objective.evaluate(subset);
            ++trace.evaluations;
            subset.pop_back();
            if (value > best_value) {  // strict: ties keep the lower id
                best_value = value;
                best_id = u;
            }
        }
        subset.push_back(best_id);
        chosen[static_cast<std::size_t>(best_id)] = true;
        trace.order.push_back(best_id);
        trace.gains.push_back(best_value - current);
        trace.objective_values.push_back(best_value);
        trace.component_breakdown.push_back(objective.component_values(subset));
        current = best_value;
    }
    return trace;
}

SelectionTrace lazy_greedy(const Objective& objective, int ground_size, int k) {
    check_selection_args(ground_size, k);
    SelectionTrace trace;
    trace.empty_value = objective.evaluate({});
    ++trace.evaluations;

    struct Entry {
        double bound;
        int id;
        int stamp;  // step at which the bound was computed
    };
    // max bound first; equal bounds pop the lower id first
    auto cmp = [](const Entry& a, const Entry& b) {
        if (a.bound != b.bound) {
            return a.bound < b.bound;
        }
        return a.id > b.id;
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> heap(cmp);

    std::vector<int> subset;
    double current = trace.empty_value;

    for (int u = 0; u < ground_size; ++u) {
        const double value = objective.evaluate({u});
        ++trace.evaluations;
        heap.push({value - current, u, 0});
    }

    for (int step = 0; step < k; ++step) {
        while (true) {
            Entry top = heap.top();
            heap.pop();
            if (top.stamp == step) {
                // Fresh bound: every remaining entry has a (stale, hence
                // upper-bounding) key no better than this one, so the
                // greedy argmax with low-id tie-break is exactly this id.
                subset.push_back(top.id);
                const double value = current + top.bound;
                trace.order.push_back(top.id);
                trace.gains.push_back(top.bound);
                trace.objective_values.push_back(value);
                trace.component_breakdown.push_back(objective.component_values(subset));
                current = value;
                break;
            }
            subset.push_back(top.id);
            const double value = objective.evaluate(subset);
            ++trace.evaluations;
            subset.pop_back();
            heap.push({value - current, top.id, step});
        }
    }
    return trace;
}

namespace {

void brute_force_rec(const Objective& objective, int ground_size, int k, int start,
                     std::vector<int>& current, BruteForceResult& best, bool& has_best) {
    const double value = objective.evaluate(current);
    if (!has_best || value > best.value) {
        best.value = value;
        best.subset = current;
        has_best = true;
    }
    if (static_cast<int>(current.size()) == k) {
        return;
    }
    for (int u = start; u < ground_size; ++u) {
        current.push_back(u);
        brute_force_rec(objective, ground_size, k, u + 1, current, best, has_best);
        current.pop_back();
    }
}

}  // namespace

BruteForceResult brute_force(const Objective& objective, int ground_size, int k) {
    if (ground_size < 1 || ground_size > 20) {
        throw ConfigError("brute_force: ground set must have 1..20 elements");
    }
    if (k < 0 || k > ground_size) {
        throw ConfigError("brute_force: k must lie in [0, |V|]");
    }
    BruteForceResult best;
    bool has_best = false;
    std::vector<int> current;
    // Lexicographic subset enumeration with prefixes first; strict
    // improvement keeps the lexicographically first optimum.
    brute_force_rec(objective, ground_size, k, 0, current, best, has_best);
    return best;
}

SubmodularityReport submodularity_ratio(const Objective& objective, int ground_size,
                                        std::int64_t trials, std::uint64_t seed) {
    if (ground_size < 2 || ground_size > 12) {
        throw ConfigError("submodularity_ratio: ground size must lie in [2, 12]");
    }
    if (trials < 1) {
        throw ConfigError("submodularity_ratio: trials must be >= 1");
    }

    // Memoized evaluation by subset bitmask.
    std::vector<double> cache(static_cast<std::size_t>(1) << ground_size,
                              std::numeric_limits<double>::quiet_NaN());
    auto value_of = [&](std::uint32_t mask) {
        double& slot = cache[mask];
        if (std::isnan(slot)) {
            std::vector<int> subset;
            for (int i = 0; i < ground_size; ++i) {
                if (mask & (1u << i)) {
                    subset.push_back(i);
                }
            }
            slot = objective.evaluate(subset);
        }
        return slot;
    };

    SubmodularityReport report;
    report.min_ratio = std::numeric_limits<double>::infinity();
    double ratio_sum = 0.0;
    std::int64_t ratio_count = 0;

    auto consider = [&](std::uint32_t a_mask, std::uint32_t b_mask, int x) {
        const std::uint32_t xbit = 1u << x;
        const double fa = value_of(a_mask);
        const double fax = value_of(a_mask | xbit);
        const double fb = value_of(b_mask);
        const double fbx = value_of(b_mask | xbit);
        if (fax < fa) {
            ++report.monotonicity_violations;
        }
        const double denom = fbx - fb;
        if (denom > 1e-12) {
            const double ratio = (fax - fa) / denom;
            report.min_ratio = std::min(report.min_ratio, ratio);
            ratio_sum += ratio;
            ++ratio_count;
        }
        ++report.samples;
    };

    // Exhaustive up to 3^n * n triple count when it fits the trial budget,
    // otherwise seeded sampling.
    double exhaustive_cost = static_cast<double>(ground_size);
    for (int i = 0; i < ground_size; ++i) {
        exhaustive_cost *= 3.0;
    }
    if (exhaustive_cost <= static_cast<double>(trials)) {
        const std::uint32_t full = (1u << ground_size) - 1u;
        for (std::uint32_t b_mask = 0; b_mask <= full; ++b_mask) {
            // enumerate subsets a_mask of b_mask
            std::uint32_t a_mask = b_mask;
            while (true) {
                for (int x = 0; x < ground_size; ++x) {
                    if (!(b_mask & (1u << x))) {
                        consider(a_mask, b_mask, x);
                    }
                }
                if (a_mask == 0) {
                    break;
                }
                a_mask = (a_mask - 1) & b_mask;
            }
        }
    } else {
        RngStream rng = RngStream::derive(seed, {0xD1A6u});
        for (std::int64_t t = 0; t < trials; ++t) {
            // random B, random subset A of B, random x outside B
            std::uint32_t b_mask = 0;
            for (int i = 0; i < ground_size; ++i) {
                if (rng.uniform() < 0.5) {
                    b_mask |= 1u << i;
                }
            }
            std::vector<int> outside;
            for (int i = 0; i < ground_size; ++i) {
                if (!(b_mask & (1u << i))) {
                    outside.push_back(i);
                }
            }
            if (outside.empty()) {
                continue;
            }
            std::uint32_t a_mask = 0;
            for (int i = 0; i < ground_size; ++i) {
                if ((b_mask & (1u << i)) && rng.uniform() < 0.5) {
                    a_mask |= 1u << i;
                }
            }
            const int x = outside[static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::uint64_t>(outside.size())))];
            consider(a_mask, b_mask, x);
        }
    }

    report.mean_ratio = ratio_count > 0 ? ratio_sum / static_cast<double>(ratio_count) : 0.0;
    if (ratio_count == 0) {
        report.min_ratio = 0.0;
    }
    return report;
}

Objective CoverageInstance::objective() const {
    auto covers_copy = std::make_shared<std::vector<std::vector<int>>>(covers);
    auto weights_copy = std::make_shared<std::vector<double>>(element_weights);
    const int universe = universe_size;
    Component c;
    c.name = "coverage";
    c.weight = 1.0;
    c.fn = [covers_copy, weights_copy, universe](const std::vector<int>& subset) {
        std::vector<bool> covered(static_cast<std::size_t>(universe), false);
        double modular = 0.0;
        for (int id : subset) {
            for (int item : covers_copy->at(static_cast<std::size_t>(id))) {
                covered[static_cast<std::size_t>(item)] = true;
            }
            if (!weights_copy->empty()) {
                modular += weights_copy->at(static_cast<std::size_t>(id));
            }
        }
        double total = modular;
        for (bool b : covered) {
            if (b) {
                total += 1.0;
            }
        }
        return total;
    };
    return Objective(ObjectiveKind::Attribution, {std::move(c)});
}

CoverageInstance make_coverage_instance(std::uint64_t seed, int ground_size, int universe_size) {
    if (ground_size < 1 || universe_size < 10) {
        throw ConfigError("make_coverage_instance: bad sizes");
    }
    RngStream rng = RngStream::derive(seed, {0xC0Fu});
    CoverageInstance inst;
    inst.universe_size = universe_size;
    inst.covers.resize(static_cast<std::size_t>(ground_size));
    for (auto& cover : inst.covers) {
        const int count = 4 + static_cast<int>(rng.uniform_int(7));  // 4..10
        std::vector<bool> used(static_cast<std::size_t>(universe_size), false);
        for (int i = 0; i < count; ++i) {
            int item;
            do {
                item = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(universe_size)));
            } while (used[static_cast<std::size_t>(item)]);
            used[static_cast<std::size_t>(item)] = true;
            cover.push_back(item);
        }
        std::sort(cover.begin(), cover.end());
    }
    if (rng.uniform() < 0.5) {
        inst.element_weights.resize(static_cast<std::size_t>(ground_size));
        for (double& w : inst.element_weights) {
            w = 0.1 + 2.0 * rng.uniform();
        }
    }
    return inst;
}

}  // namespace subsel
