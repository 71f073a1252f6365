#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace subsel {

struct ObjectiveWeights {
    double mu1 = 1.0;
    double mu2 = 1.0;
    double mu3 = 1.0;
    double mu4 = 1.0;  // unused by the object-level composition
};

enum class ObjectiveKind { Attribution, Object };

struct Component {
    std::string name;
    double weight = 1.0;
    std::function<double(const std::vector<int>&)> fn;
};

/// Weighted sum of component set functions over subsets of {0..n-1}.
class Objective {
public:
    Objective(ObjectiveKind kind, std::vector<Component> components);

    double evaluate(const std::vector<int>& subset) const;
    std::vector<double> component_values(const std::vector<int>& subset) const;

    ObjectiveKind kind() const { return kind_; }
    const std::vector<Component>& components() const { return components_; }

    /// F(S) = sum of element weights; handy modular baseline.
    static Objective modular(std::vector<double> element_weights);

private:
    ObjectiveKind kind_;
    std::vector<Component> components_;
};

struct SelectionTrace {
    std::vector<int> order;                              // selected ids, selection order
    std::vector<double> gains;                           // marginal gain per step
    std::vector<double> objective_values;                // F(S_t) per step
    std::vector<std::vector<double>> component_breakdown;  // per-step component values
    double empty_value = 0.0;                            // F(empty set)
    std::int64_t evaluations = 0;                        // objective evaluations consumed

    std::string to_json(const std::vector<std::string>& component_names) const;
};

/// Plain greedy: k steps of argmax F(S + u), ties to the lower id. Runs
/// exactly k steps even when every remaining gain is negative.
SelectionTrace greedy(const Objective& objective, int ground_size, int k);

/// CELF-style lazy greedy with stale upper bounds; re-evaluates until the
/// heap top is fresh, so the trace matches greedy whenever the objective
/// is submodular. Reports how many evaluations it spent.
SelectionTrace lazy_greedy(const Objective& objective, int ground_size, int k);

struct BruteForceResult {
    std::vector<int> subset;
    double value = 0.0;
};

/// Exhaustive optimum over subsets of size <= k, |V| <= 20. Ties resolve
/// to the lexicographically first id list.
BruteForceResult brute_force(const Objective& objective, int ground_size, int k);

struct SubmodularityReport {
    double min_ratio = 0.0;   // min (F(A+x)-F(A)) / (F(B+x)-F(B)) over positive denominators
    double mean_ratio = 0.0;
    std::int64_t samples = 0;
    std::int64_t monotonicity_violations = 0;  // F(A+x) < F(A) occurrences
};

/// Diagnostic over sampled (or exhaustively enumerated when small) chains
/// A subset-of B, x outside B. Submodular objectives give min_ratio >= 1
/// and monotone ones give zero violations; the report states what holds,
/// it does not assume it.
SubmodularityReport submodularity_ratio(const Objective& objective, int ground_size,
                                        std::int64_t trials, std::uint64_t seed = 0);

/// Seeded monotone submodular benchmark instance: every element covers a
/// random 4-10 item slice of a 32-item universe, half the instances mix in
/// positive modular element weights.
struct CoverageInstance {
    std::vector<std::vector<int>> covers;  // per element, covered item ids
    std::vector<double> element_weights;   // empty when the modular term is off
    int universe_size = 32;

    Objective objective() const;
};

CoverageInstance make_coverage_instance(std::uint64_t seed, int ground_size = 10,
                                        int universe_size = 32);

}  // namespace subsel
