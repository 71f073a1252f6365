#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "subsel/dataset.hpp"
#include "subsel/detector.hpp"
#include "subsel/metrics.hpp"
#include "subsel/model.hpp"
#include "subsel/partition.hpp"
#include "subsel/scores.hpp"
#include "subsel/slic.hpp"
#include "subsel/submodular.hpp"
#include "subsel/uncertainty.hpp"

namespace subsel {

struct PartitionConfig {
    enum class Kind { Grid, Slic };
    Kind kind = Kind::Grid;
    int grid_n = 7;
    int grid_m = 7;
    SlicConfig slic;
    std::vector<double> fill;  // empty: use the training mean from stats
};

struct ObjectiveConfig {
    ObjectiveKind kind = ObjectiveKind::Attribution;
    ObjectiveWeights weights;
    bool confidence_enabled = true;  // ablation switch for the mu1 term
    int target_class = -1;           // -1: explain the predicted class
    DetectionQuery query;            // object composition only
};

struct ExplainConfig {
    PartitionConfig partition;
    ObjectiveConfig objective;
    int k = 0;  // subset budget; 0 selects |V|
    bool lazy = false;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> echo_extra;  // merged into the report echo
};

/// Subset confidence: composes the subset, runs the descriptor pipeline on
/// the composition, and normalizes the raw score as a single-element batch
/// against the training bounds. Empty subsets score 0.
/// Captured references must outlive the component.
Component make_confidence_component(const LayeredModel& model, const CandidateSet& candidates,
                                    const TrainStats& stats, double weight);

/// mu1*confidence + mu2*effectiveness + mu3*consistency + mu4*collaboration.
Objective make_attribution_objective(const LayeredModel& model, const CandidateSet& candidates,
                                     const TrainStats& stats,
                                     const std::shared_ptr<const ScoreContext>& ctx,
                                     const ClassPrototype& prototype, int class_id,
                                     const ObjectiveConfig& config);

/// mu1*confidence + mu2*clue + mu3*object-collaboration.
Objective make_object_objective(const LayeredModel& model, const CandidateSet& candidates,
                                const TrainStats& stats, const Detector& detector,
                                const ObjectiveConfig& config);

std::vector<std::string> component_names(const Objective& objective);

/// Builds the ground set for an image per the partition config (gradient
/// saliency feeds the grid mode).
CandidateSet build_candidates(const LayeredModel& model, const Image& image,
                              const PartitionConfig& config, const TrainStats& stats);

struct ExplainReport {
    std::string image_id;
    int explained_class = 0;
    int predicted_class = 0;
    UncertaintyScore full_image_score;
    SelectionTrace trace;
    std::vector<std::string> trace_component_names;
    MetricCurve insertion;
    MetricCurve deletion;
    std::vector<double> step_confidence;  // confidence of each greedy prefix
    std::string report_json;              // the full serialized report
};

struct ExplainResult {
    ExplainReport report;
    CandidateSet candidates;
};

ExplainResult run_explain(const LayeredModel& model, const TrainStats& stats, const Image& image,
                          const std::string& image_id, const ExplainConfig& config,
                          const Detector* detector = nullptr);

/// report.json, insertion/deletion CSVs, and one 1-bit mask PNG per
/// selected element, all under out_dir.
void write_explain_outputs(const ExplainResult& result, const std::string& out_dir);

struct EvalConfig {
    ExplainConfig explain;
    std::string split = "test";
    std::string shift = "all";
    int random_orders = 0;  // per image, for order-quality comparisons
    int workers = 1;
};

struct EvalRow {
    std::string image;
    std::string shift;
    std::string transform;
    int label = 0;
    int predicted = 0;
    double insertion_auc = 0.0;
    double deletion_auc = 0.0;
    double uncertainty = 0.0;  // normalized, single-sample against train bounds
    double random_mean_insertion = 0.0;  // only when random_orders > 0
};

struct EvalAggregate {
    std::string shift;
    std::int64_t count = 0;
    double accuracy = 0.0;  // over labeled entries; -1 when none
    double mean_insertion_auc = 0.0;
    double mean_deletion_auc = 0.0;
    double mean_uncertainty = 0.0;
    double mean_random_insertion = 0.0;
};

struct EvalTable {
    std::vector<EvalRow> rows;        // manifest order
    std::vector<EvalAggregate> aggregates;  // per shift, fixed shift order
    std::string table_json;
    std::string table_csv;
};

/// Per-image explanation metrics over a manifest slice, computed by a
/// worker pool; row order and all randomness are independent of the worker
/// count.
EvalTable run_eval(const LayeredModel& model, const TrainStats& stats,
                   const DatasetManifest& manifest, const EvalConfig& config);

}  // namespace subsel
