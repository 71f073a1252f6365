#pragma once

#include <memory>
#include <vector>

#include "subsel/detector.hpp"
#include "subsel/model.hpp"
#include "subsel/partition.hpp"

namespace subsel {

struct ClassPrototype {
    int class_id = 0;
    std::vector<double> feature;  // penultimate-feature space
};

/// Mean penultimate feature per class over labeled images. Classes with no
/// sample get an empty feature.
std::vector<std::vector<double>> fit_prototypes(const LayeredModel& model,
                                                const std::vector<Image>& images,
                                                const std::vector<int>& labels, int class_count);

/// Precomputed per-element single-composition features; the element
/// features are pure functions of (model, candidates) so caching them is
/// observable-free.
class ScoreContext {
public:
    ScoreContext(const LayeredModel& model, const CandidateSet& candidates);

    const std::vector<double>& element_feature(int id) const;
    const std::vector<double>& fill_feature() const { return fill_feature_; }

private:
    std::vector<std::vector<double>> element_features_;
    std::vector<double> fill_feature_;
};

/// Sum over selected elements of the minimum feature distance to another
/// selected element; singletons score against the fill image. Promotes
/// diversity: coinciding features contribute zero.
double effectiveness(const ScoreContext& ctx, const std::vector<int>& subset);
double effectiveness(const LayeredModel& model, const CandidateSet& candidates,
                     const std::vector<int>& subset);

/// Cosine similarity between the composed subset's penultimate feature and
/// the class prototype, mapped to [0,1]; 0.5 when either vector is zero.
double consistency(const LayeredModel& model, const CandidateSet& candidates,
                   const std::vector<int>& subset, const ClassPrototype& prototype);

/// 1 - p(class | compose(complement)): how much removing the subset hurts
/// the prediction.
double collaboration(const LayeredModel& model, const CandidateSet& candidates,
                     const std::vector<int>& subset, int class_id);

/// detector score on the composed subset.
double clue(const Detector& detector, const CandidateSet& candidates, const std::vector<int>& subset,
            const DetectionQuery& query);

/// Drop in detector score when the subset is removed, clamped to [0,1].
double collaboration_obj(const Detector& detector, const CandidateSet& candidates,
                         const std::vector<int>& subset, const DetectionQuery& query);

double cosine_to_unit_interval(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace subsel
