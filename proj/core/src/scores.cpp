#include "subsel/scores.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "subsel/errors.hpp"

namespace subsel {

std::vector<std::vector<double>> fit_prototypes(const LayeredModel& model,
                                                const std::vector<Image>& images,
                                                const std::vector<int>& labels, int class_count) {
    if (images.size() != labels.size()) {
        throw ConfigError("fit_prototypes: images and labels differ in length");
    }
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(class_count));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(class_count), 0);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const int label = labels[i];
        if (label < 0 || label >= class_count) {
            throw DataError("fit_prototypes: label out of range");
        }
        const std::vector<double> f = penultimate_feature(model, images[i]);
        auto& sum = sums[static_cast<std::size_t>(label)];
        if (sum.empty()) {
            sum.assign(f.size(), 0.0);
        }
        for (std::size_t j = 0; j < f.size(); ++j) {
            sum[j] += f[j];
        }
        ++counts[static_cast<std::size_t>(label)];
    }
    for (std::size_t c = 0; c < sums.size(); ++c) {
        for (double& v : sums[c]) {
            v /= static_cast<double>(counts[c]);
        }
    }
    return sums;
}

ScoreContext::ScoreContext(const LayeredModel& model, const CandidateSet& candidates) {
    element_features_.resize(static_cast<std::size_t>(candidates.size()));
    for (int id = 0; id < candidates.size(); ++id) {
        element_features_[static_cast<std::size_t>(id)] =
            penultimate_feature(model, compose(candidates, {id}));
    }
    fill_feature_ = penultimate_feature(model, compose(candidates, {}));
}

const std::vector<double>& ScoreContext::element_feature(int id) const {
    return element_features_.at(static_cast<std::size_t>(id));
}

namespace {

double effectiveness_impl(const std::vector<const std::vector<double>*>& features,
                          const std::vector<double>& fill_feature) {
    if (features.empty()) {
        throw ConfigError("effectiveness: subset must be non-empty");
    }
    if (features.size() == 1) {
        return l2_distance(*features[0], fill_feature);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < features.size(); ++j) {
            if (i == j) continue;
            nearest = std::min(nearest, l2_distance(*features[i], *features[j]));
        }
        total += nearest;
    }
    return total;
}

}  // namespace

double effectiveness(const ScoreContext& ctx, const std::vector<int>& subset) {
    std::vector<const std::vector<double>*> features;
    features.reserve(subset.size());
    for (int id : subset) {
        features.push_back(&ctx.element_feature(id));
    }
    return effectiveness_impl(features, ctx.fill_feature());
}

double effectiveness(const LayeredModel& model, const CandidateSet& candidates,
                     const std::vector<int>& subset) {
    std::vector<std::vector<double>> storage;
    storage.reserve(subset.size());
    for (int id : subset) {
        storage.push_back(penultimate_feature(model, compose(candidates, {id})));
    }
    std::vector<const std::vector<double>*> features;
    features.reserve(storage.size());
    for (const auto& f : storage) {
        features.push_back(&f);
    }
    return effectiveness_impl(features, penultimate_feature(model, compose(candidates, {})));
}

double cosine_to_unit_interval(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ConfigError("cosine: dimension mismatch");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.5;  // undefined direction: neutral
    }
    const double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp((cosine + 1.0) / 2.0, 0.0, 1.0);
}

double consistency(const LayeredModel& model, const CandidateSet& candidates,
                   const std::vector<int>& subset, const ClassPrototype& prototype) {
    const std::vector<double> feature = penultimate_feature(model, compose(candidates, subset));
    if (prototype.feature.size() != feature.size()) {
        throw ConfigError("consistency: prototype dimension mismatch");
    }
    return cosine_to_unit_interval(feature, prototype.feature);
}

double collaboration(const LayeredModel& model, const CandidateSet& candidates,
                     const std::vector<int>& subset, int class_id) {
    if (class_id < 0 || class_id >= model.class_count()) {
        throw ConfigError("collaboration: class id out of range");
    }
    const std::vector<int> rest = complement_of(candidates, subset);
    return 1.0 - class_probability(model, compose(candidates, rest), class_id);
}

double clue(const Detector& detector, const CandidateSet& candidates, const std::vector<int>& subset,
            const DetectionQuery& query) {
    return detector.score(compose(candidates, subset), query);
}

double collaboration_obj(const Detector& detector, const CandidateSet& candidates,
                         const std::vector<int>& subset, const DetectionQuery& query) {
    const double full = detector.score(candidates.base_image, query);
    const std::vector<int> rest = complement_of(candidates, subset);
    const double without = detector.score(compose(candidates, rest), query);
    return std::clamp(full - without, 0.0, 1.0);
}

}  // namespace subsel
