#pragma once

#include <vector>

#include "subsel/partition.hpp"

namespace subsel {

struct SlicConfig {
    int k = 16;                // requested superpixel count, >= 2
    double compactness = 0.1;  // color/space trade-off, in image intensity units
    int iterations = 10;
    bool adaptive = true;  // zero-parameter variant: per-cluster color normalizer
};

/// Joint (color, position) k-means with grid-seeded centers and an
/// orphan-merging connectivity pass. Returns one label per pixel,
/// 0..count-1; every label is a 4-connected region and the labels cover
/// the image. Deterministic for fixed inputs.
std::vector<int> slic_labels(const Image& image, const SlicConfig& config, int* label_count);

/// One candidate element per superpixel (that superpixel kept, the rest
/// filled).
CandidateSet slic_candidates(const Image& image, const SlicConfig& config, std::vector<double> fill);

}  // namespace subsel
