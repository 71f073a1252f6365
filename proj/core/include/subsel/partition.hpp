#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "subsel/image.hpp"
#include "subsel/model.hpp"

namespace subsel {

struct SaliencyMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major, non-negative

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct Region {
    int id = 0;
    std::vector<std::uint8_t> mask;  // row-major height x width, 1 = inside
    std::int64_t area = 0;
};

struct CandidateElement {
    int id = 0;
    std::vector<int> region_ids;
    // grid mode: saliency ranks covered by this element, 1-based inclusive
    std::pair<int, int> rank_range{0, 0};
};

/// Ground set of masked sub-images over one base image. Regions are a
/// disjoint cover of the image; each element keeps the union of its
/// regions and masks everything else to `fill`.
struct CandidateSet {
    Image base_image;
    std::vector<double> fill;  // per channel
    std::vector<Region> regions;
    std::vector<CandidateElement> elements;

    int size() const { return static_cast<int>(elements.size()); }
};

/// Per-pixel |d(predicted-class logit)/d(pixel)|, max over channels.
SaliencyMap gradient_saliency(const LayeredModel& model, const Image& image);

/// Mean-preserving box (area-average) downsample to n x n.
SaliencyMap resize_box(const SaliencyMap& map, int n);

/// Saliency-ranked grid division: the n*n cells are ranked by descending
/// resized saliency (ties by row-major index); element l keeps the cells
/// ranked in (d*(l-1), d*l] with d = n*n/m. n*n must be divisible by m.
CandidateSet grid_candidates(const Image& image, const SaliencyMap& saliency, int n, int m,
                             std::vector<double> fill);

/// Union of the subset's regions from the base image; everything else set
/// to fill. Ids must be valid and distinct.
Image compose(const CandidateSet& candidates, const std::vector<int>& subset);

/// Complement of `subset` within the candidate ground set, ascending ids.
std::vector<int> complement_of(const CandidateSet& candidates, const std::vector<int>& subset);

/// Combined 0/1 pixel mask of an element subset (1 = kept).
std::vector<std::uint8_t> subset_mask(const CandidateSet& candidates, const std::vector<int>& subset);

/// ids, areas, and rank ranges as a JSON string.
std::string candidate_metadata_json(const CandidateSet& candidates);

}  // namespace subsel
