#include "subsel/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "subsel/errors.hpp"

namespace subsel {

SaliencyMap gradient_saliency(const LayeredModel& model, const Image& image) {
    const Tensor input = image.to_tensor();
    if (input.shape() != model.input_shape()) {
        throw DataError("gradient_saliency: image shape does not match model input");
    }
    const Tensor zero = Tensor::scalar(0.0);
    InferenceScratch& scratch = InferenceScratch::thread_local_instance();
    scratch.forward(model, model.graph_inputs(input, zero, zero));
    const int predicted = argmax_class(scratch.node_value(model.graph().logits_node));

    const Tensor pick = Tensor::scalar(static_cast<double>(predicted));
    scratch.forward(model, model.graph_inputs(input, pick, zero));
    const std::vector<Tensor>& grads = scratch.backward(model, model.graph().picked_logit_node);
    const Tensor& gin = grads[static_cast<std::size_t>(model.graph().image_node)];

    SaliencyMap map;
    map.height = image.height;
    map.width = image.width;
    map.values.assign(image.pixel_count(), 0.0);
    for (int c = 0; c < image.channels; ++c) {
        const double* plane = gin.data() + static_cast<std::size_t>(c) * image.pixel_count();
        for (std::size_t p = 0; p < image.pixel_count(); ++p) {
            map.values[p] = std::max(map.values[p], std::abs(plane[p]));
        }
    }
    return map;
}

SaliencyMap resize_box(const SaliencyMap& map, int n) {
    if (n < 1) {
        throw ConfigError("resize_box: target size must be >= 1");
    }
    if (map.height < 1 || map.width < 1) {
        throw ConfigError("resize_box: empty saliency map");
    }
    SaliencyMap out;
    out.height = n;
    out.width = n;
    out.values.assign(static_cast<std::size_t>(n) * n, 0.0);

    // Exact fractional-overlap box filter; preserves the map's mean.
    const double sy = static_cast<double>(map.height) / n;
    const double sx = static_cast<double>(map.width) / n;
    for (int cy = 0; cy < n; ++cy) {
        const double y0 = cy * sy, y1 = (cy + 1) * sy;
        for (int cx = 0; cx < n; ++cx) {
            const double x0 = cx * sx, x1 = (cx + 1) * sx;
            double acc = 0.0;
            for (int py = static_cast<int>(std::floor(y0)); py < map.height && py < y1; ++py) {
                const double hy = std::min<double>(py + 1, y1) - std::max<double>(py, y0);
                if (hy <= 0.0) continue;
                for (int px = static_cast<int>(std::floor(x0)); px < map.width && px < x1; ++px) {
                    const double hx = std::min<double>(px + 1, x1) - std::max<double>(px, x0);
                    if (hx <= 0.0) continue;
                    acc += hy * hx * map.at(py, px);
                }
            }
            out.values[static_cast<std::size_t>(cy) * n + cx] = acc / (sy * sx);
        }
    }
    return out;
}

CandidateSet grid_candidates(const Image& image, const SaliencyMap& saliency, int n, int m,
                             std::vector<double> fill) {
    if (n < 1) {
        throw ConfigError("grid_candidates: grid size must be >= 1");
    }
    if (m < 1 || (static_cast<std::int64_t>(n) * n) % m != 0) {
        throw ConfigError("grid_candidates: n*n must be divisible by m");
    }
    if (image.height < n || image.width < n) {
        throw ConfigError("grid_candidates: image smaller than grid");
    }
    if (static_cast<int>(fill.size()) != image.channels) {
        throw ConfigError("grid_candidates: fill must provide one value per channel");
    }

    const SaliencyMap cells = resize_box(saliency, n);
    const int cell_count = n * n;
    const int d = cell_count / m;

    // Descending saliency, ties by row-major cell index.
    std::vector<int> order(static_cast<std::size_t>(cell_count));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&cells](int a, int b) {
        return cells.values[static_cast<std::size_t>(a)] > cells.values[static_cast<std::size_t>(b)];
    });

    CandidateSet set;
    set.base_image = image;
    set.fill = std::move(fill);
    set.regions.resize(static_cast<std::size_t>(cell_count));
    for (int cy = 0; cy < n; ++cy) {
        const int y0 = static_cast<int>(static_cast<std::int64_t>(cy) * image.height / n);
        const int y1 = static_cast<int>(static_cast<std::int64_t>(cy + 1) * image.height / n);
        for (int cx = 0; cx < n; ++cx) {
            const int x0 = static_cast<int>(static_cast<std::int64_t>(cx) * image.width / n);
            const int x1 = static_cast<int>(static_cast<std::int64_t>(cx + 1) * image.width / n);
            Region& r = set.regions[static_cast<std::size_t>(cy * n + cx)];
            r.id = cy * n + cx;
            r.mask.assign(image.pixel_count(), 0u);
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    r.mask[static_cast<std::size_t>(y) * image.width + x] = 1u;
                }
            }
            r.area = static_cast<std::int64_t>(y1 - y0) * (x1 - x0);
        }
    }

    set.elements.resize(static_cast<std::size_t>(m));
    for (int l = 0; l < m; ++l) {
        CandidateElement& e = set.elements[static_cast<std::size_t>(l)];
        e.id = l;
        e.rank_range = {d * l + 1, d * (l + 1)};
        for (int rank = d * l; rank < d * (l + 1); ++rank) {
            e.region_ids.push_back(order[static_cast<std::size_t>(rank)]);
        }
    }
    return set;
}

Image compose(const CandidateSet& candidates, const std::vector<int>& subset) {
    std::vector<std::uint8_t> keep = subset_mask(candidates, subset);
    const Image& base = candidates.base_image;
    Image out(base.channels, base.height, base.width);
    for (int c = 0; c < base.channels; ++c) {
        const double fill = candidates.fill[static_cast<std::size_t>(c)];
        const double* src = base.data.data() + static_cast<std::size_t>(c) * base.pixel_count();
        double* dst = out.data.data() + static_cast<std::size_t>(c) * base.pixel_count();
        for (std::size_t p = 0; p < base.pixel_count(); ++p) {
            dst[p] = keep[p] ? src[p] : fill;
        }
    }
    return out;
}

std::vector<int> complement_of(const CandidateSet& candidates, const std::vector<int>& subset) {
    std::vector<std::uint8_t> in_subset(static_cast<std::size_t>(candidates.size()), 0u);
    for (int id : subset) {
        if (id < 0 || id >= candidates.size()) {
            throw ConfigError("complement_of: unknown element id");
        }
        in_subset[static_cast<std::size_t>(id)] = 1u;
    }
    std::vector<int> out;
    for (int id = 0; id < candidates.size(); ++id) {
        if (!in_subset[static_cast<std::size_t>(id)]) {
            out.push_back(id);
        }
    }
    return out;
}

std::vector<std::uint8_t> subset_mask(const CandidateSet& candidates, const std::vector<int>& subset) {
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(candidates.size()), 0u);
    std::vector<std::uint8_t> keep(candidates.base_image.pixel_count(), 0u);
    for (int id : subset) {
        if (id < 0 || id >= candidates.size()) {
            throw ConfigError("compose: unknown element id " + std::to_string(id));
        }
        if (seen[static_cast<std::size_t>(id)]) {
            throw ConfigError("compose: duplicate element id " + std::to_string(id));
        }
        seen[static_cast<std::size_t>(id)] = 1u;
        for (int rid : candidates.elements[static_cast<std::size_t>(id)].region_ids) {
            const Region& r = candidates.regions[static_cast<std::size_t>(rid)];
            for (std::size_t p = 0; p < keep.size(); ++p) {
                if (r.mask[p]) {
                    keep[p] = 1u;
                }
            }
        }
    }
    return keep;
}

std::string candidate_metadata_json(const CandidateSet& candidates) {
    nlohmann::json elements = nlohmann::json::array();
    for (const CandidateElement& e : candidates.elements) {
        std::int64_t area = 0;
        for (int rid : e.region_ids) {
            area += candidates.regions[static_cast<std::size_t>(rid)].area;
        }
        nlohmann::json je = {{"id", e.id}, {"regions", e.region_ids}, {"area", area}};
        if (e.rank_range.first > 0) {
            je["rank_range"] = {e.rank_range.first, e.rank_range.second};
        }
        elements.push_back(std::move(je));
    }
    nlohmann::json j = {{"format_version", 1},
                        {"element_count", candidates.size()},
                        {"region_count", static_cast<int>(candidates.regions.size())},
                        {"fill", candidates.fill},
                        {"elements", elements}};
    return j.dump(2);
}

}  // namespace subsel
