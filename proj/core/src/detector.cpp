#include "subsel/detector.hpp"

#include <algorithm>
#include <cmath>

#include "subsel/errors.hpp"

namespace subsel {

void DetectionQuery::validate(int image_width, int image_height) const {
    if (w <= 0 || h <= 0) {
        throw ConfigError("detection query: box must have positive size");
    }
    if (x < 0 || y < 0 || x + w > image_width || y + h > image_height) {
        throw ConfigError("detection query: box outside image bounds");
    }
}

double iou(int ax, int ay, int aw, int ah, int bx, int by, int bw, int bh) {
    const int ix0 = std::max(ax, bx);
    const int iy0 = std::max(ay, by);
    const int ix1 = std::min(ax + aw, bx + bw);
    const int iy1 = std::min(ay + ah, by + bh);
    const std::int64_t inter =
        static_cast<std::int64_t>(std::max(0, ix1 - ix0)) * std::max(0, iy1 - iy0);
    const std::int64_t uni =
        static_cast<std::int64_t>(aw) * ah + static_cast<std::int64_t>(bw) * bh - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

MockDetector::MockDetector(std::vector<double> fill, Mode mode, double intensity_threshold)
    : fill_(std::move(fill)), mode_(mode), intensity_threshold_(intensity_threshold) {}

bool MockDetector::is_content(const Image& image, int y, int x) const {
    for (int c = 0; c < image.channels; ++c) {
        const double fill = c < static_cast<int>(fill_.size()) ? fill_[static_cast<std::size_t>(c)]
                                                               : fill_.back();
        if (std::abs(image.at(c, y, x) - fill) > 1e-9) {
            return true;
        }
    }
    return false;
}

double MockDetector::score(const Image& image, const DetectionQuery& query) const {
    query.validate(image.width, image.height);
    if (fill_.empty()) {
        throw ConfigError("mock detector: fill value required");
    }

    if (mode_ == Mode::MonotoneCoverage) {
        std::int64_t covered = 0;
        for (int y = query.y; y < query.y + query.h; ++y) {
            for (int x = query.x; x < query.x + query.w; ++x) {
                if (is_content(image, y, x)) {
                    ++covered;
                }
            }
        }
        return static_cast<double>(covered) /
               (static_cast<double>(query.w) * static_cast<double>(query.h));
    }

    // IouGated: bounding box of all content pixels.
    int min_x = image.width, min_y = image.height, max_x = -1, max_y = -1;
    double box_intensity = 0.0;
    std::int64_t box_content = 0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (!is_content(image, y, x)) {
                continue;
            }
            min_x = std::min(min_x, x);
            min_y = std::min(min_y, y);
            max_x = std::max(max_x, x);
            max_y = std::max(max_y, y);
            if (x >= query.x && x < query.x + query.w && y >= query.y && y < query.y + query.h) {
                double v = 0.0;
                for (int c = 0; c < image.channels; ++c) {
                    v += image.at(c, y, x);
                }
                box_intensity += v / image.channels;
                ++box_content;
            }
        }
    }
    if (max_x < 0) {
        return 0.0;  // blank image
    }
    const double mean_intensity = box_content > 0 ? box_intensity / static_cast<double>(box_content) : 0.0;
    if (mean_intensity <= intensity_threshold_) {
        return 0.0;
    }
    return iou(min_x, min_y, max_x - min_x + 1, max_y - min_y + 1, query.x, query.y, query.w,
               query.h);
}

}  // namespace subsel
