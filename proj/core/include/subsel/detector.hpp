#pragma once

#include <vector>

#include "subsel/image.hpp"

namespace subsel {

struct DetectionQuery {
    int x = 0, y = 0;  // top-left, pixels
    int w = 0, h = 0;
    int class_id = 0;

    void validate(int image_width, int image_height) const;
};

/// Object-level scorer over full images: localization overlap combined
/// with label confidence, in [0,1], deterministic per (image, query). Real
/// detectors implement this out of tree.
class Detector {
public:
    virtual ~Detector() = default;
    virtual double score(const Image& image, const DetectionQuery& query) const = 0;
};

/// Stand-in detector that treats pixels deviating from the fill value as
/// content. Two modes:
///  - IouGated: IoU(query box, bounding box of content) gated on the mean
///    content intensity inside the box exceeding a threshold.
///  - MonotoneCoverage: fraction of the query box covered by content;
///    non-decreasing as content is revealed.
class MockDetector : public Detector {
public:
    enum class Mode { IouGated, MonotoneCoverage };

    MockDetector(std::vector<double> fill, Mode mode = Mode::IouGated,
                 double intensity_threshold = 0.2);

    double score(const Image& image, const DetectionQuery& query) const override;

private:
    bool is_content(const Image& image, int y, int x) const;

    std::vector<double> fill_;
    Mode mode_;
    double intensity_threshold_;
};

double iou(int ax, int ay, int aw, int ah, int bx, int by, int bw, int bh);

}  // namespace subsel
