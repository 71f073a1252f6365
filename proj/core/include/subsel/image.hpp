#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subsel/tensor.hpp"

namespace subsel {

/// CHW image with values in [0, 1]; 1 channel (grayscale) or 3 (RGB).
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int c, int h, int w, double fill = 0.0);

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

    Tensor to_tensor() const;
    static Image from_tensor(const Tensor& t);
};

/// Dispatches on extension: .png or .pgm / .pnm. 8-bit inputs normalized
/// to [0, 1]; 16-bit PNGs are rejected.
Image load_image(const std::string& path);

Image load_png(const std::string& path);
Image load_pgm(const std::string& path);

/// 8-bit PNG, grayscale or RGB depending on image.channels.
void save_png(const std::string& path, const Image& image);

/// 1-bit grayscale PNG from a boolean mask (row-major, height x width).
void save_png_mask(const std::string& path, const std::vector<std::uint8_t>& mask, int height,
                   int width);

void save_pgm(const std::string& path, const Image& image);

}  // namespace subsel
