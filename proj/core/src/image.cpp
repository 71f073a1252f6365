#include "subsel/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

std::uint8_t to_byte(double v) {
    const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Image::Image(int c, int h, int w, double fill)
    : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

Tensor Image::to_tensor() const {
    return Tensor(Shape{channels, height, width}, data);
}

Image Image::from_tensor(const Tensor& t) {
    if (t.rank() != 3) {
        throw ConfigError("Image::from_tensor: expected rank-3 tensor");
    }
    Image img(static_cast<int>(t.shape()[0]), static_cast<int>(t.shape()[1]),
              static_cast<int>(t.shape()[2]));
    img.data = t.values();
    return img;
}

Image load_image(const std::string& path) {
    if (ends_with(path, ".png") || ends_with(path, ".PNG")) {
        return load_png(path);
    }
    if (ends_with(path, ".pgm") || ends_with(path, ".pnm")) {
        return load_pgm(path);
    }
    throw DataError("unsupported image format: " + path);
}

Image load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) {
        throw DataError("cannot open image: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        throw DataError("libpng init failure");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("16-bit PNG not supported: " + path);
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int out_channels = static_cast<int>(png_get_channels(png, info));
    if (out_channels != 1 && out_channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG must decode to 1 or 3 channels: " + path);
    }

    std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * width * out_channels);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) {
        rows[y] = raw.data() + static_cast<std::size_t>(y) * width * out_channels;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(out_channels, static_cast<int>(height), static_cast<int>(width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < out_channels; ++c) {
                const std::uint8_t v =
                    raw[(static_cast<std::size_t>(y) * width + x) * out_channels + c];
                img.at(c, y, x) = static_cast<double>(v) / 255.0;
            }
        }
    }
    return img;
}

void save_png(const std::string& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw ConfigError("save_png: image must have 1 or 3 channels");
    }
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) {
        throw DataError("cannot write image: " + path);
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        throw DataError("libpng init failure");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failure: " + path);
    }
    png_init_io(png, fp.get());
    const int color_type = image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                row[static_cast<std::size_t>(x) * image.channels + c] = to_byte(image.at(c, y, x));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_png_mask(const std::string& path, const std::vector<std::uint8_t>& mask, int height,
                   int width) {
    if (static_cast<std::size_t>(height) * width != mask.size()) {
        throw ConfigError("save_png_mask: mask size mismatch");
    }
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) {
        throw DataError("cannot write mask: " + path);
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        throw DataError("libpng init failure");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failure: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 1,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const int stride = (width + 7) / 8;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(stride));
    for (int y = 0; y < height; ++y) {
        std::fill(row.begin(), row.end(), 0u);
        for (int x = 0; x < width; ++x) {
            if (mask[static_cast<std::size_t>(y) * width + x]) {
                row[static_cast<std::size_t>(x / 8)] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open image: " + path);
    }
    std::string magic;
    in >> magic;
    if (magic != "P5") {
        throw DataError("unsupported PGM variant (want P5): " + path);
    }
    auto next_token = [&in, &path]() {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        throw DataError("truncated PGM header: " + path);
    };
    const int width = std::stoi(next_token());
    const int height = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
        throw DataError("invalid PGM header: " + path);
    }
    in.get();  // single whitespace after maxval
    std::vector<char> raw(static_cast<std::size_t>(width) * height);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw DataError("truncated PGM payload: " + path);
    }
    Image img(1, height, width);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        img.data[i] = static_cast<double>(static_cast<std::uint8_t>(raw[i])) / maxval;
    }
    return img;
}

void save_pgm(const std::string& path, const Image& image) {
    if (image.channels != 1) {
        throw ConfigError("save_pgm: grayscale images only");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write image: " + path);
    }
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    for (double v : image.data) {
        out.put(static_cast<char>(to_byte(v)));
    }
    if (!out) {
        throw DataError("PGM write failure: " + path);
    }
}

}  // namespace subsel
