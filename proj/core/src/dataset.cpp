#include "subsel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kManifestFormatVersion = 1;
constexpr double kPi = 3.14159265358979323846;

// Style envelope for one render; ranges differ between the in-distribution
// look and the "related" shifted look.
struct StyleProfile {
    double scale_lo, scale_hi;    // shape radius as a fraction of image size
    double stroke_lo, stroke_hi;  // bar/ring thickness in pixels
    double fg_lo, fg_hi;
    double bg_lo, bg_hi;
    double noise;
    double jitter;  // center jitter in pixels
};

constexpr StyleProfile kIdStyle = {0.26, 0.38, 2.5, 3.5, 0.75, 1.0, 0.0, 0.12, 0.02, 4.0};
constexpr StyleProfile kRelatedStyle = {0.17, 0.25, 4.5, 6.0, 0.55, 0.78, 0.10, 0.24, 0.03, 4.0};

enum class ShapeKind { Circle, Square, Triangle, Cross, Ring, Stripes };

const char* shape_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Square: return "square";
        case ShapeKind::Triangle: return "triangle";
        case ShapeKind::Cross: return "cross";
        case ShapeKind::Ring: return "ring";
        case ShapeKind::Stripes: return "stripes";
    }
    return "?";
}

double box_sdf(double dx, double dy, double hx, double hy) {
    const double qx = std::abs(dx) - hx;
    const double qy = std::abs(dy) - hy;
    const double ox = std::max(qx, 0.0);
    const double oy = std::max(qy, 0.0);
    return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
}

// Signed distance (pixels, negative inside) from point p to the shape.
double shape_sdf(ShapeKind kind, double dx, double dy, double r, double stroke) {
    switch (kind) {
        case ShapeKind::Circle:
            return std::sqrt(dx * dx + dy * dy) - r;
        case ShapeKind::Square:
            return box_sdf(dx, dy, r * 0.9, r * 0.9);
        case ShapeKind::Triangle: {
            // upward isoceles triangle: apex (0,-r), base y = +0.75r
            const double ax = 0.0, ay = -r;
            const double bx = -0.95 * r, by = 0.75 * r;
            const double cx = 0.95 * r, cy = 0.75 * r;
            auto edge = [&](double x0, double y0, double x1, double y1) {
                // signed distance to the line through (x0,y0)-(x1,y1),
                // positive on the outward side (vertices wound clockwise
                // in image coordinates keep the interior negative)
                const double ex = x1 - x0, ey = y1 - y0;
                const double len = std::sqrt(ex * ex + ey * ey);
                return ((dx - x0) * ey - (dy - y0) * ex) / len;
            };
            const double d1 = edge(ax, ay, bx, by);
            const double d2 = edge(bx, by, cx, cy);
            const double d3 = edge(cx, cy, ax, ay);
            return std::max({d1, d2, d3});
        }
        case ShapeKind::Cross: {
            const double bar = std::max(stroke, 1.5);
            const double horizontal = box_sdf(dx, dy, r, bar);
            const double vertical = box_sdf(dx, dy, bar, r);
            return std::min(horizontal, vertical);
        }
        case ShapeKind::Ring: {
            const double dist = std::sqrt(dx * dx + dy * dy);
            return std::max(dist - r, (r - stroke) - dist);
        }
        case ShapeKind::Stripes: {
            const double half_h = std::max(0.16 * r, 1.2);
            const double gap = 2.6 * half_h;
            double best = 1e30;
            for (int i = -1; i <= 1; ++i) {
                best = std::min(best, box_sdf(dx, dy - i * (2.0 * half_h + gap), r, half_h));
            }
            return best;
        }
    }
    return 1e30;
}

Image render_shape(ShapeKind kind, int size, const StyleProfile& style, RngStream& rng) {
    const double cx = size / 2.0 + style.jitter * (2.0 * rng.uniform() - 1.0);
    const double cy = size / 2.0 + style.jitter * (2.0 * rng.uniform() - 1.0);
    const double r = size * (style.scale_lo + (style.scale_hi - style.scale_lo) * rng.uniform());
    const double stroke = style.stroke_lo + (style.stroke_hi - style.stroke_lo) * rng.uniform();
    const double fg = style.fg_lo + (style.fg_hi - style.fg_lo) * rng.uniform();
    const double bg = style.bg_lo + (style.bg_hi - style.bg_lo) * rng.uniform();

    Image img(1, size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double sd = shape_sdf(kind, x + 0.5 - cx, y + 0.5 - cy, r, stroke);
            const double alpha = std::clamp(0.5 - sd, 0.0, 1.0);  // 1px soft edge
            double v = bg + (fg - bg) * alpha;
            if (style.noise > 0.0) {
                v += style.noise * rng.normal();
            }
            img.at(0, y, x) = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

}  // namespace

std::string shift_name(Shift s) {
    switch (s) {
        case Shift::Id: return "id";
        case Shift::Related: return "related";
        case Shift::Complementary: return "complementary";
        case Shift::Transformed: return "transformed";
    }
    return "?";
}

Shift shift_from_name(const std::string& s) {
    if (s == "id") return Shift::Id;
    if (s == "related") return Shift::Related;
    if (s == "complementary") return Shift::Complementary;
    if (s == "transformed") return Shift::Transformed;
    throw ConfigError("unknown shift name: " + s);
}

Image apply_transform(const Image& image, const OodTransformSpec& spec, RngStream& rng) {
    if (spec.magnitude < 0.0) {
        throw ConfigError("apply_transform: magnitude must be >= 0");
    }
    if (spec.magnitude == 0.0) {
        return image;
    }
    switch (spec.kind) {
        case OodTransformSpec::Kind::GaussianNoise: {
            Image out = image;
            for (double& v : out.data) {
                v = std::clamp(v + spec.magnitude * rng.normal(), 0.0, 1.0);
            }
            return out;
        }
        case OodTransformSpec::Kind::Blur: {
            const int radius = static_cast<int>(std::lround(spec.magnitude));
            if (radius < 1) {
                return image;
            }
            // separable box blur, edge-clamped
            Image tmp = image;
            Image out = image;
            const double inv = 1.0 / (2 * radius + 1);
            for (int c = 0; c < image.channels; ++c) {
                for (int y = 0; y < image.height; ++y) {
                    for (int x = 0; x < image.width; ++x) {
                        double acc = 0.0;
                        for (int d = -radius; d <= radius; ++d) {
                            acc += image.at(c, y, std::clamp(x + d, 0, image.width - 1));
                        }
                        tmp.at(c, y, x) = acc * inv;
                    }
                }
                for (int y = 0; y < image.height; ++y) {
                    for (int x = 0; x < image.width; ++x) {
                        double acc = 0.0;
                        for (int d = -radius; d <= radius; ++d) {
                            acc += tmp.at(c, std::clamp(y + d, 0, image.height - 1), x);
                        }
                        out.at(c, y, x) = acc * inv;
                    }
                }
            }
            return out;
        }
        case OodTransformSpec::Kind::Rotation: {
            const double theta = spec.magnitude * kPi / 180.0;
            const double cos_t = std::cos(theta);
            const double sin_t = std::sin(theta);
            const double cx = image.width / 2.0;
            const double cy = image.height / 2.0;
            Image out(image.channels, image.height, image.width);
            for (int y = 0; y < image.height; ++y) {
                for (int x = 0; x < image.width; ++x) {
                    // inverse map, bilinear sample with clamp-to-edge
                    const double rx = x + 0.5 - cx;
                    const double ry = y + 0.5 - cy;
                    const double sx = cos_t * rx + sin_t * ry + cx - 0.5;
                    const double sy = -sin_t * rx + cos_t * ry + cy - 0.5;
                    const int x0 = static_cast<int>(std::floor(sx));
                    const int y0 = static_cast<int>(std::floor(sy));
                    const double fx = sx - x0;
                    const double fy = sy - y0;
                    for (int c = 0; c < image.channels; ++c) {
                        auto sample = [&](int yy, int xx) {
                            return image.at(c, std::clamp(yy, 0, image.height - 1),
                                            std::clamp(xx, 0, image.width - 1));
                        };
                        const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                                         fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
                        out.at(c, y, x) = v;
                    }
                }
            }
            return out;
        }
    }
    throw ConfigError("apply_transform: unknown transform kind");
}

DatasetManifest generate_dataset(std::uint64_t seed, const std::string& out_dir,
                                 const DatasetConfig& config) {
    if (config.image_size < 16) {
        throw ConfigError("generate_dataset: image_size must be >= 16");
    }
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    if (!fs::exists(root / "images")) {
        throw DataError("generate_dataset: cannot create output directory " + out_dir);
    }

    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.class_names = {"circle", "square", "triangle", "cross"};
    manifest.image_size = config.image_size;
    manifest.channels = 1;
    manifest.seed = seed;

    const ShapeKind id_shapes[4] = {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle,
                                    ShapeKind::Cross};
    const ShapeKind held_out[2] = {ShapeKind::Ring, ShapeKind::Stripes};
    std::uint64_t image_index = 0;

    auto emit = [&](const Image& img, int label, const std::string& split, Shift shift,
                    const std::string& transform, const std::string& stem) {
        const std::string rel = "images/" + stem + ".png";
        save_png((root / rel).string(), img);
        manifest.entries.push_back({rel, label, split, shift, transform});
    };

    auto render_split = [&](const char* split, Shift shift, const StyleProfile& style,
                            int per_class) {
        for (int i = 0; i < per_class * 4; ++i) {
            const int label = i % 4;  // round-robin keeps classes balanced
            RngStream rng = RngStream::derive(seed, {image_index});
            const Image img = render_shape(id_shapes[label], config.image_size, style, rng);
            char stem[96];
            std::snprintf(stem, sizeof(stem), "%s_%s_%05llu", split, shift_name(shift).c_str(),
                          static_cast<unsigned long long>(image_index));
            emit(img, label, split, shift, "", stem);
            ++image_index;
        }
    };

    render_split("train", Shift::Id, kIdStyle, config.train_per_class);
    render_split("test", Shift::Id, kIdStyle, config.test_per_class);
    render_split("test", Shift::Related, kRelatedStyle, config.related_per_class);

    for (int i = 0; i < config.complementary_per_class * 2; ++i) {
        const int which = i % 2;
        RngStream rng = RngStream::derive(seed, {image_index});
        const Image img = render_shape(held_out[which], config.image_size, kIdStyle, rng);
        char stem[96];
        std::snprintf(stem, sizeof(stem), "test_complementary_%s_%05llu", shape_name(held_out[which]),
                      static_cast<unsigned long long>(image_index));
        emit(img, -1, "test", Shift::Complementary, "", stem);
        ++image_index;
    }

    const OodTransformSpec transforms[3] = {
        {OodTransformSpec::Kind::GaussianNoise, config.noise_sigma},
        {OodTransformSpec::Kind::Blur, config.blur_radius},
        {OodTransformSpec::Kind::Rotation, config.rotation_deg},
    };
    const char* transform_names[3] = {"gaussian-noise", "blur", "rotation"};
    for (int kind = 0; kind < 3; ++kind) {
        for (int i = 0; i < config.transformed_per_kind; ++i) {
            const int label = i % 4;
            RngStream rng = RngStream::derive(seed, {image_index});
            const Image base = render_shape(id_shapes[label], config.image_size, kIdStyle, rng);
            const Image img = apply_transform(base, transforms[kind], rng);
            char tag[64];
            std::snprintf(tag, sizeof(tag), "%s:%g", transform_names[kind],
                          transforms[kind].magnitude);
            char stem[96];
            std::snprintf(stem, sizeof(stem), "test_transformed_%s_%05llu", transform_names[kind],
                          static_cast<unsigned long long>(image_index));
            emit(img, label, "test", Shift::Transformed, tag, stem);
            ++image_index;
        }
    }

    save_manifest(manifest, (root / "manifest.json").string());
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    json entries = json::array();
    for (const DatasetEntry& e : manifest.entries) {
        entries.push_back({{"path", e.path},
                           {"label", e.label},
                           {"split", e.split},
                           {"shift", shift_name(e.shift)},
                           {"transform", e.transform}});
    }
    const json j = {{"format_version", kManifestFormatVersion},
                    {"class_names", manifest.class_names},
                    {"image_size", manifest.image_size},
                    {"channels", manifest.channels},
                    {"seed", manifest.seed},
                    {"entries", entries}};
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write manifest: " + path);
    }
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest: " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(std::string("corrupt manifest: ") + e.what());
    }
    if (j.value("format_version", -1) != kManifestFormatVersion) {
        throw DataError("manifest: format version mismatch");
    }
    DatasetManifest manifest;
    manifest.root = fs::path(path).parent_path().string();
    manifest.class_names = j.at("class_names").get<std::vector<std::string>>();
    manifest.image_size = j.at("image_size").get<int>();
    manifest.channels = j.at("channels").get<int>();
    manifest.seed = j.at("seed").get<std::uint64_t>();
    for (const json& e : j.at("entries")) {
        DatasetEntry entry;
        entry.path = e.at("path").get<std::string>();
        entry.label = e.at("label").get<int>();
        entry.split = e.at("split").get<std::string>();
        entry.shift = shift_from_name(e.at("shift").get<std::string>());
        entry.transform = e.value("transform", "");
        const int classes = static_cast<int>(manifest.class_names.size());
        if (entry.shift == Shift::Complementary) {
            if (entry.label >= 0) {
                throw DataError("manifest: complementary entries must carry the sentinel label");
            }
        } else if (entry.label < 0 || entry.label >= classes) {
            throw DataError("manifest: label out of range for " + entry.path);
        }
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

std::vector<DatasetEntry> filter_entries(const DatasetManifest& manifest, const std::string& split,
                                         const std::string& shift) {
    std::vector<DatasetEntry> out;
    for (const DatasetEntry& e : manifest.entries) {
        if (!split.empty() && e.split != split) {
            continue;
        }
        if (!shift.empty() && shift != "all" && shift_name(e.shift) != shift) {
            continue;
        }
        out.push_back(e);
    }
    return out;
}

Image load_entry_image(const DatasetManifest& manifest, const DatasetEntry& entry) {
    const fs::path p = fs::path(manifest.root) / entry.path;
    if (!fs::exists(p)) {
        throw DataError("manifest entry missing on disk: " + p.string());
    }
    return load_image(p.string());
}

}  // namespace subsel
