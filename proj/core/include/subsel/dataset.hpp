#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subsel/image.hpp"
#include "subsel/rng.hpp"

namespace subsel {

enum class Shift { Id, Related, Complementary, Transformed };

std::string shift_name(Shift s);
Shift shift_from_name(const std::string& s);

struct DatasetEntry {
    std::string path;  // relative to manifest root
    int label = 0;     // -1 sentinel for complementary entries
    std::string split;  // train | test
    Shift shift = Shift::Id;
    std::string transform;  // e.g. "gaussian-noise:0.3", empty otherwise
};

struct DatasetManifest {
    std::string root;
    std::vector<std::string> class_names;
    int image_size = 0;
    int channels = 1;
    std::uint64_t seed = 0;
    std::vector<DatasetEntry> entries;
};

struct OodTransformSpec {
    enum class Kind { GaussianNoise, Blur, Rotation };
    Kind kind = Kind::GaussianNoise;
    double magnitude = 0.0;  // intensity sigma | kernel radius | degrees
};

struct DatasetConfig {
    int image_size = 56;
    int train_per_class = 50;
    int test_per_class = 30;
    int related_per_class = 15;
    int complementary_per_class = 30;  // per held-out shape
    int transformed_per_kind = 30;
    double noise_sigma = 0.3;
    double blur_radius = 2.0;
    double rotation_deg = 25.0;
};

/// Renders the shape benchmark: four in-distribution classes (circle,
/// square, triangle, cross) with jittered geometry as train/test, plus
/// three shifted test sets — related (same classes, shifted stroke/scale/
/// intensity statistics), complementary (held-out shapes ring and
/// stripes, sentinel label -1), and transformed (fresh in-distribution
/// renders passed through noise/blur/rotation). Writes PNGs plus
/// manifest.json; byte-identical for a fixed seed.
DatasetManifest generate_dataset(std::uint64_t seed, const std::string& out_dir,
                                 const DatasetConfig& config = {});

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

/// Entries matching the filters ("" matches any split; shift filter
/// optional).
std::vector<DatasetEntry> filter_entries(const DatasetManifest& manifest, const std::string& split,
                                         const std::string& shift);

Image load_entry_image(const DatasetManifest& manifest, const DatasetEntry& entry);

/// Noise uses `rng`; blur and rotation are deterministic resamplings. A
/// zero-magnitude transform returns the input unchanged.
Image apply_transform(const Image& image, const OodTransformSpec& spec, RngStream& rng);

}  // namespace subsel
