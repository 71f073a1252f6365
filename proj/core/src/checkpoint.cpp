#include "subsel/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kFormatVersion = 1;

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::Tanh: return "tanh";
        case LayerKind::MaxPool2: return "maxpool2";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

LayerKind kind_from_name(const std::string& s) {
    if (s == "dense") return LayerKind::Dense;
    if (s == "conv") return LayerKind::Conv;
    if (s == "relu") return LayerKind::Relu;
    if (s == "tanh") return LayerKind::Tanh;
    if (s == "maxpool2") return LayerKind::MaxPool2;
    if (s == "flatten") return LayerKind::Flatten;
    throw DataError("checkpoint: unknown layer kind " + s);
}

void write_blob(const fs::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("checkpoint: cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) {
        throw DataError("checkpoint: write failure at " + path.string());
    }
}

void read_blob(const fs::path& path, Tensor& t) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("checkpoint: corrupt payload, missing blob " + path.string());
    }
    const std::streamsize want = static_cast<std::streamsize>(t.size() * sizeof(double));
    in.read(reinterpret_cast<char*>(t.data()), want);
    if (in.gcount() != want) {
        throw DataError("checkpoint: corrupt payload, truncated blob " + path.string());
    }
    char extra;
    if (in.read(&extra, 1), in.gcount() != 0) {
        throw DataError("checkpoint: corrupt payload, oversized blob " + path.string());
    }
}

}  // namespace

void save_checkpoint(const LayeredModel& model, const std::string& dir) {
    const fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root, ec);

    json layers = json::array();
    json tensors = json::array();
    for (std::size_t i = 0; i < model.specs().size(); ++i) {
        const LayerSpec& s = model.specs()[i];
        layers.push_back({{"name", s.name},
                          {"kind", kind_name(s.kind)},
                          {"units", s.units},
                          {"channels", s.channels},
                          {"ksize", s.ksize},
                          {"pad", s.pad}});
        if (!s.trainable()) {
            continue;
        }
        const LayerParams& p = model.params(static_cast<int>(i));
        for (const char* part : {"weight", "bias"}) {
            const Tensor& t = std::string(part) == "weight" ? p.weight : p.bias;
            tensors.push_back({{"layer", s.name},
                               {"part", part},
                               {"shape", t.shape()},
                               {"file", s.name + "." + part + ".bin"},
                               {"bytes", t.size() * static_cast<std::int64_t>(sizeof(double))}});
            write_blob(root / (s.name + "." + part + ".bin"), t);
        }
    }

    json manifest = {
        {"format_version", kFormatVersion},
        {"byte_order", "little-endian"},
        {"dtype", "f64"},
        {"input_shape", model.input_shape()},
        {"class_count", model.class_count()},
        {"layers", layers},
        {"tensors", tensors},
    };
    std::ofstream out(root / "manifest.json");
    if (!out) {
        throw DataError("checkpoint: cannot write manifest in " + dir);
    }
    out << manifest.dump(2) << "\n";
}

LayeredModel load_checkpoint(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream in(root / "manifest.json");
    if (!in) {
        throw DataError("checkpoint: missing manifest in " + dir);
    }
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint: corrupt manifest: ") + e.what());
    }

    if (!manifest.contains("format_version") || manifest["format_version"].get<int>() != kFormatVersion) {
        throw DataError("checkpoint: format version mismatch");
    }
    if (manifest.value("dtype", "") != "f64" || manifest.value("byte_order", "") != "little-endian") {
        throw DataError("checkpoint: unsupported dtype or byte order");
    }

    Shape input_shape = manifest.at("input_shape").get<Shape>();
    std::vector<LayerSpec> specs;
    for (const json& l : manifest.at("layers")) {
        LayerSpec s;
        s.name = l.at("name").get<std::string>();
        s.kind = kind_from_name(l.at("kind").get<std::string>());
        s.units = l.value("units", std::int64_t{0});
        s.channels = l.value("channels", std::int64_t{0});
        s.ksize = l.value("ksize", std::int64_t{0});
        s.pad = l.value("pad", std::int64_t{0});
        specs.push_back(std::move(s));
    }

    LayeredModel model(std::move(input_shape), std::move(specs));
    if (manifest.at("class_count").get<int>() != model.class_count()) {
        throw DataError("checkpoint: manifest class_count disagrees with layer specs");
    }

    std::size_t expected_tensors = 0;
    for (const LayerSpec& s : model.specs()) {
        if (s.trainable()) {
            expected_tensors += 2;
        }
    }
    const json& tensors = manifest.at("tensors");
    if (tensors.size() != expected_tensors) {
        throw DataError("checkpoint: corrupt payload, manifest tensor list disagrees with layers");
    }

    for (const json& t : tensors) {
        const std::string layer = t.at("layer").get<std::string>();
        const std::string part = t.at("part").get<std::string>();
        const Shape shape = t.at("shape").get<Shape>();
        const int idx = model.layer_index(layer);
        if (idx < 0 || !model.has_params(idx)) {
            throw DataError("checkpoint: manifest references unknown layer " + layer);
        }
        LayerParams& p = model.mutable_params(idx);
        Tensor& dst = part == "weight" ? p.weight : p.bias;
        if (dst.shape() != shape) {
            throw DataError("checkpoint: shape disagreement for " + layer + "." + part);
        }
        if (t.at("bytes").get<std::int64_t>() != dst.size() * static_cast<std::int64_t>(sizeof(double))) {
            throw DataError("checkpoint: byte count disagreement for " + layer + "." + part);
        }
        read_blob(root / t.at("file").get<std::string>(), dst);
    }
    return model;
}

}  // namespace subsel
