#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "subsel/checkpoint.hpp"
#include "subsel/errors.hpp"
#include "subsel/model.hpp"
#include "subsel/rng.hpp"

using namespace subsel;

namespace {

Image ones_image(int c, int h, int w) {
    return Image(c, h, w, 1.0);
}

// scalar-loop MLP forward (input -> 64 relu -> 32 relu -> classes)
std::vector<double> reference_mlp_logits(const LayeredModel& model, const std::vector<double>& x) {
    std::vector<double> cur = x;
    const char* layers[] = {"fc1", "fc2", "head"};
    for (int li = 0; li < 3; ++li) {
        const LayerParams& p = model.params(layers[li]);
        const std::int64_t rows = p.weight.shape()[0];
        const std::int64_t cols = p.weight.shape()[1];
        std::vector<double> next(static_cast<std::size_t>(rows));
        for (std::int64_t r = 0; r < rows; ++r) {
            double acc = p.bias[r];
            for (std::int64_t c = 0; c < cols; ++c) {
                acc += p.weight[r * cols + c] * cur[static_cast<std::size_t>(c)];
            }
            next[static_cast<std::size_t>(r)] = li < 2 ? std::max(0.0, acc) : acc;
        }
        cur = std::move(next);
    }
    return cur;
}

}  // namespace

TEST_CASE("zero-weight model predicts class 0 on equal logits") {
    LayeredModel model = LayeredModel::reference_mlp(Shape{1, 4, 4}, 3);
    const ForwardRecord rec = forward_with_activations(model, ones_image(1, 4, 4));
    for (std::int64_t i = 1; i < rec.logits.size(); ++i) {
        CHECK(rec.logits[i] == rec.logits[0]);
    }
    CHECK(rec.predicted_class == 0);
    CHECK(rec.predicted_logit == rec.logits[0]);
}

TEST_CASE("single dense layer reproduces the weight column on a one-hot input") {
    std::vector<LayerSpec> specs = {{"a", LayerKind::Dense, 4, 0, 0, 0},
                                    {"head", LayerKind::Dense, 2, 0, 0, 0}};
    LayeredModel model(Shape{1, 1, 3}, std::move(specs));
    LayerParams& p = model.mutable_params(0);
    for (std::int64_t i = 0; i < p.weight.size(); ++i) {
        p.weight[i] = static_cast<double>(i);
    }
    Image onehot(1, 1, 3, 0.0);
    onehot.at(0, 0, 1) = 1.0;  // e_1
    const ForwardRecord rec = forward_with_activations(model, onehot);
    // activation of layer "a" equals the second column of its weight
    const Tensor& act = rec.activations[0];
    for (std::int64_t r = 0; r < 4; ++r) {
        CHECK(act[r] == p.weight[r * 3 + 1]);
    }
}

TEST_CASE("reference MLP matches a scalar-loop reference on an all-ones image") {
    LayeredModel model = LayeredModel::reference_mlp(Shape{1, 8, 8}, 4);
    model.init_random(0);
    const Image img = ones_image(1, 8, 8);
    const ForwardRecord rec = forward_with_activations(model, img);
    const std::vector<double> expected =
        reference_mlp_logits(model, std::vector<double>(64, 1.0));
    REQUIRE(expected.size() == 4);
    for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(rec.logits[i] == doctest::Approx(expected[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("layer_weight_std") {
    LayeredModel model = LayeredModel::reference_mlp(Shape{1, 4, 4}, 2);

    SUBCASE("constant weights give zero") {
        LayerParams& p = model.mutable_params(model.layer_index("fc1"));
        for (std::int64_t i = 0; i < p.weight.size(); ++i) {
            p.weight[i] = 3.25;
        }
        CHECK(layer_weight_std(model, "fc1") == 0.0);
    }

    SUBCASE("two-point population std of {1,-1} is 1") {
        std::vector<LayerSpec> specs = {{"a", LayerKind::Dense, 1, 0, 0, 0},
                                        {"head", LayerKind::Dense, 2, 0, 0, 0}};
        LayeredModel tiny(Shape{2}, std::move(specs));
        LayerParams& p = tiny.mutable_params(0);
        p.weight[0] = 1.0;
        p.weight[1] = -1.0;
        CHECK(layer_weight_std(tiny, "a") == 1.0);
    }

    SUBCASE("matches an independent mean/variance loop on seeded weights") {
        model.init_random(0);
        const Tensor& w = model.params("fc2").weight;
        double mean = 0.0;
        for (std::int64_t i = 0; i < w.size(); ++i) mean += w[i];
        mean /= static_cast<double>(w.size());
        double var = 0.0;
        for (std::int64_t i = 0; i < w.size(); ++i) var += (w[i] - mean) * (w[i] - mean);
        var /= static_cast<double>(w.size());
        CHECK(layer_weight_std(model, "fc2") == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    }

    SUBCASE("invariant under weight permutation") {
        model.init_random(1);
        const double before = layer_weight_std(model, "fc1");
        LayerParams& p = model.mutable_params(model.layer_index("fc1"));
        std::reverse(p.weight.values().begin(), p.weight.values().end());
        CHECK(layer_weight_std(model, "fc1") == doctest::Approx(before).epsilon(1e-12));
    }

    SUBCASE("unknown and non-trainable layers are rejected") {
        CHECK_THROWS_AS(layer_weight_std(model, "nope"), ConfigError);
        CHECK_THROWS_AS(layer_weight_std(model, "relu1"), ConfigError);
    }
}

TEST_CASE("penultimate feature is the hidden activation and is deterministic") {
    LayeredModel model = LayeredModel::reference_mlp(Shape{1, 4, 4}, 2);
    model.init_random(2);
    Image img(1, 4, 4, 0.0);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = static_cast<double>(i) / 16.0;
    }
    const std::vector<double> f1 = penultimate_feature(model, img);
    const std::vector<double> f2 = penultimate_feature(model, img);
    CHECK(f1 == f2);
    CHECK(f1.size() == 32);  // relu(fc2) output
    const ForwardRecord rec = forward_with_activations(model, img);
    CHECK(f1 == rec.activations[3].values());
}

TEST_CASE("predicted class is invariant under shifting every logit") {
    LayeredModel model = LayeredModel::reference_mlp(Shape{1, 4, 4}, 3);
    model.init_random(5);
    Image img(1, 4, 4, 0.3);
    const int before = forward_with_activations(model, img).predicted_class;
    LayerParams& head = model.mutable_params(model.layer_index("head"));
    for (std::int64_t i = 0; i < head.bias.size(); ++i) {
        head.bias[i] += 217.5;
    }
    CHECK(forward_with_activations(model, img).predicted_class == before);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "subsel_ckpt_test";
    fs::remove_all(dir);

    LayeredModel model = LayeredModel::reference_cnn(Shape{1, 12, 12}, 4);
    model.init_random(0);
    save_checkpoint(model, dir.string());
    const LayeredModel loaded = load_checkpoint(dir.string());

    REQUIRE(loaded.specs().size() == model.specs().size());
    for (std::size_t i = 0; i < model.specs().size(); ++i) {
        if (!model.specs()[i].trainable()) {
            continue;
        }
        CHECK(loaded.params(static_cast<int>(i)).weight.same_bits(model.params(static_cast<int>(i)).weight));
        CHECK(loaded.params(static_cast<int>(i)).bias.same_bits(model.params(static_cast<int>(i)).bias));
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint corruption is detected") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "subsel_ckpt_corrupt";
    fs::remove_all(dir);

    LayeredModel model = LayeredModel::reference_mlp(Shape{1, 4, 4}, 2);
    model.init_random(3);
    save_checkpoint(model, dir.string());

    SUBCASE("truncated blob") {
        fs::resize_file(dir / "fc1.weight.bin", 16);
        CHECK_THROWS_AS(load_checkpoint(dir.string()), DataError);
    }
    SUBCASE("manifest/payload layer disagreement") {
        // manifest keeps all layers, one payload file vanishes
        fs::remove(dir / "fc2.weight.bin");
        CHECK_THROWS_AS(load_checkpoint(dir.string()), DataError);
    }
    SUBCASE("version mismatch") {
        std::ofstream out(dir / "manifest.json");
        out << "{\"format_version\": 999}";
        out.close();
        CHECK_THROWS_AS(load_checkpoint(dir.string()), DataError);
    }
    fs::remove_all(dir);
}
