#include <doctest.h>

#include <cmath>
#include <numeric>

#include "subsel/errors.hpp"
#include "subsel/partition.hpp"
#include "subsel/rng.hpp"

using namespace subsel;

namespace {

SaliencyMap map_from(std::vector<double> v, int h, int w) {
    SaliencyMap m;
    m.height = h;
    m.width = w;
    m.values = std::move(v);
    return m;
}

Image random_image(int side, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, {0x1111u});
    Image img(1, side, side);
    for (double& v : img.data) {
        v = rng.uniform();
    }
    return img;
}

void check_disjoint_cover(const CandidateSet& set) {
    std::vector<int> hit(set.base_image.pixel_count(), 0);
    std::int64_t total_area = 0;
    for (const Region& r : set.regions) {
        std::int64_t area = 0;
        for (std::size_t p = 0; p < r.mask.size(); ++p) {
            if (r.mask[p]) {
                ++hit[p];
                ++area;
            }
        }
        CHECK(area == r.area);
        CHECK(area > 0);
        total_area += area;
    }
    CHECK(total_area == static_cast<std::int64_t>(set.base_image.pixel_count()));
    for (int h : hit) {
        REQUIRE(h == 1);
    }
}

}  // namespace

TEST_CASE("gradient saliency of a zero-weight model is flat zero") {
    LayeredModel model = LayeredModel::reference_mlp(Shape{1, 6, 6}, 3);
    const SaliencyMap map = gradient_saliency(model, Image(1, 6, 6, 0.4));
    for (double v : map.values) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("gradient saliency of a single-pixel linear model is a spike") {
    std::vector<LayerSpec> specs = {{"mid", LayerKind::Dense, 3, 0, 0, 0},
                                    {"head", LayerKind::Dense, 2, 0, 0, 0}};
    LayeredModel model(Shape{1, 3, 3}, std::move(specs));
    // mid: first unit = 3 * pixel(0,0); head passes unit 0 to logit 0
    model.mutable_params(0).weight[0] = 3.0;
    model.mutable_params(1).weight[0] = 1.0;

    const SaliencyMap map = gradient_saliency(model, Image(1, 3, 3, 1.0));
    CHECK(map.at(0, 0) == doctest::Approx(3.0));
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) {
            if (y != 0 || x != 0) {
                CHECK(map.at(y, x) == 0.0);
            }
        }
    }
}

TEST_CASE("gradient saliency matches per-pixel finite differences on a CNN") {
    LayeredModel model = LayeredModel::reference_cnn(Shape{1, 12, 12}, 4);
    model.init_random(0);
    Image img(1, 12, 12, 0.1);
    for (int y = 4; y < 8; ++y) {
        for (int x = 4; x < 8; ++x) {
            img.at(0, y, x) = 0.9;  // bright square
        }
    }
    const ForwardRecord clean = forward_with_activations(model, img);
    const SaliencyMap map = gradient_saliency(model, img);

    const int probes[4][2] = {{0, 0}, {5, 5}, {7, 4}, {11, 11}};
    const double h = 1e-5;
    for (const auto& p : probes) {
        Image plus = img, minus = img;
        plus.at(0, p[0], p[1]) += h;
        minus.at(0, p[0], p[1]) -= h;
        const double fp =
            forward_with_activations(model, plus).logits[clean.predicted_class];
        const double fm =
            forward_with_activations(model, minus).logits[clean.predicted_class];
        const double fd = std::abs((fp - fm) / (2.0 * h));
        CHECK(map.at(p[0], p[1]) == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("box resize preserves the mean") {
    RngStream rng = RngStream::derive(4, {2});
    std::vector<double> v(56 * 56);
    double mean = 0.0;
    for (double& x : v) {
        x = rng.uniform();
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    const SaliencyMap small = resize_box(map_from(std::move(v), 56, 56), 7);
    double small_mean = 0.0;
    for (double x : small.values) {
        small_mean += x;
    }
    small_mean /= 49.0;
    CHECK(small_mean == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("grid candidates") {
    SUBCASE("m=1 keeps the whole image in a single candidate") {
        const Image img = random_image(8, 1);
        const SaliencyMap sal = map_from(std::vector<double>(64, 1.0), 8, 8);
        const CandidateSet set = grid_candidates(img, sal, 2, 1, {0.0});
        REQUIRE(set.size() == 1);
        const Image composed = compose(set, {0});
        CHECK(composed.data == img.data);
    }

    SUBCASE("N=2 m=4 ranks cells by descending saliency") {
        const Image img = random_image(8, 2);
        const SaliencyMap sal = map_from({4.0, 3.0, 2.0, 1.0}, 2, 2);
        const CandidateSet set = grid_candidates(img, sal, 2, 4, {0.0});
        REQUIRE(set.size() == 4);
        // candidate 0 keeps only the top-left (most salient) cell
        CHECK(set.elements[0].region_ids == std::vector<int>{0});
        CHECK(set.elements[1].region_ids == std::vector<int>{1});
        CHECK(set.elements[2].region_ids == std::vector<int>{2});
        CHECK(set.elements[3].region_ids == std::vector<int>{3});
        const Image c0 = compose(set, {0});
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                const bool kept = y < 4 && x < 4;
                CHECK(c0.at(0, y, x) == (kept ? img.at(0, y, x) : 0.0));
            }
        }
    }

    SUBCASE("partition laws hold on seeded saliency") {
        const Image img = random_image(16, 3);
        RngStream rng = RngStream::derive(9, {0});
        std::vector<double> noise(16 * 16);
        for (double& v : noise) {
            v = rng.uniform();
        }
        const CandidateSet set = grid_candidates(img, map_from(std::move(noise), 16, 16), 4, 4, {0.5});
        REQUIRE(set.size() == 4);
        check_disjoint_cover(set);
        // each candidate keeps exactly d = 4 cells; rank ranges tile 1..16
        std::vector<int> covered_ranks;
        for (const CandidateElement& e : set.elements) {
            CHECK(e.region_ids.size() == 4);
            CHECK(e.rank_range.second - e.rank_range.first + 1 == 4);
            for (int r = e.rank_range.first; r <= e.rank_range.second; ++r) {
                covered_ranks.push_back(r);
            }
        }
        std::sort(covered_ranks.begin(), covered_ranks.end());
        std::vector<int> expect(16);
        std::iota(expect.begin(), expect.end(), 1);
        CHECK(covered_ranks == expect);
        // union of kept regions over all candidates covers the image
        std::vector<int> all(set.size());
        std::iota(all.begin(), all.end(), 0);
        CHECK(compose(set, all).data == img.data);
    }

    SUBCASE("indivisible grids are rejected") {
        const Image img = random_image(8, 4);
        const SaliencyMap sal = map_from(std::vector<double>(9, 1.0), 3, 3);
        CHECK_THROWS_AS(grid_candidates(img, sal, 3, 2, {0.0}), ConfigError);
    }
}

TEST_CASE("compose laws") {
    const Image img = random_image(9, 5);
    RngStream rng = RngStream::derive(2, {7});
    std::vector<double> sal(81);
    for (double& v : sal) {
        v = rng.uniform();
    }
    const CandidateSet set = grid_candidates(img, map_from(std::move(sal), 9, 9), 3, 3, {0.25});

    SUBCASE("composing every element reproduces the base image") {
        CHECK(compose(set, {0, 1, 2}).data == img.data);
    }
    SUBCASE("composing nothing yields the fill image") {
        const Image empty = compose(set, {});
        for (double v : empty.data) {
            CHECK(v == 0.25);
        }
    }
    SUBCASE("composition respects unions pixel by pixel") {
        const Image a = compose(set, {0});
        const Image b = compose(set, {2});
        const Image both = compose(set, {0, 2});
        for (std::size_t p = 0; p < both.data.size(); ++p) {
            const double merged = a.data[p] != 0.25 ? a.data[p] : b.data[p];
            CHECK(both.data[p] == merged);
        }
    }
    SUBCASE("duplicate and unknown ids are rejected") {
        CHECK_THROWS_AS(compose(set, {0, 0}), ConfigError);
        CHECK_THROWS_AS(compose(set, {7}), ConfigError);
    }
}
