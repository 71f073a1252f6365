#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <queue>

#include "subsel/errors.hpp"
#include "subsel/rng.hpp"
#include "subsel/slic.hpp"

using namespace subsel;

namespace {

// plain Lloyd 2-means over (intensity, y/S, x/S); the brute-force oracle
// for the two-halves case
std::vector<int> two_means_labels(const Image& img, double spatial_scale) {
    struct Point {
        double c, y, x;
    };
    std::vector<Point> pts;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            pts.push_back({img.at(0, y, x), y / spatial_scale, x / spatial_scale});
        }
    }
    Point centers[2] = {pts.front(), pts.back()};
    std::vector<int> labels(pts.size(), 0);
    for (int iter = 0; iter < 50; ++iter) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double best = 1e300;
            for (int k = 0; k < 2; ++k) {
                const double dc = pts[i].c - centers[k].c;
                const double dy = pts[i].y - centers[k].y;
                const double dx = pts[i].x - centers[k].x;
                const double d = dc * dc + dy * dy + dx * dx;
                if (d < best) {
                    best = d;
                    labels[i] = k;
                }
            }
        }
        Point sums[2] = {{0, 0, 0}, {0, 0, 0}};
        int counts[2] = {0, 0};
        for (std::size_t i = 0; i < pts.size(); ++i) {
            sums[labels[i]].c += pts[i].c;
            sums[labels[i]].y += pts[i].y;
            sums[labels[i]].x += pts[i].x;
            ++counts[labels[i]];
        }
        for (int k = 0; k < 2; ++k) {
            if (counts[k] > 0) {
                centers[k] = {sums[k].c / counts[k], sums[k].y / counts[k], sums[k].x / counts[k]};
            }
        }
    }
    return labels;
}

bool region_is_4_connected(const std::vector<int>& labels, int label, int h, int w) {
    int start = -1, count = 0;
    for (int p = 0; p < h * w; ++p) {
        if (labels[static_cast<std::size_t>(p)] == label) {
            ++count;
            if (start < 0) {
                start = p;
            }
        }
    }
    if (count == 0) {
        return false;
    }
    std::vector<bool> seen(static_cast<std::size_t>(h) * w, false);
    std::queue<int> frontier;
    frontier.push(start);
    seen[static_cast<std::size_t>(start)] = true;
    int reached = 0;
    while (!frontier.empty()) {
        const int p = frontier.front();
        frontier.pop();
        ++reached;
        const int y = p / w, x = p % w;
        const int neigh[4] = {p - w, p + w, p - 1, p + 1};
        const bool ok[4] = {y > 0, y < h - 1, x > 0, x < w - 1};
        for (int i = 0; i < 4; ++i) {
            if (ok[i] && !seen[static_cast<std::size_t>(neigh[i])] &&
                labels[static_cast<std::size_t>(neigh[i])] == label) {
                seen[static_cast<std::size_t>(neigh[i])] = true;
                frontier.push(neigh[i]);
            }
        }
    }
    return reached == count;
}

}  // namespace

TEST_CASE("uniform image splits into near-equal rectangles") {
    const Image img(1, 24, 24, 0.5);
    SlicConfig cfg;
    cfg.k = 4;
    int count = 0;
    const std::vector<int> labels = slic_labels(img, cfg, &count);
    REQUIRE(count == 4);
    std::vector<std::int64_t> areas(4, 0);
    for (int lab : labels) {
        ++areas[static_cast<std::size_t>(lab)];
    }
    for (std::int64_t a : areas) {
        CHECK(a == 144);  // exact quadrants: the position term dominates
    }
}

TEST_CASE("two flat halves are recovered almost exactly") {
    Image img(1, 24, 24, 0.1);
    for (int y = 0; y < 24; ++y) {
        for (int x = 12; x < 24; ++x) {
            img.at(0, y, x) = 0.9;
        }
    }
    SlicConfig cfg;
    cfg.k = 2;
    cfg.compactness = 0.05;
    int count = 0;
    const std::vector<int> labels = slic_labels(img, cfg, &count);
    REQUIRE(count == 2);

    const std::vector<int> oracle = two_means_labels(img, std::sqrt(24.0 * 24.0 / 2.0));
    // align oracle label polarity with slic's before comparing
    int agree = 0, disagree = 0;
    for (std::size_t p = 0; p < labels.size(); ++p) {
        if (labels[p] == oracle[p]) {
            ++agree;
        } else {
            ++disagree;
        }
    }
    const int matches = std::max(agree, disagree);
    CHECK(static_cast<double>(matches) / static_cast<double>(labels.size()) >= 0.95);
}

TEST_CASE("every superpixel is a 4-connected region and labels cover the image") {
    RngStream rng = RngStream::derive(3, {0x51});
    Image img(1, 32, 32);
    for (double& v : img.data) {
        v = rng.uniform();
    }
    SlicConfig cfg;
    cfg.k = 9;
    int count = 0;
    const std::vector<int> labels = slic_labels(img, cfg, &count);
    REQUIRE(count >= 2);
    std::vector<std::int64_t> areas(static_cast<std::size_t>(count), 0);
    for (int lab : labels) {
        REQUIRE(lab >= 0);
        REQUIRE(lab < count);
        ++areas[static_cast<std::size_t>(lab)];
    }
    std::int64_t total = 0;
    for (int lab = 0; lab < count; ++lab) {
        CHECK(areas[static_cast<std::size_t>(lab)] > 0);
        total += areas[static_cast<std::size_t>(lab)];
        CHECK(region_is_4_connected(labels, lab, 32, 32));
    }
    CHECK(total == 32 * 32);
}

TEST_CASE("slic candidates form a disjoint cover with one region per element") {
    RngStream rng = RngStream::derive(5, {0x52});
    Image img(1, 20, 20);
    for (double& v : img.data) {
        v = rng.uniform();
    }
    SlicConfig cfg;
    cfg.k = 6;
    const CandidateSet set = slic_candidates(img, cfg, {0.0});
    REQUIRE(set.size() >= 2);
    std::vector<int> hit(img.pixel_count(), 0);
    for (const Region& r : set.regions) {
        for (std::size_t p = 0; p < r.mask.size(); ++p) {
            if (r.mask[p]) {
                ++hit[p];
            }
        }
    }
    for (int h : hit) {
        REQUIRE(h == 1);
    }
    std::vector<int> all(set.size());
    for (int i = 0; i < set.size(); ++i) {
        all[static_cast<std::size_t>(i)] = i;
    }
    CHECK(compose(set, all).data == img.data);
}

TEST_CASE("slic is deterministic and guards its inputs") {
    RngStream rng = RngStream::derive(8, {0x53});
    Image img(1, 16, 16);
    for (double& v : img.data) {
        v = rng.uniform();
    }
    SlicConfig cfg;
    cfg.k = 5;
    int c1 = 0, c2 = 0;
    CHECK(slic_labels(img, cfg, &c1) == slic_labels(img, cfg, &c2));
    CHECK(c1 == c2);

    SlicConfig bad = cfg;
    bad.k = 16 * 16 + 1;
    CHECK_THROWS_AS(slic_labels(img, bad, nullptr), ConfigError);
    bad.k = 1;
    CHECK_THROWS_AS(slic_labels(img, bad, nullptr), ConfigError);
}
