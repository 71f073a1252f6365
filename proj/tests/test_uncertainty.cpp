#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "subsel/errors.hpp"
#include "subsel/model.hpp"
#include "subsel/rng.hpp"
#include "subsel/uncertainty.hpp"

using namespace subsel;

namespace {

LayeredModel seeded_mlp(std::uint64_t seed, int side = 8, int classes = 4) {
    LayeredModel model = LayeredModel::reference_mlp(Shape{1, side, side}, classes);
    model.init_random(seed);
    return model;
}

std::vector<Image> random_images(int count, int side, std::uint64_t seed) {
    std::vector<Image> images;
    for (int i = 0; i < count; ++i) {
        RngStream rng = RngStream::derive(seed, {static_cast<std::uint64_t>(i), 0xABCu});
        Image img(1, side, side);
        for (double& v : img.data) {
            v = rng.uniform();
        }
        images.push_back(std::move(img));
    }
    return images;
}

UncertaintyConfig small_config(int passes = 4, double alpha = 0.05) {
    UncertaintyConfig cfg;
    cfg.alpha = alpha;
    cfg.passes = passes;
    cfg.seed = 0;
    return cfg;
}

// Scalar-loop replay of one stochastic pass on the reference MLP: manual
// perturbation from the same streams, manual forward, manual backward.
// Everything except RngStream is reimplemented here.
std::vector<double> reference_pass(const LayeredModel& model, const Image& image,
                                   const TrainStats& stats, const UncertaintyConfig& cfg,
                                   int pass_index) {
    const char* names[3] = {"fc1", "fc2", "head"};
    // clean forward for prediction, feature, modulation
    auto dense = [](const std::vector<double>& x, const Tensor& w, const Tensor& b, bool relu) {
        const std::int64_t rows = w.shape()[0], cols = w.shape()[1];
        std::vector<double> out(static_cast<std::size_t>(rows));
        for (std::int64_t r = 0; r < rows; ++r) {
            double acc = b[r];
            for (std::int64_t c = 0; c < cols; ++c) {
                acc += w[r * cols + c] * x[static_cast<std::size_t>(c)];
            }
            out[static_cast<std::size_t>(r)] = relu && acc < 0.0 ? 0.0 : acc;
        }
        return out;
    };
    const std::vector<double>& x = image.data;
    const std::vector<double> a1c = dense(x, model.params("fc1").weight, model.params("fc1").bias, false);
    std::vector<double> h1c = a1c;
    for (double& v : h1c) v = std::max(0.0, v);
    const std::vector<double> a2c = dense(h1c, model.params("fc2").weight, model.params("fc2").bias, false);
    std::vector<double> h2c = a2c;
    for (double& v : h2c) v = std::max(0.0, v);
    const std::vector<double> logits_c =
        dense(h2c, model.params("head").weight, model.params("head").bias, false);
    int predicted = 0;
    for (std::size_t i = 1; i < logits_c.size(); ++i) {
        if (logits_c[i] > logits_c[static_cast<std::size_t>(predicted)]) {
            predicted = static_cast<int>(i);
        }
    }
    double dist = 0.0;
    for (std::size_t i = 0; i < h2c.size(); ++i) {
        const double d = h2c[i] - stats.centroid[i];
        dist += d * d;
    }
    const double u_x = 1.0 + cfg.beta * std::tanh(cfg.gamma * (std::sqrt(dist) - stats.rho0));

    // perturb with the same streams
    LayerParams perturbed[3];
    for (int li = 0; li < 3; ++li) {
        const LayerParams& p = model.params(names[li]);
        double mean = 0.0;
        for (std::int64_t i = 0; i < p.weight.size(); ++i) mean += p.weight[i];
        mean /= static_cast<double>(p.weight.size());
        double var = 0.0;
        for (std::int64_t i = 0; i < p.weight.size(); ++i) {
            var += (p.weight[i] - mean) * (p.weight[i] - mean);
        }
        const double sigma = std::sqrt(var / static_cast<double>(p.weight.size()));
        const double scale = cfg.alpha * sigma * u_x;
        RngStream rng = RngStream::derive(
            cfg.seed, {static_cast<std::uint64_t>(pass_index), static_cast<std::uint64_t>(li)});
        perturbed[li] = p;
        if (scale != 0.0) {
            for (std::int64_t i = 0; i < perturbed[li].weight.size(); ++i) {
                perturbed[li].weight[i] += scale * rng.normal();
            }
            for (std::int64_t i = 0; i < perturbed[li].bias.size(); ++i) {
                perturbed[li].bias[i] += scale * rng.normal();
            }
        }
    }

    // perturbed forward, recording pre-activation layer outputs
    const std::vector<double> a1 = dense(x, perturbed[0].weight, perturbed[0].bias, false);
    std::vector<double> h1 = a1;
    for (double& v : h1) v = std::max(0.0, v);
    const std::vector<double> a2 = dense(h1, perturbed[1].weight, perturbed[1].bias, false);
    std::vector<double> h2 = a2;
    for (double& v : h2) v = std::max(0.0, v);
    const std::vector<double> logits = dense(h2, perturbed[2].weight, perturbed[2].bias, false);
    (void)logits;

    // manual backward of d(logits[predicted]) through the chain
    std::vector<double> g_logits(logits.size(), 0.0);
    g_logits[static_cast<std::size_t>(predicted)] = 1.0;  // eta for the head layer

    auto dense_back = [](const std::vector<double>& gy, const Tensor& w) {
        const std::int64_t rows = w.shape()[0], cols = w.shape()[1];
        std::vector<double> gx(static_cast<std::size_t>(cols), 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t c = 0; c < cols; ++c) {
                gx[static_cast<std::size_t>(c)] += gy[static_cast<std::size_t>(r)] * w[r * cols + c];
            }
        }
        return gx;
    };
    std::vector<double> g_h2 = dense_back(g_logits, perturbed[2].weight);
    std::vector<double> g_a2 = g_h2;
    for (std::size_t i = 0; i < g_a2.size(); ++i) {
        if (a2[i] <= 0.0) g_a2[i] = 0.0;
    }
    std::vector<double> g_h1 = dense_back(g_a2, perturbed[1].weight);
    std::vector<double> g_a1 = g_h1;
    for (std::size_t i = 0; i < g_a1.size(); ++i) {
        if (a1[i] <= 0.0) g_a1[i] = 0.0;
    }

    auto norm = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (double z : v) acc += z * z;
        return std::sqrt(acc);
    };
    return {norm(g_a1), norm(g_a2), norm(g_logits)};
}

}  // namespace

TEST_CASE("fit_train_stats centroid and median on constructed features") {
    // feature equals the single input pixel: fc "a" is 1x1 identity
    std::vector<LayerSpec> specs = {{"a", LayerKind::Dense, 1, 0, 0, 0},
                                    {"head", LayerKind::Dense, 2, 0, 0, 0}};
    LayeredModel model(Shape{1, 1, 1}, std::move(specs));
    model.mutable_params(0).weight[0] = 1.0;
    model.mutable_params(1).weight[0] = 1.0;

    UncertaintyConfig cfg = small_config(1, 0.0);
    cfg.layers = {"a"};  // K=1, so 3 samples suffice

    SUBCASE("identical features collapse to rho0 = 0") {
        std::vector<Image> images(4, Image(1, 1, 1, 0.7));
        const TrainStats stats = fit_train_stats(model, images, cfg);
        CHECK(stats.centroid == std::vector<double>{0.7});
        CHECK(stats.rho0 == 0.0);
    }

    SUBCASE("features {0,2} give centroid 1 and rho0 1") {
        std::vector<Image> images = {Image(1, 1, 1, 0.0), Image(1, 1, 1, 2.0), Image(1, 1, 1, 0.0),
                                     Image(1, 1, 1, 2.0)};
        const TrainStats stats = fit_train_stats(model, images, cfg);
        CHECK(stats.centroid[0] == doctest::Approx(1.0));
        CHECK(stats.rho0 == doctest::Approx(1.0));
    }

    SUBCASE("too few samples are rejected") {
        std::vector<Image> images(2, Image(1, 1, 1, 0.5));
        CHECK_THROWS_AS(fit_train_stats(model, images, cfg), DataError);
    }
}

TEST_CASE("fit_train_stats matches independent mean/median/cov loops") {
    LayeredModel model = seeded_mlp(0);
    const std::vector<Image> images = random_images(50, 8, 0);
    const UncertaintyConfig cfg = small_config(2);
    const TrainStats stats = fit_train_stats(model, images, cfg);

    // centroid and lower-median distance, recomputed independently
    std::vector<std::vector<double>> features;
    for (const Image& img : images) {
        features.push_back(penultimate_feature(model, img));
    }
    for (std::size_t j = 0; j < stats.centroid.size(); ++j) {
        double acc = 0.0;
        for (const auto& f : features) acc += f[j];
        CHECK(stats.centroid[j] == doctest::Approx(acc / 50.0).epsilon(1e-12));
    }
    std::vector<double> dists;
    for (const auto& f : features) {
        double acc = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) {
            acc += (f[j] - stats.centroid[j]) * (f[j] - stats.centroid[j]);
        }
        dists.push_back(std::sqrt(acc));
    }
    std::sort(dists.begin(), dists.end());
    CHECK(stats.rho0 == doctest::Approx(dists[(50 - 1) / 2]).epsilon(1e-12));

    // descriptor mean and unbiased covariance, recomputed independently
    std::vector<Descriptor> descs;
    for (const Image& img : images) {
        descs.push_back(compute_descriptor(model, img, stats, cfg));
    }
    const std::size_t k = stats.layers.size();
    for (std::size_t a = 0; a < k; ++a) {
        double mean = 0.0;
        for (const Descriptor& d : descs) mean += d.values[a];
        mean /= 50.0;
        CHECK(stats.desc_mean[a] == doctest::Approx(mean).epsilon(1e-10));
        for (std::size_t b = 0; b < k; ++b) {
            double cov = 0.0;
            for (const Descriptor& d : descs) {
                cov += (d.values[a] - stats.desc_mean[a]) * (d.values[b] - stats.desc_mean[b]);
            }
            cov /= 49.0;
            CHECK(stats.desc_cov[a][b] == doctest::Approx(cov).epsilon(1e-9));
        }
    }
}

TEST_CASE("modulation factor hand cases and envelope") {
    TrainStats stats;
    stats.centroid = {0.0, 0.0};
    stats.rho0 = 2.0;

    SUBCASE("distance rho0 gives exactly 1") {
        CHECK(modulation_factor(stats, {2.0, 0.0}, 0.5, 1.7) == 1.0);
    }
    SUBCASE("beta 0 pins the factor at 1") {
        CHECK(modulation_factor(stats, {9.0, -3.0}, 0.0, 1.0) == 1.0);
    }
    SUBCASE("far features approach 1 + beta") {
        // distance - rho0 = 10 with beta 0.5, gamma 1
        const double u = modulation_factor(stats, {12.0, 0.0}, 0.5, 1.0);
        CHECK(u == doctest::Approx(1.0 + 0.5 * std::tanh(10.0)).epsilon(1e-15));
        CHECK(u == doctest::Approx(1.4999999979388463).epsilon(1e-12));
        CHECK(u < 1.5);
    }
    SUBCASE("envelope over random draws") {
        RngStream rng = RngStream::derive(17, {1});
        for (int i = 0; i < 2000; ++i) {
            const double beta = 0.99 * rng.uniform();
            const double gamma = 0.05 + 2.0 * rng.uniform();
            const std::vector<double> f = {8.0 * rng.uniform() - 4.0, 8.0 * rng.uniform() - 4.0};
            const double u = modulation_factor(stats, f, beta, gamma);
            if (beta > 0.0) {
                REQUIRE(u > 1.0 - beta);
                REQUIRE(u < 1.0 + beta);
            }
        }
    }
    SUBCASE("dimension mismatch is rejected") {
        CHECK_THROWS_AS(modulation_factor(stats, {1.0}, 0.5, 1.0), ConfigError);
    }
}

TEST_CASE("perturb_weights") {
    LayerParams params;
    params.weight = Tensor(Shape{400, 250});
    params.bias = Tensor(Shape{400});
    RngStream init = RngStream::derive(3, {0});
    for (std::int64_t i = 0; i < params.weight.size(); ++i) {
        params.weight[i] = init.normal();
    }

    SUBCASE("alpha 0 copies bitwise") {
        RngStream rng = RngStream::derive(1, {0});
        const LayerParams out = perturb_weights(params, 1.3, 1.1, 0.0, rng);
        CHECK(out.weight.same_bits(params.weight));
        CHECK(out.bias.same_bits(params.bias));
    }
    SUBCASE("sigma 0 copies bitwise") {
        RngStream rng = RngStream::derive(1, {0});
        const LayerParams out = perturb_weights(params, 0.0, 1.1, 0.5, rng);
        CHECK(out.weight.same_bits(params.weight));
    }
    SUBCASE("draws have unit variance and zero mean: 1e5-sample oracle") {
        RngStream rng = RngStream::derive(7, {0});
        const double alpha = 0.2, sigma = 1.5, u = 1.25;
        const LayerParams out = perturb_weights(params, sigma, u, alpha, rng);
        const double scale = alpha * sigma * u;
        const std::int64_t n = out.weight.size();  // 100000 draws
        REQUIRE(n == 100000);
        double sum = 0.0, sum_sq = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double eps = (out.weight[i] - params.weight[i]) / scale;
            sum += eps;
            sum_sq += eps * eps;
        }
        const double mean = sum / static_cast<double>(n);
        const double var = sum_sq / static_cast<double>(n) - mean * mean;
        CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
        CHECK(var == doctest::Approx(1.0).epsilon(0.05));
    }
}

TEST_CASE("stochastic pass matches a full scalar-loop replay") {
    LayeredModel model = seeded_mlp(0);
    const std::vector<Image> train = random_images(12, 8, 5);
    UncertaintyConfig cfg = small_config(4, 0.08);
    const TrainStats stats = fit_train_stats(model, train, cfg);
    const Image probe = random_images(1, 8, 99)[0];

    for (int t = 0; t < 4; ++t) {
        const std::vector<double> eta = stochastic_pass(model, probe, stats, cfg, t);
        const std::vector<double> expected = reference_pass(model, probe, stats, cfg, t);
        REQUIRE(eta.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(eta[i] == doctest::Approx(expected[i]).epsilon(1e-9));
        }
        // the head layer's activation is the logits: one-hot gradient
        CHECK(eta[2] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("alpha 0 makes every pass bit-identical to the clean pass") {
    LayeredModel model = seeded_mlp(1);
    const std::vector<Image> train = random_images(10, 8, 2);
    UncertaintyConfig cfg = small_config(6, 0.0);
    const TrainStats stats = fit_train_stats(model, train, cfg);
    const Image probe = random_images(1, 8, 3)[0];

    const std::vector<double> clean = stochastic_pass(model, probe, stats, cfg, 0);
    for (int t = 1; t < 6; ++t) {
        CHECK(stochastic_pass(model, probe, stats, cfg, t) == clean);
    }
    const Descriptor d = compute_descriptor(model, probe, stats, cfg);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        CHECK(d.values[i] == clean[i]);  // zero variance, averaging is exact
    }
}

TEST_CASE("descriptor is the fixed-order mean of the logged passes") {
    LayeredModel model = seeded_mlp(4);
    const std::vector<Image> train = random_images(10, 8, 6);
    UncertaintyConfig cfg = small_config(8, 0.1);
    const TrainStats stats = fit_train_stats(model, train, cfg);
    const Image probe = random_images(1, 8, 7)[0];

    SUBCASE("T=1 equals the single pass") {
        UncertaintyConfig one = cfg;
        one.passes = 1;
        const Descriptor d = compute_descriptor(model, probe, stats, one);
        CHECK(d.values == stochastic_pass(model, probe, stats, one, 0));
    }
    SUBCASE("T=8 averages the 8 independently logged passes") {
        const Descriptor d = compute_descriptor(model, probe, stats, cfg);
        std::vector<double> mean(d.values.size(), 0.0);
        for (int t = 0; t < 8; ++t) {
            const std::vector<double> eta = stochastic_pass(model, probe, stats, cfg, t);
            for (std::size_t i = 0; i < mean.size(); ++i) {
                mean[i] += eta[i];
            }
        }
        for (std::size_t i = 0; i < mean.size(); ++i) {
            CHECK(d.values[i] == doctest::Approx(mean[i] / 8.0).epsilon(1e-12));
        }
    }
    SUBCASE("deterministic across repeated evaluation") {
        const Descriptor a = compute_descriptor(model, probe, stats, cfg);
        const Descriptor b = compute_descriptor(model, probe, stats, cfg);
        CHECK(a.values == b.values);
    }
}

TEST_CASE("mahalanobis score") {
    SUBCASE("score at the mean is zero") {
        const TrainStats stats = TrainStats::from_descriptor_moments(
            {1.0, 2.0}, {{3.0, 0.5}, {0.5, 2.0}}, 0.0);
        CHECK(mahalanobis_score(stats, {{1.0, 2.0}}) == 0.0);
    }
    SUBCASE("identity covariance reduces to Euclidean distance") {
        const TrainStats stats = TrainStats::from_descriptor_moments(
            {0.0, 0.0, 0.0}, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, 0.0);
        RngStream rng = RngStream::derive(8, {0});
        for (int i = 0; i < 1000; ++i) {
            Descriptor d;
            d.values = {rng.normal(), rng.normal(), rng.normal()};
            CHECK(std::abs(mahalanobis_score(stats, d) - l2_norm(d.values)) <= 1e-9);
        }
    }
    SUBCASE("diag(4,1) whitens the first axis") {
        const TrainStats stats =
            TrainStats::from_descriptor_moments({0.0, 0.0}, {{4.0, 0.0}, {0.0, 1.0}}, 0.0);
        CHECK(mahalanobis_score(stats, {{2.0, 0.0}}) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("rotation invariance of the quadratic form") {
        // rotate d, mean, and cov jointly by a Givens rotation
        const double c = std::cos(0.7), s = std::sin(0.7);
        const std::vector<double> mean = {0.4, -1.2};
        const std::vector<std::vector<double>> cov = {{2.0, 0.3}, {0.3, 1.0}};
        const std::vector<double> d = {1.5, 0.7};

        auto rot_vec = [&](const std::vector<double>& v) {
            return std::vector<double>{c * v[0] - s * v[1], s * v[0] + c * v[1]};
        };
        // R cov R^T
        const double a00 = cov[0][0], a01 = cov[0][1], a11 = cov[1][1];
        const std::vector<std::vector<double>> rcov = {
            {c * c * a00 - 2 * c * s * a01 + s * s * a11,
             c * s * a00 + (c * c - s * s) * a01 - c * s * a11},
            {c * s * a00 + (c * c - s * s) * a01 - c * s * a11,
             s * s * a00 + 2 * c * s * a01 + c * c * a11}};

        const TrainStats plain = TrainStats::from_descriptor_moments(mean, cov, 0.0);
        const TrainStats rotated = TrainStats::from_descriptor_moments(rot_vec(mean), rcov, 0.0);
        const double s1 = mahalanobis_score(plain, {d});
        const double s2 = mahalanobis_score(rotated, {rot_vec(d)});
        CHECK(s2 == doctest::Approx(s1).epsilon(1e-8));
    }
    SUBCASE("non-positive-definite covariance names the fix") {
        CHECK_THROWS_WITH_AS(
            TrainStats::from_descriptor_moments({0.0, 0.0}, {{1.0, 2.0}, {2.0, 1.0}}, 0.0),
            doctest::Contains("lambda"), NumericError);
    }
}

TEST_CASE("score_batch falls back to the batch mean without training descriptors") {
    TrainStats stats;  // no descriptor stats
    std::vector<Descriptor> batch = {{{1.0, 0.0}}, {{3.0, 0.0}}};
    const std::vector<double> scores = score_batch(stats, batch);
    // batch mean is (2, 0): both lie at distance 1
    CHECK(scores[0] == doctest::Approx(1.0));
    CHECK(scores[1] == doctest::Approx(1.0));
}

TEST_CASE("confidence scores") {
    SUBCASE("bounds from the batch map min to 0 and max to 1") {
        TrainStats stats;  // no training bounds
        const std::vector<UncertaintyScore> out = confidence_scores(stats, {0.0, 5.0, 10.0});
        CHECK(out[0].normalized == 0.0);
        CHECK(out[1].normalized == 0.5);
        CHECK(out[2].normalized == 1.0);
        CHECK(out[0].confidence == 1.0);
        CHECK(out[1].confidence == 0.5);
        CHECK(out[2].confidence == 0.0);
    }
    SUBCASE("degenerate batch maps to the neutral 1/2") {
        TrainStats stats;
        for (const UncertaintyScore& s : confidence_scores(stats, {4.0, 4.0, 4.0})) {
            CHECK(s.normalized == 0.5);
            CHECK(s.confidence == 0.5);
        }
    }
    SUBCASE("scores above the training max clamp to 1") {
        TrainStats stats;
        stats.has_norm_bounds = true;
        stats.norm_min = 0.0;
        stats.norm_max = 1.0;
        const std::vector<UncertaintyScore> out = confidence_scores(stats, {7.0});
        CHECK(out[0].normalized == 1.0);
        CHECK(out[0].confidence == 0.0);
    }
    SUBCASE("confidence + normalized is exactly 1 on random batches") {
        TrainStats stats;
        stats.has_norm_bounds = true;
        stats.norm_min = 0.2;
        stats.norm_max = 2.0;
        RngStream rng = RngStream::derive(12, {0});
        std::vector<double> raw;
        for (int i = 0; i < 100; ++i) {
            raw.push_back(3.0 * rng.uniform());
        }
        for (const UncertaintyScore& s : confidence_scores(stats, raw)) {
            CHECK(s.confidence + s.normalized == 1.0);
            CHECK(s.normalized >= 0.0);
            CHECK(s.normalized <= 1.0);
        }
    }
}

TEST_CASE("mean descriptor norm responds monotonically to alpha") {
    LayeredModel model = seeded_mlp(0);
    const std::vector<Image> train = random_images(10, 8, 20);
    UncertaintyConfig base = small_config(2, 0.0);
    const TrainStats stats = fit_train_stats(model, train, base);
    const Image probe = random_images(1, 8, 21)[0];

    const double alphas[4] = {0.0, 0.2, 0.6, 1.5};
    double previous = -1.0;
    for (double alpha : alphas) {
        double mean_norm = 0.0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            UncertaintyConfig cfg = base;
            cfg.alpha = alpha;
            cfg.seed = seed;
            const Descriptor d = compute_descriptor(model, probe, stats, cfg);
            mean_norm += l2_norm(d.values);
        }
        mean_norm /= 100.0;
        CHECK(mean_norm >= previous);
        previous = mean_norm;
    }
}

TEST_CASE("train stats JSON round-trip preserves scoring behavior") {
    namespace fs = std::filesystem;
    LayeredModel model = seeded_mlp(2);
    const std::vector<Image> train = random_images(12, 8, 30);
    UncertaintyConfig cfg = small_config(2);
    TrainStats stats = fit_train_stats(model, train, cfg);
    stats.prototypes = {{1.0, 2.0}, {}, {3.0}};

    const fs::path path = fs::temp_directory_path() / "subsel_stats_test.json";
    save_train_stats(stats, path.string());
    const TrainStats loaded = load_train_stats(path.string());
    fs::remove(path);

    CHECK(loaded.centroid == stats.centroid);
    CHECK(loaded.rho0 == stats.rho0);
    CHECK(loaded.desc_mean == stats.desc_mean);
    CHECK(loaded.norm_min == stats.norm_min);
    CHECK(loaded.norm_max == stats.norm_max);
    CHECK(loaded.layers == stats.layers);
    CHECK(loaded.prototypes == stats.prototypes);
    CHECK(loaded.config.passes == stats.config.passes);

    const Descriptor probe = compute_descriptor(model, train[0], stats, cfg);
    CHECK(mahalanobis_score(loaded, probe) == doctest::Approx(mahalanobis_score(stats, probe)));
}
