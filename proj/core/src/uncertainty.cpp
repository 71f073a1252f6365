#include "subsel/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <tuple>

#include <json.hpp>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

using nlohmann::json;

constexpr int kStatsFormatVersion = 1;

std::vector<std::string> resolve_layers(const LayeredModel& model, const UncertaintyConfig& config) {
    std::vector<std::string> layers =
        config.layers.empty() ? model.trainable_layer_names() : config.layers;
    if (layers.empty()) {
        throw ConfigError("uncertainty: no descriptor layers");
    }
    for (const std::string& name : layers) {
        const int idx = model.layer_index(name);
        if (idx < 0 || !model.has_params(idx)) {
            throw ConfigError("uncertainty: descriptor layer must be trainable: " + name);
        }
    }
    return layers;
}

// Raw noise draws for one (seed, pass, layer) stream. The draws do not
// depend on the input (only their scale does), so they are generated once
// per thread and reused; arithmetic stays bit-identical to drawing fresh.
const LayerParams& cached_noise(std::uint64_t seed, int pass_index, int layer_pos,
                                const LayerParams& like) {
    using Key = std::tuple<std::uint64_t, int, int, std::int64_t, std::int64_t>;
    thread_local std::map<Key, LayerParams> cache;
    const Key key{seed, pass_index, layer_pos, like.weight.size(), like.bias.size()};
    auto it = cache.find(key);
    if (it == cache.end()) {
        if (cache.size() > 256) {
            cache.clear();
        }
        RngStream rng = RngStream::derive(
            seed, {static_cast<std::uint64_t>(pass_index), static_cast<std::uint64_t>(layer_pos)});
        LayerParams eps;
        eps.weight = Tensor(like.weight.shape());
        eps.bias = Tensor(like.bias.shape());
        for (std::int64_t i = 0; i < eps.weight.size(); ++i) {
            eps.weight[i] = rng.normal();
        }
        for (std::int64_t i = 0; i < eps.bias.size(); ++i) {
            eps.bias[i] = rng.normal();
        }
        it = cache.emplace(key, std::move(eps)).first;
    }
    return it->second;
}

// Solves L y = r in place for lower-triangular L.
void forward_substitute(const std::vector<std::vector<double>>& L, std::vector<double>& r) {
    const std::size_t n = r.size();
    for (std::size_t i = 0; i < n; ++i) {
        double acc = r[i];
        for (std::size_t j = 0; j < i; ++j) {
            acc -= L[i][j] * r[j];
        }
        r[i] = acc / L[i][i];
    }
}

}  // namespace

void UncertaintyConfig::validate() const {
    if (alpha < 0.0) {
        throw ConfigError("uncertainty: alpha must be >= 0");
    }
    if (beta < 0.0 || beta >= 1.0) {
        throw ConfigError("uncertainty: beta must lie in [0, 1)");
    }
    if (gamma <= 0.0) {
        throw ConfigError("uncertainty: gamma must be > 0");
    }
    if (lambda_ridge < 0.0) {
        throw ConfigError("uncertainty: lambda must be >= 0");
    }
    if (passes < 1) {
        throw ConfigError("uncertainty: passes must be >= 1");
    }
}

std::vector<std::vector<double>> cholesky(const std::vector<std::vector<double>>& matrix) {
    const std::size_t n = matrix.size();
    std::vector<std::vector<double>> L(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        if (matrix[i].size() != n) {
            throw ConfigError("cholesky: matrix must be square");
        }
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = matrix[i][j];
            for (std::size_t k = 0; k < j; ++k) {
                acc -= L[i][k] * L[j][k];
            }
            if (i == j) {
                if (acc <= 0.0 || !std::isfinite(acc)) {
                    throw NumericError(
                        "cholesky: matrix not positive definite; increase the ridge lambda");
                }
                L[i][j] = std::sqrt(acc);
            } else {
                L[i][j] = acc / L[j][j];
            }
        }
    }
    return L;
}

TrainStats TrainStats::from_descriptor_moments(std::vector<double> mean,
                                               std::vector<std::vector<double>> cov, double lambda) {
    TrainStats stats;
    stats.desc_mean = std::move(mean);
    stats.desc_cov = std::move(cov);
    stats.lambda = lambda;
    std::vector<std::vector<double>> ridged = stats.desc_cov;
    for (std::size_t i = 0; i < ridged.size(); ++i) {
        ridged[i][i] += lambda;
    }
    stats.chol = cholesky(ridged);
    stats.has_descriptor_stats = true;
    return stats;
}

double modulation_factor(const TrainStats& stats, const std::vector<double>& feature, double beta,
                         double gamma) {
    if (feature.size() != stats.centroid.size()) {
        throw ConfigError("modulation_factor: feature dimension mismatch");
    }
    const double dist = l2_distance(feature, stats.centroid);
    return 1.0 + beta * std::tanh(gamma * (dist - stats.rho0));
}

LayerParams perturb_weights(const LayerParams& params, double sigma_l, double u_x, double alpha,
                            RngStream& rng) {
    if (sigma_l < 0.0 || alpha < 0.0) {
        throw ConfigError("perturb_weights: sigma and alpha must be >= 0");
    }
    LayerParams out = params;
    const double scale = alpha * sigma_l * u_x;
    if (scale == 0.0) {
        return out;  // bitwise copy
    }
    for (std::int64_t i = 0; i < out.weight.size(); ++i) {
        out.weight[i] += scale * rng.normal();
    }
    for (std::int64_t i = 0; i < out.bias.size(); ++i) {
        out.bias[i] += scale * rng.normal();
    }
    return out;
}

std::vector<double> stochastic_pass(const LayeredModel& model, const Image& image,
                                    const TrainStats& stats, const UncertaintyConfig& config,
                                    int pass_index) {
    config.validate();
    const std::vector<std::string>& layers = stats.layers;
    if (layers.empty()) {
        throw ConfigError("stochastic_pass: stats carry no layer selection (fit first)");
    }

    // Clean pass: predicted class, penultimate feature, modulation.
    const Tensor input = image.to_tensor();
    const Tensor zero = Tensor::scalar(0.0);
    InferenceScratch& scratch = InferenceScratch::thread_local_instance();
    scratch.forward(model, model.graph_inputs(input, zero, zero));
    const int predicted = argmax_class(scratch.node_value(model.graph().logits_node));
    const std::vector<double> feature =
        scratch
            .node_value(model.graph()
                            .layer_outputs[static_cast<std::size_t>(model.penultimate_layer_index())])
            .values();
    const double u_x = modulation_factor(stats, feature, config.beta, config.gamma);

    // Perturb every selected layer from its own counter-based stream.
    std::vector<LayerParams> perturbed(layers.size());
    std::vector<const LayerParams*> overrides(model.graph().weight_nodes.size(), nullptr);
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const int layer = model.layer_index(layers[li]);
        const double sigma = layer_weight_std(model, layers[li]);
        const LayerParams& params = model.params(layer);
        const double scale = config.alpha * sigma * u_x;
        LayerParams& out = perturbed[li];
        out = params;
        if (scale != 0.0) {
            const LayerParams& eps =
                cached_noise(config.seed, pass_index, static_cast<int>(li), params);
            for (std::int64_t i = 0; i < out.weight.size(); ++i) {
                out.weight[i] += scale * eps.weight[i];
            }
            for (std::int64_t i = 0; i < out.bias.size(); ++i) {
                out.bias[i] += scale * eps.bias[i];
            }
        }
        const int slot = model.trainable_position(layer);
        overrides[static_cast<std::size_t>(slot)] = &perturbed[li];
    }

    // Perturbed forward; gradient of the clean-pass predicted logit.
    const Tensor pick = Tensor::scalar(static_cast<double>(predicted));
    scratch.forward(model, model.graph_inputs_with(overrides, input, pick, zero));
    const std::vector<Tensor>& grads = scratch.backward(model, model.graph().picked_logit_node);

    std::vector<double> norms(layers.size());
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const int layer = model.layer_index(layers[li]);
        const int node = model.graph().layer_outputs[static_cast<std::size_t>(layer)];
        norms[li] = l2_norm(grads[static_cast<std::size_t>(node)].values());
    }
    return norms;
}

Descriptor compute_descriptor(const LayeredModel& model, const Image& image, const TrainStats& stats,
                              const UncertaintyConfig& config) {
    config.validate();
    Descriptor d;
    d.values.assign(stats.layers.size(), 0.0);
    for (int t = 0; t < config.passes; ++t) {
        const std::vector<double> eta = stochastic_pass(model, image, stats, config, t);
        for (std::size_t i = 0; i < eta.size(); ++i) {
            d.values[i] += eta[i];
        }
    }
    for (double& v : d.values) {
        v /= static_cast<double>(config.passes);
    }
    return d;
}

TrainStats fit_train_stats(const LayeredModel& model, const std::vector<Image>& train_images,
                           const UncertaintyConfig& config) {
    config.validate();
    TrainStats stats;
    stats.config = config;
    stats.layers = resolve_layers(model, config);
    const std::size_t k = stats.layers.size();
    const std::size_t n = train_images.size();
    if (n < k + 2) {
        throw DataError("fit_train_stats: need at least K+2 training images");
    }

    // Penultimate centroid and lower-median distance.
    std::vector<std::vector<double>> features(n);
    for (std::size_t i = 0; i < n; ++i) {
        features[i] = penultimate_feature(model, train_images[i]);
        for (double v : features[i]) {
            if (!std::isfinite(v)) {
                throw NumericError("fit_train_stats: non-finite penultimate feature");
            }
        }
    }
    stats.centroid.assign(features[0].size(), 0.0);
    for (const auto& f : features) {
        for (std::size_t j = 0; j < f.size(); ++j) {
            stats.centroid[j] += f[j];
        }
    }
    for (double& v : stats.centroid) {
        v /= static_cast<double>(n);
    }
    std::vector<double> dists(n);
    for (std::size_t i = 0; i < n; ++i) {
        dists[i] = l2_distance(features[i], stats.centroid);
    }
    std::sort(dists.begin(), dists.end());
    stats.rho0 = dists[(n - 1) / 2];  // lower median

    // Per-channel mean pixel, the default masking fill.
    stats.fill.assign(static_cast<std::size_t>(train_images[0].channels), 0.0);
    for (const Image& img : train_images) {
        for (int c = 0; c < img.channels; ++c) {
            double acc = 0.0;
            const double* plane = img.data.data() + static_cast<std::size_t>(c) * img.pixel_count();
            for (std::size_t p = 0; p < img.pixel_count(); ++p) {
                acc += plane[p];
            }
            stats.fill[static_cast<std::size_t>(c)] += acc / static_cast<double>(img.pixel_count());
        }
    }
    for (double& v : stats.fill) {
        v /= static_cast<double>(n);
    }

    // Training descriptors under the same config.
    std::vector<Descriptor> descriptors(n);
    for (std::size_t i = 0; i < n; ++i) {
        descriptors[i] = compute_descriptor(model, train_images[i], stats, config);
    }

    stats.desc_mean.assign(k, 0.0);
    for (const Descriptor& d : descriptors) {
        for (std::size_t j = 0; j < k; ++j) {
            stats.desc_mean[j] += d.values[j];
        }
    }
    for (double& v : stats.desc_mean) {
        v /= static_cast<double>(n);
    }

    stats.desc_cov.assign(k, std::vector<double>(k, 0.0));
    for (const Descriptor& d : descriptors) {
        for (std::size_t a = 0; a < k; ++a) {
            const double da = d.values[a] - stats.desc_mean[a];
            for (std::size_t b = 0; b <= a; ++b) {
                stats.desc_cov[a][b] += da * (d.values[b] - stats.desc_mean[b]);
            }
        }
    }
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
            stats.desc_cov[a][b] /= static_cast<double>(n - 1);  // unbiased
            stats.desc_cov[b][a] = stats.desc_cov[a][b];
        }
    }

    double lambda = config.lambda_ridge;
    if (lambda == 0.0) {
        double trace = 0.0;
        for (std::size_t a = 0; a < k; ++a) {
            trace += stats.desc_cov[a][a];
        }
        lambda = std::max(1e-8, 1e-4 * trace / static_cast<double>(k));
    }
    stats.lambda = lambda;
    std::vector<std::vector<double>> ridged = stats.desc_cov;
    for (std::size_t a = 0; a < k; ++a) {
        ridged[a][a] += lambda;
    }
    stats.chol = cholesky(ridged);
    stats.has_descriptor_stats = true;

    // Normalization bounds from the training raw scores.
    stats.norm_min = std::numeric_limits<double>::infinity();
    stats.norm_max = -std::numeric_limits<double>::infinity();
    for (const Descriptor& d : descriptors) {
        const double s = mahalanobis_score(stats, d);
        stats.norm_min = std::min(stats.norm_min, s);
        stats.norm_max = std::max(stats.norm_max, s);
    }
    stats.has_norm_bounds = true;
    return stats;
}

double mahalanobis_score(const TrainStats& stats, const Descriptor& descriptor) {
    if (!stats.has_descriptor_stats) {
        throw ConfigError("mahalanobis_score: stats carry no descriptor moments");
    }
    if (descriptor.values.size() != stats.desc_mean.size()) {
        throw ConfigError("mahalanobis_score: descriptor dimension mismatch");
    }
    std::vector<double> r(descriptor.values.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] = descriptor.values[i] - stats.desc_mean[i];
    }
    forward_substitute(stats.chol, r);
    double acc = 0.0;
    for (double v : r) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

std::vector<double> score_batch(const TrainStats& stats, const std::vector<Descriptor>& batch) {
    if (batch.empty()) {
        throw ConfigError("score_batch: empty batch");
    }
    std::vector<double> scores(batch.size());
    if (stats.has_descriptor_stats) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            scores[i] = mahalanobis_score(stats, batch[i]);
        }
        return scores;
    }
    // No training descriptors: Euclidean distance from the batch mean.
    const std::size_t k = batch[0].values.size();
    std::vector<double> mean(k, 0.0);
    for (const Descriptor& d : batch) {
        if (d.values.size() != k) {
            throw ConfigError("score_batch: inconsistent descriptor dimensions");
        }
        for (std::size_t j = 0; j < k; ++j) {
            mean[j] += d.values[j];
        }
    }
    for (double& v : mean) {
        v /= static_cast<double>(batch.size());
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        scores[i] = l2_distance(batch[i].values, mean);
    }
    return scores;
}

std::vector<UncertaintyScore> confidence_scores(const TrainStats& stats,
                                                const std::vector<double>& raw_scores) {
    if (raw_scores.empty()) {
        throw ConfigError("confidence_scores: empty batch");
    }
    double lo = stats.has_norm_bounds ? stats.norm_min : raw_scores[0];
    double hi = stats.has_norm_bounds ? stats.norm_max : raw_scores[0];
    for (double s : raw_scores) {
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    std::vector<UncertaintyScore> out(raw_scores.size());
    for (std::size_t i = 0; i < raw_scores.size(); ++i) {
        UncertaintyScore& u = out[i];
        u.raw = raw_scores[i];
        if (hi == lo) {
            u.normalized = 0.5;  // degenerate batch: neutral value
        } else {
            u.normalized = (raw_scores[i] - lo) / (hi - lo);
            u.normalized = std::clamp(u.normalized, 0.0, 1.0);
        }
        u.confidence = 1.0 - u.normalized;
    }
    return out;
}

void save_train_stats(const TrainStats& stats, const std::string& path) {
    json j = {
        {"format_version", kStatsFormatVersion},
        {"centroid", stats.centroid},
        {"rho0", stats.rho0},
        {"has_descriptor_stats", stats.has_descriptor_stats},
        {"desc_mean", stats.desc_mean},
        {"desc_cov", stats.desc_cov},
        {"lambda", stats.lambda},
        {"has_norm_bounds", stats.has_norm_bounds},
        {"norm_min", stats.norm_min},
        {"norm_max", stats.norm_max},
        {"layers", stats.layers},
        {"fill", stats.fill},
        {"prototypes", stats.prototypes},
        {"config",
         {{"alpha", stats.config.alpha},
          {"beta", stats.config.beta},
          {"gamma", stats.config.gamma},
          {"lambda_ridge", stats.config.lambda_ridge},
          {"passes", stats.config.passes},
          {"seed", stats.config.seed},
          {"layers", stats.config.layers}}},
    };
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write stats file: " + path);
    }
    out << j.dump(2) << "\n";
}

TrainStats load_train_stats(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open stats file: " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(std::string("corrupt stats file: ") + e.what());
    }
    if (j.value("format_version", -1) != kStatsFormatVersion) {
        throw DataError("stats file: format version mismatch");
    }
    TrainStats stats;
    stats.centroid = j.at("centroid").get<std::vector<double>>();
    stats.rho0 = j.at("rho0").get<double>();
    stats.has_descriptor_stats = j.at("has_descriptor_stats").get<bool>();
    stats.desc_mean = j.at("desc_mean").get<std::vector<double>>();
    stats.desc_cov = j.at("desc_cov").get<std::vector<std::vector<double>>>();
    stats.lambda = j.at("lambda").get<double>();
    stats.has_norm_bounds = j.at("has_norm_bounds").get<bool>();
    stats.norm_min = j.at("norm_min").get<double>();
    stats.norm_max = j.at("norm_max").get<double>();
    stats.layers = j.at("layers").get<std::vector<std::string>>();
    stats.fill = j.at("fill").get<std::vector<double>>();
    stats.prototypes = j.at("prototypes").get<std::vector<std::vector<double>>>();
    const json& c = j.at("config");
    stats.config.alpha = c.at("alpha").get<double>();
    stats.config.beta = c.at("beta").get<double>();
    stats.config.gamma = c.at("gamma").get<double>();
    stats.config.lambda_ridge = c.at("lambda_ridge").get<double>();
    stats.config.passes = c.at("passes").get<int>();
    stats.config.seed = c.at("seed").get<std::uint64_t>();
    stats.config.layers = c.at("layers").get<std::vector<std::string>>();
    if (stats.has_descriptor_stats) {
        std::vector<std::vector<double>> ridged = stats.desc_cov;
        for (std::size_t i = 0; i < ridged.size(); ++i) {
            ridged[i][i] += stats.lambda;
        }
        stats.chol = cholesky(ridged);
    }
    return stats;
}

}  // namespace subsel
