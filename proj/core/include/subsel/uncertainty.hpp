#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subsel/image.hpp"
#include "subsel/model.hpp"
#include "subsel/rng.hpp"

namespace subsel {

struct UncertaintyConfig {
    double alpha = 0.05;        // base noise scale, >= 0
    double beta = 0.5;          // modulation amplitude, in [0, 1)
    double gamma = 1.0;         // modulation sensitivity, > 0
    double lambda_ridge = 0.0;  // ridge; 0 selects 1e-4 * trace(cov)/K with floor 1e-8
    int passes = 8;             // stochastic passes T, >= 1
    std::uint64_t seed = 0;
    std::vector<std::string> layers;  // descriptor layers; empty = all trainable

    void validate() const;
};

/// Frozen training-set statistics: penultimate centroid and median
/// distance, descriptor mean/covariance with the cached Cholesky factor of
/// (cov + lambda I), and the raw-score normalization bounds.
struct TrainStats {
    std::vector<double> centroid;
    double rho0 = 0.0;

    bool has_descriptor_stats = false;
    std::vector<double> desc_mean;
    std::vector<std::vector<double>> desc_cov;
    double lambda = 0.0;
    std::vector<std::vector<double>> chol;  // lower-triangular L, L L^T = cov + lambda I

    bool has_norm_bounds = false;
    double norm_min = 0.0;
    double norm_max = 0.0;

    std::vector<std::string> layers;  // resolved descriptor layer selection
    std::vector<double> fill;         // per-channel mean training pixel value
    std::vector<std::vector<double>> prototypes;  // per-class mean penultimate feature
    UncertaintyConfig config;                     // echo of the fitting config

    /// Builds descriptor-side stats directly from moments (diagnostics and
    /// tests; fit_train_stats is the production path).
    static TrainStats from_descriptor_moments(std::vector<double> mean,
                                              std::vector<std::vector<double>> cov, double lambda);
};

struct Descriptor {
    std::vector<double> values;  // pass-averaged gradient norm per selected layer
};

struct UncertaintyScore {
    double raw = 0.0;         // Mahalanobis (or fallback) distance, >= 0
    double normalized = 0.0;  // in [0, 1]
    double confidence = 0.0;  // exactly 1 - normalized
};

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix; throws NumericError when the matrix is not positive definite.
std::vector<std::vector<double>> cholesky(const std::vector<std::vector<double>>& matrix);

/// Centroid, median distance, training descriptors' mean/covariance and
/// normalization bounds, all under `config`. Needs at least K+2 images
/// where K is the descriptor dimension.
TrainStats fit_train_stats(const LayeredModel& model, const std::vector<Image>& train_images,
                           const UncertaintyConfig& config);

/// 1 + beta * tanh(gamma * (||feature - centroid|| - rho0)); stays inside
/// (1-beta, 1+beta) and equals 1 exactly at distance rho0 or when beta=0.
double modulation_factor(const TrainStats& stats, const std::vector<double>& feature, double beta,
                         double gamma);

/// params + alpha * sigma_l * u_x * eps, eps i.i.d. standard normal from
/// `rng`. Weights and biases share sigma_l. Bitwise copy when the scale
/// factor is zero.
LayerParams perturb_weights(const LayerParams& params, double sigma_l, double u_x, double alpha,
                            RngStream& rng);

/// One stochastic pass: perturbs every selected layer with a stream keyed
/// by (config.seed, pass_index, layer position), runs the perturbed
/// forward, and returns the L2 norm of d(predicted-class logit)/d(layer
/// activation) per selected layer. The predicted class comes from the
/// clean pass and is held fixed.
std::vector<double> stochastic_pass(const LayeredModel& model, const Image& image,
                                    const TrainStats& stats, const UncertaintyConfig& config,
                                    int pass_index);

/// Pass-averaged descriptor: mean of stochastic_pass over T passes in
/// fixed pass order.
Descriptor compute_descriptor(const LayeredModel& model, const Image& image, const TrainStats& stats,
                              const UncertaintyConfig& config);

/// sqrt((d - mean)^T (cov + lambda I)^-1 (d - mean)) via the cached factor.
double mahalanobis_score(const TrainStats& stats, const Descriptor& descriptor);

/// Raw score per descriptor: Mahalanobis when descriptor stats exist,
/// otherwise Euclidean distance from the batch mean.
std::vector<double> score_batch(const TrainStats& stats, const std::vector<Descriptor>& batch);

/// Min-max normalization over the training bounds extended by the batch,
/// clamped to [0,1]; confidence = 1 - normalized. Degenerate bounds
/// (max == min) map every score to 0.5.
std::vector<UncertaintyScore> confidence_scores(const TrainStats& stats,
                                                const std::vector<double>& raw_scores);

void save_train_stats(const TrainStats& stats, const std::string& path);
TrainStats load_train_stats(const std::string& path);

}  // namespace subsel
