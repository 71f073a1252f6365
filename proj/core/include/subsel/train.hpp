#pragma once

#include <cstdint>
#include <vector>

#include "subsel/image.hpp"
#include "subsel/model.hpp"

namespace subsel {

struct TrainConfig {
    int epochs = 12;
    double lr = 0.05;
    std::uint64_t seed = 0;
    bool verbose = false;  // per-epoch line to stdout
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double accuracy = 0.0;  // running accuracy over the epoch's samples
};

struct TrainResult {
    std::vector<EpochLog> log;
};

/// Plain per-sample SGD with softmax cross-entropy; the visiting order is
/// reshuffled each epoch from a stream keyed by (seed, epoch). Aborts with
/// a NumericError on a non-finite loss.
TrainResult train_model(LayeredModel& model, const std::vector<Image>& images,
                        const std::vector<int>& labels, const TrainConfig& config);

double evaluate_accuracy(const LayeredModel& model, const std::vector<Image>& images,
                         const std::vector<int>& labels);

}  // namespace subsel
