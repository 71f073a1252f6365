#include "subsel/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "subsel/errors.hpp"
#include "subsel/rng.hpp"

namespace subsel {

TrainResult train_model(LayeredModel& model, const std::vector<Image>& images,
                        const std::vector<int>& labels, const TrainConfig& config) {
    if (images.empty() || images.size() != labels.size()) {
        throw DataError("train: images and labels must be non-empty and aligned");
    }
    if (config.epochs < 0 || config.lr < 0.0) {
        throw ConfigError("train: epochs and lr must be >= 0");
    }
    for (int label : labels) {
        if (label < 0 || label >= model.class_count()) {
            throw DataError("train: label out of range");
        }
    }

    const Tensor zero = Tensor::scalar(0.0);
    InferenceScratch& scratch = InferenceScratch::thread_local_instance();
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<Tensor> inputs_cache(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        inputs_cache[i] = images[i].to_tensor();
        if (inputs_cache[i].shape() != model.input_shape()) {
            throw DataError("train: image shape does not match model input");
        }
    }

    TrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        RngStream rng = RngStream::derive(config.seed, {static_cast<std::uint64_t>(epoch), 0x5D6Fu});
        for (std::size_t i = order.size(); i > 1; --i) {  // Fisher-Yates
            const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        std::int64_t correct = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const std::size_t idx = order[pos];
            const Tensor target = Tensor::scalar(static_cast<double>(labels[idx]));
            scratch.forward(model, model.graph_inputs(inputs_cache[idx], zero, target));

            if (argmax_class(scratch.node_value(model.graph().logits_node)) == labels[idx]) {
                ++correct;
            }
            const double loss = scratch.node_value(model.graph().loss_node).item();
            if (!std::isfinite(loss)) {
                throw NumericError("train: diverged (non-finite loss) at epoch " +
                                   std::to_string(epoch));
            }
            loss_sum += loss;

            const std::vector<Tensor>& grads = scratch.backward(model, model.graph().loss_node);
            int slot = 0;
            for (std::size_t layer = 0; layer < model.specs().size(); ++layer) {
                if (!model.specs()[layer].trainable()) {
                    continue;
                }
                LayerParams& p = model.mutable_params(static_cast<int>(layer));
                const Tensor& gw =
                    grads[static_cast<std::size_t>(model.graph().weight_nodes[static_cast<std::size_t>(slot)])];
                const Tensor& gb =
                    grads[static_cast<std::size_t>(model.graph().bias_nodes[static_cast<std::size_t>(slot)])];
                for (std::int64_t j = 0; j < p.weight.size(); ++j) {
                    p.weight[j] -= config.lr * gw[j];
                }
                for (std::int64_t j = 0; j < p.bias.size(); ++j) {
                    p.bias[j] -= config.lr * gb[j];
                }
                ++slot;
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.mean_loss = loss_sum / static_cast<double>(order.size());
        log.accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        result.log.push_back(log);
        if (config.verbose) {
            std::printf("epoch %3d  loss %.6f  acc %.4f\n", epoch, log.mean_loss, log.accuracy);
        }
    }
    return result;
}

double evaluate_accuracy(const LayeredModel& model, const std::vector<Image>& images,
                         const std::vector<int>& labels) {
    if (images.empty() || images.size() != labels.size()) {
        throw DataError("evaluate_accuracy: images and labels must be non-empty and aligned");
    }
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const ForwardRecord rec = forward_with_activations(model, images[i]);
        if (rec.predicted_class == labels[i]) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(images.size());
}

}  // namespace subsel
