#include "subsel/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "subsel/errors.hpp"
#include "subsel/rng.hpp"

namespace subsel {

LayeredModel::LayeredModel(Shape input_shape, std::vector<LayerSpec> specs)
    : input_shape_(std::move(input_shape)), specs_(std::move(specs)) {
    validate_and_build();
}

void LayeredModel::validate_and_build() {
    if (specs_.empty()) {
        throw ConfigError("model: no layers");
    }
    std::set<std::string> names;
    for (const LayerSpec& s : specs_) {
        if (s.name.empty() || !names.insert(s.name).second) {
            throw ConfigError("model: layer names must be unique and non-empty");
        }
    }
    if (specs_.back().kind != LayerKind::Dense) {
        throw ConfigError("model: final layer must be dense (the classifier)");
    }

    Graph& g = graph_.graph;
    graph_.image_node = g.input(input_shape_);
    int cur = graph_.image_node;
    Shape cur_shape = input_shape_;

    params_.resize(specs_.size());
    trainable_positions_.assign(specs_.size(), -1);
    int trainable_slot = 0;

    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const LayerSpec& s = specs_[i];
        switch (s.kind) {
            case LayerKind::Dense: {
                if (cur_shape.size() != 1) {
                    // implicit flatten keeps specs simple for CNN heads
                    cur = g.flatten(cur);
                    cur_shape = Shape{shape_size(cur_shape)};
                }
                if (s.units < 1) {
                    throw ConfigError("dense layer needs units >= 1: " + s.name);
                }
                params_[i].weight = Tensor(Shape{s.units, cur_shape[0]});
                params_[i].bias = Tensor(Shape{s.units});
                const int w = g.input(params_[i].weight.shape());
                const int b = g.input(params_[i].bias.shape());
                graph_.weight_nodes.push_back(w);
                graph_.bias_nodes.push_back(b);
                trainable_positions_[i] = trainable_slot++;
                cur = g.affine(cur, w, b);
                cur_shape = Shape{s.units};
                break;
            }
            case LayerKind::Conv: {
                if (cur_shape.size() != 3) {
                    throw ConfigError("conv layer needs a C,H,W input: " + s.name);
                }
                if (s.channels < 1 || s.ksize < 1) {
                    throw ConfigError("conv layer needs channels and ksize: " + s.name);
                }
                params_[i].weight = Tensor(Shape{s.channels, cur_shape[0], s.ksize, s.ksize});
                params_[i].bias = Tensor(Shape{s.channels});
                const int w = g.input(params_[i].weight.shape());
                const int b = g.input(params_[i].bias.shape());
                graph_.weight_nodes.push_back(w);
                graph_.bias_nodes.push_back(b);
                trainable_positions_[i] = trainable_slot++;
                cur = g.conv2d(cur, w, b, static_cast<int>(s.pad));
                cur_shape = g.node(cur).shape;
                break;
            }
            case LayerKind::Relu:
                cur = g.relu(cur);
                break;
            case LayerKind::Tanh:
                cur = g.tanh(cur);
                break;
            case LayerKind::MaxPool2:
                cur = g.max_pool2(cur);
                cur_shape = g.node(cur).shape;
                break;
            case LayerKind::Flatten:
                cur = g.flatten(cur);
                cur_shape = g.node(cur).shape;
                break;
        }
        graph_.layer_outputs.push_back(cur);
    }

    graph_.logits_node = cur;
    if (g.node(cur).shape.size() != 1) {
        throw ConfigError("model: classifier output must be a vector");
    }
    class_count_ = static_cast<int>(g.node(cur).shape[0]);
    if (class_count_ < 2) {
        throw ConfigError("model: class_count must be >= 2");
    }

    graph_.pick_index_node = g.input(Shape{});
    graph_.picked_logit_node = g.pick(graph_.logits_node, graph_.pick_index_node);
    graph_.target_node = g.input(Shape{});
    graph_.loss_node = g.softmax_xent(graph_.logits_node, graph_.target_node);
}

LayeredModel LayeredModel::reference_mlp(Shape input_shape, int class_count) {
    std::vector<LayerSpec> specs = {
        {"fc1", LayerKind::Dense, 64, 0, 0, 0},
        {"relu1", LayerKind::Relu, 0, 0, 0, 0},
        {"fc2", LayerKind::Dense, 32, 0, 0, 0},
        {"relu2", LayerKind::Relu, 0, 0, 0, 0},
        {"head", LayerKind::Dense, class_count, 0, 0, 0},
    };
    return LayeredModel(std::move(input_shape), std::move(specs));
}

LayeredModel LayeredModel::reference_cnn(Shape input_shape, int class_count) {
    std::vector<LayerSpec> specs = {
        {"conv1", LayerKind::Conv, 0, 8, 3, 1},
        {"relu1", LayerKind::Relu, 0, 0, 0, 0},
        {"pool1", LayerKind::MaxPool2, 0, 0, 0, 0},
        {"conv2", LayerKind::Conv, 0, 16, 3, 1},
        {"relu2", LayerKind::Relu, 0, 0, 0, 0},
        {"pool2", LayerKind::MaxPool2, 0, 0, 0, 0},
        {"flatten", LayerKind::Flatten, 0, 0, 0, 0},
        {"fc1", LayerKind::Dense, 64, 0, 0, 0},
        {"relu3", LayerKind::Relu, 0, 0, 0, 0},
        {"head", LayerKind::Dense, class_count, 0, 0, 0},
    };
    return LayeredModel(std::move(input_shape), std::move(specs));
}

void LayeredModel::init_random(std::uint64_t seed) {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (!specs_[i].trainable()) {
            continue;
        }
        LayerParams& p = params_[i];
        std::int64_t fan_in = 0;
        if (specs_[i].kind == LayerKind::Dense) {
            fan_in = p.weight.shape()[1];
        } else {
            fan_in = p.weight.shape()[1] * p.weight.shape()[2] * p.weight.shape()[3];
        }
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        RngStream rng = RngStream::derive(seed, {static_cast<std::uint64_t>(i)});
        for (std::int64_t j = 0; j < p.weight.size(); ++j) {
            p.weight[j] = scale * rng.normal();
        }
        for (std::int64_t j = 0; j < p.bias.size(); ++j) {
            p.bias[j] = 0.0;
        }
    }
}

int LayeredModel::layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (specs_[i].name == name) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

const LayerSpec& LayeredModel::spec(const std::string& name) const {
    const int idx = layer_index(name);
    if (idx < 0) {
        throw ConfigError("model: unknown layer " + name);
    }
    return specs_[static_cast<std::size_t>(idx)];
}

bool LayeredModel::has_params(int layer) const {
    return layer >= 0 && layer < static_cast<int>(specs_.size()) &&
           specs_[static_cast<std::size_t>(layer)].trainable();
}

const LayerParams& LayeredModel::params(int layer) const {
    if (!has_params(layer)) {
        throw ConfigError("model: layer has no parameters");
    }
    return params_[static_cast<std::size_t>(layer)];
}

const LayerParams& LayeredModel::params(const std::string& name) const {
    const int idx = layer_index(name);
    if (idx < 0) {
        throw ConfigError("model: unknown layer " + name);
    }
    return params(idx);
}

LayerParams& LayeredModel::mutable_params(int layer) {
    if (!has_params(layer)) {
        throw ConfigError("model: layer has no parameters");
    }
    return params_[static_cast<std::size_t>(layer)];
}

std::vector<std::string> LayeredModel::trainable_layer_names() const {
    std::vector<std::string> names;
    for (const LayerSpec& s : specs_) {
        if (s.trainable()) {
            names.push_back(s.name);
        }
    }
    return names;
}

int LayeredModel::penultimate_layer_index() const {
    int parametric = 0;
    for (const LayerSpec& s : specs_) {
        if (s.trainable()) {
            ++parametric;
        }
    }
    if (parametric < 2) {
        throw ConfigError("model: penultimate feature needs >= 2 parametric layers");
    }
    // the layer right before the final classifier
    return static_cast<int>(specs_.size()) - 2;
}

int LayeredModel::trainable_position(int layer) const {
    if (layer < 0 || layer >= static_cast<int>(trainable_positions_.size())) {
        return -1;
    }
    return trainable_positions_[static_cast<std::size_t>(layer)];
}

std::vector<const Tensor*> LayeredModel::graph_inputs(const Tensor& image, const Tensor& pick,
                                                      const Tensor& target) const {
    std::vector<const LayerParams*> overrides;
    return graph_inputs_with(overrides, image, pick, target);
}

std::vector<const Tensor*> LayeredModel::graph_inputs_with(
    const std::vector<const LayerParams*>& override_params, const Tensor& image, const Tensor& pick,
    const Tensor& target) const {
    std::vector<const Tensor*> inputs;
    inputs.reserve(2 + 2 * graph_.weight_nodes.size());
    inputs.push_back(&image);
    int slot = 0;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (!specs_[i].trainable()) {
            continue;
        }
        const LayerParams* p = &params_[i];
        if (slot < static_cast<int>(override_params.size()) &&
            override_params[static_cast<std::size_t>(slot)] != nullptr) {
            p = override_params[static_cast<std::size_t>(slot)];
        }
        inputs.push_back(&p->weight);
        inputs.push_back(&p->bias);
        ++slot;
    }
    inputs.push_back(&pick);
    inputs.push_back(&target);
    return inputs;
}

void InferenceScratch::forward(const LayeredModel& model,
                               const std::vector<const Tensor*>& inputs) {
    model.graph().graph.forward_resolved(inputs, storage_, resolved_);
}

const std::vector<Tensor>& InferenceScratch::backward(const LayeredModel& model, int scalar_node) {
    model.graph().graph.backward_resolved(resolved_, scalar_node, grads_);
    return grads_;
}

InferenceScratch& InferenceScratch::thread_local_instance() {
    thread_local InferenceScratch scratch;
    return scratch;
}

ForwardRecord forward_with_activations(const LayeredModel& model, const Image& image) {
    const Tensor input = image.to_tensor();
    if (input.shape() != model.input_shape()) {
        throw DataError("image shape does not match model input");
    }
    const Tensor zero = Tensor::scalar(0.0);
    InferenceScratch& scratch = InferenceScratch::thread_local_instance();
    scratch.forward(model, model.graph_inputs(input, zero, zero));

    ForwardRecord rec;
    rec.activations.reserve(model.specs().size());
    for (int node : model.graph().layer_outputs) {
        rec.activations.push_back(scratch.node_value(node));
    }
    rec.logits = scratch.node_value(model.graph().logits_node);
    rec.predicted_class = argmax_class(rec.logits);
    rec.predicted_logit = rec.logits[rec.predicted_class];
    return rec;
}

double layer_weight_std(const LayeredModel& model, const std::string& layer) {
    const int idx = model.layer_index(layer);
    if (idx < 0) {
        throw ConfigError("layer_weight_std: unknown layer " + layer);
    }
    if (!model.has_params(idx)) {
        throw ConfigError("layer_weight_std: layer is not trainable: " + layer);
    }
    const Tensor& w = model.params(idx).weight;
    const std::int64_t n = w.size();
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        mean += w[i];
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = w[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    return std::sqrt(var);
}

std::vector<double> penultimate_feature(const LayeredModel& model, const Image& image) {
    const Tensor input = image.to_tensor();
    if (input.shape() != model.input_shape()) {
        throw DataError("image shape does not match model input");
    }
    const Tensor zero = Tensor::scalar(0.0);
    InferenceScratch& scratch = InferenceScratch::thread_local_instance();
    scratch.forward(model, model.graph_inputs(input, zero, zero));
    const int idx = model.penultimate_layer_index();
    const int node = model.graph().layer_outputs[static_cast<std::size_t>(idx)];
    return scratch.node_value(node).values();
}

std::vector<double> softmax(const Tensor& logits) {
    std::vector<double> out(static_cast<std::size_t>(logits.size()));
    double max_logit = logits[0];
    for (std::int64_t i = 1; i < logits.size(); ++i) {
        max_logit = std::max(max_logit, logits[i]);
    }
    double denom = 0.0;
    for (std::int64_t i = 0; i < logits.size(); ++i) {
        out[static_cast<std::size_t>(i)] = std::exp(logits[i] - max_logit);
        denom += out[static_cast<std::size_t>(i)];
    }
    for (double& v : out) {
        v /= denom;
    }
    return out;
}

double class_probability(const LayeredModel& model, const Image& image, int class_id) {
    if (class_id < 0 || class_id >= model.class_count()) {
        throw ConfigError("class_probability: class id out of range");
    }
    const Tensor input = image.to_tensor();
    if (input.shape() != model.input_shape()) {
        throw DataError("image shape does not match model input");
    }
    const Tensor zero = Tensor::scalar(0.0);
    InferenceScratch& scratch = InferenceScratch::thread_local_instance();
    scratch.forward(model, model.graph_inputs(input, zero, zero));
    const Tensor& logits = scratch.node_value(model.graph().logits_node);
    return softmax(logits)[static_cast<std::size_t>(class_id)];
}

int argmax_class(const Tensor& logits) {
    int best = 0;
    for (std::int64_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace subsel
