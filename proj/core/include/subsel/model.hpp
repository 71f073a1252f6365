#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subsel/graph.hpp"
#include "subsel/image.hpp"
#include "subsel/tensor.hpp"

namespace subsel {

enum class LayerKind { Dense, Conv, Relu, Tanh, MaxPool2, Flatten };

struct LayerSpec {
    std::string name;
    LayerKind kind;
    std::int64_t units = 0;     // Dense: output size
    std::int64_t channels = 0;  // Conv: output channels
    std::int64_t ksize = 0;     // Conv: kernel size (square)
    std::int64_t pad = 0;       // Conv: zero padding

    bool trainable() const { return kind == LayerKind::Dense || kind == LayerKind::Conv; }
};

struct LayerParams {
    Tensor weight;
    Tensor bias;
};

/// Node bookkeeping for one architecture. The graph is built once per
/// model; parameters enter as Input nodes so clean, perturbed, and
/// in-training forward passes all reuse the same immutable graph.
///
/// Forward input order: image, then (weight, bias) per trainable layer in
/// layer order, then the logit-pick index, then the loss target.
struct ModelGraph {
    Graph graph;
    int image_node = -1;
    std::vector<int> layer_outputs;      // activation node per layer (specs order)
    std::vector<int> weight_nodes;       // per trainable layer, in layer order
    std::vector<int> bias_nodes;
    int logits_node = -1;
    int pick_index_node = -1;
    int picked_logit_node = -1;  // ŷ: the selected pre-softmax logit
    int target_node = -1;
    int loss_node = -1;  // softmax cross-entropy on logits
};

struct ForwardRecord {
    std::vector<Tensor> activations;  // one per layer, specs order
    Tensor logits;
    int predicted_class = 0;
    double predicted_logit = 0.0;
};

class LayeredModel {
public:
    LayeredModel(Shape input_shape, std::vector<LayerSpec> specs);

    /// input -> 64 -> 32 -> classes, ReLU between dense layers.
    static LayeredModel reference_mlp(Shape input_shape, int class_count);
    /// conv8 -> pool -> conv16 -> pool -> dense64 -> classes, ReLU throughout.
    static LayeredModel reference_cnn(Shape input_shape, int class_count);

    void init_random(std::uint64_t seed);

    const Shape& input_shape() const { return input_shape_; }
    const std::vector<LayerSpec>& specs() const { return specs_; }
    int class_count() const { return class_count_; }
    const ModelGraph& graph() const { return graph_; }

    int layer_index(const std::string& name) const;  // -1 when absent
    const LayerSpec& spec(const std::string& name) const;
    bool has_params(int layer) const;
    const LayerParams& params(int layer) const;
    const LayerParams& params(const std::string& name) const;
    LayerParams& mutable_params(int layer);
    std::vector<std::string> trainable_layer_names() const;

    /// Index of the layer whose output feeds the final classifier.
    int penultimate_layer_index() const;

    /// Graph inputs for a clean pass (pointers into this model's storage).
    std::vector<const Tensor*> graph_inputs(const Tensor& image, const Tensor& pick,
                                            const Tensor& target) const;
    /// Same but with a caller-provided parameter override (perturbed pass).
    std::vector<const Tensor*> graph_inputs_with(const std::vector<const LayerParams*>& override_params,
                                                 const Tensor& image, const Tensor& pick,
                                                 const Tensor& target) const;

    /// Position of layer `layer` within the trainable-layer ordering; -1 if
    /// not trainable.
    int trainable_position(int layer) const;

private:
    void validate_and_build();

    Shape input_shape_;
    std::vector<LayerSpec> specs_;
    int class_count_ = 0;
    std::vector<LayerParams> params_;       // parallel to specs_, empty for non-trainable
    std::vector<int> trainable_positions_;  // specs index -> trainable slot (or -1)
    ModelGraph graph_;
};

/// Reusable forward/backward buffers; grab one per thread via
/// thread_local_instance(). Zero-copy: node outputs for Input nodes alias
/// the caller's tensors, so those must outlive any node_value() reads.
/// References stay valid until the next forward on the same scratch.
class InferenceScratch {
public:
    void forward(const LayeredModel& model, const std::vector<const Tensor*>& inputs);
    const Tensor& node_value(int node) const { return *resolved_[static_cast<std::size_t>(node)]; }
    const std::vector<Tensor>& backward(const LayeredModel& model, int scalar_node);
    static InferenceScratch& thread_local_instance();

private:
    std::vector<Tensor> storage_;
    std::vector<const Tensor*> resolved_;
    std::vector<Tensor> grads_;
};

ForwardRecord forward_with_activations(const LayeredModel& model, const Image& image);

/// Population standard deviation over the layer's weight entries (biases
/// excluded).
double layer_weight_std(const LayeredModel& model, const std::string& layer);

/// Flattened activation of the layer feeding the final classifier.
std::vector<double> penultimate_feature(const LayeredModel& model, const Image& image);

std::vector<double> softmax(const Tensor& logits);
double class_probability(const LayeredModel& model, const Image& image, int class_id);

/// argmax with ties broken toward the lower index.
int argmax_class(const Tensor& logits);

}  // namespace subsel
