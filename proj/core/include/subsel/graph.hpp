#pragma once

#include <vector>

#include "subsel/tensor.hpp"

namespace subsel {

enum class OpKind {
    Input,
    Constant,
    Affine,       // y = W x + b            (x, W[out,in], b[out])
    Conv2d,       // stride 1, zero padding (x[C,H,W], K[OC,C,kh,kw], b[OC])
    Relu,
    Tanh,
    MaxPool2x2,   // stride 2, subgradient routed to first maximum
    Flatten,
    Add,
    Mul,
    Sum,
    Mean,
    L2Norm,
    PickIndex,    // y = x[round(index)]    (x, index scalar node)
    SoftmaxXent,  // y = -log softmax(logits)[round(target)]
};

struct OpNode {
    OpKind kind;
    std::vector<int> inputs;  // node ids, all smaller than this node's id
    Shape shape;              // output shape
    int pad = 0;              // Conv2d only
    Tensor value;             // Constant only
};

/// Static compute graph over Tensor values with reverse-mode
/// differentiation of a scalar node.
///
/// Nodes are appended in topological order by construction: every edge
/// points at an already-existing node, so the node list itself is a valid
/// evaluation order and the graph is acyclic. Shapes are checked at build
/// time; graphs are immutable once built and safe to share across threads
/// (forward/backward write only into caller-owned buffers).
///
/// Gradients are accumulated for every node reachable from the scalar,
/// including Input nodes. Constant nodes are treated as frozen data: no
/// gradient is propagated into them and their reported gradient is exactly
/// zero.
class Graph {
public:
    int input(Shape shape);
    int constant(Tensor value);
    int affine(int x, int weight, int bias);
    int conv2d(int x, int kernel, int bias, int pad);
    int relu(int x);
    int tanh(int x);
    int max_pool2(int x);
    int flatten(int x);
    int add(int a, int b);
    int mul(int a, int b);
    int sum(int x);
    int mean(int x);
    int l2_norm(int x);
    int pick(int x, int index);
    int softmax_xent(int logits, int target);

    int node_count() const { return static_cast<int>(nodes_.size()); }
    const OpNode& node(int id) const;
    const std::vector<int>& input_ids() const { return inputs_; }

    /// Evaluates every node; returns all node outputs in topological order.
    std::vector<Tensor> forward(const std::vector<Tensor>& inputs) const;

    /// Allocation-reusing forward; `values` is resized to node_count().
    void forward_into(const std::vector<const Tensor*>& inputs, std::vector<Tensor>& values) const;

    /// Zero-copy forward: computed nodes land in `storage`, while
    /// `resolved[id]` points at each node's output wherever it lives
    /// (caller tensors for Input nodes, the graph for Constants). The
    /// pointers stay valid while `storage` and the inputs do.
    void forward_resolved(const std::vector<const Tensor*>& inputs, std::vector<Tensor>& storage,
                          std::vector<const Tensor*>& resolved) const;

    /// d(scalar)/d(node output) for every node, given a completed forward.
    std::vector<Tensor> backward(const std::vector<Tensor>& values, int scalar_node) const;
    void backward_into(const std::vector<Tensor>& values, int scalar_node,
                       std::vector<Tensor>& grads) const;
    void backward_resolved(const std::vector<const Tensor*>& resolved, int scalar_node,
                           std::vector<Tensor>& grads) const;

private:
    int add_node(OpNode node);
    void check_id(int id) const;

    std::vector<OpNode> nodes_;
    std::vector<int> inputs_;
};

/// Central-difference gradient estimate d(scalar)/d(inputs[wrt]):
/// (f(x+h) - f(x-h)) / 2h per coordinate. `wrt_node` must be an Input
/// node. When `coords` is non-null only those flat coordinates are
/// evaluated (the rest of the returned tensor stays zero); useful to spot
/// check large parameter tensors. Independent of backward by construction;
/// this is the oracle backward is tested against.
Tensor finite_difference_oracle(const Graph& graph, int scalar_node,
                                const std::vector<Tensor>& inputs, int wrt_node, double h,
                                const std::vector<std::int64_t>* coords = nullptr);

}  // namespace subsel
