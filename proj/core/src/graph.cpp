#include "subsel/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "subsel/errors.hpp"

namespace subsel {

namespace {

std::int64_t checked_index(double raw, std::int64_t size, const char* what) {
    const std::int64_t idx = static_cast<std::int64_t>(std::llround(raw));
    if (idx < 0 || idx >= size) {
        throw ConfigError(std::string(what) + ": index out of range");
    }
    return idx;
}

// Reallocates only on a true shape/size change; a default Tensor and a
// rank-0 tensor share the empty shape but differ in storage size.
void ensure_shape(Tensor& t, const Shape& shape) {
    if (t.shape() != shape || t.size() != shape_size(shape)) {
        t = Tensor(shape);
    }
}

// Stable softmax into out; returns nothing. out must have logits.size().
void softmax_inplace(const double* logits, std::int64_t n, double* out) {
    double max_logit = logits[0];
    for (std::int64_t i = 1; i < n; ++i) {
        max_logit = std::max(max_logit, logits[i]);
    }
    double denom = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        denom += out[i];
    }
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] /= denom;
    }
}

}  // namespace

const OpNode& Graph::node(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)];
}

void Graph::check_id(int id) const {
    if (id < 0 || id >= node_count()) {
        throw ConfigError("graph: unknown node id " + std::to_string(id));
    }
}

int Graph::add_node(OpNode node) {
    for (int in : node.inputs) {
        check_id(in);
    }
    nodes_.push_back(std::move(node));
    return node_count() - 1;
}

int Graph::input(Shape shape) {
    const int id = add_node({OpKind::Input, {}, std::move(shape), 0, {}});
    inputs_.push_back(id);
    return id;
}

int Graph::constant(Tensor value) {
    Shape shape = value.shape();
    return add_node({OpKind::Constant, {}, std::move(shape), 0, std::move(value)});
}

int Graph::affine(int x, int weight, int bias) {
    const auto& xs = node(x).shape;
    const auto& ws = node(weight).shape;
    const auto& bs = node(bias).shape;
    if (ws.size() != 2 || xs.size() != 1 || bs.size() != 1) {
        throw ConfigError("affine: expects x[in], W[out,in], b[out]");
    }
    if (ws[1] != xs[0] || ws[0] != bs[0]) {
        throw ConfigError("affine: incompatible shapes");
    }
    return add_node({OpKind::Affine, {x, weight, bias}, Shape{ws[0]}, 0, {}});
}

int Graph::conv2d(int x, int kernel, int bias, int pad) {
    const auto& xs = node(x).shape;
    const auto& ks = node(kernel).shape;
    const auto& bs = node(bias).shape;
    if (xs.size() != 3 || ks.size() != 4 || bs.size() != 1) {
        throw ConfigError("conv2d: expects x[C,H,W], K[OC,C,kh,kw], b[OC]");
    }
    if (ks[1] != xs[0] || bs[0] != ks[0]) {
        throw ConfigError("conv2d: incompatible shapes");
    }
    if (pad < 0) {
        throw ConfigError("conv2d: negative padding");
    }
    const std::int64_t oh = xs[1] + 2 * pad - ks[2] + 1;
    const std::int64_t ow = xs[2] + 2 * pad - ks[3] + 1;
    if (oh <= 0 || ow <= 0) {
        throw ConfigError("conv2d: kernel larger than padded input");
    }
    return add_node({OpKind::Conv2d, {x, kernel, bias}, Shape{ks[0], oh, ow}, pad, {}});
}

int Graph::relu(int x) {
    return add_node({OpKind::Relu, {x}, node(x).shape, 0, {}});
}

int Graph::tanh(int x) {
    return add_node({OpKind::Tanh, {x}, node(x).shape, 0, {}});
}

int Graph::max_pool2(int x) {
    const auto& xs = node(x).shape;
    if (xs.size() != 3) {
        throw ConfigError("max_pool2: expects x[C,H,W]");
    }
    if (xs[1] < 2 || xs[2] < 2) {
        throw ConfigError("max_pool2: spatial dims must be >= 2");
    }
    return add_node({OpKind::MaxPool2x2, {x}, Shape{xs[0], xs[1] / 2, xs[2] / 2}, 0, {}});
}

int Graph::flatten(int x) {
    return add_node({OpKind::Flatten, {x}, Shape{shape_size(node(x).shape)}, 0, {}});
}

int Graph::add(int a, int b) {
    if (node(a).shape != node(b).shape) {
        throw ConfigError("add: shape mismatch");
    }
    return add_node({OpKind::Add, {a, b}, node(a).shape, 0, {}});
}

int Graph::mul(int a, int b) {
    if (node(a).shape != node(b).shape) {
        throw ConfigError("mul: shape mismatch");
    }
    return add_node({OpKind::Mul, {a, b}, node(a).shape, 0, {}});
}

int Graph::sum(int x) {
    return add_node({OpKind::Sum, {x}, Shape{}, 0, {}});
}

int Graph::mean(int x) {
    if (shape_size(node(x).shape) == 0) {
        throw ConfigError("mean: empty tensor");
    }
    return add_node({OpKind::Mean, {x}, Shape{}, 0, {}});
}

int Graph::l2_norm(int x) {
    return add_node({OpKind::L2Norm, {x}, Shape{}, 0, {}});
}

int Graph::pick(int x, int index) {
    if (node(x).shape.size() != 1) {
        throw ConfigError("pick: expects a vector node");
    }
    if (shape_size(node(index).shape) != 1) {
        throw ConfigError("pick: index node must be scalar");
    }
    return add_node({OpKind::PickIndex, {x, index}, Shape{}, 0, {}});
}

int Graph::softmax_xent(int logits, int target) {
    if (node(logits).shape.size() != 1) {
        throw ConfigError("softmax_xent: expects a logits vector");
    }
    if (shape_size(node(target).shape) != 1) {
        throw ConfigError("softmax_xent: target node must be scalar");
    }
    return add_node({OpKind::SoftmaxXent, {logits, target}, Shape{}, 0, {}});
}

std::vector<Tensor> Graph::forward(const std::vector<Tensor>& inputs) const {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        ptrs.push_back(&t);
    }
    std::vector<Tensor> values;
    forward_into(ptrs, values);
    return values;
}

void Graph::forward_into(const std::vector<const Tensor*>& inputs, std::vector<Tensor>& values) const {
    std::vector<const Tensor*> resolved;
    forward_resolved(inputs, values, resolved);
    // materialize Input/Constant outputs so `values` is self-contained
    for (int id = 0; id < node_count(); ++id) {
        const OpKind kind = nodes_[static_cast<std::size_t>(id)].kind;
        if (kind == OpKind::Input || kind == OpKind::Constant) {
            values[static_cast<std::size_t>(id)] = *resolved[static_cast<std::size_t>(id)];
        }
    }
}

void Graph::forward_resolved(const std::vector<const Tensor*>& inputs, std::vector<Tensor>& storage,
                             std::vector<const Tensor*>& resolved) const {
    if (inputs.size() != inputs_.size()) {
        throw ConfigError("forward: expected " + std::to_string(inputs_.size()) + " inputs, got " +
                          std::to_string(inputs.size()));
    }
    storage.resize(nodes_.size());
    resolved.resize(nodes_.size());

    std::size_t next_input = 0;
    for (int id = 0; id < node_count(); ++id) {
        const OpNode& n = nodes_[static_cast<std::size_t>(id)];
        Tensor& out = storage[static_cast<std::size_t>(id)];
        resolved[static_cast<std::size_t>(id)] = &out;
        auto in = [&](int slot) -> const Tensor& {
            return *resolved[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(slot)])];
        };

        switch (n.kind) {
            case OpKind::Input: {
                const Tensor* provided = inputs[next_input++];
                if (provided->shape() != n.shape) {
                    throw ConfigError("forward: input shape mismatch at node " + std::to_string(id));
                }
                resolved[static_cast<std::size_t>(id)] = provided;
                break;
            }
            case OpKind::Constant:
                resolved[static_cast<std::size_t>(id)] = &n.value;
                break;
            case OpKind::Affine: {
                const Tensor& x = in(0);
                const Tensor& w = in(1);
                const Tensor& b = in(2);
                const std::int64_t rows = w.shape()[0];
                const std::int64_t cols = w.shape()[1];
                ensure_shape(out, n.shape);
                for (std::int64_t r = 0; r < rows; ++r) {
                    double acc = b[r];
                    const double* wr = w.data() + r * cols;
                    const double* xd = x.data();
                    for (std::int64_t c = 0; c < cols; ++c) {
                        acc += wr[c] * xd[c];
                    }
                    out[r] = acc;
                }
                break;
            }
            case OpKind::Conv2d: {
                const Tensor& x = in(0);
                const Tensor& k = in(1);
                const Tensor& b = in(2);
                const std::int64_t ic = x.shape()[0], ih = x.shape()[1], iw = x.shape()[2];
                const std::int64_t oc = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
                const std::int64_t oh = n.shape[1], ow = n.shape[2];
                const int pad = n.pad;
                ensure_shape(out, n.shape);
                for (std::int64_t o = 0; o < oc; ++o) {
                    double* oplane = out.data() + o * oh * ow;
                    const double bias = b[o];
                    for (std::int64_t i = 0; i < oh * ow; ++i) {
                        oplane[i] = bias;
                    }
                    // per-tap rectangle accumulation: bounds hoisted out of
                    // the contiguous inner loop
                    for (std::int64_t c = 0; c < ic; ++c) {
                        const double* xplane = x.data() + c * ih * iw;
                        const double* kplane = k.data() + ((o * ic + c) * kh) * kw;
                        for (std::int64_t u = 0; u < kh; ++u) {
                            const std::int64_t y0 = std::max<std::int64_t>(0, pad - u);
                            const std::int64_t y1 = std::min<std::int64_t>(oh, ih + pad - u);
                            for (std::int64_t v = 0; v < kw; ++v) {
                                const double kval = kplane[u * kw + v];
                                if (kval == 0.0) continue;
                                const std::int64_t x0 = std::max<std::int64_t>(0, pad - v);
                                const std::int64_t x1 = std::min<std::int64_t>(ow, iw + pad - v);
                                for (std::int64_t y = y0; y < y1; ++y) {
                                    const double* xrow = xplane + (y + u - pad) * iw + (x0 + v - pad);
                                    double* orow = oplane + y * ow + x0;
                                    for (std::int64_t i = 0; i < x1 - x0; ++i) {
                                        orow[i] += kval * xrow[i];
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::Relu: {
                const Tensor& x = in(0);
                ensure_shape(out, n.shape);
                for (std::int64_t i = 0; i < x.size(); ++i) {
                    out[i] = x[i] > 0.0 ? x[i] : 0.0;
                }
                break;
            }
            case OpKind::Tanh: {
                const Tensor& x = in(0);
                ensure_shape(out, n.shape);
                for (std::int64_t i = 0; i < x.size(); ++i) {
                    out[i] = std::tanh(x[i]);
                }
                break;
            }
            case OpKind::MaxPool2x2: {
                const Tensor& x = in(0);
                const std::int64_t c = n.shape[0], oh = n.shape[1], ow = n.shape[2];
                const std::int64_t ih = x.shape()[1], iw = x.shape()[2];
                ensure_shape(out, n.shape);
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double* plane = x.data() + ch * ih * iw;
                    for (std::int64_t y = 0; y < oh; ++y) {
                        for (std::int64_t xo = 0; xo < ow; ++xo) {
                            const double* base = plane + (2 * y) * iw + 2 * xo;
                            double best = base[0];
                            if (base[1] > best) best = base[1];
                            if (base[iw] > best) best = base[iw];
                            if (base[iw + 1] > best) best = base[iw + 1];
                            out[(ch * oh + y) * ow + xo] = best;
                        }
                    }
                }
                break;
            }
            case OpKind::Flatten: {
                const Tensor& x = in(0);
                ensure_shape(out, n.shape);
                std::copy(x.values().begin(), x.values().end(), out.values().begin());
                break;
            }
            case OpKind::Add: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                ensure_shape(out, n.shape);
                for (std::int64_t i = 0; i < a.size(); ++i) {
                    out[i] = a[i] + b[i];
                }
                break;
            }
            case OpKind::Mul: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                ensure_shape(out, n.shape);
                for (std::int64_t i = 0; i < a.size(); ++i) {
                    out[i] = a[i] * b[i];
                }
                break;
            }
            case OpKind::Sum: {
                const Tensor& x = in(0);
                double acc = 0.0;
                for (std::int64_t i = 0; i < x.size(); ++i) {
                    acc += x[i];
                }
                out = Tensor::scalar(acc);
                break;
            }
            case OpKind::Mean: {
                const Tensor& x = in(0);
                double acc = 0.0;
                for (std::int64_t i = 0; i < x.size(); ++i) {
                    acc += x[i];
                }
                out = Tensor::scalar(acc / static_cast<double>(x.size()));
                break;
            }
            case OpKind::L2Norm: {
                const Tensor& x = in(0);
                double acc = 0.0;
                for (std::int64_t i = 0; i < x.size(); ++i) {
                    acc += x[i] * x[i];
                }
                out = Tensor::scalar(std::sqrt(acc));
                break;
            }
            case OpKind::PickIndex: {
                const Tensor& x = in(0);
                const std::int64_t idx = checked_index(in(1).item(), x.size(), "pick");
                out = Tensor::scalar(x[idx]);
                break;
            }
            case OpKind::SoftmaxXent: {
                const Tensor& logits = in(0);
                const std::int64_t target = checked_index(in(1).item(), logits.size(), "softmax_xent");
                std::vector<double> probs(static_cast<std::size_t>(logits.size()));
                softmax_inplace(logits.data(), logits.size(), probs.data());
                const double p = probs[static_cast<std::size_t>(target)];
                out = Tensor::scalar(-std::log(std::max(p, 1e-300)));
                break;
            }
        }
    }
}

std::vector<Tensor> Graph::backward(const std::vector<Tensor>& values, int scalar_node) const {
    std::vector<Tensor> grads;
    backward_into(values, scalar_node, grads);
    return grads;
}

void Graph::backward_into(const std::vector<Tensor>& values, int scalar_node,
                          std::vector<Tensor>& grads) const {
    std::vector<const Tensor*> resolved;
    resolved.reserve(values.size());
    for (const Tensor& t : values) {
        resolved.push_back(&t);
    }
    backward_resolved(resolved, scalar_node, grads);
}

void Graph::backward_resolved(const std::vector<const Tensor*>& resolved, int scalar_node,
                              std::vector<Tensor>& grads) const {
    check_id(scalar_node);
    if (resolved.size() != nodes_.size()) {
        throw ConfigError("backward: values do not match graph (run forward first)");
    }
    if (shape_size(nodes_[static_cast<std::size_t>(scalar_node)].shape) != 1) {
        throw ConfigError("backward: target node must be scalar");
    }

    grads.resize(nodes_.size());
    for (int id = 0; id < node_count(); ++id) {
        Tensor& g = grads[static_cast<std::size_t>(id)];
        const Shape& s = nodes_[static_cast<std::size_t>(id)].shape;
        if (g.shape() != s || g.size() != shape_size(s)) {
            g = Tensor(s);
        } else {
            std::fill(g.values().begin(), g.values().end(), 0.0);
        }
    }
    grads[static_cast<std::size_t>(scalar_node)][0] = 1.0;

    for (int id = scalar_node; id >= 0; --id) {
        const OpNode& n = nodes_[static_cast<std::size_t>(id)];
        const Tensor& gy = grads[static_cast<std::size_t>(id)];
        auto val = [&](int slot) -> const Tensor& {
            return *resolved[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(slot)])];
        };
        auto grad = [&](int slot) -> Tensor& {
            return grads[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(slot)])];
        };
        auto input_is_constant = [&](int slot) {
            return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(slot)])].kind ==
                   OpKind::Constant;
        };

        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Constant:
                break;
            case OpKind::Affine: {
                const Tensor& x = val(0);
                const Tensor& w = val(1);
                const std::int64_t rows = w.shape()[0];
                const std::int64_t cols = w.shape()[1];
                if (!input_is_constant(0)) {
                    Tensor& gx = grad(0);
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const double gr = gy[r];
                        if (gr == 0.0) continue;
                        const double* wr = w.data() + r * cols;
                        for (std::int64_t c = 0; c < cols; ++c) {
                            gx[c] += gr * wr[c];
                        }
                    }
                }
                if (!input_is_constant(1)) {
                    Tensor& gw = grad(1);
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const double gr = gy[r];
                        if (gr == 0.0) continue;
                        double* gwr = gw.data() + r * cols;
                        const double* xd = x.data();
                        for (std::int64_t c = 0; c < cols; ++c) {
                            gwr[c] += gr * xd[c];
                        }
                    }
                }
                if (!input_is_constant(2)) {
                    Tensor& gb = grad(2);
                    for (std::int64_t r = 0; r < rows; ++r) {
                        gb[r] += gy[r];
                    }
                }
                break;
            }
            case OpKind::Conv2d: {
                const Tensor& x = val(0);
                const Tensor& k = val(1);
                const std::int64_t ic = x.shape()[0], ih = x.shape()[1], iw = x.shape()[2];
                const std::int64_t oc = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
                const std::int64_t oh = n.shape[1], ow = n.shape[2];
                const int pad = n.pad;
                const bool want_gx = !input_is_constant(0);
                const bool want_gk = !input_is_constant(1);
                const bool want_gb = !input_is_constant(2);
                for (std::int64_t o = 0; o < oc; ++o) {
                    const double* gplane = gy.data() + o * oh * ow;
                    if (want_gb) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < oh * ow; ++i) {
                            acc += gplane[i];
                        }
                        grad(2)[o] += acc;
                    }
                    if (!want_gx && !want_gk) continue;
                    for (std::int64_t c = 0; c < ic; ++c) {
                        const double* xplane = x.data() + c * ih * iw;
                        double* gxplane = want_gx ? grad(0).data() + c * ih * iw : nullptr;
                        const double* kplane = k.data() + ((o * ic + c) * kh) * kw;
                        double* gkplane = want_gk ? grad(1).data() + ((o * ic + c) * kh) * kw : nullptr;
                        for (std::int64_t u = 0; u < kh; ++u) {
                            const std::int64_t y0 = std::max<std::int64_t>(0, pad - u);
                            const std::int64_t y1 = std::min<std::int64_t>(oh, ih + pad - u);
                            for (std::int64_t v = 0; v < kw; ++v) {
                                const std::int64_t x0 = std::max<std::int64_t>(0, pad - v);
                                const std::int64_t x1 = std::min<std::int64_t>(ow, iw + pad - v);
                                const double kval = kplane[u * kw + v];
                                double kacc = 0.0;
                                for (std::int64_t y = y0; y < y1; ++y) {
                                    const double* grow = gplane + y * ow + x0;
                                    const std::int64_t off = (y + u - pad) * iw + (x0 + v - pad);
                                    if (want_gx && kval != 0.0) {
                                        double* gxrow = gxplane + off;
                                        for (std::int64_t i = 0; i < x1 - x0; ++i) {
                                            gxrow[i] += kval * grow[i];
                                        }
                                    }
                                    if (want_gk) {
                                        const double* xrow = xplane + off;
                                        for (std::int64_t i = 0; i < x1 - x0; ++i) {
                                            kacc += xrow[i] * grow[i];
                                        }
                                    }
                                }
                                if (want_gk) {
                                    gkplane[u * kw + v] += kacc;
                                }
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::Relu: {
                if (input_is_constant(0)) break;
                const Tensor& x = val(0);
                Tensor& gx = grad(0);
                for (std::int64_t i = 0; i < x.size(); ++i) {
                    if (x[i] > 0.0) {
                        gx[i] += gy[i];
                    }
                }
                break;
            }
            case OpKind::Tanh: {
                if (input_is_constant(0)) break;
                const Tensor& y = *resolved[static_cast<std::size_t>(id)];
                Tensor& gx = grad(0);
                for (std::int64_t i = 0; i < y.size(); ++i) {
                    gx[i] += gy[i] * (1.0 - y[i] * y[i]);
                }
                break;
            }
            case OpKind::MaxPool2x2: {
                if (input_is_constant(0)) break;
                const Tensor& x = val(0);
                Tensor& gx = grad(0);
                const std::int64_t c = n.shape[0], oh = n.shape[1], ow = n.shape[2];
                const std::int64_t ih = x.shape()[1], iw = x.shape()[2];
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const double* plane = x.data() + ch * ih * iw;
                    for (std::int64_t y = 0; y < oh; ++y) {
                        for (std::int64_t xo = 0; xo < ow; ++xo) {
                            const double g = gy[(ch * oh + y) * ow + xo];
                            if (g == 0.0) continue;
                            const std::int64_t base = (2 * y) * iw + 2 * xo;
                            // first maximum in scan order (0,0),(0,1),(1,0),(1,1)
                            std::int64_t best_off = base;
                            double best = plane[base];
                            const std::int64_t offs[3] = {base + 1, base + iw, base + iw + 1};
                            for (std::int64_t off : offs) {
                                if (plane[off] > best) {
                                    best = plane[off];
                                    best_off = off;
                                }
                            }
                            gx[ch * ih * iw + best_off] += g;
                        }
                    }
                }
                break;
            }
            case OpKind::Flatten: {
                if (input_is_constant(0)) break;
                Tensor& gx = grad(0);
                for (std::int64_t i = 0; i < gy.size(); ++i) {
                    gx[i] += gy[i];
                }
                break;
            }
            case OpKind::Add: {
                for (int slot = 0; slot < 2; ++slot) {
                    if (input_is_constant(slot)) continue;
                    Tensor& g = grad(slot);
                    for (std::int64_t i = 0; i < gy.size(); ++i) {
                        g[i] += gy[i];
                    }
                }
                break;
            }
            case OpKind::Mul: {
                for (int slot = 0; slot < 2; ++slot) {
                    if (input_is_constant(slot)) continue;
                    const Tensor& other = val(1 - slot);
                    Tensor& g = grad(slot);
                    for (std::int64_t i = 0; i < gy.size(); ++i) {
                        g[i] += gy[i] * other[i];
                    }
                }
                break;
            }
            case OpKind::Sum: {
                if (input_is_constant(0)) break;
                const double g = gy[0];
                Tensor& gx = grad(0);
                for (std::int64_t i = 0; i < gx.size(); ++i) {
                    gx[i] += g;
                }
                break;
            }
            case OpKind::Mean: {
                if (input_is_constant(0)) break;
                Tensor& gx = grad(0);
                const double g = gy[0] / static_cast<double>(gx.size());
                for (std::int64_t i = 0; i < gx.size(); ++i) {
                    gx[i] += g;
                }
                break;
            }
            case OpKind::L2Norm: {
                if (input_is_constant(0)) break;
                const Tensor& x = val(0);
                const double norm = (*resolved[static_cast<std::size_t>(id)])[0];
                if (norm == 0.0) break;  // subgradient 0 at the origin
                const double g = gy[0] / norm;
                Tensor& gx = grad(0);
                for (std::int64_t i = 0; i < x.size(); ++i) {
                    gx[i] += g * x[i];
                }
                break;
            }
            case OpKind::PickIndex: {
                if (input_is_constant(0)) break;
                const Tensor& x = val(0);
                const std::int64_t idx = checked_index(val(1).item(), x.size(), "pick");
                grad(0)[idx] += gy[0];
                break;
            }
            case OpKind::SoftmaxXent: {
                if (input_is_constant(0)) break;
                const Tensor& logits = val(0);
                const std::int64_t target = checked_index(val(1).item(), logits.size(), "softmax_xent");
                std::vector<double> probs(static_cast<std::size_t>(logits.size()));
                softmax_inplace(logits.data(), logits.size(), probs.data());
                const double g = gy[0];
                Tensor& gl = grad(0);
                for (std::int64_t i = 0; i < logits.size(); ++i) {
                    const double onehot = (i == target) ? 1.0 : 0.0;
                    gl[i] += g * (probs[static_cast<std::size_t>(i)] - onehot);
                }
                break;
            }
        }
    }
}

Tensor finite_difference_oracle(const Graph& graph, int scalar_node,
                                const std::vector<Tensor>& inputs, int wrt_node, double h,
                                const std::vector<std::int64_t>* coords) {
    if (h <= 0.0) {
        throw ConfigError("finite_difference_oracle: h must be > 0");
    }
    if (graph.node(wrt_node).kind != OpKind::Input) {
        throw ConfigError("finite_difference_oracle: wrt must be an Input node");
    }
    int wrt_pos = -1;
    const auto& ids = graph.input_ids();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == wrt_node) {
            wrt_pos = static_cast<int>(i);
        }
    }
    if (wrt_pos < 0) {
        throw ConfigError("finite_difference_oracle: node is not a graph input");
    }

    std::vector<Tensor> probe = inputs;
    Tensor& x = probe[static_cast<std::size_t>(wrt_pos)];
    Tensor result(x.shape());

    auto eval = [&]() {
        const std::vector<Tensor> values = graph.forward(probe);
        return values[static_cast<std::size_t>(scalar_node)].item();
    };

    std::vector<std::int64_t> all;
    if (coords == nullptr) {
        all.resize(static_cast<std::size_t>(x.size()));
        for (std::int64_t i = 0; i < x.size(); ++i) {
            all[static_cast<std::size_t>(i)] = i;
        }
        coords = &all;
    }
    for (std::int64_t i : *coords) {
        const double saved = x[i];
        x[i] = saved + h;
        const double fp = eval();
        x[i] = saved - h;
        const double fm = eval();
        x[i] = saved;
        result[i] = (fp - fm) / (2.0 * h);
    }
    return result;
}

}  // namespace subsel
