#include <doctest.h>

#include <cmath>
#include <vector>

#include "subsel/errors.hpp"
#include "subsel/graph.hpp"
#include "subsel/rng.hpp"

using namespace subsel;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) {
        t[i] = lo + (hi - lo) * rng.uniform();
    }
    return t;
}

// Scalar-loop reference for a 2-dense-layer tanh net; shares nothing with
// the graph implementation.
std::vector<double> reference_two_layer(const std::vector<double>& x,
                                        const std::vector<double>& w1, const std::vector<double>& b1,
                                        const std::vector<double>& w2, const std::vector<double>& b2,
                                        std::size_t in, std::size_t hidden, std::size_t out) {
    std::vector<double> h(hidden);
    for (std::size_t r = 0; r < hidden; ++r) {
        double acc = b1[r];
        for (std::size_t c = 0; c < in; ++c) {
            acc += w1[r * in + c] * x[c];
        }
        h[r] = std::tanh(acc);
    }
    std::vector<double> y(out);
    for (std::size_t r = 0; r < out; ++r) {
        double acc = b2[r];
        for (std::size_t c = 0; c < hidden; ++c) {
            acc += w2[r * hidden + c] * h[c];
        }
        y[r] = acc;
    }
    return y;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("identity graph returns its input") {
    Graph g;
    const int x = g.input(Shape{3});
    const std::vector<Tensor> out = g.forward({Tensor(Shape{3}, {1.0, 2.0, 3.0})});
    CHECK(out[static_cast<std::size_t>(x)].values() == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("dense layer with identity weights passes values through") {
    Graph g;
    const int x = g.input(Shape{2});
    const int w = g.constant(Tensor(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0}));
    const int b = g.constant(Tensor(Shape{2}));
    const int y = g.affine(x, w, b);
    const std::vector<Tensor> out = g.forward({Tensor(Shape{2}, {3.0, -1.0})});
    CHECK(out[static_cast<std::size_t>(y)].values() == std::vector<double>{3.0, -1.0});
}

TEST_CASE("two dense layers match a scalar-loop reference") {
    RngStream rng = RngStream::derive(0, {17});
    const std::size_t in = 6, hidden = 5, out_dim = 4;
    const Tensor x = Tensor::full(Shape{static_cast<std::int64_t>(in)}, 1.0);
    const Tensor w1 = random_tensor(Shape{5, 6}, rng);
    const Tensor b1 = random_tensor(Shape{5}, rng);
    const Tensor w2 = random_tensor(Shape{4, 5}, rng);
    const Tensor b2 = random_tensor(Shape{4}, rng);

    Graph g;
    const int xn = g.input(Shape{6});
    const int y = g.affine(g.tanh(g.affine(xn, g.constant(w1), g.constant(b1))), g.constant(w2),
                           g.constant(b2));
    const std::vector<Tensor> values = g.forward({x});

    const std::vector<double> expected = reference_two_layer(
        x.values(), w1.values(), b1.values(), w2.values(), b2.values(), in, hidden, out_dim);
    for (std::size_t i = 0; i < out_dim; ++i) {
        CHECK(values[static_cast<std::size_t>(y)][static_cast<std::int64_t>(i)] ==
              doctest::Approx(expected[i]).epsilon(1e-12));
    }
}

TEST_CASE("forward is bit-reproducible") {
    RngStream rng = RngStream::derive(3, {0});
    Graph g;
    const int x = g.input(Shape{1, 6, 6});
    const int k = g.constant(random_tensor(Shape{2, 1, 3, 3}, rng));
    const int b = g.constant(random_tensor(Shape{2}, rng));
    const int y = g.sum(g.relu(g.conv2d(x, k, b, 1)));
    const Tensor image = random_tensor(Shape{1, 6, 6}, rng);
    const std::vector<Tensor> v1 = g.forward({image});
    const std::vector<Tensor> v2 = g.forward({image});
    CHECK(v1[static_cast<std::size_t>(y)].same_bits(v2[static_cast<std::size_t>(y)]));
}

TEST_CASE("gradient of sum is all ones") {
    Graph g;
    const int x = g.input(Shape{4});
    const int s = g.sum(x);
    const std::vector<Tensor> values = g.forward({Tensor(Shape{4}, {1.0, -2.0, 0.5, 9.0})});
    const std::vector<Tensor> grads = g.backward(values, s);
    CHECK(grads[static_cast<std::size_t>(x)].values() == std::vector<double>{1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("dot product gradients swap the operands") {
    Graph g;
    const int x = g.input(Shape{3});
    const int w = g.input(Shape{3});
    const int dot = g.sum(g.mul(x, w));
    const Tensor xv(Shape{3}, {1.0, 2.0, 3.0});
    const Tensor wv(Shape{3}, {-4.0, 5.0, 0.25});
    const std::vector<Tensor> values = g.forward({xv, wv});
    const std::vector<Tensor> grads = g.backward(values, dot);
    CHECK(grads[static_cast<std::size_t>(x)].values() == wv.values());
    CHECK(grads[static_cast<std::size_t>(w)].values() == xv.values());
}

TEST_CASE("gradient of a constant node is exactly zero") {
    Graph g;
    const int x = g.input(Shape{3});
    const int c = g.constant(Tensor(Shape{3}, {2.0, 2.0, 2.0}));
    const int s = g.sum(g.mul(x, c));
    const std::vector<Tensor> values = g.forward({Tensor(Shape{3}, {1.0, 1.0, 1.0})});
    const std::vector<Tensor> grads = g.backward(values, s);
    for (std::int64_t i = 0; i < 3; ++i) {
        CHECK(grads[static_cast<std::size_t>(c)][i] == 0.0);
    }
    // the input still gets the constant as its gradient
    CHECK(grads[static_cast<std::size_t>(x)].values() == std::vector<double>{2.0, 2.0, 2.0});
}

TEST_CASE("finite difference oracle hand cases") {
    SUBCASE("d(x^2)/dx at 3 is 6") {
        Graph g;
        const int x = g.input(Shape{1});
        const int y = g.sum(g.mul(x, x));
        const Tensor fd = finite_difference_oracle(g, y, {Tensor(Shape{1}, {3.0})}, x, 1e-5);
        CHECK(fd[0] == doctest::Approx(6.0).epsilon(1e-6));
    }
    SUBCASE("d(sum tanh)/dx at 0 is all ones") {
        Graph g;
        const int x = g.input(Shape{4});
        const int y = g.sum(g.tanh(x));
        const Tensor fd = finite_difference_oracle(g, y, {Tensor(Shape{4})}, x, 1e-5);
        for (std::int64_t i = 0; i < 4; ++i) {
            CHECK(fd[i] == doctest::Approx(1.0).epsilon(1e-8));
        }
    }
}

TEST_CASE("backward agrees with finite differences on random mixed graphs") {
    for (int trial = 0; trial < 20; ++trial) {
        RngStream rng = RngStream::derive(100, {static_cast<std::uint64_t>(trial)});
        Graph g;
        const int img = g.input(Shape{1, 6, 6});
        const int k = g.input(Shape{2, 1, 3, 3});
        const int kb = g.input(Shape{2});
        const int conv = g.conv2d(img, k, kb, 1);
        const int pooled = g.max_pool2(g.tanh(conv));
        const int flat = g.flatten(pooled);
        const int w = g.input(Shape{4, 18});
        const int b = g.input(Shape{4});
        const int dense = g.affine(flat, w, b);
        // combine several scalar heads so every op kind gets exercised
        const int idx = g.constant(Tensor::scalar(2.0));
        const int target = g.constant(Tensor::scalar(1.0));
        const int head = g.add(g.add(g.pick(dense, idx), g.l2_norm(dense)),
                               g.add(g.mean(flat), g.softmax_xent(dense, target)));

        std::vector<Tensor> inputs = {random_tensor(Shape{1, 6, 6}, rng),
                                      random_tensor(Shape{2, 1, 3, 3}, rng),
                                      random_tensor(Shape{2}, rng),
                                      random_tensor(Shape{4, 18}, rng),
                                      random_tensor(Shape{4}, rng)};
        const std::vector<Tensor> values = g.forward(inputs);
        const std::vector<Tensor> grads = g.backward(values, head);
        for (int node : g.input_ids()) {
            const Tensor fd = finite_difference_oracle(g, head, inputs, node, 1e-5);
            CHECK(max_rel_err(fd, grads[static_cast<std::size_t>(node)]) < 1e-4);
        }
    }
}

TEST_CASE("max-pool ties route the gradient to the first maximum") {
    Graph g;
    const int x = g.input(Shape{1, 2, 2});
    const int y = g.sum(g.max_pool2(x));
    const std::vector<Tensor> values = g.forward({Tensor(Shape{1, 2, 2}, {5.0, 5.0, 5.0, 5.0})});
    const std::vector<Tensor> grads = g.backward(values, y);
    CHECK(grads[static_cast<std::size_t>(x)].values() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("shape violations are rejected at build and call time") {
    Graph g;
    const int x = g.input(Shape{3});
    const int w = g.constant(Tensor(Shape{2, 4}));
    const int b = g.constant(Tensor(Shape{2}));
    CHECK_THROWS_AS(g.affine(x, w, b), ConfigError);  // 4 != 3

    const int ok_w = g.constant(Tensor(Shape{2, 3}));
    const int y = g.affine(x, ok_w, b);
    CHECK_THROWS_AS(g.forward({Tensor(Shape{4})}), ConfigError);  // wrong input shape
    const std::vector<Tensor> values = g.forward({Tensor(Shape{3})});
    CHECK_THROWS_AS(g.backward(values, y), ConfigError);  // non-scalar target
}
