#include <doctest.h>

#include <cmath>

#include "clif/numcore/graph.hpp"
#include "clif/numcore/ops.hpp"
#include "clif/numcore/optim.hpp"
#include "clif/rng.hpp"

using namespace clif;
using namespace clif::num;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = rng.normal(0.0, scale);
    return t;
}

// Finite-difference oracle over a scalar function of a flat vector, kept
// independent of grad_check so the checker itself is validated.
std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double h = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = f(x);
        x[i] = orig - h;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

}  // namespace

TEST_CASE("matmul and elementwise values") {
    Graph g;
    Var a = g.constant(Tensor::matrix(1, 2, {1, 2}));
    Var b = g.constant(Tensor::matrix(2, 1, {3, 4}));
    CHECK(g.value(matmul(g, a, b)).item() == 11.0);

    Var z = g.constant(Tensor(Shape{3}, 0.0));
    CHECK(g.value(tanh(g, z)) == Tensor(Shape{3}, 0.0));

    Var m = g.constant(Tensor::matrix(2, 2, {1, 3, 3, 5}));
    CHECK(g.value(mean_rows(g, m)) == Tensor::vector({2, 4}));
}

TEST_CASE("shape errors name the op and both shapes") {
    Graph g;
    Var a = g.constant(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
    Var b = g.constant(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
    try {
        matmul(g, a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(g, a, g.constant(Tensor(Shape{3}))), ShapeError);
}

TEST_CASE("backward basics") {
    SUBCASE("linear") {
        ParamStore store;
        store.add("w", Tensor::scalar(2.0));
        Graph g;
        Var loss = mul(g, g.param(store, "w"), g.constant(Tensor::scalar(3.0)));
        g.backward(loss);
        CHECK(store.grad("w").item() == 3.0);
    }
    SUBCASE("quadratic") {
        ParamStore store;
        store.add("w", Tensor::vector({1.0, -2.0}));
        Graph g;
        g.backward(sum_squares(g, g.param(store, "w")));
        CHECK(store.grad("w") == Tensor::vector({2.0, -4.0}));
    }
    SUBCASE("non-scalar loss is rejected") {
        Graph g;
        Tensor t(Shape{2}, 1.0);
        t.set_requires_grad(true);
        Var v = g.leaf(t);
        CHECK_THROWS(g.backward(v));
    }
    SUBCASE("constants receive no gradient") {
        ParamStore store;
        store.add("w", Tensor::vector({1.0, 1.0}));
        Graph g;
        Var c = g.constant(Tensor::vector({5.0, 6.0}));
        g.backward(dot(g, g.param(store, "w"), c));
        CHECK_FALSE(g.needs_grad(c));
        CHECK(store.grad("w") == Tensor::vector({5.0, 6.0}));
    }
    SUBCASE("a parameter used twice accumulates") {
        ParamStore store;
        store.add("w", Tensor::scalar(3.0));
        Graph g;
        Var w1 = g.param(store, "w");
        Var w2 = g.param(store, "w");
        g.backward(mul(g, w1, w2));
        CHECK(store.grad("w").item() == doctest::Approx(6.0));
    }
}

TEST_CASE("softmax cross-entropy values and stabilization") {
    Graph g;
    Var s = g.constant(Tensor::vector({0.0, 0.0}));
    CHECK(g.value(softmax_cross_entropy(g, s, 0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    Var big = g.constant(Tensor::vector({1000.0, 0.0}));
    const double l = g.value(softmax_cross_entropy(g, big, 0)).item();
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(0.0).epsilon(1e-12));
    // Hopeless target: clamp bounds the loss.
    CHECK(g.value(softmax_cross_entropy(g, big, 1)).item() == doctest::Approx(-kLogProbFloor));
    CHECK_THROWS(softmax_cross_entropy(g, s, 2));
}

TEST_CASE("cross-entropy gradient equals softmax minus onehot") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor scores = random_tensor(Shape{4}, rng);
        ParamStore store;
        store.add("s", scores);
        Graph g;
        g.backward(softmax_cross_entropy(g, g.param(store, "s"), 2));
        auto p = softmax(scores.data());
        for (std::size_t i = 0; i < 4; ++i) {
            const double expected = p[i] - (i == 2 ? 1.0 : 0.0);
            CHECK(store.grad("s")[i] == doctest::Approx(expected).epsilon(1e-12));
        }
        auto numeric = numeric_gradient(
            [](const std::vector<double>& x) { return cross_entropy_value(x, 2); }, scores.storage());
        for (std::size_t i = 0; i < 4; ++i) CHECK(store.grad("s")[i] == doctest::Approx(numeric[i]).epsilon(1e-6));
    }
}

TEST_CASE("grad_check on every op over 10 seeds") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        ParamStore store;
        store.add("a", random_tensor(Shape{3, 4}, rng));
        store.add("b", random_tensor(Shape{4, 5}, rng));
        store.add("c", random_tensor(Shape{2, 4}, rng));
        store.add("bias", random_tensor(Shape{5}, rng));
        store.add("v", random_tensor(Shape{5}, rng));
        const std::vector<std::size_t> targets{0, 4, 2};
        auto build = [&](Graph& g, ParamStore& s) {
            Var a = g.param(s, "a");
            Var b = g.param(s, "b");
            Var c = g.param(s, "c");
            Var h = add_bias(g, matmul(g, a, b), g.param(s, "bias"));
            Var t = tanh(g, h);
            Var r = relu(g, scale(g, h, 0.7));
            Var mixed = add(g, mul(g, t, r), sub(g, square(g, t), r));
            Var stacked = concat_rows(g, {mixed, slice(g, mixed, 5, Shape{1, 5})});
            Var nt = matmul_nt(g, c, a);  // 2 x 3
            Var ce = cross_entropy_rows(g, mixed, targets);
            Var pooled = mean_rows(g, stacked);
            Var tail = add(g, dot(g, pooled, g.param(s, "v")), sum(g, tanh(g, nt)));
            Var head = softmax_cross_entropy(g, pooled, 1);
            return add(g, add(g, ce, mean(g, square(g, stacked))), add(g, tail, head));
        };
        auto report = grad_check(build, store);
        INFO("seed " << seed << " worst " << report.worst_param << "[" << report.worst_index << "]");
        CHECK(report.passed);
        CHECK(report.max_rel_error < 1e-4);
        CHECK(report.entries_checked == store.parameter_count());
    }
}

TEST_CASE("grad_check on a linear graph is exact") {
    Rng rng(3);
    ParamStore store;
    store.add("w", random_tensor(Shape{6}, rng));
    Tensor x = random_tensor(Shape{6}, rng);
    auto report = grad_check([&](Graph& g, ParamStore& s) { return dot(g, g.param(s, "w"), g.constant(x)); }, store);
    CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("grad_check detects a wrong gradient") {
    // An op whose backward is deliberately off by a factor of two.
    ParamStore store;
    store.add("w", Tensor::vector({0.3, -1.2}));
    auto build = [](Graph& g, ParamStore& s) {
        Var w = g.param(s, "w");
        Tensor out = Tensor::scalar(g.value(w)[0] * g.value(w)[0] + g.value(w)[1]);
        return g.push(
            out, {w},
            [](Graph& gr, std::size_t self) {
                const std::size_t in = gr.inputs_of(self)[0];
                Tensor* gw = gr.grad_buffer(in);
                const double up = gr.grad_at(self).item();
                (*gw)[0] += up * 4.0 * gr.value_at(in)[0];
                (*gw)[1] += up;
            },
            "buggy");
    };
    auto report = grad_check(build, store);
    CHECK_FALSE(report.passed);
    CHECK(report.worst_param == "w");
    CHECK(report.worst_index == 0);
}

TEST_CASE("adam") {
    SUBCASE("zero gradient keeps values and decays moments") {
        ParamStore store;
        store.add("w", Tensor::vector({1.0, 2.0}));
        AdamState state(0.1);
        store.grad("w") = Tensor::vector({1.0, 1.0});
        adam_step(store, state);
        const Tensor after_first = store.value("w");
        const double m_before = state.moments.at("w").first[0];
        adam_step(store, state);  // grads were zeroed by the previous step
        CHECK(store.value("w") == after_first);
        CHECK(state.moments.at("w").first[0] == doctest::Approx(0.9 * m_before));
        CHECK(store.grad("w") == Tensor(Shape{2}, 0.0));
    }
    SUBCASE("first step moves by the learning rate") {
        ParamStore store;
        store.add("w", Tensor::vector({0.0, 0.0}));
        AdamState state(0.01);
        store.grad("w") = Tensor::vector({3.0, -0.5});
        adam_step(store, state);
        CHECK(store.value("w")[0] == doctest::Approx(-0.01).epsilon(1e-6));
        CHECK(store.value("w")[1] == doctest::Approx(0.01).epsilon(1e-6));
        CHECK(state.step == 1);
        CHECK(store.step() == 1);
    }
    SUBCASE("converges on a scalar quadratic") {
        ParamStore store;
        store.add("w", Tensor::scalar(0.0));
        AdamState state(0.1);
        for (int i = 0; i < 100; ++i) {
            Graph g;
            g.backward(square(g, sub(g, g.param(store, "w"), g.constant(Tensor::scalar(3.0)))));
            adam_step(store, state);
        }
        CHECK(std::abs(store.value("w").item() - 3.0) < 0.1);
    }
}

TEST_CASE("finite checks reject NaN activations") {
    set_finite_checks(true);
    Graph g;
    Var a = g.constant(Tensor::scalar(1e308));
    CHECK_THROWS(scale(g, a, 10.0));
    set_finite_checks(false);
    Graph g2;
    CHECK_NOTHROW(scale(g2, g2.constant(Tensor::scalar(1e308)), 10.0));
    set_finite_checks(true);
}

TEST_CASE("tensor construction and checksum") {
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Tensor t = Tensor::matrix(2, 2, {1, 2, 3, 4});
    CHECK(t.at(1, 0) == 3.0);
    CHECK(checksum(t.data()) == checksum(Tensor::matrix(2, 2, {1, 2, 3, 4}).data()));
    CHECK(checksum(t.data()) != checksum(Tensor::matrix(2, 2, {1, 2, 3, 5}).data()));
}

TEST_CASE("param store") {
    ParamStore store;
    store.add("x", Tensor::vector({1, 2}));
    CHECK_THROWS(store.add("x", Tensor::vector({1})));
    CHECK_THROWS_AS(store.value("missing"), std::out_of_range);
    store.add("a", Tensor::vector({3}));
    CHECK(store.flatten() == std::vector<double>{3, 1, 2});
    CHECK(store.parameter_count() == 3);
}
