#include <doctest.h>

#include "gradcheck.hpp"
#include "mdm/autodiff.hpp"
#include "mdm/errors.hpp"

#include <cmath>

using namespace mdm;
using ad::Var;

TEST_CASE("matmul examples") {
    ad::Tape t;
    Var i2 = t.constant({2, 2}, {1, 0, 0, 1});
    Var m = t.constant({2, 2}, {1, 2, 3, 4});
    const Var p = ad::matmul(i2, m);
    CHECK(std::vector<double>(p.value().begin(), p.value().end()) == std::vector<double>{1, 2, 3, 4});
    Var r = ad::matmul(t.constant({1, 2}, {1, 2}), t.constant({2, 1}, {3, 4}));
    CHECK(r.item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    ad::Tape t;
    Var a = t.constant({2, 3}, std::vector<double>(6, 1.0));
    Var b = t.constant({2, 3}, std::vector<double>(6, 1.0));
    try {
        (void)ad::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3] and [2x3]") != std::string::npos);
    }
}

TEST_CASE("elementwise examples") {
    ad::Tape t;
    CHECK(ad::sigmoid(t.constant({1}, {0.0})).item() == 0.5);
    CHECK(ad::leaky_relu(t.constant({1}, {-1.0}), 0.01).item() == doctest::Approx(-0.01));
    Var x = t.variable({1}, {1.0});
    t.backward(ad::exp(x));
    CHECK(x.grad()[0] == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
}

TEST_CASE("log of a non-positive entry reports its index") {
    ad::Tape t;
    Var x = t.constant({1, 3}, {1.0, 2.0, -0.5});
    try {
        (void)ad::log(x);
        FAIL("expected DomainError");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("index 2") != std::string::npos);
    }
}

TEST_CASE("reductions") {
    ad::Tape t;
    CHECK(ad::log_mean_exp(t.constant({2}, {0.0, 0.0})).item() == 0.0);
    const double big = ad::log_mean_exp(t.constant({2}, {1000.0, 1000.0})).item();
    CHECK(big == 1000.0);
    Var x = t.variable({3}, {1, 2, 3});
    Var m = ad::mean(x);
    CHECK(m.item() == 2.0);
    t.backward(m);
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS((void)ad::mean(t.constant({0}, {})), DomainError);
}

TEST_CASE("log_mean_exp stays finite over [-1e6, 1e6]") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        ad::Tape t;
        Var x = t.variable({1, 16}, testing::uniform_vec(16, rng, -1e6, 1e6));
        Var y = ad::log_mean_exp(x);
        CHECK(std::isfinite(y.item()));
        t.backward(y);
        for (double g : x.grad()) CHECK(std::isfinite(g));
    }
}

TEST_CASE("backward contract") {
    ad::Tape t;
    Var x = t.variable({1}, {3.0});
    Var loss = x * x;
    t.backward(loss);
    CHECK(x.grad()[0] == 6.0);
    t.backward(loss);
    CHECK(x.grad()[0] == 12.0);  // accumulates exactly

    Var v = t.variable({2}, {1, 2});
    CHECK_THROWS_AS(t.backward(v), ContractError);
}

TEST_CASE("two backward calls double every gradient exactly") {
    Rng rng(5);
    ad::Tape t;
    Var w = t.variable({3, 4}, testing::uniform_vec(12, rng));
    Var x = t.constant({2, 4}, testing::uniform_vec(8, rng));
    Var b = t.variable({3}, testing::uniform_vec(3, rng));
    Var loss = ad::sum(ad::sigmoid(ad::linear(x, w, b)));
    t.backward(loss);
    const std::vector<double> g1(w.grad().begin(), w.grad().end());
    t.backward(loss);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(w.grad()[i] == 2.0 * g1[i]);
}

TEST_CASE("backward is deterministic") {
    auto run = [] {
        Rng rng(9);
        ad::Tape t;
        Var w = t.variable({4, 5}, testing::uniform_vec(20, rng));
        Var x = t.constant({6, 5}, testing::uniform_vec(30, rng));
        Var z = ad::linear(x, w, t.variable({4}, testing::uniform_vec(4, rng)));
        Var out = ad::log_mean_exp(ad::tanh(ad::softplus(z)) * z);
        t.backward(out);
        return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    CHECK(run() == run());
}

// ---------------------------------------------------------------------------
// Finite-difference oracle over every differentiable op.

namespace {

using Build = std::function<Var(ad::Tape&, std::span<const Var>)>;

testing::GradCheck check_op(const Build& build, std::vector<nn::Parameter>& inputs) {
    nn::ParamRefs refs;
    for (auto& p : inputs) refs.push_back(&p);
    auto loss = [&](ad::Tape& t) {
        std::vector<Var> vs;
        for (auto* p : refs) vs.push_back(nn::bind(t, *p, nn::Track::Yes));
        // Weighted sum so every output entry gets a distinct upstream gradient.
        Var out = build(t, vs);
        std::vector<double> w(out.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.1 * static_cast<double>(i % 7);
        return ad::sum(ad::mul_const(out, w));
    };
    return testing::check_gradients(loss, refs);
}

}  // namespace

TEST_CASE("finite-difference agreement for every op on random inputs") {
    Rng rng(2024);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    struct Case {
        const char* name;
        int arity;
        bool positive;
        Build build;
    };
    const std::vector<Case> cases = {
        {"add", 2, false, [](ad::Tape&, std::span<const Var> v) { return v[0] + v[1]; }},
        {"sub", 2, false, [](ad::Tape&, std::span<const Var> v) { return v[0] - v[1]; }},
        {"mul", 2, false, [](ad::Tape&, std::span<const Var> v) { return v[0] * v[1]; }},
        {"exp", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::exp(v[0]); }},
        {"log", 1, true, [](ad::Tape&, std::span<const Var> v) { return ad::log(v[0]); }},
        {"sigmoid", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::sigmoid(v[0]); }},
        {"tanh", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::tanh(v[0]); }},
        {"leaky_relu", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::leaky_relu(v[0], 0.01); }},
        {"softplus", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::softplus(v[0]); }},
        {"abs", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::abs(v[0]); }},
        {"scale", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::scale(v[0], -1.7); }},
        {"add_scalar", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::add_scalar(v[0], 0.3); }},
        {"mean", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::mean(v[0]); }},
        {"sum", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::sum(v[0]); }},
        {"log_mean_exp", 1, false, [](ad::Tape&, std::span<const Var> v) { return ad::log_mean_exp(v[0]); }},
    };
    for (const auto& c : cases) {
        for (int trial = 0; trial < 20; ++trial) {
            const ad::Shape shape{dim(rng), dim(rng)};
            std::vector<nn::Parameter> in;
            for (int a = 0; a < c.arity; ++a) {
                in.push_back(c.positive ? testing::random_param("x", shape, rng, 0.2, 2.0)
                                        : testing::random_param("x", shape, rng));
            }
            const auto r = check_op(c.build, in);
            INFO(c.name << " trial " << trial << " worst rel " << r.worst_rel);
            CHECK(r.ok);
        }
    }
}

TEST_CASE("finite-difference agreement for matmul, linear, bias and concat") {
    Rng rng(77);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        {
            std::vector<nn::Parameter> in{testing::random_param("a", {m, k}, rng),
                                          testing::random_param("b", {k, n}, rng)};
            CHECK(check_op([](ad::Tape&, std::span<const Var> v) { return ad::matmul(v[0], v[1]); }, in).ok);
        }
        {
            std::vector<nn::Parameter> in{testing::random_param("x", {m, k}, rng),
                                          testing::random_param("w", {n, k}, rng),
                                          testing::random_param("b", {n}, rng)};
            CHECK(check_op([](ad::Tape&, std::span<const Var> v) { return ad::linear(v[0], v[1], v[2]); }, in).ok);
        }
        {
            std::vector<nn::Parameter> in{testing::random_param("x", {m, n}, rng),
                                          testing::random_param("b", {n}, rng)};
            CHECK(check_op([](ad::Tape&, std::span<const Var> v) { return ad::add_row_bias(v[0], v[1]); }, in).ok);
        }
        {
            std::vector<nn::Parameter> in{testing::random_param("x", {m, k}, rng),
                                          testing::random_param("y", {m, n}, rng)};
            CHECK(check_op([](ad::Tape&, std::span<const Var> v) { return ad::concat_cols(v); }, in).ok);
        }
    }
}

TEST_CASE("gradient of sum(sigmoid(W x)) matches finite differences") {
    Rng rng(1);
    std::vector<nn::Parameter> in{testing::random_param("w", {3, 4}, rng), testing::random_param("x", {4, 2}, rng)};
    CHECK(check_op([](ad::Tape&, std::span<const Var> v) { return ad::sigmoid(ad::matmul(v[0], v[1])); }, in).ok);
}

TEST_CASE("tape is in topological order") {
    ad::Tape t;
    Var a = t.variable({2}, {1, 2});
    Var b = ad::exp(a);
    Var c = ad::mean(b * a);
    for (std::size_t id = 0; id < t.size(); ++id) {
        for (std::size_t p : t.node(id).parents) CHECK(p < id);
    }
    CHECK(c.id() == t.size() - 1);
}
