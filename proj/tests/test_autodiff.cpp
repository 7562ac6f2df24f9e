#include <doctest.h>

#include <cmath>

#include "microdarts/autodiff.hpp"
#include "microdarts/gradcheck.hpp"
#include "microdarts/params.hpp"
#include "support/micro_nets.hpp"

using namespace microdarts;
using Gd = Graph<double>;
using Id = Gd::NodeId;

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("forward: elementwise add") {
    Gd g;
    Id a = g.leaf(Tensor<double>({2}, {1, 2}), false);
    Id b = g.leaf(Tensor<double>({2}, {3, 4}), false);
    Id c = ops::add(g, a, b);
    CHECK(g.value(c).values() == std::vector<double>{4, 6});
}

TEST_CASE("forward: identity") {
    Gd g;
    Id a = g.leaf(Tensor<double>({1}, {5}), false);
    Id y = ops::identity(g, a);
    CHECK(g.value(y).values() == std::vector<double>{5});
}

TEST_CASE("forward: relu") {
    Gd g;
    Id a = g.leaf(Tensor<double>({2}, {-1, 2}), false);
    Id y = ops::relu(g, a);
    CHECK(g.value(y).values() == std::vector<double>{0, 2});
}

TEST_CASE("forward: shape mismatch raises structural error") {
    Gd g;
    Id a = g.leaf(Tensor<double>({2}, {1, 2}), false);
    Id b = g.leaf(Tensor<double>({3}, {1, 2, 3}), false);
    CHECK_THROWS_AS(ops::add(g, a, b), StructuralError);
}

TEST_CASE("forward: non-finite intermediate raises numeric error naming the node") {
    Gd g;
    Id a = g.leaf(Tensor<double>({2}, {1e308, 1e308}), false);
    try {
        typename Gd::ScopeGuard scope(g, "stem");
        ops::add(g, a, a);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("stem/add") != std::string::npos);
    }
}

TEST_CASE("backward: linear case grad(w) = x") {
    Gd g;
    Id w = g.leaf(Tensor<double>({3}, {0.5, -1.0, 2.0}), true);
    Id x = g.leaf(Tensor<double>({3}, {3, 4, 5}), false);
    Id loss = ops::sum(g, ops::mul(g, w, x));
    g.backward(loss);
    CHECK(g.grad(w) == std::vector<double>{3, 4, 5});
    CHECK(g.grad(x) == std::vector<double>{0, 0, 0});  // untouched leaf reports zeros
}

TEST_CASE("backward: quadratic 0.5*||w||^2 gives grad w") {
    Gd g;
    Id w = g.leaf(Tensor<double>({3}, {1.5, -2.0, 0.25}), true);
    Id loss = ops::scale(g, ops::sum(g, ops::mul(g, w, w)), 0.5);
    g.backward(loss);
    CHECK(g.grad(w) == std::vector<double>{1.5, -2.0, 0.25});
}

TEST_CASE("backward: before forward is a state error") {
    Gd g;
    CHECK_THROWS_AS(g.backward(0), StateError);
}

TEST_CASE("backward: runs once per graph") {
    Gd g;
    Id w = g.leaf(Tensor<double>({1}, {2}), true);
    Id loss = ops::sum(g, w);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), StateError);
}

TEST_CASE("backward: zero upstream seed yields all-zero leaf gradients") {
    Gd g;
    Id w = g.leaf(Tensor<double>({2}, {1, 2}), true);
    Id loss = ops::sum(g, ops::mul(g, w, w));
    g.backward_with_seed(loss, Tensor<double>::scalar(0.0));
    CHECK(g.grad(w) == std::vector<double>{0, 0});
}

TEST_CASE("backward: grad before backward is a state error") {
    Gd g;
    Id w = g.leaf(Tensor<double>({1}, {1}), true);
    CHECK_THROWS_AS(g.grad(w), StateError);
}

TEST_CASE("backward: random 2-layer micro-net matches central differences") {
    LeafBank bank;
    SplitMix64 rng(7);
    int w1 = testing::bank_normal(bank, rng, {2, 2, 3, 3}, 0.5);
    int w2 = testing::bank_normal(bank, rng, {2, 2, 1, 1}, 0.5);
    int x = testing::bank_normal(bank, rng, {2, 2, 5, 5}, 1.0);
    auto build = [=](auto& g, const auto& leaves) {
        auto h = ops::relu(g, ops::conv2d(g, leaves[x], leaves[w1], 1, 1));
        auto y = ops::conv2d(g, h, leaves[w2], 1, 0);
        return ops::scale(g, ops::sum(g, ops::mul(g, y, y)), 0.5);
    };
    auto report = grad_check<double>(bank, build, 1e-5);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("grad_check: exact for linear maps") {
    LeafBank bank;
    int w = bank.add({3}, {0.5, -1.0, 2.0});
    auto build = [=](auto& g, const auto& leaves) {
        using T = std::decay_t<decltype(g.value(0).values()[0])>;
        auto x = g.constant(Tensor<T>({3}, {3, 4, 5}));
        return ops::sum(g, ops::mul(g, leaves[w], x));
    };
    auto report = grad_check<double>(bank, build, 1e-9);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("grad_check: conv+relu+pool micro-net under 1e-5 (f64)") {
    LeafBank bank;
    SplitMix64 rng(11);
    int w1 = testing::bank_normal(bank, rng, {3, 3, 3, 3}, 0.4);
    int x = testing::bank_normal(bank, rng, {2, 3, 6, 6}, 1.0);
    auto build = [=](auto& g, const auto& leaves) {
        auto h = ops::relu(g, ops::conv2d(g, leaves[x], leaves[w1], 1, 1));
        auto p = ops::max_pool2d(g, h, 3, 1, 1);
        auto a = ops::avg_pool2d(g, p, 3, 1, 1);
        auto y = ops::global_avg_pool(g, a);
        return ops::sum(g, ops::mul(g, y, y));
    };
    auto report = grad_check<double>(bank, build, 1e-5);
    CHECK(report.pass);
}

TEST_CASE("grad_check: relu evaluated exactly at the kink is excluded") {
    LeafBank bank;
    int w = bank.add({2}, {0.0, 1.0});  // first entry sits on the kink
    auto build = [=](auto& g, const auto& leaves) {
        return ops::sum(g, ops::relu(g, leaves[w]));
    };
    auto report = grad_check<double>(bank, build, 1e-6, 2000, 1e-4);
    CHECK(report.excluded == 1);
    CHECK(report.compared == 1);
    CHECK(report.pass);  // the off-kink entry still compares fine
}

TEST_CASE("grad_check: refuses banks over the entry cap") {
    LeafBank bank;
    bank.add({3000}, std::vector<double>(3000, 0.1));
    auto build = [](auto& g, const auto& leaves) { return ops::sum(g, leaves[0]); };
    auto report = grad_check<double>(bank, build, 1e-6, 2000);
    CHECK(report.over_cap);
    CHECK_FALSE(report.pass);
}

TEST_CASE("determinism: identical inputs give bit-identical forward and backward") {
    auto run = [](uint64_t seed) {
        LeafBank bank;
        SplitMix64 rng(seed);
        int w = testing::bank_normal(bank, rng, {2, 2, 3, 3}, 0.5);
        int x = testing::bank_normal(bank, rng, {1, 2, 6, 6}, 1.0);
        Graph<float> g;
        auto leaves = bank.bind<float>(g, true);
        auto y = ops::static_bn(g, ops::conv2d(g, leaves[x], leaves[w], 1, 1), 1e-5);
        auto loss = ops::sum(g, ops::mul(g, y, y));
        g.backward(loss);
        auto out = g.value(loss).values();
        auto gw = g.grad(leaves[w]);
        out.insert(out.end(), gw.begin(), gw.end());
        return out;
    };
    CHECK(run(42) == run(42));
}

TEST_CASE("sgd_step: plain step") {
    ParamStore<double> params;
    params.add("p", Tensor<double>({1}, {1.0}));
    SgdState<double> state;
    std::vector<double> grad{0.5};
    sgd_step<double>(params, {std::span<const double>(grad)}, state, 0.1, 0.0, 0.0);
    CHECK(params.at("p").values()[0] == doctest::Approx(0.95).epsilon(1e-12));
}

TEST_CASE("sgd_step: zero grad and zero weight decay is a fixed point") {
    ParamStore<double> params;
    params.add("p", Tensor<double>({3}, {1.0, -2.0, 0.5}));
    SgdState<double> state;
    std::vector<double> grad{0.0, 0.0, 0.0};
    sgd_step<double>(params, {std::span<const double>(grad)}, state, 0.1, 0.9, 0.0);
    CHECK(params.at("p").values() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("sgd_step: two momentum steps match the hand-rolled recurrence") {
    const double lr = 0.05, mu = 0.9, wd = 0.01;
    const double g1 = 0.3, g2 = -0.2;
    double p = 2.0, v = 0.0;
    // reference recurrence
    v = mu * v + g1 + wd * p;
    const double p1 = p - lr * v;
    const double v2 = mu * v + g2 + wd * p1;
    const double p2 = p1 - lr * v2;

    ParamStore<double> params;
    params.add("p", Tensor<double>({1}, {2.0}));
    SgdState<double> state;
    std::vector<double> grad{g1};
    sgd_step<double>(params, {std::span<const double>(grad)}, state, lr, mu, wd);
    CHECK(params.at("p").values()[0] == doctest::Approx(p1).epsilon(1e-15));
    grad[0] = g2;
    sgd_step<double>(params, {std::span<const double>(grad)}, state, lr, mu, wd);
    CHECK(params.at("p").values()[0] == doctest::Approx(p2).epsilon(1e-15));
}

TEST_CASE("sgd_step: shape mismatch is a structural error") {
    ParamStore<double> params;
    params.add("p", Tensor<double>({2}, {1.0, 2.0}));
    SgdState<double> state;
    std::vector<double> grad{0.5};
    CHECK_THROWS_AS(
        sgd_step<double>(params, {std::span<const double>(grad)}, state, 0.1, 0.0, 0.0),
        StructuralError);
}

TEST_CASE("micro-net zoo: f64 gradients within 1e-5 across op kinds") {
    for (int variant = 0; variant < 8; ++variant) {
        CAPTURE(variant);
        LeafBank bank;
        auto spec = testing::random_micro_net(1234, variant, bank);
        auto report = grad_check<double>(bank, spec, 1e-5);
        CHECK(report.compared > 0);
        CHECK(report.pass);
    }
}

TEST_CASE("micro-net zoo: f32 gradients within 1e-3") {
    for (int variant = 0; variant < 4; ++variant) {
        CAPTURE(variant);
        LeafBank bank;
        auto spec = testing::random_micro_net(99, variant, bank);
        auto report = grad_check<float>(bank, spec, 1e-3);
        CHECK(report.compared > 0);
        CHECK(report.pass);
    }
}

TEST_SUITE_END();
