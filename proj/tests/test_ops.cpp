#include <doctest.h>

#include <cmath>

#include "microdarts/gradcheck.hpp"
#include "microdarts/ops.hpp"
#include "microdarts/rng.hpp"

using namespace microdarts;
using Gd = Graph<double>;
using Id = Gd::NodeId;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, SplitMix64& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal() * scale;
    return t;
}

// Window-by-window reference for 3x3 max pooling with padding 1.
double pool_oracle_max(const std::vector<double>& x, int h, int w, int oy, int ox) {
    double best = -1e300;
    for (int ky = -1; ky <= 1; ++ky)
        for (int kx = -1; kx <= 1; ++kx) {
            const int iy = oy + ky, ix = ox + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            best = std::max(best, x[static_cast<size_t>(iy) * w + ix]);
        }
    return best;
}

}  // namespace

TEST_SUITE_BEGIN("ops");

TEST_CASE("search space presets match their definitions") {
    auto s1 = SearchSpace::preset("S1");
    REQUIRE(s1.size() == 8);
    CHECK(s1.ops[0].name() == "zero");
    CHECK(s1.ops[1].name() == "identity");
    CHECK(s1.ops[2].name() == "max_pool_3x3");
    CHECK(s1.ops[3].name() == "avg_pool_3x3");
    CHECK(s1.ops[4].name() == "sep_conv_3x3");
    CHECK(s1.ops[5].name() == "sep_conv_5x5");
    CHECK(s1.ops[6].name() == "dil_conv_3x3");
    CHECK(s1.ops[7].name() == "dil_conv_5x5");

    auto s2 = SearchSpace::preset("S2");
    REQUIRE(s2.size() == 5);
    CHECK(s2.ops[0].name() == "zero");
    CHECK(s2.ops[1].name() == "max_pool_3x3");
    CHECK(s2.ops[3].name() == "identity");

    auto s3 = SearchSpace::preset("S3");
    REQUIRE(s3.size() == 3);
    CHECK(s3.ops[2].name() == "sep_conv_3x3");

    CHECK_THROWS_AS(SearchSpace::preset("S9"), ConfigError);
}

TEST_CASE("search space rejects duplicates and empty lists") {
    CHECK_THROWS_AS(SearchSpace::custom({}), StructuralError);
    CHECK_THROWS_AS(SearchSpace::custom({op_zero(), op_zero()}), StructuralError);
}

TEST_CASE("op names round-trip, with the skip_connect alias accepted") {
    for (const auto& k : SearchSpace::preset("S1").ops)
        CHECK(OpKind::from_name(k.name()) == k);
    CHECK(OpKind::from_name("skip_connect") == op_identity());
    CHECK(OpKind::from_name("none") == op_zero());
    CHECK_THROWS_AS(OpKind::from_name("warp_conv_3x3"), InputError);
}

TEST_CASE("zero op returns zeros of the input shape and blocks gradients") {
    ParamStore<double> store;
    SplitMix64 rng(1);
    OpInstance<double> zero(op_zero(), 3, 1, "z", store, rng);
    CHECK(store.size() == 0);

    Gd g;
    Id x = g.leaf(random_tensor({2, 3, 4, 4}, rng), true);
    auto bound = store.bind(g, true);
    Id y = zero.forward(g, x, bound);
    CHECK(g.value(y).shape() == std::vector<int>{2, 3, 4, 4});
    for (double v : g.value(y).values()) CHECK(v == 0.0);

    // zero-op output contributes exactly zero gradient to x
    Id probe = g.leaf(random_tensor({2, 3, 4, 4}, rng), false);
    Id loss = ops::sum(g, ops::mul(g, y, probe));
    g.backward(loss);
    for (double v : g.grad(x)) CHECK(v == 0.0);
}

TEST_CASE("identity op at stride 1 returns the input unchanged") {
    ParamStore<double> store;
    SplitMix64 rng(2);
    OpInstance<double> skip(op_identity(), 3, 1, "id", store, rng);
    CHECK(store.size() == 0);
    Gd g;
    Tensor<double> t = random_tensor({1, 3, 4, 4}, rng);
    Id x = g.leaf(t, false);
    auto bound = store.bind(g, true);
    Id y = skip.forward(g, x, bound);
    CHECK(y == x);
    CHECK(g.value(y).values() == t.values());
}

TEST_CASE("max_pool3 stride 1: hand-evaluated window oracle") {
    Gd g;
    std::vector<double> vals{1, 2, 3, 4, 5, 6, 7, 8, 9};
    Id x = g.leaf(Tensor<double>({1, 1, 3, 3}, vals), false);
    Id y = ops::max_pool2d(g, x, 3, 1, 1);
    const auto& out = g.value(y).values();
    CHECK(out[4] == 9.0);  // center window sees the full plane
    for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox)
            CHECK(out[static_cast<size_t>(oy) * 3 + ox] ==
                  pool_oracle_max(vals, 3, 3, oy, ox));
}

TEST_CASE("static_bn: constant channel maps to zeros without error") {
    Gd g;
    Id x = g.leaf(Tensor<double>({2, 1, 2, 2}, std::vector<double>(8, 3.75)), false);
    Id y = ops::static_bn(g, x, kBnEps);
    for (double v : g.value(y).values()) CHECK(v == 0.0);
}

TEST_CASE("static_bn: input [0,2] on a single channel maps to [-1,1]") {
    Gd g;
    Id x = g.leaf(Tensor<double>({2, 1, 1, 1}, {0.0, 2.0}), false);
    Id y = ops::static_bn(g, x, kBnEps);
    CHECK(g.value(y).values()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(g.value(y).values()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("static_bn: squared norm hits B*C*W*H for unit-variance channels") {
    SplitMix64 rng(3);
    Gd g;
    Id x = g.leaf(random_tensor({2, 3, 4, 4}, rng, 2.0), false);
    Id y = ops::static_bn(g, x, kBnEps);
    const double sq = g.value(y).sq_norm();
    CHECK(sq == doctest::Approx(96.0).epsilon(1e-3));
    CHECK(sq <= 96.0);  // norm bound holds with any eps
}

TEST_CASE("static_bn: exact norm identity against per-channel variances") {
    SplitMix64 rng(4);
    Gd g;
    Tensor<double> t = random_tensor({2, 3, 4, 4}, rng, 0.05);  // small sigma stresses eps
    Id x = g.leaf(t, false);
    Id y = ops::static_bn(g, x, kBnEps);
    // reference: sum over channels of n * var/(var+eps)
    double expected = 0.0;
    const int n = 2 * 4 * 4;
    for (int c = 0; c < 3; ++c) {
        double sum = 0, sq = 0;
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < 16; ++i) {
                const double v = t.values()[(static_cast<size_t>(b) * 3 + c) * 16 + i];
                sum += v;
                sq += v * v;
            }
        const double mean = sum / n;
        const double var = sq / n - mean * mean;
        expected += n * var / (var + kBnEps);
    }
    CHECK(g.value(y).sq_norm() == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("mixed edge: uniform softmax averages op outputs") {
    Gd g;
    Id o1 = g.leaf(Tensor<double>({2}, {1, 0}), false);
    Id o2 = g.leaf(Tensor<double>({2}, {0, 1}), false);
    Id alpha = g.leaf(Tensor<double>({2}, {0, 0}), false);
    std::vector<Id> outs{o1, o2};
    auto mixed = mixed_output(g, std::span<const Id>(outs), alpha);
    CHECK(g.value(mixed.out).values()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g.value(mixed.out).values()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("mixed edge: alpha (ln 2, 0) weighs ops 2/3 and 1/3") {
    Gd g;
    Id o1 = g.leaf(Tensor<double>({2}, {1, 0}), false);
    Id o2 = g.leaf(Tensor<double>({2}, {0, 1}), false);
    Id alpha = g.leaf(Tensor<double>({2}, {std::log(2.0), 0.0}), false);
    std::vector<Id> outs{o1, o2};
    auto mixed = mixed_output(g, std::span<const Id>(outs), alpha);
    CHECK(g.value(mixed.out).values()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(g.value(mixed.out).values()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("mixed edge: equal logits over three ops give their mean") {
    SplitMix64 rng(5);
    Gd g;
    std::vector<Id> outs;
    Tensor<double> mean_ref({6});
    for (int k = 0; k < 3; ++k) {
        Tensor<double> t = random_tensor({6}, rng);
        for (int i = 0; i < 6; ++i) mean_ref.values()[i] += t.values()[i] / 3.0;
        outs.push_back(g.leaf(t, false));
    }
    Id alpha = g.leaf(Tensor<double>({3}, {1, 1, 1}), false);
    auto mixed = mixed_output(g, std::span<const Id>(outs), alpha);
    for (int i = 0; i < 6; ++i)
        CHECK(g.value(mixed.out).values()[i] ==
              doctest::Approx(mean_ref.values()[i]).epsilon(1e-12));
}

TEST_CASE("mixed edge: row length mismatch is structural") {
    Gd g;
    Id o1 = g.leaf(Tensor<double>({2}, {1, 0}), false);
    Id alpha = g.leaf(Tensor<double>({2}, {0, 0}), false);
    std::vector<Id> outs{o1};
    CHECK_THROWS_AS(mixed_output(g, std::span<const Id>(outs), alpha), StructuralError);
}

TEST_CASE("softmax weights: positive, sum to one, shift invariant") {
    SplitMix64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 2 + static_cast<int>(rng.below(6));
        Tensor<double> alpha({m});
        for (auto& v : alpha.values()) v = rng.normal() * 5.0;

        Gd g;
        Id a = g.leaf(alpha, false);
        Id s = ops::softmax(g, a);
        double total = 0.0;
        for (double v : g.value(s).values()) {
            CHECK(v > 0.0);
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

        // adding a constant to the row leaves the weights unchanged
        Tensor<double> shifted = alpha;
        for (auto& v : shifted.values()) v += 7.5;
        Id s2 = ops::softmax(g, g.leaf(shifted, false));
        for (int i = 0; i < m; ++i)
            CHECK(g.value(s2).values()[i] ==
                  doctest::Approx(g.value(s).values()[i]).epsilon(1e-9));
    }
}

TEST_CASE("alpha_grad_analytic: op equal to the mixture gets exactly zero") {
    // two identical op outputs: each o(x) == mixed(x), so both components are 0
    Tensor<double> up({3}, {0.3, -0.7, 1.1});
    Tensor<double> o({3}, {1.0, 2.0, 3.0});
    auto grad = alpha_grad_analytic<double>(up, {o, o}, {0.4, -0.2});
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 0.0);
}

TEST_CASE("alpha_grad_analytic: upstream orthogonal to every difference gives zeros") {
    Tensor<double> up({2}, {1.0, 1.0});
    Tensor<double> o1({2}, {1.0, -1.0});   // <up, o1> = 0
    Tensor<double> o2({2}, {-2.0, 2.0});   // <up, o2> = 0
    auto grad = alpha_grad_analytic<double>(up, {o1, o2}, {0.9, 0.1});
    CHECK(grad[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(grad[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("alpha_grad_analytic: matches the autodiff alpha gradient on random edges") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        const int m = 2 + static_cast<int>(rng.below(4));
        const int n = 4 + static_cast<int>(rng.below(12));
        std::vector<Tensor<double>> op_outs;
        Tensor<double> upstream({n});
        for (auto& v : upstream.values()) v = rng.normal();
        std::vector<double> alpha_row;
        for (int k = 0; k < m; ++k) {
            Tensor<double> t({n});
            for (auto& v : t.values()) v = rng.normal();
            op_outs.push_back(t);
            alpha_row.push_back(rng.normal());
        }

        Gd g;
        std::vector<Id> out_ids;
        for (const auto& t : op_outs) out_ids.push_back(g.leaf(t, false));
        Id alpha = g.leaf(Tensor<double>({m}, alpha_row), true);
        auto mixed = mixed_output(g, std::span<const Id>(out_ids), alpha);
        // loss = <upstream, mixed>, so dL/d(mixed) == upstream exactly
        Id loss = ops::sum(g, ops::mul(g, mixed.out, g.constant(upstream)));
        g.backward(loss);

        auto analytic = alpha_grad_analytic<double>(upstream, op_outs, alpha_row);
        const auto& autodiff = g.grad(alpha);
        for (int k = 0; k < m; ++k)
            CHECK(rel_err(analytic[static_cast<size_t>(k)],
                          autodiff[static_cast<size_t>(k)]) < 1e-10);
    }
}

TEST_CASE("sep/dil conv and pool ops keep shape at stride 1 and are norm-pinned") {
    SplitMix64 rng(8);
    ParamStore<double> store;
    const int c = 4;
    std::vector<OpInstance<double>> insts;
    for (const auto& kind : SearchSpace::preset("S1").ops)
        insts.emplace_back(kind, c, 1, "e0." + kind.name(), store, rng);

    Gd g;
    Id x = g.leaf(random_tensor({2, c, 6, 6}, rng), false);
    auto bound = store.bind(g, false);
    const double full = 2 * c * 6 * 6;
    for (const auto& inst : insts) {
        Id y = inst.forward(g, x, bound);
        CHECK(g.value(y).shape() == std::vector<int>{2, c, 6, 6});
        if (inst.kind().has_params() || inst.kind().tag == OpTag::max_pool ||
            inst.kind().tag == OpTag::avg_pool) {
            // conv and pool ops end in static_bn, so their norm is pinned
            CHECK(g.value(y).sq_norm() == doctest::Approx(full).epsilon(1e-3));
        }
    }
}

TEST_CASE("stride-2 ops halve spatial dims; identity uses factorized reduce") {
    SplitMix64 rng(9);
    ParamStore<double> store;
    const int c = 4;
    std::vector<OpInstance<double>> insts;
    for (const auto& kind : SearchSpace::preset("S1").ops)
        insts.emplace_back(kind, c, 2, "r0." + kind.name(), store, rng);

    Gd g;
    Id x = g.leaf(random_tensor({2, c, 8, 8}, rng), false);
    auto bound = store.bind(g, false);
    for (const auto& inst : insts) {
        Id y = inst.forward(g, x, bound);
        CHECK(g.value(y).shape() == std::vector<int>{2, c, 4, 4});
    }
}

TEST_CASE("stride-2 identity on odd spatial dims is a structural error") {
    SplitMix64 rng(10);
    ParamStore<double> store;
    OpInstance<double> skip(op_identity(), 4, 2, "r", store, rng);
    Gd g;
    Id x = g.leaf(random_tensor({1, 4, 5, 5}, rng), false);
    auto bound = store.bind(g, false);
    CHECK_THROWS_AS(skip.forward(g, x, bound), StructuralError);
}

TEST_CASE("mixed edge output is invariant to constant alpha-row shifts") {
    SplitMix64 rng(11);
    ParamStore<double> store;
    const int c = 3;
    auto space = SearchSpace::preset("S3");
    std::vector<OpInstance<double>> insts;
    for (const auto& kind : space.ops)
        insts.emplace_back(kind, c, 1, "e." + kind.name(), store, rng);

    auto run = [&](double shift) {
        Gd g;
        SplitMix64 xr(99);
        Id x = g.leaf(random_tensor({2, c, 4, 4}, xr), false);
        auto bound = store.bind(g, false);
        std::vector<Id> outs;
        for (const auto& inst : insts) outs.push_back(inst.forward(g, x, bound));
        Tensor<double> alpha({3}, {0.5 + shift, -0.25 + shift, 1.0 + shift});
        auto mixed = mixed_output(g, std::span<const Id>(outs), g.leaf(alpha, false));
        return g.value(mixed.out).values();
    };
    auto base = run(0.0);
    auto shifted = run(3.25);
    for (size_t i = 0; i < base.size(); ++i)
        CHECK(shifted[i] == doctest::Approx(base[i]).epsilon(1e-9));
}

TEST_SUITE_END();
