#pragma once

// The candidate operation set: zero, identity, pooling and separable /
// dilated convolutions, each conv or pool followed by batch normalization
// without affine parameters so its output norm is pinned by the batch shape.

#include <string>
#include <vector>

#include "microdarts/autodiff.hpp"
#include "microdarts/params.hpp"
#include "microdarts/rng.hpp"

namespace microdarts {

inline constexpr double kBnEps = 1e-5;

enum class OpTag { zero, identity, max_pool, avg_pool, sep_conv, dil_conv };

struct OpKind {
    OpTag tag = OpTag::zero;
    int kernel = 0;    // odd; zero/identity carry none
    int dilation = 1;  // dil_conv only

    bool operator==(const OpKind&) const = default;

    bool is_zero() const { return tag == OpTag::zero; }
    bool is_identity() const { return tag == OpTag::identity; }
    bool has_params() const { return tag == OpTag::sep_conv || tag == OpTag::dil_conv; }

    std::string name() const;
    static OpKind from_name(const std::string& name);
    void validate() const;
};

inline OpKind op_zero() { return {OpTag::zero, 0, 1}; }
inline OpKind op_identity() { return {OpTag::identity, 0, 1}; }
inline OpKind op_max_pool(int k = 3) { return {OpTag::max_pool, k, 1}; }
inline OpKind op_avg_pool(int k = 3) { return {OpTag::avg_pool, k, 1}; }
inline OpKind op_sep_conv(int k) { return {OpTag::sep_conv, k, 1}; }
inline OpKind op_dil_conv(int k, int d = 2) { return {OpTag::dil_conv, k, d}; }

// Ordered candidate set; the order defines the alpha column indexing.
struct SearchSpace {
    std::string name;  // S1 | S2 | S3 | custom
    std::vector<OpKind> ops;

    int size() const { return static_cast<int>(ops.size()); }
    int index_of(const OpKind& k) const;
    int zero_index() const;
    int identity_index() const;
    void validate() const;

    static SearchSpace preset(const std::string& name);
    static SearchSpace custom(std::vector<OpKind> ops);
    static SearchSpace from_names(const std::string& tag,
                                  const std::vector<std::string>& names);
};

// ---------------------------------------------------------------------------
// Parameterized operation instance bound to one (cell, edge, op) slot.
// ---------------------------------------------------------------------------

template <typename T>
class OpInstance {
public:
    using Id = typename Graph<T>::NodeId;

    // Registers this op's weights under `prefix` and draws their initial
    // values from `rng` in a fixed order.
    OpInstance(OpKind kind, int channels, int stride, const std::string& prefix,
               ParamStore<T>& store, SplitMix64& rng)
        : kind_(kind), channels_(channels), stride_(stride) {
        kind_.validate();
        if (stride_ != 1 && stride_ != 2)
            throw StructuralError("op: stride must be 1 or 2, got " + std::to_string(stride_));
        auto dw = [&](const std::string& n, int k) {
            return add_conv(store, rng, prefix + n, {channels_, 1, k, k}, k * k);
        };
        auto pw = [&](const std::string& n) {
            return add_conv(store, rng, prefix + n, {channels_, channels_, 1, 1}, channels_);
        };
        switch (kind_.tag) {
            case OpTag::sep_conv:
                params_ = {dw(".dw1.weight", kind_.kernel), pw(".pw1.weight"),
                           dw(".dw2.weight", kind_.kernel), pw(".pw2.weight")};
                break;
            case OpTag::dil_conv:
                params_ = {dw(".dw.weight", kind_.kernel), pw(".pw.weight")};
                break;
            case OpTag::identity:
                if (stride_ == 2) {
                    if (channels_ % 2 != 0)
                        throw StructuralError("factorized reduce needs even channels");
                    const int half = channels_ / 2;
                    params_ = {add_conv(store, rng, prefix + ".fr1.weight",
                                        {half, channels_, 1, 1}, channels_),
                               add_conv(store, rng, prefix + ".fr2.weight",
                                        {half, channels_, 1, 1}, channels_)};
                }
                break;
            default:
                break;  // zero and pools carry no parameters
        }
    }

    const OpKind& kind() const { return kind_; }
    int stride() const { return stride_; }

    Id forward(Graph<T>& g, Id x, const std::vector<Id>& bound) const {
        const Tensor<T>& tx = g.value(x);
        if (tx.ndim() != 4) throw StructuralError("op: input must be 4-d");
        switch (kind_.tag) {
            case OpTag::zero: {
                if (stride_ == 1) return ops::zeros(g, tx.shape());
                check_even_spatial(tx);
                return ops::zeros(g, {tx.dim(0), channels_, tx.dim(2) / 2, tx.dim(3) / 2});
            }
            case OpTag::identity: {
                if (stride_ == 1) return x;
                check_even_spatial(tx);
                return factorized_reduce(g, x, bound);
            }
            case OpTag::max_pool: {
                Id p = ops::max_pool2d(g, x, kind_.kernel, stride_, (kind_.kernel - 1) / 2);
                return ops::static_bn(g, p, kBnEps);
            }
            case OpTag::avg_pool: {
                Id p = ops::avg_pool2d(g, x, kind_.kernel, stride_, (kind_.kernel - 1) / 2);
                return ops::static_bn(g, p, kBnEps);
            }
            case OpTag::sep_conv: {
                Id h = sep_block(g, x, bound[params_[0]], bound[params_[1]], stride_);
                return sep_block(g, h, bound[params_[2]], bound[params_[3]], 1);
            }
            case OpTag::dil_conv: {
                const int pad = kind_.dilation * (kind_.kernel - 1) / 2;
                Id h = ops::relu(g, x);
                h = ops::conv2d(g, h, bound[params_[0]], stride_, pad, kind_.dilation,
                                channels_);
                h = ops::conv2d(g, h, bound[params_[1]], 1, 0);
                return ops::static_bn(g, h, kBnEps);
            }
        }
        throw StructuralError("op: unknown kind");
    }

private:
    static size_t add_conv(ParamStore<T>& store, SplitMix64& rng, std::string name,
                           std::vector<int> shape, int fan_in) {
        const double std_dev = std::sqrt(2.0 / fan_in);
        Tensor<T> t(shape);
        for (auto& v : t.values()) v = static_cast<T>(rng.normal() * std_dev);
        const size_t idx = store.size();
        store.add(std::move(name), std::move(t));
        return idx;
    }

    static void check_even_spatial(const Tensor<T>& t) {
        if (t.dim(2) % 2 != 0 || t.dim(3) % 2 != 0)
            throw StructuralError("stride-2 op needs even spatial dims, got " +
                                  shape_str(t.shape()));
    }

    Id sep_block(Graph<T>& g, Id x, Id dw, Id pw, int stride) const {
        const int pad = (kind_.kernel - 1) / 2;
        Id h = ops::relu(g, x);
        h = ops::conv2d(g, h, dw, stride, pad, 1, channels_);
        h = ops::conv2d(g, h, pw, 1, 0);
        return ops::static_bn(g, h, kBnEps);
    }

    // Two stride-2 pointwise convs on the original and one-pixel-shifted
    // planes, concatenated, then normalized.
    Id factorized_reduce(Graph<T>& g, Id x, const std::vector<Id>& bound) const {
        Id r = ops::relu(g, x);
        Id a = ops::conv2d(g, r, bound[params_[0]], 2, 0);
        Id b = ops::conv2d(g, ops::crop_tl(g, r), bound[params_[1]], 2, 0);
        std::vector<Id> halves{a, b};
        Id cat = ops::concat_channels(g, std::span<const Id>(halves));
        return ops::static_bn(g, cat, kBnEps);
    }

    OpKind kind_;
    int channels_;
    int stride_;
    std::vector<size_t> params_;
};

// Softmax-weighted mixture of pre-computed operation outputs (the edge
// relaxation). Returns the mixture and the softmax node.
template <typename T>
struct MixedOut {
    typename Graph<T>::NodeId out;
    typename Graph<T>::NodeId weights;
};

template <typename T>
MixedOut<T> mixed_output(Graph<T>& g, std::span<const typename Graph<T>::NodeId> op_outs,
                         typename Graph<T>::NodeId alpha_row) {
    if (static_cast<int>(op_outs.size()) != g.value(alpha_row).numel())
        throw StructuralError("mixed op: " + std::to_string(op_outs.size()) + " ops but " +
                              std::to_string(g.value(alpha_row).numel()) + " logits");
    auto weights = ops::softmax(g, alpha_row);
    return {ops::weighted_sum(g, op_outs, weights), weights};
}

// First-order architecture gradient in closed form: for each op,
// S_o * <upstream, o(x) - mixed(x)>. Must agree with the autodiff gradient.
template <typename T>
std::vector<double> alpha_grad_analytic(const Tensor<T>& upstream,
                                        const std::vector<Tensor<T>>& op_outputs,
                                        const std::vector<T>& alpha_row) {
    const size_t m = op_outputs.size();
    if (alpha_row.size() != m)
        throw StructuralError("alpha_grad_analytic: row length mismatch");
    // softmax with max subtraction
    double mx = -std::numeric_limits<double>::infinity();
    for (const T a : alpha_row) mx = std::max(mx, static_cast<double>(a));
    std::vector<double> s(m);
    double denom = 0.0;
    for (size_t o = 0; o < m; ++o) {
        s[o] = std::exp(static_cast<double>(alpha_row[o]) - mx);
        denom += s[o];
    }
    for (auto& v : s) v /= denom;

    const size_t n = upstream.values().size();
    for (const auto& t : op_outputs)
        if (t.values().size() != n)
            throw StructuralError("alpha_grad_analytic: op output shape mismatch");

    // <up, o> per op, then <up, mixed> = sum_o s_o <up, o>.
    std::vector<double> dots(m, 0.0);
    for (size_t o = 0; o < m; ++o) {
        const auto& ov = op_outputs[o].values();
        const auto& uv = upstream.values();
        double d = 0.0;
        for (size_t i = 0; i < n; ++i)
            d += static_cast<double>(uv[i]) * static_cast<double>(ov[i]);
        dots[o] = d;
    }
    double dot_mixed = 0.0;
    for (size_t o = 0; o < m; ++o) dot_mixed += s[o] * dots[o];

    std::vector<double> grad(m);
    for (size_t o = 0; o < m; ++o) grad[o] = s[o] * (dots[o] - dot_mixed);
    return grad;
}

}  // namespace microdarts
