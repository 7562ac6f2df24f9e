#pragma once

// The one-shot model: stem, a stack of normal/reduction cells whose edges
// carry softmax-mixed candidate operations, and a pooled linear head. Also
// the discrete network rebuilt from a genotype for retraining.

#include <string>
#include <vector>

#include "microdarts/activations.hpp"
#include "microdarts/autodiff.hpp"
#include "microdarts/genotype.hpp"
#include "microdarts/ops.hpp"
#include "microdarts/params.hpp"
#include "microdarts/rng.hpp"

namespace microdarts {

enum class NodeNormMode { off, pre, post };

inline std::string to_string(NodeNormMode m) {
    switch (m) {
        case NodeNormMode::off: return "off";
        case NodeNormMode::pre: return "pre";
        case NodeNormMode::post: return "post";
    }
    return "off";
}

inline NodeNormMode node_norm_from_string(const std::string& s) {
    if (s == "off") return NodeNormMode::off;
    if (s == "pre") return NodeNormMode::pre;
    if (s == "post") return NodeNormMode::post;
    throw ConfigError("norm mode must be off|pre|post, got '" + s + "'");
}

// --- edge enumeration -------------------------------------------------------
// Edges are ordered by target node, then source index. Sources 0 and 1 are
// the two cell inputs; source j+2 is intermediate node j.

struct EdgeRef {
    int target = 0;
    int source = 0;
    bool operator==(const EdgeRef&) const = default;
};

inline int cell_edge_count(int nodes) { return nodes * (nodes + 3) / 2; }

inline std::vector<EdgeRef> enumerate_edges(int nodes) {
    std::vector<EdgeRef> edges;
    for (int j = 0; j < nodes; ++j)
        for (int s = 0; s < j + 2; ++s) edges.push_back({j, s});
    return edges;
}

inline int edge_index(int nodes, int target, int source) {
    if (target < 0 || target >= nodes || source < 0 || source >= target + 2)
        throw StructuralError("edge_index: (" + std::to_string(target) + "," +
                              std::to_string(source) + ") out of range for " +
                              std::to_string(nodes) + " nodes");
    return target * (target + 3) / 2 + source;
}

// --- configuration and architecture parameters ------------------------------

struct SuperNetConfig {
    int cells = 4;
    int nodes = 4;   // intermediate nodes per cell
    int k = 2;       // predecessors kept per node after discretization
    int init_channels = 8;
    int in_channels = 1;
    int classes = 4;

    void validate() const {
        if (cells < 2) throw ConfigError("supernet: cells must be >= 2");
        if (nodes < 1) throw ConfigError("supernet: nodes must be >= 1");
        if (k < 1 || k > nodes + 1) throw ConfigError("supernet: k out of range");
        if (init_channels < 2 || init_channels % 2 != 0)
            throw ConfigError("supernet: init_channels must be even and >= 2");
        if (classes < 2) throw ConfigError("supernet: classes must be >= 2");
        if (in_channels < 1) throw ConfigError("supernet: in_channels must be >= 1");
    }

    bool is_reduction_cell(int i) const {
        return i == cells / 3 || i == 2 * cells / 3;
    }
};

template <typename T>
struct ArchParams {
    Tensor<T> normal;  // [edges x ops] logits
    Tensor<T> reduce;

    static ArchParams zeros(int edges, int ops) {
        return {Tensor<T>({edges, ops}), Tensor<T>({edges, ops})};
    }

    template <typename U>
    ArchParams<U> cast() const {
        return {normal.template cast<U>(), reduce.template cast<U>()};
    }
};

// Per-forward measurements: node L2 norms per cell, raw (before node
// normalization) and effective (what downstream consumes). Entries 0 and 1
// are the preprocessed cell inputs, then the intermediate nodes.
struct ForwardProbe {
    struct Cell {
        std::vector<double> raw_norms;
        std::vector<double> eff_norms;
    };
    std::vector<Cell> cells;
};

// --- shared building blocks --------------------------------------------------

namespace detail {

// ReLU-conv1x1-BN channel adapter, or a factorized reduce when the incoming
// feature map must also drop a resolution level.
template <typename T>
struct Preprocess {
    using Id = typename Graph<T>::NodeId;
    bool reduce = false;
    int c_in = 0, c_out = 0;
    std::vector<size_t> params;

    Preprocess() = default;
    Preprocess(bool reduce_in, int cin, int cout, const std::string& prefix,
               ParamStore<T>& store, SplitMix64& rng)
        : reduce(reduce_in), c_in(cin), c_out(cout) {
        auto add = [&](const std::string& n, int out_ch) {
            const double std_dev = std::sqrt(2.0 / c_in);
            Tensor<T> t({out_ch, c_in, 1, 1});
            for (auto& v : t.values()) v = static_cast<T>(rng.normal() * std_dev);
            const size_t idx = store.size();
            store.add(prefix + n, std::move(t));
            return idx;
        };
        if (reduce) {
            if (c_out % 2 != 0) throw StructuralError("factorized reduce needs even channels");
            params = {add(".fr1.weight", c_out / 2), add(".fr2.weight", c_out / 2)};
        } else {
            params = {add(".conv.weight", c_out)};
        }
    }

    Id forward(Graph<T>& g, Id x, const std::vector<Id>& bound) const {
        Id r = ops::relu(g, x);
        if (!reduce) {
            Id h = ops::conv2d(g, r, bound[params[0]], 1, 0);
            return ops::static_bn(g, h, kBnEps);
        }
        Id a = ops::conv2d(g, r, bound[params[0]], 2, 0);
        Id b = ops::conv2d(g, ops::crop_tl(g, r), bound[params[1]], 2, 0);
        std::vector<Id> halves{a, b};
        Id cat = ops::concat_channels(g, std::span<const Id>(halves));
        return ops::static_bn(g, cat, kBnEps);
    }
};

template <typename T>
void add_conv_param(ParamStore<T>& store, SplitMix64& rng, const std::string& name,
                    std::vector<int> shape, int fan_in) {
    const double std_dev = std::sqrt(2.0 / fan_in);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(rng.normal() * std_dev);
    store.add(name, std::move(t));
}

}  // namespace detail

// --- the supernet ------------------------------------------------------------

template <typename T>
class SuperNet {
public:
    using Id = typename Graph<T>::NodeId;

    SuperNet(SuperNetConfig cfg, SearchSpace space, uint64_t seed)
        : cfg_(cfg), space_(std::move(space)) {
        cfg_.validate();
        space_.validate();
        SplitMix64 root(seed);
        SplitMix64 rng = root.fork(0x696e6974);  // "init"

        const int c0 = cfg_.init_channels;
        detail::add_conv_param(params_, rng, "stem.weight",
                               {c0, cfg_.in_channels, 3, 3}, cfg_.in_channels * 9);

        int c_prev_prev = c0, c_prev = c0, c = c0;
        bool reduction_prev = false;
        const auto edges = enumerate_edges(cfg_.nodes);
        for (int i = 0; i < cfg_.cells; ++i) {
            CellDef cell;
            cell.reduction = cfg_.is_reduction_cell(i);
            if (cell.reduction) c *= 2;
            const std::string cp = "cell" + std::to_string(i);
            cell.pre0 = detail::Preprocess<T>(reduction_prev, c_prev_prev, c, cp + ".pre0",
                                              params_, rng);
            cell.pre1 = detail::Preprocess<T>(false, c_prev, c, cp + ".pre1", params_, rng);
            for (size_t e = 0; e < edges.size(); ++e) {
                const int stride = (cell.reduction && edges[e].source < 2) ? 2 : 1;
                std::vector<OpInstance<T>> ops_on_edge;
                for (const OpKind& kind : space_.ops)
                    ops_on_edge.emplace_back(kind, c, stride,
                                             cp + ".edge" + std::to_string(e) + "." +
                                                 kind.name(),
                                             params_, rng);
                cell.edge_ops.push_back(std::move(ops_on_edge));
            }
            cells_.push_back(std::move(cell));
            reduction_prev = cell_is_reduction(i);
            c_prev_prev = c_prev;
            c_prev = cfg_.nodes * c;
        }

        const int feat = c_prev;
        Tensor<T> head_w({cfg_.classes, feat});
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(feat));
        for (auto& v : head_w.values()) v = static_cast<T>(rng.normal() * std_dev);
        params_.add("head.weight", std::move(head_w));
        params_.add("head.bias", Tensor<T>({cfg_.classes}));
    }

    const SuperNetConfig& config() const { return cfg_; }
    const SearchSpace& space() const { return space_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    int alpha_edges() const { return cell_edge_count(cfg_.nodes); }
    bool cell_is_reduction(int i) const { return cells_[static_cast<size_t>(i)].reduction; }

    ArchParams<T> init_arch() const {
        return ArchParams<T>::zeros(alpha_edges(), space_.size());
    }

    struct Bound {
        std::vector<Id> params;
        Id alpha_normal = -1;
        Id alpha_reduce = -1;
    };

    Bound bind(Graph<T>& g, const ArchParams<T>& arch, bool train_w, bool train_alpha) const {
        Bound b;
        b.params = params_.bind(g, train_w);
        Tensor<T> an = arch.normal;
        an.drop_grad();
        Tensor<T> ar = arch.reduce;
        ar.drop_grad();
        b.alpha_normal = g.leaf(std::move(an), train_alpha, "alpha_normal");
        b.alpha_reduce = g.leaf(std::move(ar), train_alpha, "alpha_reduce");
        return b;
    }

    struct ForwardOpts {
        NodeNormMode mode = NodeNormMode::off;
        ForwardProbe* probe = nullptr;
        ActivationStore* capture = nullptr;
    };

    Id forward(Graph<T>& g, const Bound& b, const Tensor<T>& images,
               const ForwardOpts& opts) const {
        if (images.ndim() != 4 || images.dim(1) != cfg_.in_channels)
            throw StructuralError("supernet: batch shape " + shape_str(images.shape()) +
                                  " does not match config");
        validate_spatial(images.dim(2), images.dim(3));
        if (opts.capture && opts.capture->empty())
            opts.capture->init(cfg_.cells, cfg_.nodes, alpha_edges(), space_.size());
        if (opts.probe) opts.probe->cells.assign(static_cast<size_t>(cfg_.cells), {});

        Id stem;
        {
            typename Graph<T>::ScopeGuard scope(g, "stem");
            Id x = g.constant(images, "batch");
            stem = ops::static_bn(
                g, ops::conv2d(g, x, b.params[params_.index_of("stem.weight")], 1, 1), kBnEps);
        }

        Id s0 = stem, s1 = stem;
        for (int i = 0; i < cfg_.cells; ++i) {
            typename Graph<T>::ScopeGuard scope(g, "cell" + std::to_string(i));
            Id out = cell_forward(g, i, s0, s1, b, opts);
            s0 = s1;
            s1 = out;
        }

        typename Graph<T>::ScopeGuard scope(g, "head");
        Id pooled = ops::global_avg_pool(g, s1);
        return ops::linear(g, pooled, b.params[params_.index_of("head.weight")],
                           b.params[params_.index_of("head.bias")]);
    }

private:
    struct CellDef {
        bool reduction = false;
        detail::Preprocess<T> pre0, pre1;
        std::vector<std::vector<OpInstance<T>>> edge_ops;  // [edge][op]
    };

    void validate_spatial(int h, int w) const {
        for (int i = 0; i < cfg_.cells; ++i) {
            if (cells_[static_cast<size_t>(i)].reduction) {
                if (h % 2 != 0 || w % 2 != 0)
                    throw StructuralError("supernet: reduction cell " + std::to_string(i) +
                                          " needs even spatial dims, got " +
                                          std::to_string(h) + "x" + std::to_string(w));
                h /= 2;
                w /= 2;
            }
            if (h < 2 || w < 2)
                throw StructuralError("supernet: spatial dims collapse below 2x2 at cell " +
                                      std::to_string(i));
        }
    }

    Id cell_forward(Graph<T>& g, int cell_idx, Id s0, Id s1, const Bound& b,
                    const ForwardOpts& opts) const {
        const CellDef& cell = cells_[static_cast<size_t>(cell_idx)];
        const Id alpha_mat = cell.reduction ? b.alpha_reduce : b.alpha_normal;
        ForwardProbe::Cell* probe =
            opts.probe ? &opts.probe->cells[static_cast<size_t>(cell_idx)] : nullptr;

        auto note = [&](Id raw, Id eff) {
            if (probe) {
                probe->raw_norms.push_back(g.value(raw).l2_norm());
                probe->eff_norms.push_back(g.value(eff).l2_norm());
            }
        };

        Id p0 = cell.pre0.forward(g, s0, b.params);
        Id p1 = cell.pre1.forward(g, s1, b.params);
        if (opts.mode == NodeNormMode::pre) {
            // inputs are nodes too: everything downstream consumes norm-C maps
            Id n0 = ops::static_bn(g, p0, kBnEps);
            Id n1 = ops::static_bn(g, p1, kBnEps);
            note(p0, n0);
            note(p1, n1);
            p0 = n0;
            p1 = n1;
        } else {
            note(p0, p0);
            note(p1, p1);
        }

        if (opts.capture) {
            const auto& t = g.value(p0);
            opts.capture->cell_is_reduction[static_cast<size_t>(cell_idx)] = cell.reduction;
            opts.capture->note_batch(cell_idx, t.dim(0), t.dim(1), t.dim(2), t.dim(3));
        }

        std::vector<Id> states{p0, p1};
        int edge = 0;
        for (int j = 0; j < cfg_.nodes; ++j) {
            std::vector<Id> edge_outs;
            for (int s = 0; s < j + 2; ++s, ++edge) {
                typename Graph<T>::ScopeGuard scope(
                    g, "node" + std::to_string(j) + "/edge" + std::to_string(s));
                const auto& instances = cell.edge_ops[static_cast<size_t>(edge)];
                std::vector<Id> op_outs;
                for (const auto& inst : instances) {
                    Id out = inst.forward(g, states[static_cast<size_t>(s)], b.params);
                    if (opts.mode == NodeNormMode::post && inst.kind().is_identity() &&
                        inst.stride() == 1)
                        out = ops::static_bn(g, out, kBnEps);
                    op_outs.push_back(out);
                }
                Id row = ops::matrix_row(g, alpha_mat, edge);
                auto mixed = mixed_output(g, std::span<const Id>(op_outs), row);
                if (opts.capture) {
                    for (size_t o = 0; o < op_outs.size(); ++o)
                        ActivationStore::append<T>(
                            opts.capture->op_out[opts.capture->op_index(
                                cell_idx, edge, static_cast<int>(o))],
                            g.value(op_outs[o]).values());
                    ActivationStore::append<T>(
                        opts.capture->mixed[opts.capture->edge_index(cell_idx, edge)],
                        g.value(mixed.out).values());
                }
                edge_outs.push_back(mixed.out);
            }
            Id raw = ops::add_n(g, std::span<const Id>(edge_outs));
            Id eff = opts.mode == NodeNormMode::pre ? ops::static_bn(g, raw, kBnEps) : raw;
            note(raw, eff);
            if (opts.capture)
                ActivationStore::append<T>(
                    opts.capture->node_sum[opts.capture->node_index(cell_idx, j)],
                    g.value(raw).values());
            states.push_back(eff);
        }

        std::vector<Id> outs(states.begin() + 2, states.end());
        return ops::concat_channels(g, std::span<const Id>(outs));
    }

    SuperNetConfig cfg_;
    SearchSpace space_;
    ParamStore<T> params_;
    std::vector<CellDef> cells_;
};

// --- the discrete network rebuilt from a genotype ---------------------------

template <typename T>
class DiscreteNet {
public:
    using Id = typename Graph<T>::NodeId;

    DiscreteNet(SuperNetConfig cfg, SearchSpace space, Genotype geno, uint64_t seed)
        : cfg_(cfg), space_(std::move(space)), geno_(std::move(geno)) {
        cfg_.validate();
        space_.validate();
        geno_.validate(space_);
        if (geno_.nodes != cfg_.nodes || geno_.k != cfg_.k)
            throw InputError("genotype: nodes/k do not match the network config");

        SplitMix64 root(seed);
        SplitMix64 rng = root.fork(0x696e6974);
        const int c0 = cfg_.init_channels;
        detail::add_conv_param(params_, rng, "stem.weight",
                               {c0, cfg_.in_channels, 3, 3}, cfg_.in_channels * 9);

        int c_prev_prev = c0, c_prev = c0, c = c0;
        bool reduction_prev = false;
        for (int i = 0; i < cfg_.cells; ++i) {
            CellDef cell;
            cell.reduction = cfg_.is_reduction_cell(i);
            if (cell.reduction) c *= 2;
            const std::string cp = "cell" + std::to_string(i);
            cell.pre0 = detail::Preprocess<T>(reduction_prev, c_prev_prev, c, cp + ".pre0",
                                              params_, rng);
            cell.pre1 = detail::Preprocess<T>(false, c_prev, c, cp + ".pre1", params_, rng);
            const auto& plan = cell.reduction ? geno_.reduce : geno_.normal;
            for (int j = 0; j < cfg_.nodes; ++j) {
                for (int slot = 0; slot < cfg_.k; ++slot) {
                    const auto& sel = plan[static_cast<size_t>(j)][static_cast<size_t>(slot)];
                    const int stride = (cell.reduction && sel.pred < 2) ? 2 : 1;
                    cell.node_ops.emplace_back(
                        sel.op, c, stride,
                        cp + ".node" + std::to_string(j) + ".k" + std::to_string(slot) + "." +
                            sel.op.name(),
                        params_, rng);
                }
            }
            reduction_prev = cell.reduction;
            cells_.push_back(std::move(cell));
            c_prev_prev = c_prev;
            c_prev = cfg_.nodes * c;
        }

        const int feat = c_prev;
        Tensor<T> head_w({cfg_.classes, feat});
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(feat));
        for (auto& v : head_w.values()) v = static_cast<T>(rng.normal() * std_dev);
        params_.add("head.weight", std::move(head_w));
        params_.add("head.bias", Tensor<T>({cfg_.classes}));
    }

    const SuperNetConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    std::vector<Id> bind(Graph<T>& g, bool trainable) const {
        return params_.bind(g, trainable);
    }

    Id forward(Graph<T>& g, const std::vector<Id>& bound, const Tensor<T>& images,
               NodeNormMode mode) const {
        if (images.ndim() != 4 || images.dim(1) != cfg_.in_channels)
            throw StructuralError("discrete net: batch shape mismatch");
        Id stem;
        {
            typename Graph<T>::ScopeGuard scope(g, "stem");
            Id x = g.constant(images, "batch");
            stem = ops::static_bn(
                g, ops::conv2d(g, x, bound[params_.index_of("stem.weight")], 1, 1), kBnEps);
        }
        Id s0 = stem, s1 = stem;
        for (int i = 0; i < cfg_.cells; ++i) {
            typename Graph<T>::ScopeGuard scope(g, "cell" + std::to_string(i));
            Id out = cell_forward(g, i, s0, s1, bound, mode);
            s0 = s1;
            s1 = out;
        }
        typename Graph<T>::ScopeGuard scope(g, "head");
        Id pooled = ops::global_avg_pool(g, s1);
        return ops::linear(g, pooled, bound[params_.index_of("head.weight")], bound[params_.index_of("head.bias")]);
    }

private:
    struct CellDef {
        bool reduction = false;
        detail::Preprocess<T> pre0, pre1;
        std::vector<OpInstance<T>> node_ops;  // [node*k + slot]
    };

    Id cell_forward(Graph<T>& g, int cell_idx, Id s0, Id s1, const std::vector<Id>& bound,
                    NodeNormMode mode) const {
        const CellDef& cell = cells_[static_cast<size_t>(cell_idx)];
        Id p0 = cell.pre0.forward(g, s0, bound);
        Id p1 = cell.pre1.forward(g, s1, bound);
        if (mode == NodeNormMode::pre) {
            p0 = ops::static_bn(g, p0, kBnEps);
            p1 = ops::static_bn(g, p1, kBnEps);
        }
        const auto& plan = cell.reduction ? geno_.reduce : geno_.normal;
        std::vector<Id> states{p0, p1};
        for (int j = 0; j < cfg_.nodes; ++j) {
            std::vector<Id> contributions;
            for (int slot = 0; slot < cfg_.k; ++slot) {
                const auto& sel = plan[static_cast<size_t>(j)][static_cast<size_t>(slot)];
                const auto& inst = cell.node_ops[static_cast<size_t>(j * cfg_.k + slot)];
                Id out = inst.forward(g, states[static_cast<size_t>(sel.pred)], bound);
                if (mode == NodeNormMode::post && inst.kind().is_identity() &&
                    inst.stride() == 1)
                    out = ops::static_bn(g, out, kBnEps);
                contributions.push_back(out);
            }
            Id raw = ops::add_n(g, std::span<const Id>(contributions));
            states.push_back(mode == NodeNormMode::pre ? ops::static_bn(g, raw, kBnEps) : raw);
        }
        std::vector<Id> outs(states.begin() + 2, states.end());
        return ops::concat_channels(g, std::span<const Id>(outs));
    }

    SuperNetConfig cfg_;
    SearchSpace space_;
    Genotype geno_;
    ParamStore<T> params_;
    std::vector<CellDef> cells_;
};

}  // namespace microdarts
