#pragma once

// Reverse-mode automatic differentiation over dense tensors. A Graph is a
// tape: nodes are appended in evaluation order (which is a topological
// order by construction) and the backward pass replays them in exact
// reverse order, so gradients are deterministic for a given build.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "microdarts/errors.hpp"
#include "microdarts/kernels.hpp"
#include "microdarts/tensor.hpp"

namespace microdarts {

template <typename T>
class Graph {
public:
    using NodeId = int32_t;

    struct Node {
        const char* op = "";
        int scope = 0;
        bool is_leaf = false;
        bool trainable = false;
        bool requires_grad = false;
        Tensor<T> value;
        std::vector<NodeId> inputs;
        std::function<void(Graph&, NodeId)> backward;
    };

    Graph() { scopes_.push_back(""); }

    NodeId leaf(Tensor<T> t, bool trainable, std::string_view label = {}) {
        Node n;
        n.op = trainable ? "param" : "input";
        n.scope = label.empty() ? scope_ : intern_scope(std::string(label));
        n.is_leaf = true;
        n.trainable = trainable;
        n.requires_grad = trainable;
        n.value = std::move(t);
        return push(std::move(n));
    }

    NodeId constant(Tensor<T> t, const char* op = "const") {
        Node n;
        n.op = op;
        n.scope = scope_;
        n.is_leaf = true;
        n.value = std::move(t);
        return push(std::move(n));
    }

    NodeId add_node(const char* op, std::vector<NodeId> inputs, Tensor<T> value,
                    std::function<void(Graph&, NodeId)> backward) {
        Node n;
        n.op = op;
        n.scope = scope_;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        for (NodeId id : n.inputs)
            if (at(id).requires_grad) n.requires_grad = true;
        if (n.requires_grad) n.backward = std::move(backward);
        return push(std::move(n));
    }

    size_t size() const { return nodes_.size(); }

    const Node& node(NodeId id) const { return at(id); }

    const Tensor<T>& value(NodeId id) const { return at(id).value; }

    bool wants_grad(NodeId id) const { return at(id).requires_grad; }

    // Accumulation buffer for a node's gradient; null when the node does not
    // participate in differentiation, so op backwards can skip dead work.
    std::vector<T>* grad_accum(NodeId id) {
        Node& n = at(id);
        if (!n.requires_grad) return nullptr;
        return &n.value.ensure_grad();
    }

    // Post-backward gradient; zero-filled for untouched nodes.
    const std::vector<T>& grad(NodeId id) {
        if (!did_backward_) throw StateError("graph: grad requested before backward");
        return at(id).value.ensure_grad();
    }

    void backward(NodeId loss) {
        if (value_checked(loss).numel() != 1)
            throw StructuralError("graph: backward needs a scalar loss, got " +
                                  shape_str(value(loss).shape()));
        Tensor<T> seed = Tensor<T>::scalar(T{1});
        backward_with_seed(loss, seed);
    }

    void backward_with_seed(NodeId root, const Tensor<T>& seed) {
        if (nodes_.empty()) throw StateError("graph: backward before forward");
        if (did_backward_) throw StateError("graph: backward already ran on this graph");
        Node& r = at(root);
        if (seed.shape() != r.value.shape())
            throw StructuralError("graph: seed shape " + shape_str(seed.shape()) +
                                  " != root shape " + shape_str(r.value.shape()));
        if (r.requires_grad) {
            auto& g = r.value.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += seed.values()[i];
        }
        for (NodeId i = static_cast<NodeId>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.requires_grad || !n.value.has_grad() || !n.backward) continue;
            n.backward(*this, i);
        }
        // Untouched trainable leaves report zeros rather than absence.
        for (Node& n : nodes_)
            if (n.is_leaf) n.value.ensure_grad();
        did_backward_ = true;
    }

    bool did_backward() const { return did_backward_; }

    // --- error naming -------------------------------------------------------

    class ScopeGuard {
    public:
        ScopeGuard(Graph& g, std::string_view name) : g_(g), prev_(g.scope_) {
            const std::string& base = g.scopes_[static_cast<size_t>(prev_)];
            g_.scope_ = g_.intern_scope(base.empty() ? std::string(name)
                                                     : base + "/" + std::string(name));
        }
        ~ScopeGuard() { g_.scope_ = prev_; }
        ScopeGuard(const ScopeGuard&) = delete;
        ScopeGuard& operator=(const ScopeGuard&) = delete;

    private:
        Graph& g_;
        int prev_;
    };

    std::string node_name(NodeId id) const {
        const Node& n = at(id);
        const std::string& s = scopes_[static_cast<size_t>(n.scope)];
        std::string name = s.empty() ? std::string(n.op) : s + "/" + n.op;
        return name + "#" + std::to_string(id);
    }

    void set_check_finite(bool on) { check_finite_ = on; }

    // --- non-differentiable-point tracking (used by grad_check) -------------
    //
    // In tracking mode every relu records which entries are active and every
    // max pool records its argmax pattern into a running hash. Two forward
    // passes with different signatures took different linear pieces, so a
    // finite difference between them straddles a kink.

    void enable_kink_tracking() {
        kink_tracking_ = true;
        activation_sig_ = 0xcbf29ce484222325ULL;
    }
    bool kink_tracking() const { return kink_tracking_; }
    uint64_t activation_signature() const { return activation_sig_; }
    void sig_mix(uint64_t v) {
        activation_sig_ ^= v + 0x9e3779b97f4a7c15ULL + (activation_sig_ << 6) +
                           (activation_sig_ >> 2);
    }

private:
    Node& at(NodeId id) {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
            throw StateError("graph: unknown node id " + std::to_string(id));
        return nodes_[static_cast<size_t>(id)];
    }
    const Node& at(NodeId id) const { return const_cast<Graph*>(this)->at(id); }

    const Tensor<T>& value_checked(NodeId id) { return at(id).value; }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        const NodeId id = static_cast<NodeId>(nodes_.size()) - 1;
        if (check_finite_ && !nodes_.back().value.all_finite())
            throw NumericError("non-finite output in node " + node_name(id));
        return id;
    }

    int intern_scope(std::string name) {
        scopes_.push_back(std::move(name));
        return static_cast<int>(scopes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::vector<std::string> scopes_;
    int scope_ = 0;
    bool did_backward_ = false;
    bool check_finite_ = true;
    bool kink_tracking_ = false;
    uint64_t activation_sig_ = 0;
};

// ---------------------------------------------------------------------------
// Primitive ops. Each appends one node and registers its adjoint.
// ---------------------------------------------------------------------------

namespace ops {

template <typename T>
using NodeId = typename Graph<T>::NodeId;

template <typename T>
void check_same_shape(const Graph<T>& g, NodeId<T> a, NodeId<T> b, const char* who) {
    if (g.value(a).shape() != g.value(b).shape())
        throw StructuralError(std::string(who) + ": shape mismatch " +
                              shape_str(g.value(a).shape()) + " vs " +
                              shape_str(g.value(b).shape()));
}

template <typename T>
NodeId<T> add(Graph<T>& g, NodeId<T> a, NodeId<T> b) {
    check_same_shape(g, a, b, "add");
    const auto& ta = g.value(a).values();
    const auto& tb = g.value(b).values();
    Tensor<T> out(g.value(a).shape());
    for (size_t i = 0; i < ta.size(); ++i) out.values()[i] = ta[i] + tb[i];
    return g.add_node("add", {a, b}, std::move(out), [](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        for (NodeId<T> in : g.node(self).inputs) {
            if (auto* acc = g.grad_accum(in))
                for (size_t i = 0; i < up.size(); ++i) (*acc)[i] += up[i];
        }
    });
}

// Sum of an arbitrary number of same-shape tensors (node summation).
template <typename T>
NodeId<T> add_n(Graph<T>& g, std::span<const NodeId<T>> xs) {
    if (xs.empty()) throw StructuralError("add_n: no inputs");
    for (size_t i = 1; i < xs.size(); ++i) check_same_shape(g, xs[0], xs[i], "add_n");
    Tensor<T> out(g.value(xs[0]).shape());
    auto& ov = out.values();
    for (NodeId<T> x : xs) {
        const auto& xv = g.value(x).values();
        for (size_t i = 0; i < ov.size(); ++i) ov[i] += xv[i];
    }
    return g.add_node("add_n", std::vector<NodeId<T>>(xs.begin(), xs.end()), std::move(out),
                      [](Graph<T>& g, NodeId<T> self) {
                          const auto& up = g.node(self).value.grad();
                          for (NodeId<T> in : g.node(self).inputs) {
                              if (auto* acc = g.grad_accum(in))
                                  for (size_t i = 0; i < up.size(); ++i) (*acc)[i] += up[i];
                          }
                      });
}

template <typename T>
NodeId<T> scale(Graph<T>& g, NodeId<T> a, T s) {
    Tensor<T> out(g.value(a).shape());
    const auto& av = g.value(a).values();
    for (size_t i = 0; i < av.size(); ++i) out.values()[i] = s * av[i];
    return g.add_node("scale", {a}, std::move(out), [s](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        if (auto* acc = g.grad_accum(g.node(self).inputs[0]))
            for (size_t i = 0; i < up.size(); ++i) (*acc)[i] += s * up[i];
    });
}

template <typename T>
NodeId<T> mul(Graph<T>& g, NodeId<T> a, NodeId<T> b) {
    check_same_shape(g, a, b, "mul");
    const auto& av = g.value(a).values();
    const auto& bv = g.value(b).values();
    Tensor<T> out(g.value(a).shape());
    for (size_t i = 0; i < av.size(); ++i) out.values()[i] = av[i] * bv[i];
    return g.add_node("mul", {a, b}, std::move(out), [](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        const auto& in = g.node(self).inputs;
        const auto& av = g.value(in[0]).values();
        const auto& bv = g.value(in[1]).values();
        if (auto* acc = g.grad_accum(in[0]))
            for (size_t i = 0; i < up.size(); ++i) (*acc)[i] += up[i] * bv[i];
        if (auto* acc = g.grad_accum(in[1]))
            for (size_t i = 0; i < up.size(); ++i) (*acc)[i] += up[i] * av[i];
    });
}

template <typename T>
NodeId<T> identity(Graph<T>& g, NodeId<T> a) {
    Tensor<T> out = g.value(a);
    out.drop_grad();
    return g.add_node("identity", {a}, std::move(out), [](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        if (auto* acc = g.grad_accum(g.node(self).inputs[0]))
            for (size_t i = 0; i < up.size(); ++i) (*acc)[i] += up[i];
    });
}

template <typename T>
NodeId<T> relu(Graph<T>& g, NodeId<T> a) {
    const auto& av = g.value(a).values();
    Tensor<T> out(g.value(a).shape());
    for (size_t i = 0; i < av.size(); ++i) out.values()[i] = av[i] > T{0} ? av[i] : T{0};
    if (g.kink_tracking()) {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const T v : av) h = (h ^ (v > T{0} ? 0x61u : 0x30u)) * 0x100000001b3ULL;
        g.sig_mix(h);
    }
    return g.add_node("relu", {a}, std::move(out), [](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        const NodeId<T> in = g.node(self).inputs[0];
        const auto& av = g.value(in).values();
        if (auto* acc = g.grad_accum(in))
            for (size_t i = 0; i < up.size(); ++i)
                if (av[i] > T{0}) (*acc)[i] += up[i];
    });
}

template <typename T>
NodeId<T> sum(Graph<T>& g, NodeId<T> a) {
    double s = 0.0;
    for (const T v : g.value(a).values()) s += static_cast<double>(v);
    return g.add_node("sum", {a}, Tensor<T>::scalar(static_cast<T>(s)),
                      [](Graph<T>& g, NodeId<T> self) {
                          const T up = g.node(self).value.grad()[0];
                          if (auto* acc = g.grad_accum(g.node(self).inputs[0]))
                              for (auto& v : *acc) v += up;
                      });
}

// 2-D convolution, weight [c_out, c_in/groups, k, k].
template <typename T>
NodeId<T> conv2d(Graph<T>& g, NodeId<T> x, NodeId<T> w, int stride, int pad, int dilation = 1,
                 int groups = 1) {
    const Tensor<T>& tx = g.value(x);
    const Tensor<T>& tw = g.value(w);
    if (tx.ndim() != 4) throw StructuralError("conv2d: input must be 4-d");
    if (tw.ndim() != 4) throw StructuralError("conv2d: weight must be 4-d");
    if (tw.dim(1) * groups != tx.dim(1))
        throw StructuralError("conv2d: weight expects " + std::to_string(tw.dim(1) * groups) +
                              " input channels, got " + std::to_string(tx.dim(1)));
    if (tw.dim(2) != tw.dim(3)) throw StructuralError("conv2d: non-square kernel");
    const auto d = kernels::conv_dims(tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3), tw.dim(0),
                                      tw.dim(2), stride, pad, dilation, groups);
    Tensor<T> out({d.batch, d.c_out, d.ho, d.wo});
    std::vector<T> col;
    kernels::conv2d_forward(tx.data(), tw.data(), out.data(), d, col);
    return g.add_node("conv2d", {x, w}, std::move(out), [d](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        const auto& in = g.node(self).inputs;
        auto* dx = g.grad_accum(in[0]);
        auto* dw = g.grad_accum(in[1]);
        if (!dx && !dw) return;
        std::vector<T> col;
        kernels::conv2d_backward(g.value(in[0]).data(), g.value(in[1]).data(), up.data(),
                                 dx ? dx->data() : nullptr, dw ? dw->data() : nullptr, d, col);
    });
}

template <typename T>
NodeId<T> max_pool2d(Graph<T>& g, NodeId<T> x, int kernel, int stride, int pad) {
    const Tensor<T>& tx = g.value(x);
    if (tx.ndim() != 4) throw StructuralError("max_pool2d: input must be 4-d");
    const auto d = kernels::pool_dims(tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3), kernel, stride,
                                      pad);
    Tensor<T> out({d.batch, d.channels, d.ho, d.wo});
    auto argmax = std::make_shared<std::vector<int32_t>>(out.numel());
    kernels::max_pool_forward(tx.data(), out.data(), argmax->data(), d);
    if (g.kink_tracking()) {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const int32_t a : *argmax)
            h = (h ^ static_cast<uint64_t>(a + 1)) * 0x100000001b3ULL;
        g.sig_mix(h);
    }
    return g.add_node("max_pool2d", {x}, std::move(out),
                      [d, argmax](Graph<T>& g, NodeId<T> self) {
                          const auto& up = g.node(self).value.grad();
                          if (auto* acc = g.grad_accum(g.node(self).inputs[0]))
                              kernels::max_pool_backward(up.data(), argmax->data(), acc->data(),
                                                         d);
                      });
}

template <typename T>
NodeId<T> avg_pool2d(Graph<T>& g, NodeId<T> x, int kernel, int stride, int pad) {
    const Tensor<T>& tx = g.value(x);
    if (tx.ndim() != 4) throw StructuralError("avg_pool2d: input must be 4-d");
    const auto d = kernels::pool_dims(tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3), kernel, stride,
                                      pad);
    Tensor<T> out({d.batch, d.channels, d.ho, d.wo});
    kernels::avg_pool_forward(tx.data(), out.data(), d);
    return g.add_node("avg_pool2d", {x}, std::move(out), [d](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        if (auto* acc = g.grad_accum(g.node(self).inputs[0]))
            kernels::avg_pool_backward(up.data(), acc->data(), d);
    });
}

// Batch normalization without learnable affine parameters.
template <typename T>
NodeId<T> static_bn(Graph<T>& g, NodeId<T> x, double eps) {
    const Tensor<T>& tx = g.value(x);
    if (tx.ndim() != 4) throw StructuralError("static_bn: input must be 4-d");
    if (tx.dim(0) * tx.dim(2) * tx.dim(3) < 2)
        throw StructuralError("static_bn: needs at least 2 samples per channel");
    const int batch = tx.dim(0), channels = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
    Tensor<T> out(tx.shape());
    auto inv_std = std::make_shared<std::vector<T>>(channels);
    kernels::static_bn_forward(tx.data(), out.data(), batch, channels, h, w, eps,
                               inv_std->data());
    return g.add_node("static_bn", {x}, std::move(out),
                      [batch, channels, h, w, inv_std](Graph<T>& g, NodeId<T> self) {
                          const auto& up = g.node(self).value.grad();
                          const auto& xhat = g.node(self).value.values();
                          if (auto* acc = g.grad_accum(g.node(self).inputs[0]))
                              kernels::static_bn_backward(xhat.data(), up.data(),
                                                          inv_std->data(), acc->data(), batch,
                                                          channels, h, w);
                      });
}

template <typename T>
NodeId<T> concat_channels(Graph<T>& g, std::span<const NodeId<T>> xs) {
    if (xs.empty()) throw StructuralError("concat: no inputs");
    const Tensor<T>& t0 = g.value(xs[0]);
    if (t0.ndim() != 4) throw StructuralError("concat: input must be 4-d");
    int c_total = 0;
    for (NodeId<T> x : xs) {
        const Tensor<T>& t = g.value(x);
        if (t.dim(0) != t0.dim(0) || t.dim(2) != t0.dim(2) || t.dim(3) != t0.dim(3))
            throw StructuralError("concat: mismatched batch/spatial dims");
        c_total += t.dim(1);
    }
    const int batch = t0.dim(0), h = t0.dim(2), w = t0.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    Tensor<T> out({batch, c_total, h, w});
    for (int b = 0; b < batch; ++b) {
        size_t off = static_cast<size_t>(b) * c_total * plane;
        for (NodeId<T> x : xs) {
            const Tensor<T>& t = g.value(x);
            const size_t n = static_cast<size_t>(t.dim(1)) * plane;
            std::copy_n(t.data() + static_cast<size_t>(b) * n, n, out.data() + off);
            off += n;
        }
    }
    return g.add_node("concat", std::vector<NodeId<T>>(xs.begin(), xs.end()), std::move(out),
                      [batch, c_total, plane](Graph<T>& g, NodeId<T> self) {
                          const auto& up = g.node(self).value.grad();
                          size_t coff = 0;
                          for (NodeId<T> in : g.node(self).inputs) {
                              const size_t n =
                                  static_cast<size_t>(g.value(in).dim(1)) * plane;
                              if (auto* acc = g.grad_accum(in)) {
                                  for (int b = 0; b < batch; ++b) {
                                      const T* src =
                                          up.data() + static_cast<size_t>(b) * c_total * plane +
                                          coff;
                                      T* dst = acc->data() + static_cast<size_t>(b) * n;
                                      for (size_t i = 0; i < n; ++i) dst[i] += src[i];
                                  }
                              }
                              coff += n;
                          }
                      });
}

template <typename T>
NodeId<T> global_avg_pool(Graph<T>& g, NodeId<T> x) {
    const Tensor<T>& tx = g.value(x);
    if (tx.ndim() != 4) throw StructuralError("global_avg_pool: input must be 4-d");
    const int batch = tx.dim(0), channels = tx.dim(1);
    const size_t plane = static_cast<size_t>(tx.dim(2)) * tx.dim(3);
    Tensor<T> out({batch, channels});
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
            const T* p = tx.data() + (static_cast<size_t>(b) * channels + c) * plane;
            double s = 0.0;
            for (size_t i = 0; i < plane; ++i) s += static_cast<double>(p[i]);
            out.values()[static_cast<size_t>(b) * channels + c] =
                static_cast<T>(s / static_cast<double>(plane));
        }
    return g.add_node("global_avg_pool", {x}, std::move(out),
                      [batch, channels, plane](Graph<T>& g, NodeId<T> self) {
                          const auto& up = g.node(self).value.grad();
                          if (auto* acc = g.grad_accum(g.node(self).inputs[0])) {
                              const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
                              for (int b = 0; b < batch; ++b)
                                  for (int c = 0; c < channels; ++c) {
                                      const T gv =
                                          up[static_cast<size_t>(b) * channels + c] * inv;
                                      T* p = acc->data() +
                                             (static_cast<size_t>(b) * channels + c) * plane;
                                      for (size_t i = 0; i < plane; ++i) p[i] += gv;
                                  }
                          }
                      });
}

// y = x W^T + b with x [batch, features], W [out, features], b [out].
template <typename T>
NodeId<T> linear(Graph<T>& g, NodeId<T> x, NodeId<T> w, NodeId<T> b) {
    const Tensor<T>& tx = g.value(x);
    const Tensor<T>& tw = g.value(w);
    const Tensor<T>& tb = g.value(b);
    if (tx.ndim() != 2 || tw.ndim() != 2 || tb.ndim() != 1)
        throw StructuralError("linear: expects x[b,f], w[o,f], b[o]");
    if (tx.dim(1) != tw.dim(1) || tw.dim(0) != tb.dim(0))
        throw StructuralError("linear: dimension mismatch");
    const int batch = tx.dim(0), features = tx.dim(1), out_dim = tw.dim(0);
    Tensor<T> out({batch, out_dim});
    kernels::gemm_bt(batch, out_dim, features, tx.data(), tw.data(), out.data(), false);
    for (int i = 0; i < batch; ++i)
        for (int o = 0; o < out_dim; ++o)
            out.values()[static_cast<size_t>(i) * out_dim + o] += tb.values()[o];
    return g.add_node(
        "linear", {x, w, b}, std::move(out),
        [batch, features, out_dim](Graph<T>& g, NodeId<T> self) {
            const auto& up = g.node(self).value.grad();
            const auto& in = g.node(self).inputs;
            if (auto* dx = g.grad_accum(in[0]))
                kernels::gemm(batch, features, out_dim, up.data(), g.value(in[1]).data(),
                              dx->data(), true);
            if (auto* dw = g.grad_accum(in[1]))
                kernels::gemm_at(out_dim, features, batch, up.data(), g.value(in[0]).data(),
                                 dw->data(), true);
            if (auto* db = g.grad_accum(in[2]))
                for (int i = 0; i < batch; ++i)
                    for (int o = 0; o < out_dim; ++o)
                        (*db)[static_cast<size_t>(o)] +=
                            up[static_cast<size_t>(i) * out_dim + o];
        });
}

// Mean softmax cross-entropy over the batch; labels are class indices.
template <typename T>
NodeId<T> softmax_cross_entropy(Graph<T>& g, NodeId<T> logits, std::vector<int> labels) {
    const Tensor<T>& tl = g.value(logits);
    if (tl.ndim() != 2) throw StructuralError("cross_entropy: logits must be [batch, classes]");
    const int batch = tl.dim(0), classes = tl.dim(1);
    if (static_cast<int>(labels.size()) != batch)
        throw StructuralError("cross_entropy: " + std::to_string(labels.size()) +
                              " labels for batch " + std::to_string(batch));
    for (int lbl : labels)
        if (lbl < 0 || lbl >= classes)
            throw StructuralError("cross_entropy: label out of range");
    auto probs = std::make_shared<std::vector<T>>(tl.values().size());
    double loss = 0.0;
    for (int i = 0; i < batch; ++i) {
        const T* row = tl.data() + static_cast<size_t>(i) * classes;
        T* prow = probs->data() + static_cast<size_t>(i) * classes;
        T mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int c = 0; c < classes; ++c) {
            const double e = std::exp(static_cast<double>(row[c] - mx));
            prow[c] = static_cast<T>(e);
            denom += e;
        }
        for (int c = 0; c < classes; ++c)
            prow[c] = static_cast<T>(static_cast<double>(prow[c]) / denom);
        loss -= std::log(std::max(static_cast<double>(prow[labels[static_cast<size_t>(i)]]),
                                  1e-300));
    }
    loss /= batch;
    return g.add_node(
        "cross_entropy", {logits}, Tensor<T>::scalar(static_cast<T>(loss)),
        [batch, classes, probs, labels = std::move(labels)](Graph<T>& g, NodeId<T> self) {
            const T up = g.node(self).value.grad()[0];
            if (auto* acc = g.grad_accum(g.node(self).inputs[0])) {
                const T invb = static_cast<T>(1.0 / batch);
                for (int i = 0; i < batch; ++i) {
                    T* dst = acc->data() + static_cast<size_t>(i) * classes;
                    const T* p = probs->data() + static_cast<size_t>(i) * classes;
                    for (int c = 0; c < classes; ++c) {
                        T v = p[c];
                        if (c == labels[static_cast<size_t>(i)]) v -= T{1};
                        dst[c] += up * v * invb;
                    }
                }
            }
        });
}

// Softmax over a 1-d vector, computed with max subtraction.
template <typename T>
NodeId<T> softmax(Graph<T>& g, NodeId<T> x) {
    const Tensor<T>& tx = g.value(x);
    if (tx.ndim() != 1) throw StructuralError("softmax: expects a 1-d vector");
    const auto& xv = tx.values();
    Tensor<T> out(tx.shape());
    T mx = xv[0];
    for (const T v : xv) mx = std::max(mx, v);
    double denom = 0.0;
    for (size_t i = 0; i < xv.size(); ++i) {
        const double e = std::exp(static_cast<double>(xv[i] - mx));
        out.values()[i] = static_cast<T>(e);
        denom += e;
    }
    for (auto& v : out.values()) v = static_cast<T>(static_cast<double>(v) / denom);
    return g.add_node("softmax", {x}, std::move(out), [](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        const auto& s = g.node(self).value.values();
        if (auto* acc = g.grad_accum(g.node(self).inputs[0])) {
            double dot = 0.0;
            for (size_t i = 0; i < s.size(); ++i)
                dot += static_cast<double>(up[i]) * static_cast<double>(s[i]);
            for (size_t i = 0; i < s.size(); ++i)
                (*acc)[i] += static_cast<T>(static_cast<double>(s[i]) *
                                            (static_cast<double>(up[i]) - dot));
        }
    });
}

// y = sum_i weights[i] * xs[i]; the mixed-edge primitive.
template <typename T>
NodeId<T> weighted_sum(Graph<T>& g, std::span<const NodeId<T>> xs, NodeId<T> weights) {
    if (xs.empty()) throw StructuralError("weighted_sum: no inputs");
    const Tensor<T>& tw = g.value(weights);
    if (tw.ndim() != 1 || tw.dim(0) != static_cast<int>(xs.size()))
        throw StructuralError("weighted_sum: " + std::to_string(xs.size()) + " terms but " +
                              std::to_string(tw.numel()) + " weights");
    for (size_t i = 1; i < xs.size(); ++i) check_same_shape(g, xs[0], xs[i], "weighted_sum");
    Tensor<T> out(g.value(xs[0]).shape());
    auto& ov = out.values();
    for (size_t k = 0; k < xs.size(); ++k) {
        const T wk = tw.values()[k];
        const auto& xv = g.value(xs[k]).values();
        for (size_t i = 0; i < ov.size(); ++i) ov[i] += wk * xv[i];
    }
    std::vector<NodeId<T>> inputs(xs.begin(), xs.end());
    inputs.push_back(weights);
    return g.add_node("weighted_sum", std::move(inputs), std::move(out),
                      [](Graph<T>& g, NodeId<T> self) {
                          const auto& up = g.node(self).value.grad();
                          const auto& in = g.node(self).inputs;
                          const size_t terms = in.size() - 1;
                          const NodeId<T> wid = in[terms];
                          const auto& wv = g.value(wid).values();
                          auto* dw = g.grad_accum(wid);
                          for (size_t k = 0; k < terms; ++k) {
                              const auto& xv = g.value(in[k]).values();
                              if (auto* dx = g.grad_accum(in[k])) {
                                  const T wk = wv[k];
                                  for (size_t i = 0; i < up.size(); ++i)
                                      (*dx)[i] += wk * up[i];
                              }
                              if (dw) {
                                  double dot = 0.0;
                                  for (size_t i = 0; i < up.size(); ++i)
                                      dot += static_cast<double>(up[i]) *
                                             static_cast<double>(xv[i]);
                                  (*dw)[k] += static_cast<T>(dot);
                              }
                          }
                      });
}

// Extracts row r of a 2-d tensor as a 1-d vector.
template <typename T>
NodeId<T> matrix_row(Graph<T>& g, NodeId<T> m, int r) {
    const Tensor<T>& tm = g.value(m);
    if (tm.ndim() != 2) throw StructuralError("matrix_row: expects a matrix");
    if (r < 0 || r >= tm.dim(0)) throw StructuralError("matrix_row: row out of range");
    const int cols = tm.dim(1);
    Tensor<T> out({cols});
    std::copy_n(tm.data() + static_cast<size_t>(r) * cols, cols, out.data());
    return g.add_node("matrix_row", {m}, std::move(out), [r, cols](Graph<T>& g, NodeId<T> self) {
        const auto& up = g.node(self).value.grad();
        if (auto* acc = g.grad_accum(g.node(self).inputs[0]))
            for (int i = 0; i < cols; ++i)
                (*acc)[static_cast<size_t>(r) * cols + i] += up[static_cast<size_t>(i)];
    });
}

// All-zeros constant with no dependence on anything.
template <typename T>
NodeId<T> zeros(Graph<T>& g, std::vector<int> shape) {
    return g.constant(Tensor<T>(std::move(shape)), "zeros");
}

// Drops the first row and column of the spatial plane (used by the
// factorized-reduce pixel-shift path).
template <typename T>
NodeId<T> crop_tl(Graph<T>& g, NodeId<T> x) {
    const Tensor<T>& tx = g.value(x);
    if (tx.ndim() != 4) throw StructuralError("crop_tl: input must be 4-d");
    const int batch = tx.dim(0), channels = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
    if (h < 2 || w < 2) throw StructuralError("crop_tl: spatial dims too small");
    Tensor<T> out({batch, channels, h - 1, w - 1});
    for (int bc = 0; bc < batch * channels; ++bc) {
        const T* src = tx.data() + static_cast<size_t>(bc) * h * w;
        T* dst = out.data() + static_cast<size_t>(bc) * (h - 1) * (w - 1);
        for (int y = 1; y < h; ++y)
            for (int xw = 1; xw < w; ++xw) *dst++ = src[static_cast<size_t>(y) * w + xw];
    }
    return g.add_node("crop_tl", {x}, std::move(out),
                      [batch, channels, h, w](Graph<T>& g, NodeId<T> self) {
                          const auto& up = g.node(self).value.grad();
                          if (auto* acc = g.grad_accum(g.node(self).inputs[0])) {
                              const T* src = up.data();
                              for (int bc = 0; bc < batch * channels; ++bc) {
                                  T* dst = acc->data() + static_cast<size_t>(bc) * h * w;
                                  for (int y = 1; y < h; ++y)
                                      for (int xw = 1; xw < w; ++xw)
                                          dst[static_cast<size_t>(y) * w + xw] += *src++;
                              }
                          }
                      });
}

}  // namespace ops
}  // namespace microdarts
