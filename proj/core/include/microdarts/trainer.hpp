#pragma once

// First-order bilevel search: one SGD step on the weights per train batch,
// one plain-SGD step on alpha per validation batch once the warmup freeze
// ends. Per-epoch diagnostics are recorded along the way.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "microdarts/dataio.hpp"
#include "microdarts/diagnostics.hpp"
#include "microdarts/params.hpp"
#include "microdarts/supernet.hpp"

namespace microdarts {

enum class Precision { f32, f64 };

inline std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }
inline Precision precision_from_string(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw ConfigError("precision must be f32|f64, got '" + s + "'");
}

struct TrainConfig {
    int epochs = 50;
    int batch_size = 16;
    double lr_w_max = 0.025;
    double lr_w_min = 0.001;
    double momentum = 0.9;
    double weight_decay_w = 3e-4;
    double lr_alpha = 3e-3;
    double weight_decay_alpha = 1e-3;
    int freeze_epochs = -1;  // -1: 30% of epochs
    uint64_t seed = 1;
    NodeNormMode mode = NodeNormMode::off;
    Precision precision = Precision::f32;
    int diag_interval = 10;

    int resolved_freeze() const {
        return freeze_epochs >= 0 ? freeze_epochs
                                  : static_cast<int>(std::floor(0.3 * epochs));
    }

    void validate() const {
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (lr_w_max <= 0 || lr_w_min <= 0 || lr_alpha <= 0)
            throw ConfigError("train: learning rates must be positive");
        if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum in [0,1)");
        if (epochs > 0 && resolved_freeze() >= epochs)
            throw ConfigError("train: freeze_epochs must be < epochs");
        if (diag_interval < 1) throw ConfigError("train: diag_interval must be >= 1");
    }
};

// lr_min + (lr_max - lr_min) * (1 + cos(pi t / T)) / 2
inline double cosine_lr(int t, int total, double lr_max, double lr_min) {
    if (total <= 0 || t < 0 || t > total)
        throw StructuralError("cosine_lr: need 0 <= t <= T with T > 0");
    return lr_min + 0.5 * (lr_max - lr_min) *
                        (1.0 + std::cos(std::numbers::pi * t / total));
}

struct EpochMetrics {
    double loss_w = 0.0;
    double loss_alpha = 0.0;
    double accuracy = 0.0;  // on the weight-train batches
};

template <typename T>
struct SearchResult {
    ArchParams<T> arch;
    std::vector<DiagRecord> history;
    std::vector<CorrelationSnapshot> correlations;
};

namespace detail {

inline int argmax_row(const float* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

template <typename T>
int correct_count(const Tensor<T>& logits, const std::vector<int>& labels) {
    int correct = 0;
    const int classes = logits.dim(1);
    for (int i = 0; i < logits.dim(0); ++i) {
        const T* row = logits.data() + static_cast<size_t>(i) * classes;
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (row[c] > row[best]) best = c;
        if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
    return correct;
}

template <typename T>
std::vector<std::span<const T>> leaf_grads(Graph<T>& g,
                                           const std::vector<typename Graph<T>::NodeId>& ids) {
    std::vector<std::span<const T>> grads;
    grads.reserve(ids.size());
    for (auto id : ids) grads.push_back(g.grad(id));
    return grads;
}

}  // namespace detail

template <typename T>
class Trainer {
public:
    Trainer(SuperNet<T>& net, const TrainConfig& cfg, const Dataset& data, const Split& split)
        : net_(net), cfg_(cfg), data_(data), split_(split) {
        cfg_.validate();
        arch_ = net_.init_arch();
    }

    const ArchParams<T>& arch() const { return arch_; }
    ArchParams<T>& arch() { return arch_; }

    // One epoch of paired (weight batch, alpha batch) steps. The alpha stream
    // cycles independently when it is shorter than the weight stream.
    EpochMetrics train_epoch(int epoch, ForwardProbe* probe = nullptr) {
        const double lr_w = cosine_lr(epoch, cfg_.epochs, cfg_.lr_w_max, cfg_.lr_w_min);
        const bool update_alpha = epoch >= cfg_.resolved_freeze();
        auto w_batches =
            epoch_batches(split_.train_w, SplitTag::train_w, epoch, cfg_.batch_size, cfg_.seed);
        auto a_batches = epoch_batches(split_.train_alpha, SplitTag::train_alpha, epoch,
                                       cfg_.batch_size, cfg_.seed);

        EpochMetrics m;
        int samples = 0, correct = 0, alpha_steps = 0;
        for (size_t i = 0; i < w_batches.size(); ++i) {
            const Batch& wb = w_batches[i];
            if (wb.tag != SplitTag::train_w)
                throw StateError("trainer: weight step got a batch from the wrong split");
            const bool last = i + 1 == w_batches.size();
            try {
                m.loss_w += weight_step(wb, lr_w, last ? probe : nullptr, &correct);
                samples += static_cast<int>(wb.indices.size());
                if (update_alpha) {
                    const Batch& ab = a_batches[i % a_batches.size()];
                    if (ab.tag != SplitTag::train_alpha)
                        throw StateError("trainer: alpha step got a batch from the wrong split");
                    m.loss_alpha += alpha_step(ab);
                    ++alpha_steps;
                }
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(i) +
                                   ")");
            }
        }
        m.loss_w /= static_cast<double>(w_batches.size());
        if (alpha_steps > 0) m.loss_alpha /= static_cast<double>(alpha_steps);
        m.accuracy = samples > 0 ? static_cast<double>(correct) / samples : 0.0;
        return m;
    }

    // Full search run. Capture for correlation snapshots happens on the first
    // weight batch of every diag_interval-th epoch.
    SearchResult<T> search() {
        SearchResult<T> result;
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            ForwardProbe probe;
            EpochMetrics m = train_epoch(epoch, &probe);
            DiagRecord rec = make_diag_record(epoch, m, probe);
            result.history.push_back(std::move(rec));
            if (epoch % cfg_.diag_interval == 0)
                result.correlations.push_back(correlation_snapshot(epoch));
        }
        result.arch = arch_;
        return result;
    }

    // Mean softmax weight of one op column over all edges of both matrices.
    double mean_softmax_weight(int op_index) const {
        if (op_index < 0) return 0.0;
        const int edges = net_.alpha_edges();
        const int m = net_.space().size();
        double total = 0.0;
        for (const Tensor<T>* mat : {&arch_.normal, &arch_.reduce}) {
            for (int e = 0; e < edges; ++e) {
                const T* row = mat->data() + static_cast<size_t>(e) * m;
                double mx = -1e300;
                for (int o = 0; o < m; ++o) mx = std::max(mx, static_cast<double>(row[o]));
                double denom = 0.0, num = 0.0;
                for (int o = 0; o < m; ++o) {
                    const double w = std::exp(static_cast<double>(row[o]) - mx);
                    denom += w;
                    if (o == op_index) num = w;
                }
                total += num / denom;
            }
        }
        return total / (2.0 * edges);
    }

    DiagRecord make_diag_record(int epoch, const EpochMetrics& m,
                                const ForwardProbe& probe) const {
        DiagRecord rec;
        rec.epoch = epoch;
        rec.loss_w = m.loss_w;
        rec.loss_alpha = m.loss_alpha;
        rec.accuracy = m.accuracy;
        rec.lr_w = cosine_lr(epoch, cfg_.epochs, cfg_.lr_w_max, cfg_.lr_w_min);
        rec.zero_ratio = mean_softmax_weight(net_.space().zero_index());
        rec.skip_ratio = mean_softmax_weight(net_.space().identity_index());
        for (const auto& cell : probe.cells) {
            rec.raw_norms.push_back(cell.raw_norms);
            rec.eff_norms.push_back(cell.eff_norms);
        }
        return rec;
    }

    // Activation capture over the first weight batch of the epoch, used for
    // correlation matrices during the search.
    CorrelationSnapshot correlation_snapshot(int epoch) {
        ActivationStore store;
        auto batches = epoch_batches(split_.train_w, SplitTag::train_w, epoch,
                                     cfg_.batch_size, cfg_.seed);
        run_forward(batches[0], false, false, nullptr, &store);
        CorrelationSnapshot snap;
        snap.epoch = epoch;
        snap.matrices = all_correlation_matrices(store, net_.space(), net_.config().nodes);
        return snap;
    }

    // Evaluation without gradients; returns (mean loss, accuracy).
    std::pair<double, double> evaluate(const std::vector<int>& indices) {
        if (indices.empty()) throw InputError("evaluate: empty index list");
        auto batches = epoch_batches(indices, SplitTag::test, 0, cfg_.batch_size, cfg_.seed);
        double loss = 0.0;
        int correct = 0, samples = 0;
        for (const Batch& b : batches) {
            Graph<T> g;
            auto bound = net_.bind(g, arch_, false, false);
            typename SuperNet<T>::ForwardOpts opts;
            opts.mode = cfg_.mode;
            auto logits = net_.forward(g, bound, gather_images(data_, b.indices).template cast<T>(), opts);
            auto labels = gather_labels(data_, b.indices);
            loss += g.value(ops::softmax_cross_entropy(g, logits, labels)).values()[0] *
                    static_cast<double>(b.indices.size());
            correct += detail::correct_count(g.value(logits), labels);
            samples += static_cast<int>(b.indices.size());
        }
        return {loss / samples, static_cast<double>(correct) / samples};
    }

private:
    double run_forward(const Batch& batch, bool train_w, bool train_alpha, ForwardProbe* probe,
                       ActivationStore* capture, Graph<T>* out_graph = nullptr,
                       typename SuperNet<T>::Bound* out_bound = nullptr,
                       std::vector<int>* out_labels = nullptr) {
        Graph<T> local;
        Graph<T>& g = out_graph ? *out_graph : local;
        auto bound = net_.bind(g, arch_, train_w, train_alpha);
        typename SuperNet<T>::ForwardOpts opts;
        opts.mode = cfg_.mode;
        opts.probe = probe;
        opts.capture = capture;
        auto images = gather_images(data_, batch.indices).template cast<T>();
        auto logits = net_.forward(g, bound, images, opts);
        auto labels = gather_labels(data_, batch.indices);
        auto loss = ops::softmax_cross_entropy(g, logits, labels);
        if (out_bound) *out_bound = bound;
        if (out_labels) *out_labels = labels;
        if (out_graph) {
            last_logits_ = logits;
            last_loss_ = loss;
        }
        return g.value(loss).values()[0];
    }

    double weight_step(const Batch& batch, double lr_w, ForwardProbe* probe, int* correct) {
        Graph<T> g;
        typename SuperNet<T>::Bound bound;
        std::vector<int> labels;
        const double loss = run_forward(batch, true, false, probe, nullptr, &g, &bound, &labels);
        if (correct) *correct += detail::correct_count(g.value(last_logits_), labels);
        g.backward(last_loss_);
        // alpha is frozen in this graph: its gradient must be exactly zero
        for (T v : g.grad(bound.alpha_normal))
            if (v != T{0}) throw StateError("trainer: alpha gradient leaked into weight step");
        auto grads = detail::leaf_grads(g, bound.params);
        sgd_step(net_.params(), grads, w_state_, lr_w, cfg_.momentum, cfg_.weight_decay_w);
        return loss;
    }

    double alpha_step(const Batch& batch) {
        Graph<T> g;
        typename SuperNet<T>::Bound bound;
        const double loss = run_forward(batch, false, true, nullptr, nullptr, &g, &bound);
        g.backward(last_loss_);
        // first-order update only: no weight gradient may flow here
        for (auto id : bound.params)
            for (T v : g.grad(id))
                if (v != T{0})
                    throw StateError("trainer: weight gradient leaked into alpha step");
        ParamStore<T> alpha_params;
        alpha_params.add("alpha_normal", arch_.normal);
        alpha_params.add("alpha_reduce", arch_.reduce);
        std::vector<std::span<const T>> grads{g.grad(bound.alpha_normal),
                                              g.grad(bound.alpha_reduce)};
        sgd_step(alpha_params, grads, alpha_state_, cfg_.lr_alpha, 0.0,
                 cfg_.weight_decay_alpha);
        arch_.normal = alpha_params.at("alpha_normal");
        arch_.reduce = alpha_params.at("alpha_reduce");
        return loss;
    }

    SuperNet<T>& net_;
    TrainConfig cfg_;
    const Dataset& data_;
    const Split& split_;
    ArchParams<T> arch_;
    SgdState<T> w_state_;
    SgdState<T> alpha_state_;
    typename Graph<T>::NodeId last_logits_ = -1;
    typename Graph<T>::NodeId last_loss_ = -1;
};

}  // namespace microdarts
