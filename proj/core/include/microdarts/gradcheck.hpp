#pragma once

// Central-difference gradient validation. The finite-difference reference is
// always evaluated in double precision; the analytic side runs at the
// precision under test. An entry is excluded from the comparison when its two
// perturbed evaluations land on different linear pieces (a relu activation
// flips or a pool argmax moves), which covers relu inputs sitting at the
// kink: perturbing them changes the activation signature.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "microdarts/autodiff.hpp"
#include "microdarts/tensor.hpp"

namespace microdarts {

// Trainable-leaf payloads kept in double so the identical graph can be
// instantiated at any precision.
class LeafBank {
public:
    struct Entry {
        std::vector<int> shape;
        std::vector<double> values;
    };

    int add(std::vector<int> shape, std::vector<double> values) {
        if (static_cast<int64_t>(values.size()) != shape_numel(shape))
            throw StructuralError("leaf bank: value count does not match shape");
        entries_.push_back({std::move(shape), std::move(values)});
        return static_cast<int>(entries_.size()) - 1;
    }

    size_t size() const { return entries_.size(); }
    Entry& entry(size_t i) { return entries_[i]; }
    const Entry& entry(size_t i) const { return entries_[i]; }

    int64_t total_entries() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += static_cast<int64_t>(e.values.size());
        return n;
    }

    template <typename T>
    std::vector<typename Graph<T>::NodeId> bind(Graph<T>& g, bool trainable) const {
        std::vector<typename Graph<T>::NodeId> ids;
        ids.reserve(entries_.size());
        for (const Entry& e : entries_) {
            std::vector<T> cast(e.values.size());
            for (size_t i = 0; i < cast.size(); ++i) cast[i] = static_cast<T>(e.values[i]);
            ids.push_back(g.leaf(Tensor<T>(e.shape, std::move(cast)), trainable));
        }
        return ids;
    }

private:
    std::vector<Entry> entries_;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    int64_t compared = 0;
    int64_t excluded = 0;
    bool over_cap = false;
    std::string note;
};

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// build(graph, leaf_ids) must return a scalar loss node built from exactly
// the leaves bound from the bank.
template <typename T, typename BuildFn>
GradCheckReport grad_check(LeafBank bank, BuildFn&& build, double tol, int64_t cap = 2000,
                           double fd_step = 1e-4) {
    GradCheckReport report;
    if (bank.total_entries() > cap) {
        report.over_cap = true;
        report.max_rel_err = std::numeric_limits<double>::quiet_NaN();
        report.note = "trainable entry count " + std::to_string(bank.total_entries()) +
                      " exceeds cap " + std::to_string(cap);
        return report;
    }

    // Analytic gradients at the precision under test.
    std::vector<std::vector<double>> analytic;
    {
        Graph<T> g;
        auto ids = bank.bind<T>(g, true);
        auto loss = build(g, ids);
        if (g.value(loss).numel() != 1)
            throw StructuralError("grad_check: loss must be scalar");
        g.backward(loss);
        for (auto id : ids) {
            const auto& gr = g.grad(id);
            analytic.emplace_back(gr.begin(), gr.end());
        }
    }

    // Central differences in double, with activation-signature tracking.
    auto eval = [&](uint64_t* sig) -> double {
        Graph<double> g;
        g.enable_kink_tracking();
        auto ids = bank.bind<double>(g, false);
        auto loss = build(g, ids);
        *sig = g.activation_signature();
        return g.value(loss).values()[0];
    };

    for (size_t e = 0; e < bank.size(); ++e) {
        auto& values = bank.entry(e).values;
        for (size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            uint64_t sig_hi = 0, sig_lo = 0;
            values[i] = orig + fd_step;
            const double f_hi = eval(&sig_hi);
            values[i] = orig - fd_step;
            const double f_lo = eval(&sig_lo);
            values[i] = orig;
            if (sig_hi != sig_lo) {
                ++report.excluded;
                continue;
            }
            const double numeric = (f_hi - f_lo) / (2.0 * fd_step);
            report.max_rel_err = std::max(report.max_rel_err, rel_err(analytic[e][i], numeric));
            ++report.compared;
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace microdarts
