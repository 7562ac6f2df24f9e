#pragma once

// Flattened activation vectors collected from forward passes over the
// discretization subset. Everything is accumulated in double regardless of
// the run precision; vectors concatenate across batches in call order.

#include <cstdint>
#include <span>
#include <vector>

#include "microdarts/errors.hpp"

namespace microdarts {

struct ActivationStore {
    struct Dims {
        int batch = 0, channels = 0, h = 0, w = 0;
    };

    int cells = 0, nodes = 0, edges = 0, ops = 0;
    std::vector<bool> cell_is_reduction;     // per cell
    std::vector<Dims> node_dims;             // per cell; batch accumulates
    std::vector<std::vector<double>> op_out;   // [cell][edge][op], flattened
    std::vector<std::vector<double>> mixed;    // [cell][edge]
    std::vector<std::vector<double>> node_sum; // [cell][node]

    void init(int n_cells, int n_nodes, int n_edges, int n_ops) {
        cells = n_cells;
        nodes = n_nodes;
        edges = n_edges;
        ops = n_ops;
        cell_is_reduction.assign(static_cast<size_t>(cells), false);
        node_dims.assign(static_cast<size_t>(cells), {});
        op_out.assign(static_cast<size_t>(cells) * edges * ops, {});
        mixed.assign(static_cast<size_t>(cells) * edges, {});
        node_sum.assign(static_cast<size_t>(cells) * nodes, {});
    }

    bool empty() const { return cells == 0; }

    size_t op_index(int cell, int edge, int op) const {
        return (static_cast<size_t>(cell) * edges + edge) * ops + op;
    }
    size_t edge_index(int cell, int edge) const {
        return static_cast<size_t>(cell) * edges + edge;
    }
    size_t node_index(int cell, int node) const {
        return static_cast<size_t>(cell) * nodes + node;
    }

    const std::vector<double>& op_vec(int cell, int edge, int op) const {
        return op_out[op_index(cell, edge, op)];
    }
    const std::vector<double>& mixed_vec(int cell, int edge) const {
        return mixed[edge_index(cell, edge)];
    }
    const std::vector<double>& node_vec(int cell, int node) const {
        return node_sum[node_index(cell, node)];
    }

    template <typename T>
    static void append(std::vector<double>& dst, std::span<const T> values) {
        dst.reserve(dst.size() + values.size());
        for (const T v : values) dst.push_back(static_cast<double>(v));
    }

    void note_batch(int cell, int batch, int channels, int h, int w) {
        Dims& d = node_dims[static_cast<size_t>(cell)];
        if (d.channels == 0) {
            d = {batch, channels, h, w};
        } else {
            if (d.channels != channels || d.h != h || d.w != w)
                throw StructuralError("activations: inconsistent node shape across batches");
            d.batch += batch;
        }
    }
};

}  // namespace microdarts
