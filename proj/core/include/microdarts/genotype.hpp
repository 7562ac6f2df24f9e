#pragma once

// The discretized architecture: per cell type and node, exactly K
// (predecessor, operation) selections. Serializes to JSON and Graphviz DOT.

#include <string>
#include <vector>

#include "microdarts/ops.hpp"

namespace microdarts {

struct GenotypeSelection {
    int pred = 0;  // 0,1 are the cell inputs; j+2 is intermediate node j
    OpKind op;
};

struct Genotype {
    std::vector<std::vector<GenotypeSelection>> normal;  // [node][k]
    std::vector<std::vector<GenotypeSelection>> reduce;
    std::string space_name;
    int nodes = 0;
    int k = 0;

    // Enforces the structural invariants: exactly k selections per node,
    // distinct predecessors, no zero op, predecessors in range, every op
    // present in `space`.
    void validate(const SearchSpace& space) const;
};

std::string genotype_to_json(const Genotype& g);
Genotype genotype_from_json(const std::string& text);
std::string genotype_to_dot(const Genotype& g);

}  // namespace microdarts
