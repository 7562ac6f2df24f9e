#include "microdarts/genotype.hpp"

#include <set>
#include <sstream>

#include <json.hpp>

namespace microdarts {

void Genotype::validate(const SearchSpace& space) const {
    auto check_cell = [&](const std::vector<std::vector<GenotypeSelection>>& cell,
                          const char* which) {
        if (static_cast<int>(cell.size()) != nodes)
            throw InputError(std::string("genotype: ") + which + " has " +
                             std::to_string(cell.size()) + " nodes, expected " +
                             std::to_string(nodes));
        for (int j = 0; j < nodes; ++j) {
            const auto& sels = cell[static_cast<size_t>(j)];
            if (static_cast<int>(sels.size()) != k)
                throw InputError(std::string("genotype: ") + which + " node " +
                                 std::to_string(j) + " has " + std::to_string(sels.size()) +
                                 " selections, expected " + std::to_string(k));
            std::set<int> preds;
            for (const auto& sel : sels) {
                if (sel.pred < 0 || sel.pred >= j + 2)
                    throw InputError("genotype: predecessor " + std::to_string(sel.pred) +
                                     " out of range for node " + std::to_string(j));
                if (!preds.insert(sel.pred).second)
                    throw InputError("genotype: duplicate predecessor " +
                                     std::to_string(sel.pred) + " at node " +
                                     std::to_string(j));
                if (sel.op.is_zero())
                    throw InputError("genotype: zero op selected at node " +
                                     std::to_string(j));
                if (space.index_of(sel.op) < 0)
                    throw InputError("genotype: op " + sel.op.name() +
                                     " not in search space " + space.name);
            }
        }
    };
    if (nodes < 1 || k < 1) throw InputError("genotype: nodes and k must be positive");
    check_cell(normal, "normal");
    check_cell(reduce, "reduce");
}

namespace {

nlohmann::json cell_to_json(const std::vector<std::vector<GenotypeSelection>>& cell) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& node : cell) {
        nlohmann::json sels = nlohmann::json::array();
        for (const auto& sel : node)
            sels.push_back({{"pred", sel.pred}, {"op", sel.op.name()}});
        arr.push_back(std::move(sels));
    }
    return arr;
}

std::vector<std::vector<GenotypeSelection>> cell_from_json(const nlohmann::json& arr) {
    std::vector<std::vector<GenotypeSelection>> cell;
    for (const auto& node : arr) {
        std::vector<GenotypeSelection> sels;
        for (const auto& s : node)
            sels.push_back({s.at("pred").get<int>(),
                            OpKind::from_name(s.at("op").get<std::string>())});
        cell.push_back(std::move(sels));
    }
    return cell;
}

void dot_cell(std::ostringstream& out, const std::vector<std::vector<GenotypeSelection>>& cell,
              const std::string& tag) {
    out << "  subgraph cluster_" << tag << " {\n";
    out << "    label=\"" << tag << "\";\n";
    out << "    " << tag << "_in0 [label=\"c_{k-2}\" shape=box];\n";
    out << "    " << tag << "_in1 [label=\"c_{k-1}\" shape=box];\n";
    for (size_t j = 0; j < cell.size(); ++j)
        out << "    " << tag << "_n" << j << " [label=\"" << j << "\"];\n";
    out << "    " << tag << "_out [label=\"c_k\" shape=box];\n";
    for (size_t j = 0; j < cell.size(); ++j) {
        for (const auto& sel : cell[j]) {
            out << "    ";
            if (sel.pred < 2)
                out << tag << "_in" << sel.pred;
            else
                out << tag << "_n" << (sel.pred - 2);
            out << " -> " << tag << "_n" << j << " [label=\"" << sel.op.name() << "\"];\n";
        }
        out << "    " << tag << "_n" << j << " -> " << tag << "_out;\n";
    }
    out << "  }\n";
}

}  // namespace

std::string genotype_to_json(const Genotype& g) {
    nlohmann::json j;
    j["normal"] = cell_to_json(g.normal);
    j["reduce"] = cell_to_json(g.reduce);
    j["space"] = g.space_name;
    j["nodes"] = g.nodes;
    j["k"] = g.k;
    return j.dump(2) + "\n";
}

Genotype genotype_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("genotype: bad json: ") + e.what());
    }
    try {
        Genotype g;
        g.normal = cell_from_json(j.at("normal"));
        g.reduce = cell_from_json(j.at("reduce"));
        g.space_name = j.at("space").get<std::string>();
        g.nodes = j.at("nodes").get<int>();
        g.k = j.at("k").get<int>();
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("genotype: missing field: ") + e.what());
    }
}

std::string genotype_to_dot(const Genotype& g) {
    std::ostringstream out;
    out << "digraph genotype {\n";
    out << "  rankdir=LR;\n";
    dot_cell(out, g.normal, "normal");
    dot_cell(out, g.reduce, "reduce");
    out << "}\n";
    return out.str();
}

}  // namespace microdarts
