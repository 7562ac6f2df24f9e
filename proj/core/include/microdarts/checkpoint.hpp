#pragma once

// MDRT checkpoint format: magic "MDRT", version u32, a length-prefixed
// config text block, then named tensors until EOF as
//   name length u16 | name bytes | dim count u32 | dims u32[] | f32 payload
// all little-endian.

#include <string>
#include <utility>
#include <vector>

#include "microdarts/params.hpp"
#include "microdarts/supernet.hpp"
#include "microdarts/tensor.hpp"

namespace microdarts {

struct CheckpointData {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Assembles a checkpoint from a trained supernet: all weights in
// registration order, then the two alpha matrices.
template <typename T>
CheckpointData make_checkpoint(const SuperNet<T>& net, const ArchParams<T>& arch,
                               std::string config_text) {
    CheckpointData data;
    data.config_text = std::move(config_text);
    for (const auto& e : net.params().entries())
        data.tensors.emplace_back(e.name, e.tensor.template cast<float>());
    data.tensors.emplace_back("alpha_normal", arch.normal.template cast<float>());
    data.tensors.emplace_back("alpha_reduce", arch.reduce.template cast<float>());
    return data;
}

// Overwrites the net's parameters and returns the stored alpha matrices.
template <typename T>
ArchParams<T> restore_checkpoint(SuperNet<T>& net, const CheckpointData& data) {
    for (auto& e : net.params().entries()) {
        const Tensor<float>& src = data.tensor(e.name);
        if (src.shape() != e.tensor.shape())
            throw InputError("checkpoint: tensor " + e.name + " has shape " +
                             shape_str(src.shape()) + ", expected " +
                             shape_str(e.tensor.shape()));
        e.tensor = src.template cast<T>();
    }
    ArchParams<T> arch;
    arch.normal = data.tensor("alpha_normal").template cast<T>();
    arch.reduce = data.tensor("alpha_reduce").template cast<T>();
    const int edges = net.alpha_edges();
    const int nops = net.space().size();
    if (arch.normal.shape() != std::vector<int>{edges, nops} ||
        arch.reduce.shape() != std::vector<int>{edges, nops})
        throw InputError("checkpoint: alpha shape does not match the network");
    return arch;
}

// alpha.json: row-major logits with edge and op labels.
std::string alpha_to_json(const std::vector<std::vector<double>>& alpha_normal,
                          const std::vector<std::vector<double>>& alpha_reduce,
                          const SearchSpace& space, int nodes);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace microdarts
