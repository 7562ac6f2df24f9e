#include "microdarts/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "MDRT and IDRT files are little-endian; big-endian hosts are unsupported");

namespace microdarts {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'R', 'T'};
constexpr uint32_t kVersion = 1;

template <typename V>
void put(std::string& out, V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out.append(buf, sizeof(V));
}

template <typename V>
V take(const std::string& in, size_t& off, const char* what) {
    if (off + sizeof(V) > in.size())
        throw InputError(std::string("checkpoint: truncated reading ") + what + " at byte " +
                         std::to_string(off));
    V v;
    std::memcpy(&v, in.data() + off, sizeof(V));
    off += sizeof(V);
    return v;
}

}  // namespace

const Tensor<float>& CheckpointData::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw InputError("checkpoint: missing tensor " + name);
}

bool CheckpointData::has_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::string out;
    out.append(kMagic, 4);
    put<uint32_t>(out, kVersion);
    put<uint32_t>(out, static_cast<uint32_t>(data.config_text.size()));
    out.append(data.config_text);
    for (const auto& [name, t] : data.tensors) {
        if (name.size() > 0xFFFF) throw StructuralError("checkpoint: tensor name too long");
        put<uint16_t>(out, static_cast<uint16_t>(name.size()));
        out.append(name);
        put<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) put<uint32_t>(out, static_cast<uint32_t>(d));
        out.append(reinterpret_cast<const char*>(t.data()), t.values().size() * sizeof(float));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("checkpoint: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw InputError("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("checkpoint: cannot open " + path);
    std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    size_t off = 0;
    if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0)
        throw InputError("checkpoint: bad magic at byte 0 in " + path);
    off = 4;
    const auto version = take<uint32_t>(in, off, "version");
    if (version != kVersion)
        throw InputError("checkpoint: unsupported version " + std::to_string(version));
    const auto cfg_len = take<uint32_t>(in, off, "config length");
    if (off + cfg_len > in.size())
        throw InputError("checkpoint: truncated config block at byte " + std::to_string(off));
    CheckpointData data;
    data.config_text = in.substr(off, cfg_len);
    off += cfg_len;
    while (off < in.size()) {
        const auto name_len = take<uint16_t>(in, off, "tensor name length");
        if (off + name_len > in.size())
            throw InputError("checkpoint: truncated tensor name at byte " +
                             std::to_string(off));
        std::string name = in.substr(off, name_len);
        off += name_len;
        const auto ndim = take<uint32_t>(in, off, "dim count");
        if (ndim > 8) throw InputError("checkpoint: implausible dim count for " + name);
        std::vector<int> shape;
        int64_t numel = 1;
        for (uint32_t i = 0; i < ndim; ++i) {
            const auto d = take<uint32_t>(in, off, "dim");
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        const size_t bytes = static_cast<size_t>(numel) * sizeof(float);
        if (off + bytes > in.size())
            throw InputError("checkpoint: truncated payload for " + name + ": expected " +
                             std::to_string(bytes) + " bytes at byte " + std::to_string(off) +
                             ", have " + std::to_string(in.size() - off));
        std::vector<float> values(static_cast<size_t>(numel));
        std::memcpy(values.data(), in.data() + off, bytes);
        off += bytes;
        data.tensors.emplace_back(std::move(name), Tensor<float>(shape, std::move(values)));
    }
    return data;
}

std::string alpha_to_json(const std::vector<std::vector<double>>& alpha_normal,
                          const std::vector<std::vector<double>>& alpha_reduce,
                          const SearchSpace& space, int nodes) {
    nlohmann::json j;
    j["space"] = space.name;
    nlohmann::json opnames = nlohmann::json::array();
    for (const auto& k : space.ops) opnames.push_back(k.name());
    j["ops"] = std::move(opnames);
    nlohmann::json edges = nlohmann::json::array();
    for (const EdgeRef& e : enumerate_edges(nodes))
        edges.push_back({{"node", e.target}, {"source", e.source}});
    j["edges"] = std::move(edges);
    j["alpha_normal"] = alpha_normal;
    j["alpha_reduce"] = alpha_reduce;
    return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot open " + path + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw InputError("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace microdarts
