#include "microdarts/ops.hpp"

#include <unordered_set>

namespace microdarts {

std::string OpKind::name() const {
    auto k = std::to_string(kernel);
    switch (tag) {
        case OpTag::zero: return "zero";
        case OpTag::identity: return "identity";
        case OpTag::max_pool: return "max_pool_" + k + "x" + k;
        case OpTag::avg_pool: return "avg_pool_" + k + "x" + k;
        case OpTag::sep_conv: return "sep_conv_" + k + "x" + k;
        case OpTag::dil_conv: return "dil_conv_" + k + "x" + k;
    }
    throw StructuralError("op kind: unknown tag");
}

OpKind OpKind::from_name(const std::string& name) {
    if (name == "zero" || name == "none") return op_zero();
    if (name == "identity" || name == "skip_connect") return op_identity();
    auto parse_k = [&](const std::string& prefix) -> int {
        // e.g. "max_pool_3x3" -> 3
        const std::string rest = name.substr(prefix.size());
        const auto x = rest.find('x');
        if (x == std::string::npos) throw InputError("op name: bad kernel spec in " + name);
        const int k = std::stoi(rest.substr(0, x));
        if (rest != std::to_string(k) + "x" + std::to_string(k))
            throw InputError("op name: bad kernel spec in " + name);
        return k;
    };
    if (name.starts_with("max_pool_")) return op_max_pool(parse_k("max_pool_"));
    if (name.starts_with("avg_pool_")) return op_avg_pool(parse_k("avg_pool_"));
    if (name.starts_with("sep_conv_")) return op_sep_conv(parse_k("sep_conv_"));
    if (name.starts_with("dil_conv_")) return op_dil_conv(parse_k("dil_conv_"));
    throw InputError("op name: unknown operation '" + name + "'");
}

void OpKind::validate() const {
    switch (tag) {
        case OpTag::zero:
        case OpTag::identity:
            if (kernel != 0 || dilation != 1)
                throw StructuralError("op kind: " + name() + " carries no kernel parameters");
            return;
        case OpTag::max_pool:
        case OpTag::avg_pool:
            if (kernel < 1 || kernel % 2 == 0)
                throw StructuralError("op kind: pool kernel must be odd positive");
            if (dilation != 1) throw StructuralError("op kind: pools are not dilated");
            return;
        case OpTag::sep_conv:
            if (kernel < 1 || kernel % 2 == 0)
                throw StructuralError("op kind: conv kernel must be odd positive");
            if (dilation != 1) throw StructuralError("op kind: sep_conv is not dilated");
            return;
        case OpTag::dil_conv:
            if (kernel < 1 || kernel % 2 == 0)
                throw StructuralError("op kind: conv kernel must be odd positive");
            if (dilation < 1) throw StructuralError("op kind: dilation must be positive");
            return;
    }
    throw StructuralError("op kind: unknown tag");
}

int SearchSpace::index_of(const OpKind& k) const {
    for (size_t i = 0; i < ops.size(); ++i)
        if (ops[i] == k) return static_cast<int>(i);
    return -1;
}

int SearchSpace::zero_index() const { return index_of(op_zero()); }
int SearchSpace::identity_index() const { return index_of(op_identity()); }

void SearchSpace::validate() const {
    if (ops.empty()) throw StructuralError("search space: empty op list");
    std::unordered_set<std::string> seen;
    for (const OpKind& k : ops) {
        k.validate();
        if (!seen.insert(k.name()).second)
            throw StructuralError("search space: duplicate op " + k.name());
    }
}

SearchSpace SearchSpace::preset(const std::string& name) {
    SearchSpace s;
    s.name = name;
    if (name == "S1") {
        s.ops = {op_zero(),        op_identity(),    op_max_pool(3), op_avg_pool(3),
                 op_sep_conv(3),   op_sep_conv(5),   op_dil_conv(3), op_dil_conv(5)};
    } else if (name == "S2") {
        s.ops = {op_zero(), op_max_pool(3), op_avg_pool(3), op_identity(), op_sep_conv(3)};
    } else if (name == "S3") {
        s.ops = {op_zero(), op_identity(), op_sep_conv(3)};
    } else {
        throw ConfigError("search space: unknown preset '" + name + "'");
    }
    s.validate();
    return s;
}

SearchSpace SearchSpace::custom(std::vector<OpKind> ops) {
    SearchSpace s;
    s.name = "custom";
    s.ops = std::move(ops);
    s.validate();
    return s;
}

SearchSpace SearchSpace::from_names(const std::string& tag,
                                    const std::vector<std::string>& names) {
    SearchSpace s;
    s.name = tag;
    for (const auto& n : names) s.ops.push_back(OpKind::from_name(n));
    s.validate();
    return s;
}

}  // namespace microdarts
