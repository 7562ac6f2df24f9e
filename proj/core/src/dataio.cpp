#include "microdarts/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "microdarts/errors.hpp"
#include "microdarts/rng.hpp"

namespace microdarts {

void Dataset::validate() const {
    if (images.numel() == 0) {
        if (!labels.empty()) throw InputError("dataset: labels without images");
        return;
    }
    if (images.ndim() != 4) throw InputError("dataset: images must be 4-d");
    if (static_cast<int>(labels.size()) != images.dim(0))
        throw InputError("dataset: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(images.dim(0)) + " images");
    for (int lbl : labels)
        if (lbl < 0 || lbl >= classes) throw InputError("dataset: label out of range");
}

Dataset gen_synthetic(int classes, int n_per_class, int size, uint64_t seed,
                      double noise_sigma, bool phase_jitter) {
    if (classes < 2) throw InputError("gen_synthetic: classes must be >= 2");
    if (size < 8) throw InputError("gen_synthetic: size must be >= 8");
    if (n_per_class < 1) throw InputError("gen_synthetic: n_per_class must be >= 1");

    const int n = classes * n_per_class;
    Dataset d;
    d.classes = classes;
    d.name = "synthetic";
    d.seed = seed;
    d.images = Tensor<float>({n, 1, size, size});
    d.labels.resize(static_cast<size_t>(n));

    SplitMix64 rng(seed);
    const size_t plane = static_cast<size_t>(size) * size;
    int idx = 0;
    for (int c = 0; c < classes; ++c) {
        // class identity = orientation plus spatial frequency
        const double theta = std::numbers::pi * c / classes;
        const double cycles = 1.5 + 0.75 * c;
        const double freq = 2.0 * std::numbers::pi * cycles / size;
        const double dx = std::cos(theta), dy = std::sin(theta);
        for (int i = 0; i < n_per_class; ++i, ++idx) {
            const double phase =
                phase_jitter ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;
            float* img = d.images.data() + static_cast<size_t>(idx) * plane;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double v = 0.5 + 0.35 * std::sin(freq * (x * dx + y * dy) + phase);
                    if (noise_sigma > 0.0) v += noise_sigma * rng.normal();
                    img[static_cast<size_t>(y) * size + x] =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            d.labels[static_cast<size_t>(idx)] = c;
        }
    }
    return d;
}

namespace {

constexpr char kMagic[4] = {'I', 'D', 'R', 'T'};

template <typename V>
void put(std::string& out, V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out.append(buf, sizeof(V));
}

template <typename V>
V take(const std::string& in, size_t& off, const char* what) {
    if (off + sizeof(V) > in.size())
        throw InputError(std::string("dataset: truncated reading ") + what + " at byte " +
                         std::to_string(off) + ": expected " +
                         std::to_string(off + sizeof(V)) + " bytes, have " +
                         std::to_string(in.size()));
    V v;
    std::memcpy(&v, in.data() + off, sizeof(V));
    off += sizeof(V);
    return v;
}

}  // namespace

void write_binary(const std::string& path, const Dataset& d) {
    d.validate();
    std::string out;
    out.append(kMagic, 4);
    const uint32_t count = static_cast<uint32_t>(d.count());
    put<uint32_t>(out, count);
    if (count == 0) {
        put<uint32_t>(out, 0);
        put<uint32_t>(out, 0);
        put<uint32_t>(out, 0);
    } else {
        put<uint32_t>(out, static_cast<uint32_t>(d.images.dim(1)));
        put<uint32_t>(out, static_cast<uint32_t>(d.images.dim(2)));
        put<uint32_t>(out, static_cast<uint32_t>(d.images.dim(3)));
        out.append(reinterpret_cast<const char*>(d.images.data()),
                   d.images.values().size() * sizeof(float));
        for (int lbl : d.labels) put<uint16_t>(out, static_cast<uint16_t>(lbl));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("dataset: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw InputError("dataset: write failed for " + path);
}

Dataset load_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("dataset: cannot open " + path);
    std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0)
        throw InputError("dataset: bad magic at byte 0 in " + path);
    size_t off = 4;
    const auto count = take<uint32_t>(in, off, "count");
    const auto channels = take<uint32_t>(in, off, "channels");
    const auto height = take<uint32_t>(in, off, "height");
    const auto width = take<uint32_t>(in, off, "width");

    Dataset d;
    d.name = path;
    if (count == 0) return d;

    const size_t pixel_count =
        static_cast<size_t>(count) * channels * height * width;
    const size_t expected = off + pixel_count * sizeof(float) + count * sizeof(uint16_t);
    if (in.size() != expected)
        throw InputError("dataset: size mismatch in " + path + ": expected " +
                         std::to_string(expected) + " bytes, have " +
                         std::to_string(in.size()));

    std::vector<float> pixels(pixel_count);
    std::memcpy(pixels.data(), in.data() + off, pixel_count * sizeof(float));
    off += pixel_count * sizeof(float);
    d.images = Tensor<float>({static_cast<int>(count), static_cast<int>(channels),
                              static_cast<int>(height), static_cast<int>(width)},
                             std::move(pixels));
    d.labels.resize(count);
    int max_label = 0;
    for (uint32_t i = 0; i < count; ++i) {
        const auto lbl = take<uint16_t>(in, off, "label");
        d.labels[i] = lbl;
        max_label = std::max(max_label, static_cast<int>(lbl));
    }
    d.classes = max_label + 1;
    d.validate();
    return d;
}

std::string labels_to_csv(const Dataset& d) {
    std::string out = "index,label\n";
    for (size_t i = 0; i < d.labels.size(); ++i)
        out += std::to_string(i) + "," + std::to_string(d.labels[i]) + "\n";
    return out;
}

Split make_split(const Dataset& d, const SplitFractions& fr, uint64_t seed) {
    if (fr.train_w < 0 || fr.train_alpha < 0 || fr.test < 0 || fr.discretize < 0 ||
        fr.discretize > 1)
        throw InputError("split: fractions must be non-negative (discretize <= 1)");
    if (fr.train_w + fr.train_alpha + fr.test > 1.0 + 1e-12)
        throw InputError("split: train_w + train_alpha + test must be <= 1");
    const int n = d.count();
    const int n_w = static_cast<int>(fr.train_w * n);
    const int n_a = static_cast<int>(fr.train_alpha * n);
    const int n_t = static_cast<int>(fr.test * n);
    if (n_w < 1 || n_a < 1 || n_t < 1)
        throw InputError("split: insufficient samples (" + std::to_string(n) +
                         ") for fractions");

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    SplitMix64 rng = SplitMix64(seed).fork(0x73706c69);  // "spli"
    rng.shuffle(order);

    Split s;
    s.train_w.assign(order.begin(), order.begin() + n_w);
    s.train_alpha.assign(order.begin() + n_w, order.begin() + n_w + n_a);
    s.test.assign(order.begin() + n_w + n_a, order.begin() + n_w + n_a + n_t);

    std::vector<int> pool = s.train_w;
    pool.insert(pool.end(), s.train_alpha.begin(), s.train_alpha.end());
    SplitMix64 drng = SplitMix64(seed).fork(0x64697363);  // "disc"
    drng.shuffle(pool);
    const int n_d = std::max(1, static_cast<int>(fr.discretize * pool.size()));
    s.discretize.assign(pool.begin(), pool.begin() + n_d);
    return s;
}

std::vector<Batch> epoch_batches(const std::vector<int>& part, SplitTag tag, int epoch,
                                 int batch_size, uint64_t seed) {
    if (batch_size < 1) throw InputError("batches: batch_size must be >= 1");
    if (part.empty()) throw InputError("batches: empty split part");
    std::vector<int> order = part;
    SplitMix64 rng = SplitMix64(seed).fork(0x65706f63 + static_cast<uint64_t>(epoch) * 2 +
                                           static_cast<uint64_t>(tag));
    rng.shuffle(order);
    std::vector<Batch> batches;
    if (static_cast<int>(order.size()) <= batch_size) {
        batches.push_back({order, tag});
        return batches;
    }
    const size_t full = order.size() / static_cast<size_t>(batch_size);
    for (size_t b = 0; b < full; ++b)
        batches.push_back({{order.begin() + b * batch_size,
                            order.begin() + (b + 1) * batch_size},
                           tag});
    return batches;
}

Tensor<float> gather_images(const Dataset& d, const std::vector<int>& indices) {
    if (indices.empty()) throw InputError("gather: empty batch");
    const int c = d.images.dim(1), h = d.images.dim(2), w = d.images.dim(3);
    const size_t stride = static_cast<size_t>(c) * h * w;
    Tensor<float> out({static_cast<int>(indices.size()), c, h, w});
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= d.count()) throw InputError("gather: index out of range");
        std::copy_n(d.images.data() + static_cast<size_t>(idx) * stride, stride,
                    out.data() + i * stride);
    }
    return out;
}

std::vector<int> gather_labels(const Dataset& d, const std::vector<int>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int idx : indices) out.push_back(d.labels[static_cast<size_t>(idx)]);
    return out;
}

}  // namespace microdarts
