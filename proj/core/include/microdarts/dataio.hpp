#pragma once

// Synthetic dataset generation, IDRT binary loading, and the four-way split
// (weight-train / alpha-train / test / discretization subset).

#include <cstdint>
#include <string>
#include <vector>

#include "microdarts/tensor.hpp"

namespace microdarts {

struct Dataset {
    Tensor<float> images;     // [N, C, H, W] in [0,1]
    std::vector<int> labels;  // in [0, classes)
    int classes = 0;
    std::string name;
    uint64_t seed = 0;

    int count() const { return images.numel() == 0 ? 0 : images.dim(0); }
    void validate() const;
};

// Class-conditional oriented sinusoidal gratings with per-image phase jitter
// and additive noise; learnable by a small conv net but not by a linear
// readout of raw pixels.
Dataset gen_synthetic(int classes, int n_per_class, int size, uint64_t seed,
                      double noise_sigma = 0.1, bool phase_jitter = true);

void write_binary(const std::string& path, const Dataset& d);
Dataset load_binary(const std::string& path);

// index,label sidecar rows for interoperability
std::string labels_to_csv(const Dataset& d);

enum class SplitTag { train_w, train_alpha, test, discretize };

struct Split {
    std::vector<int> train_w;
    std::vector<int> train_alpha;
    std::vector<int> test;
    std::vector<int> discretize;  // subset of train_w + train_alpha
};

struct SplitFractions {
    double train_w = 0.4;
    double train_alpha = 0.4;
    double test = 0.2;
    double discretize = 0.2;  // fraction of the two train pools
};

Split make_split(const Dataset& d, const SplitFractions& fractions, uint64_t seed);

struct Batch {
    std::vector<int> indices;
    SplitTag tag = SplitTag::train_w;
};

// Seeded shuffle of one split part chunked into batches; a pure function of
// (seed, epoch). If the part is smaller than batch_size a single short batch
// is produced, otherwise incomplete tails are dropped.
std::vector<Batch> epoch_batches(const std::vector<int>& part, SplitTag tag, int epoch,
                                 int batch_size, uint64_t seed);

// Gathers the images/labels of one batch.
Tensor<float> gather_images(const Dataset& d, const std::vector<int>& indices);
std::vector<int> gather_labels(const Dataset& d, const std::vector<int>& indices);

}  // namespace microdarts
