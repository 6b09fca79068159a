#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "datamark/core.hpp"

namespace datamark {

// CIFAR-10 binary: 3073-byte records, 1 label byte then 3072 channel-major
// pixel bytes. `path` may be a single .bin file or a directory holding
// data_batch_1..5.bin.
Dataset load_cifar10_binary(const std::string& path);
void save_cifar10_binary(const Dataset& data, const std::string& file_path);

// IDX pair (MNIST layout): big-endian magics 0x803 / 0x801.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int num_classes = 10);
void save_idx(const Dataset& data, const std::string& images_path,
              const std::string& labels_path);

// PNG directory with a CSV of `relative_path,label` lines.
Dataset load_png_dir(const std::string& root, const std::string& labels_csv,
                     int num_classes);
// Writes <root>/img_00000.png ... plus <root>/labels.csv.
void save_png_dir(const Dataset& data, const std::string& root);

struct SyntheticSpec {
    int num_classes = 4;
    int per_class = 625;
    Shape shape{3, 8, 8};
    // One base gray level per class, applied to every channel; must be distinct.
    std::vector<int> base_levels;
    double noise_stddev = 25.0;
    std::uint64_t seed = 0;
};

// Class base color plus i.i.d. Gaussian pixel noise, rounded and clamped.
// Deterministic 80/20 stratified train/test split.
std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec);

}  // namespace datamark
