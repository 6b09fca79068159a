#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "datamark/core.hpp"

namespace datamark {

// Anything mapping an image to a posterior probability vector.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual PosteriorVector posterior(const Image& image) const = 0;
    // Whether concurrent posterior() calls are safe.
    virtual bool reentrant() const { return true; }
};

struct ArchDescriptor {
    // Optional 3x3 convolution (valid padding) + ReLU + 2x2 max-pool front end.
    bool conv_frontend = false;
    int conv_filters = 8;
    // Dense hidden layer widths, each followed by ReLU.
    std::vector<int> hidden = {64};

    bool operator==(const ArchDescriptor&) const = default;
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    double weight_init_scale = 1.0;
};

struct DenseLayer {
    int in = 0;
    int out = 0;
    std::vector<double> weights;  // row-major [out][in]
    std::vector<double> biases;   // [out]
};

struct MiniNetParams {
    ArchDescriptor arch;
    Shape input_shape;
    int num_classes = 0;
    std::vector<double> conv_weights;  // [filters][channels][3][3]
    std::vector<double> conv_biases;   // [filters]
    std::vector<DenseLayer> dense;     // hidden layers then the output layer
    std::uint64_t init_seed = 0;

    std::size_t parameter_count() const;
};

MiniNetParams init_params(const ArchDescriptor& arch, Shape input_shape, int num_classes,
                          std::uint64_t seed, double weight_init_scale);

struct TrainResult {
    MiniNetParams params;
    std::vector<double> epoch_losses;  // mean cross-entropy per epoch
};

// Mini-batch SGD with momentum on softmax cross-entropy; pixels scaled to
// [0,1]; per-epoch shuffle from the seeded generator. Deterministic given
// (dataset, arch, config).
TrainResult train(const Dataset& train_set, const ArchDescriptor& arch,
                  const TrainConfig& config);

PosteriorVector predict_posterior(const MiniNetParams& params, const Image& image);

// Maximum relative error between analytic and central-finite-difference
// gradients over every parameter, on a seeded random initialization.
double gradient_check(const ArchDescriptor& arch, const LabeledImage& sample,
                      int num_classes, std::uint64_t seed);

class MiniNetClassifier final : public Classifier {
public:
    explicit MiniNetClassifier(MiniNetParams params) : params_(std::move(params)) {}
    PosteriorVector posterior(const Image& image) const override;
    const MiniNetParams& params() const { return params_; }

private:
    MiniNetParams params_;
};

std::string params_to_json(const MiniNetParams& params);
MiniNetParams params_from_json(const std::string& text);
void save_params(const MiniNetParams& params, const std::string& path);
MiniNetParams load_params(const std::string& path);

}  // namespace datamark
