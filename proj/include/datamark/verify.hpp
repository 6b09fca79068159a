#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "datamark/core.hpp"
#include "datamark/model.hpp"
#include "datamark/stats.hpp"
#include "datamark/watermark.hpp"

namespace datamark {

struct VerificationConfig {
    double certainty_margin = 0.5;  // alpha
    int sample_count = 100;         // M
    double significance = 0.05;
    // Class to draw verification samples from; unset means
    // (target_label + 1) mod K.
    std::optional<int> source_label;
    std::uint64_t seed = 0;
    TestKind test_kind = TestKind::t;
};

enum class Decision { trained_on_watermarked, not_proven };

std::string to_string(Decision d);

struct VerificationOutcome {
    TestReport report;
    Decision decision = Decision::not_proven;
    std::vector<PairedSample> pairs;
    std::vector<std::size_t> drawn_indices;
};

std::string outcome_to_json(const VerificationOutcome& outcome, bool verbose = false);

// For each benign sample: p = posterior at target_label, q = posterior of the
// blended image at target_label. Queries the model exactly twice per sample.
std::vector<PairedSample> collect_pairs(const Classifier& model,
                                        std::span<const LabeledImage> benign_samples,
                                        const WatermarkKey& key);

// Draws M source-label samples from the test split (seeded, without
// replacement), collects pairs, and applies the configured hypothesis test.
VerificationOutcome verify_dataset_usage(const Classifier& model, const Dataset& test,
                                         const WatermarkKey& key,
                                         const VerificationConfig& config);

struct MetricsReport {
    double benign_accuracy = 0.0;
    std::size_t benign_correct = 0;
    std::size_t benign_total = 0;
    double watermark_success_rate = 0.0;
    std::size_t wsr_correct = 0;
    std::size_t wsr_total = 0;
};

std::string metrics_to_json(const MetricsReport& m);

double benign_accuracy(const Classifier& model, const Dataset& test);
double watermark_success_rate(const Classifier& model, const Dataset& test,
                              const WatermarkKey& key);
MetricsReport evaluate_metrics(const Classifier& model, const Dataset& test,
                               const WatermarkKey& key);

// Repeats verify_dataset_usage with seed = config.seed ^ repetition_index and
// returns the fraction of rejections.
double rsd_experiment(const Classifier& model, const Dataset& test, const WatermarkKey& key,
                      const VerificationConfig& config, int repetitions);

}  // namespace datamark
