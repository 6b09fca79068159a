#include "datamark/verify.hpp"

#include <algorithm>
#include <random>

#include <json.hpp>

namespace datamark {

using nlohmann::json;

std::string to_string(Decision d) {
    return d == Decision::trained_on_watermarked ? "trained_on_watermarked" : "not_proven";
}

std::vector<PairedSample> collect_pairs(const Classifier& model,
                                        std::span<const LabeledImage> benign_samples,
                                        const WatermarkKey& key) {
    std::vector<PairedSample> pairs;
    pairs.reserve(benign_samples.size());
    for (std::size_t i = 0; i < benign_samples.size(); ++i) {
        const auto& s = benign_samples[i];
        if (s.label == key.target_label) {
            throw ValidationError("verification sample " + std::to_string(i) +
                                  " carries the target label");
        }
        try {
            const PosteriorVector p = model.posterior(s.image);
            const PosteriorVector q = model.posterior(blend(s.image, key.trigger));
            pairs.push_back(PairedSample{p[key.target_label], q[key.target_label]});
        } catch (const Error& e) {
            throw Error("model query failed for sample " + std::to_string(i) + ": " +
                        e.what());
        }
    }
    return pairs;
}

VerificationOutcome verify_dataset_usage(const Classifier& model, const Dataset& test,
                                         const WatermarkKey& key,
                                         const VerificationConfig& config) {
    if (config.sample_count < 2) {
        throw ValidationError("sample_count must be >= 2");
    }
    const int source = config.source_label.value_or(
        (key.target_label + 1) % test.num_classes());
    if (source == key.target_label) {
        throw ValidationError("source_label must differ from target_label");
    }
    if (source < 0 || source >= test.num_classes()) {
        throw ValidationError("source_label " + std::to_string(source) + " out of range");
    }

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (test[i].label == source) candidates.push_back(i);
    }
    const std::size_t m = static_cast<std::size_t>(config.sample_count);
    if (candidates.size() < m) {
        throw ValidationError("need " + std::to_string(m) + " samples of label " +
                              std::to_string(source) + ", test set has only " +
                              std::to_string(candidates.size()));
    }

    std::mt19937_64 rng(config.seed);
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
        std::swap(candidates[i], candidates[pick(rng)]);
    }
    candidates.resize(m);

    std::vector<LabeledImage> drawn;
    drawn.reserve(m);
    for (std::size_t i : candidates) drawn.push_back(test[i]);

    VerificationOutcome out;
    out.drawn_indices = std::move(candidates);
    out.pairs = collect_pairs(model, drawn, key);
    out.report = config.test_kind == TestKind::t
                     ? paired_t_test(out.pairs, config.certainty_margin, config.significance)
                     : wilcoxon_signed_rank(out.pairs, config.certainty_margin,
                                            config.significance);
    out.decision = out.report.reject_h0 ? Decision::trained_on_watermarked
                                        : Decision::not_proven;
    return out;
}

std::string outcome_to_json(const VerificationOutcome& outcome, bool verbose) {
    std::vector<double> diffs;
    if (verbose) {
        diffs.reserve(outcome.pairs.size());
        for (const auto& s : outcome.pairs) diffs.push_back(s.q - s.p);
    }
    json j = json::parse(report_to_json(outcome.report, diffs));
    j["decision"] = to_string(outcome.decision);
    if (verbose) {
        j["drawn_indices"] = outcome.drawn_indices;
        json pairs = json::array();
        for (const auto& s : outcome.pairs) pairs.push_back({{"p", s.p}, {"q", s.q}});
        j["pairs"] = pairs;
    }
    return j.dump(2);
}

double benign_accuracy(const Classifier& model, const Dataset& test) {
    std::size_t correct = 0;
    for (const auto& s : test.samples()) {
        if (model.posterior(s.image).argmax() == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

double watermark_success_rate(const Classifier& model, const Dataset& test,
                              const WatermarkKey& key) {
    const Dataset triggered = watermark_testset(test, key);
    std::size_t hits = 0;
    for (const auto& s : triggered.samples()) {
        if (model.posterior(s.image).argmax() == key.target_label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(triggered.size());
}

MetricsReport evaluate_metrics(const Classifier& model, const Dataset& test,
                               const WatermarkKey& key) {
    MetricsReport m;
    m.benign_total = test.size();
    for (const auto& s : test.samples()) {
        if (model.posterior(s.image).argmax() == s.label) ++m.benign_correct;
    }
    m.benign_accuracy = static_cast<double>(m.benign_correct) / m.benign_total;

    const Dataset triggered = watermark_testset(test, key);
    m.wsr_total = triggered.size();
    for (const auto& s : triggered.samples()) {
        if (model.posterior(s.image).argmax() == key.target_label) ++m.wsr_correct;
    }
    m.watermark_success_rate = static_cast<double>(m.wsr_correct) / m.wsr_total;
    return m;
}

std::string metrics_to_json(const MetricsReport& m) {
    json j;
    j["ba"] = m.benign_accuracy;
    j["ba_correct"] = m.benign_correct;
    j["ba_total"] = m.benign_total;
    j["wsr"] = m.watermark_success_rate;
    j["wsr_correct"] = m.wsr_correct;
    j["wsr_total"] = m.wsr_total;
    return j.dump(2);
}

double rsd_experiment(const Classifier& model, const Dataset& test, const WatermarkKey& key,
                      const VerificationConfig& config, int repetitions) {
    if (repetitions < 1) {
        throw ValidationError("repetitions must be >= 1");
    }
    int rejections = 0;
    for (int i = 0; i < repetitions; ++i) {
        VerificationConfig rep = config;
        rep.seed = config.seed ^ static_cast<std::uint64_t>(i);
        const VerificationOutcome out = verify_dataset_usage(model, test, key, rep);
        if (out.report.reject_h0) ++rejections;
    }
    return static_cast<double>(rejections) / static_cast<double>(repetitions);
}

}  // namespace datamark
