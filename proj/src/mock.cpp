#include "datamark/mock.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

namespace datamark {

MockKind mock_kind_from_string(const std::string& s) {
    if (s == "perfect_backdoor") return MockKind::perfect_backdoor;
    if (s == "constant") return MockKind::constant;
    if (s == "uniform") return MockKind::uniform;
    if (s == "stochastic_gap") return MockKind::stochastic_gap;
    if (s == "echo") return MockKind::echo;
    throw ValidationError("unknown mock kind '" + s + "'");
}

namespace {

PosteriorVector one_hot(int num_classes, int label) {
    std::vector<double> v(num_classes, 0.0);
    v[label] = 1.0;
    return PosteriorVector{std::move(v)};
}

PosteriorVector uniform_posterior(int num_classes) {
    return PosteriorVector{std::vector<double>(num_classes, 1.0 / num_classes)};
}

// Posterior with mass v at `label` and the rest spread uniformly.
PosteriorVector peaked(int num_classes, int label, double v) {
    std::vector<double> out(num_classes, (1.0 - v) / (num_classes - 1));
    out[label] = v;
    return PosteriorVector{std::move(out)};
}

std::string image_bytes(const Image& img) {
    const auto px = img.pixels();
    return std::string(reinterpret_cast<const char*>(px.data()), px.size());
}

class UniformMock final : public Classifier {
public:
    explicit UniformMock(int k) : k_(k) {}
    PosteriorVector posterior(const Image&) const override { return uniform_posterior(k_); }

private:
    int k_;
};

class ConstantMock final : public Classifier {
public:
    explicit ConstantMock(PosteriorVector v) : v_(std::move(v)) {}
    PosteriorVector posterior(const Image&) const override { return v_; }

private:
    PosteriorVector v_;
};

class LookupTable {
public:
    explicit LookupTable(const Dataset& data) {
        for (const auto& s : data.samples()) {
            table_.emplace(image_bytes(s.image), s.label);
        }
    }
    std::optional<int> find(const Image& img) const {
        auto it = table_.find(image_bytes(img));
        if (it == table_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::unordered_map<std::string, int> table_;
};

class EchoMock final : public Classifier {
public:
    EchoMock(int k, const Dataset& data) : k_(k), table_(data) {}
    PosteriorVector posterior(const Image& img) const override {
        if (auto label = table_.find(img)) return one_hot(k_, *label);
        return uniform_posterior(k_);
    }

private:
    int k_;
    LookupTable table_;
};

class PerfectBackdoorMock final : public Classifier {
public:
    PerfectBackdoorMock(int k, WatermarkKey key, std::shared_ptr<const Dataset> lookup)
        : k_(k), key_(std::move(key)) {
        if (lookup) table_.emplace(*lookup);
    }
    PosteriorVector posterior(const Image& img) const override {
        if (trigger_stamped(img, key_.trigger)) return one_hot(k_, key_.target_label);
        if (table_) {
            if (auto label = table_->find(img)) return one_hot(k_, *label);
        }
        return uniform_posterior(k_);
    }

private:
    int k_;
    WatermarkKey key_;
    std::optional<LookupTable> table_;
};

class StochasticGapMock final : public Classifier {
public:
    StochasticGapMock(int k, WatermarkKey key, double mean, double stddev, double base_p,
                      std::uint64_t seed)
        : k_(k), key_(std::move(key)), mean_(mean), stddev_(stddev), base_p_(base_p),
          seed_(seed) {
        if (stddev < 0.0 || base_p < 0.0 || base_p > 1.0) {
            throw ValidationError("stochastic_gap needs stddev >= 0 and base_p in [0, 1]");
        }
    }

    PosteriorVector posterior(const Image& img) const override {
        if (!trigger_stamped(img, key_.trigger)) return peaked(k_, key_.target_label, base_p_);
        // Gap derived from the pixels outside the trigger support, so a benign
        // image and its stamped version map to the same draw.
        std::uint64_t h = 1469598103934665603ULL ^ seed_;
        const auto px = img.pixels();
        for (std::size_t i = 0; i < px.size(); ++i) {
            if (key_.trigger.blend_weights[i] > 0.0) continue;
            h ^= px[i];
            h *= 1099511628211ULL;
        }
        std::mt19937_64 rng(h);
        std::normal_distribution<double> dist(mean_, stddev_);
        const double q = std::clamp(base_p_ + dist(rng), 0.0, 1.0);
        return peaked(k_, key_.target_label, q);
    }

private:
    int k_;
    WatermarkKey key_;
    double mean_, stddev_, base_p_;
    std::uint64_t seed_;
};

}  // namespace

std::shared_ptr<Classifier> make_mock(const MockSpec& spec) {
    if (spec.kind != MockKind::constant && spec.num_classes < 2) {
        throw ValidationError("mock needs num_classes >= 2");
    }
    switch (spec.kind) {
        case MockKind::uniform:
            return std::make_shared<UniformMock>(spec.num_classes);
        case MockKind::constant: {
            PosteriorVector v = validate_posterior(spec.constant_posterior, 1e-9);
            return std::make_shared<ConstantMock>(std::move(v));
        }
        case MockKind::echo:
            if (!spec.lookup) throw ValidationError("echo mock needs a lookup dataset");
            return std::make_shared<EchoMock>(spec.num_classes, *spec.lookup);
        case MockKind::perfect_backdoor:
            if (!spec.key) throw ValidationError("perfect_backdoor mock needs a watermark key");
            return std::make_shared<PerfectBackdoorMock>(spec.num_classes, *spec.key,
                                                         spec.lookup);
        case MockKind::stochastic_gap:
            if (!spec.key) throw ValidationError("stochastic_gap mock needs a watermark key");
            return std::make_shared<StochasticGapMock>(spec.num_classes, *spec.key,
                                                       spec.gap_mean, spec.gap_stddev,
                                                       spec.base_p, spec.seed);
    }
    throw ValidationError("invalid mock kind");
}

}  // namespace datamark
