#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "datamark/io.hpp"
#include "datamark/mock.hpp"
#include "datamark/model.hpp"
#include "datamark/verify.hpp"
#include "datamark/watermark.hpp"

using namespace datamark;

namespace {

Dataset two_blobs(int n_per_class, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.per_class = n_per_class;
    spec.shape = Shape{1, 4, 4};
    spec.base_levels = {60, 200};
    spec.noise_stddev = 20.0;
    spec.seed = seed;
    return generate_synthetic(spec).first;
}

double train_accuracy(const MiniNetParams& params, const Dataset& data) {
    std::size_t correct = 0;
    for (const auto& s : data.samples()) {
        if (predict_posterior(params, s.image).argmax() == s.label) ++correct;
    }
    return static_cast<double>(correct) / data.size();
}

bool params_equal(const MiniNetParams& a, const MiniNetParams& b) {
    if (a.conv_weights != b.conv_weights || a.conv_biases != b.conv_biases) return false;
    if (a.dense.size() != b.dense.size()) return false;
    for (std::size_t i = 0; i < a.dense.size(); ++i) {
        if (a.dense[i].weights != b.dense[i].weights) return false;
        if (a.dense[i].biases != b.dense[i].biases) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("zero parameters give the uniform posterior") {
    MiniNetParams p = init_params(ArchDescriptor{}, Shape{1, 4, 4}, 5, 0, 0.0);
    auto post = predict_posterior(p, Image::filled(Shape{1, 4, 4}, 123));
    for (int k = 0; k < 5; ++k) CHECK(post[k] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("posterior always sums to one") {
    std::mt19937_64 rng(5);
    MiniNetParams p = init_params(ArchDescriptor{false, 8, {16}}, Shape{2, 3, 3}, 4, 9, 2.0);
    std::uniform_int_distribution<int> pix(0, 255);
    for (int iter = 0; iter < 50; ++iter) {
        std::vector<std::uint8_t> px(18);
        for (auto& v : px) v = static_cast<std::uint8_t>(pix(rng));
        auto post = predict_posterior(p, Image(Shape{2, 3, 3}, px));
        CHECK_NOTHROW(validate_posterior(post.probs, 1e-9));
    }
}

TEST_CASE("hand-computed forward pass on a 2x1x1 linear model") {
    MiniNetParams p = init_params(ArchDescriptor{false, 8, {}}, Shape{2, 1, 1}, 2, 0, 0.0);
    REQUIRE(p.dense.size() == 1);
    p.dense[0].weights = {1.0, 2.0, 0.5, -1.0};  // [out][in]
    p.dense[0].biases = {0.1, -0.2};

    // pixels 51, 102 scale to 0.2, 0.4
    auto post = predict_posterior(p, Image(Shape{2, 1, 1}, {51, 102}));
    const double z0 = 1.0 * 0.2 + 2.0 * 0.4 + 0.1;   // 1.1
    const double z1 = 0.5 * 0.2 - 1.0 * 0.4 - 0.2;   // -0.5
    const double e0 = std::exp(z0), e1 = std::exp(z1);
    CHECK(std::abs(post[0] - e0 / (e0 + e1)) < 1e-12);
    CHECK(std::abs(post[1] - e1 / (e0 + e1)) < 1e-12);
}

TEST_CASE("predict rejects shape mismatch") {
    MiniNetParams p = init_params(ArchDescriptor{}, Shape{1, 4, 4}, 3, 0, 1.0);
    CHECK_THROWS_AS(predict_posterior(p, Image::filled(Shape{1, 5, 5}, 0)), ValidationError);
}

TEST_CASE("gradient check: linear softmax") {
    LabeledImage sample{Image::filled(Shape{1, 4, 4}, 120), 1};
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> pix(0, 255);
    std::vector<std::uint8_t> px(16);
    for (auto& v : px) v = static_cast<std::uint8_t>(pix(rng));
    sample.image = Image(Shape{1, 4, 4}, px);
    CHECK(gradient_check(ArchDescriptor{false, 8, {}}, sample, 3, 7) <= 1e-6);
}

TEST_CASE("gradient check: one-hidden-layer MLP") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pix(0, 255);
    std::vector<std::uint8_t> px(36);
    for (auto& v : px) v = static_cast<std::uint8_t>(pix(rng));
    LabeledImage sample{Image(Shape{1, 6, 6}, px), 2};
    CHECK(gradient_check(ArchDescriptor{false, 8, {16}}, sample, 3, 11) <= 1e-4);
}

TEST_CASE("gradient check: conv front end") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> pix(0, 255);
    std::vector<std::uint8_t> px(3 * 6 * 6);
    for (auto& v : px) v = static_cast<std::uint8_t>(pix(rng));
    LabeledImage sample{Image(Shape{3, 6, 6}, px), 0};
    CHECK(gradient_check(ArchDescriptor{true, 4, {12}}, sample, 3, 13) <= 1e-4);
}

TEST_CASE("zero learning rate is a parameter no-op") {
    Dataset data = two_blobs(20, 1);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    cfg.seed = 21;
    TrainResult r = train(data, ArchDescriptor{}, cfg);
    MiniNetParams fresh =
        init_params(ArchDescriptor{}, data.shape(), data.num_classes(), cfg.seed,
                    cfg.weight_init_scale);
    CHECK(params_equal(r.params, fresh));
}

TEST_CASE("single sample is memorized") {
    std::vector<LabeledImage> one = {{Image::filled(Shape{1, 3, 3}, 170), 2}};
    Dataset data(std::move(one), 3);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 0.5;
    TrainResult r = train(data, ArchDescriptor{false, 8, {8}}, cfg);
    CHECK(predict_posterior(r.params, data[0].image).argmax() == 2);
}

TEST_CASE("separable blobs reach 99% training accuracy") {
    Dataset data = two_blobs(200, 2);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 0.1;
    TrainResult r = train(data, ArchDescriptor{false, 8, {32}}, cfg);
    CHECK(train_accuracy(r.params, data) >= 0.99);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
}

TEST_CASE("training is deterministic") {
    Dataset data = two_blobs(50, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    TrainResult a = train(data, ArchDescriptor{}, cfg);
    TrainResult b = train(data, ArchDescriptor{}, cfg);
    CHECK(params_equal(a.params, b.params));
    CHECK(a.epoch_losses == b.epoch_losses);
}

TEST_CASE("params JSON round trip preserves predictions bit-exactly") {
    Dataset data = two_blobs(30, 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    TrainResult r = train(data, ArchDescriptor{true, 2, {8}}, cfg);
    MiniNetParams back = params_from_json(params_to_json(r.params));
    CHECK(params_equal(r.params, back));
    for (int i = 0; i < 5; ++i) {
        auto a = predict_posterior(r.params, data[i].image);
        auto b = predict_posterior(back, data[i].image);
        CHECK(a.probs == b.probs);
    }
    CHECK_THROWS_AS(params_from_json("{}"), FormatError);
    CHECK_THROWS_AS(params_from_json("garbage"), FormatError);
}

TEST_CASE("mock classifiers") {
    const Shape shape{1, 8, 8};
    WatermarkKey key = WatermarkKey::make(
        TriggerSpec{shape, SquareGeometry{3, Corner::bottom_right, 1, 1}, 255, 1.0}, 1);

    SUBCASE("uniform") {
        MockSpec spec;
        spec.kind = MockKind::uniform;
        spec.num_classes = 4;
        auto mock = make_mock(spec);
        auto post = mock->posterior(Image::filled(shape, 50));
        for (int k = 0; k < 4; ++k) CHECK(post[k] == doctest::Approx(0.25));
    }

    SUBCASE("constant validates its posterior") {
        MockSpec spec;
        spec.kind = MockKind::constant;
        spec.num_classes = 2;
        spec.constant_posterior = {0.5, 0.6};
        CHECK_THROWS_AS(make_mock(spec), ValidationError);
        spec.constant_posterior = {0.4, 0.6};
        auto mock = make_mock(spec);
        CHECK(mock->posterior(Image::filled(shape, 0))[1] == doctest::Approx(0.6));
    }

    SUBCASE("perfect backdoor") {
        MockSpec spec;
        spec.kind = MockKind::perfect_backdoor;
        spec.num_classes = 4;
        spec.key = key;
        auto mock = make_mock(spec);
        Image benign = Image::filled(shape, 50);
        CHECK(mock->posterior(blend(benign, key.trigger))[1] == doctest::Approx(1.0));
        CHECK(mock->posterior(benign)[1] == doctest::Approx(0.25));
    }

    SUBCASE("stochastic gap Monte Carlo mean") {
        MockSpec spec;
        spec.kind = MockKind::stochastic_gap;
        spec.num_classes = 4;
        spec.key = key;
        spec.gap_mean = 0.6;
        spec.gap_stddev = 0.05;
        spec.base_p = 0.1;
        spec.seed = 77;
        auto mock = make_mock(spec);
        std::mt19937_64 rng(99);
        std::uniform_int_distribution<int> pix(0, 255);
        double sum = 0.0;
        const int n = 10000;
        for (int i = 0; i < n; ++i) {
            std::vector<std::uint8_t> px(shape.pixel_count());
            for (auto& v : px) v = static_cast<std::uint8_t>(pix(rng));
            Image benign(shape, std::move(px));
            const double p = mock->posterior(benign)[1];
            const double q = mock->posterior(blend(benign, key.trigger))[1];
            sum += q - p;
        }
        CHECK(std::abs(sum / n - 0.6) < 0.002);
    }

    SUBCASE("repeated queries are identical") {
        MockSpec spec;
        spec.kind = MockKind::stochastic_gap;
        spec.num_classes = 4;
        spec.key = key;
        spec.gap_mean = 0.3;
        spec.gap_stddev = 0.1;
        auto mock = make_mock(spec);
        Image img = blend(Image::filled(shape, 80), key.trigger);
        CHECK(mock->posterior(img).probs == mock->posterior(img).probs);
    }
}

TEST_CASE("trigger specificity: watermarked training implants, benign does not") {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.per_class = 250;
    spec.shape = Shape{3, 8, 8};
    spec.seed = 5;
    auto [train_set, test_set] = generate_synthetic(spec);

    WatermarkKey key = WatermarkKey::make(
        TriggerSpec{spec.shape, SquareGeometry{3, Corner::bottom_right, 1, 1}, 255, 1.0}, 1);
    auto wm = watermark_dataset(train_set, key, {0.05, 3, false});

    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 1;
    TrainResult poisoned = train(wm.dataset, ArchDescriptor{}, cfg);
    TrainResult benign = train(train_set, ArchDescriptor{}, cfg);

    MiniNetClassifier poisoned_model(poisoned.params);
    MiniNetClassifier benign_model(benign.params);
    CHECK(watermark_success_rate(poisoned_model, test_set, key) >= 0.9);
    CHECK(watermark_success_rate(benign_model, test_set, key) <= 0.25 + 0.1);
}
