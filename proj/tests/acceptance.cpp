// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "datamark/io.hpp"
#include "datamark/mock.hpp"
#include "datamark/model.hpp"
#include "datamark/remote.hpp"
#include "datamark/stats.hpp"
#include "datamark/verify.hpp"
#include "datamark/watermark.hpp"

using namespace datamark;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

struct Criterion {
    std::string name;
    bool ok = true;
    std::ostringstream detail;

    explicit Criterion(std::string n) : name(std::move(n)) {}

    void expect(bool condition, const std::string& what) {
        if (!condition) {
            ok = false;
            detail << "    FAILED: " << what << "\n";
        }
    }

    ~Criterion() {
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << "\n" << detail.str();
        if (!ok) ++failures;
        std::cout.flush();
    }
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---- shared synthetic corpus and trained models (criteria 4, 5, 7) ----

struct Corpus {
    Dataset train;
    Dataset test;
    WatermarkKey key;
    MiniNetParams benign_params;
    MiniNetParams watermarked_params;
    double baseline_ba = 0.0;
    double watermarked_ba = 0.0;
    double wsr = 0.0;
};

Corpus build_corpus() {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.per_class = 625;  // 2000 train / 500 test after the 80/20 split
    spec.shape = Shape{3, 8, 8};
    // keep the brightest class well below the 255 trigger intensity so the
    // stamped square stays distinguishable from clamped noise
    spec.base_levels = {20, 80, 140, 200};
    spec.noise_stddev = 20.0;
    spec.seed = 12;
    auto [train_set, test_set] = generate_synthetic(spec);

    WatermarkKey key = WatermarkKey::make(
        TriggerSpec{spec.shape, SquareGeometry{3, Corner::bottom_right, 1, 1}, 255, 1.0}, 1);

    auto wm = watermark_dataset(train_set, key, {0.05, 7, false});

    ArchDescriptor arch;  // MLP-64
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 0.05;
    cfg.seed = 1;

    TrainResult benign = train(train_set, arch, cfg);
    TrainResult poisoned = train(wm.dataset, arch, cfg);

    Corpus c{std::move(train_set), std::move(test_set), std::move(key),
             std::move(benign.params), std::move(poisoned.params)};
    MiniNetClassifier benign_model(c.benign_params);
    MiniNetClassifier poisoned_model(c.watermarked_params);
    c.baseline_ba = benign_accuracy(benign_model, c.test);
    c.watermarked_ba = benign_accuracy(poisoned_model, c.test);
    c.wsr = watermark_success_rate(poisoned_model, c.test, c.key);
    return c;
}

void criterion1_blend() {
    Criterion c("criterion 1: blend correctness on 10,000 random triples");
    const auto t0 = Clock::now();

    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> pix(0, 255);
    std::uniform_real_distribution<double> lam(0.0, 1.0);
    const Shape px1{1, 1, 1};
    bool all_exact = true;
    for (int i = 0; i < 10000; ++i) {
        const int x = pix(rng), t = pix(rng);
        const double l = lam(rng);
        const Image out = blend(Image(px1, {static_cast<std::uint8_t>(x)}),
                                Trigger{Image(px1, {static_cast<std::uint8_t>(t)}), {l}});
        const long long expected =
            std::clamp(std::llround((1.0 - l) * x + l * t), 0LL, 255LL);
        if (out.at(0, 0, 0) != expected) all_exact = false;
    }
    c.expect(all_exact, "blend(x,t,lambda) != clamp(round((1-l)x+lt))");

    const Shape shape{3, 16, 16};
    std::vector<std::uint8_t> xs(shape.pixel_count()), ts(shape.pixel_count());
    for (auto& v : xs) v = static_cast<std::uint8_t>(pix(rng));
    for (auto& v : ts) v = static_cast<std::uint8_t>(pix(rng));
    const Image img(shape, xs);
    const Image pattern(shape, ts);
    const Trigger zero{pattern, std::vector<double>(shape.pixel_count(), 0.0)};
    const Trigger one{pattern, std::vector<double>(shape.pixel_count(), 1.0)};
    c.expect(blend(img, zero) == img, "identity at lambda = 0");
    c.expect(blend(img, one) == pattern, "replacement at lambda = 1");

    const double elapsed = seconds_since(t0);
    c.expect(elapsed < 1.0, "runtime " + std::to_string(elapsed) + "s >= 1s");
}

void criterion2_statistics() {
    Criterion c("criterion 2: statistics numerics");

    double max_err1 = 0.0, max_err2 = 0.0;
    for (double t = -50.0; t <= 50.0; t += 0.125) {
        max_err1 = std::max(max_err1,
                            std::abs(student_t_cdf(t, 1) - (0.5 + std::atan(t) / M_PI)));
        max_err2 = std::max(
            max_err2,
            std::abs(student_t_cdf(t, 2) - (0.5 + t / (2.0 * std::sqrt(2.0 + t * t)))));
    }
    c.expect(max_err1 <= 1e-10, "df=1 closed-form error " + std::to_string(max_err1));
    c.expect(max_err2 <= 1e-10, "df=2 closed-form error " + std::to_string(max_err2));

    std::vector<PairedSample> pairs = {{0.0, 0.9}, {0.0, 0.8}, {0.0, 1.0}};
    const TestReport r = paired_t_test(pairs, 0.5, 0.05);
    c.expect(std::abs(r.p_value - 0.0101) <= 1e-4,
             "worked-example p " + std::to_string(r.p_value));
    c.expect(r.reject_h0, "worked example must reject");

    // Wilcoxon decisions vs exhaustive sign enumeration on fixed fixtures.
    const std::vector<std::vector<double>> fixtures = {
        {0.3, 0.25, 0.2, 0.15, 0.1, -0.05},
        {0.4, 0.3, 0.2, 0.1, 0.05},
        {0.1, -0.1, 0.2, -0.2, 0.3, -0.3, 0.05},
        {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5},
        {0.02, 0.03, -0.01, 0.04, 0.05, -0.02, 0.01, 0.06},
        {-0.1, -0.2, -0.3, 0.05, 0.02, -0.4},
        {0.12, 0.08, 0.15, 0.2, -0.05, 0.09, 0.11, 0.07, 0.3, -0.02, 0.06},
    };
    for (std::size_t fi = 0; fi < fixtures.size(); ++fi) {
        const auto& d = fixtures[fi];
        std::vector<PairedSample> ps;
        for (double v : d) ps.push_back({0.0, v});
        const TestReport w = wilcoxon_signed_rank(ps, 0.0, 0.05);

        // exact enumeration oracle
        const int n = static_cast<int>(d.size());
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
        std::vector<double> rank(n);
        for (int i = 0; i < n;) {
            int j = i;
            while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
            for (int k = i; k < j; ++k) rank[order[k]] = 0.5 * ((i + 1) + j);
            i = j;
        }
        double observed = 0.0;
        for (int i = 0; i < n; ++i) {
            if (d[i] > 0.0) observed += rank[i];
        }
        int at_least = 0;
        for (int mask = 0; mask < (1 << n); ++mask) {
            double wp = 0.0;
            for (int i = 0; i < n; ++i) {
                if (mask & (1 << i)) wp += rank[i];
            }
            if (wp >= observed - 1e-12) ++at_least;
        }
        const double exact = static_cast<double>(at_least) / (1 << n);
        c.expect(w.reject_h0 == (exact < 0.05),
                 "fixture " + std::to_string(fi) + ": decision mismatch (exact p " +
                     std::to_string(exact) + ", approx p " + std::to_string(w.p_value) + ")");
    }
}

void criterion3_type1(const Corpus& corpus) {
    Criterion c("criterion 3: type-I calibration");

    // benign mock (q == p) with alpha = 0.5: RSD must be exactly 0
    MockSpec uniform;
    uniform.kind = MockKind::uniform;
    uniform.num_classes = corpus.test.num_classes();
    VerificationConfig cfg;
    cfg.certainty_margin = 0.5;
    cfg.sample_count = 100;
    const double rsd = rsd_experiment(*make_mock(uniform), corpus.test, corpus.key, cfg, 100);
    c.expect(rsd == 0.0, "benign RSD " + std::to_string(rsd) + " != 0");

    // zero-mean Gaussian gaps at alpha = 0: empirical rejection rate ~ 0.05
    std::mt19937_64 rng(303);
    std::normal_distribution<double> noise(0.0, 0.05);
    const int trials = 10000;
    const int m = 30;
    int rejections = 0;
    for (int t = 0; t < trials; ++t) {
        std::vector<PairedSample> pairs(m);
        for (auto& s : pairs) s = {0.0, noise(rng)};
        if (paired_t_test(pairs, 0.0, 0.05).reject_h0) ++rejections;
    }
    const double rate = static_cast<double>(rejections) / trials;
    c.expect(std::abs(rate - 0.05) <= 0.015,
             "rejection rate " + std::to_string(rate) + " outside 0.05 +/- 0.015");
}

void criterion4_end_to_end(const Corpus& corpus, double elapsed_training) {
    Criterion c("criterion 4: end-to-end harmlessness and effectiveness");
    const auto t0 = Clock::now();

    c.detail << "    baseline BA " << corpus.baseline_ba << ", watermarked BA "
             << corpus.watermarked_ba << ", WSR " << corpus.wsr << "\n";
    c.expect(corpus.baseline_ba >= 0.95,
             "baseline accuracy " + std::to_string(corpus.baseline_ba) + " < 0.95");
    c.expect(corpus.watermarked_ba >= corpus.baseline_ba - 0.03,
             "watermarked BA dropped more than 3 points");
    c.expect(corpus.wsr >= 0.90, "WSR " + std::to_string(corpus.wsr) + " < 0.90");

    MiniNetClassifier poisoned(corpus.watermarked_params);
    MiniNetClassifier benign(corpus.benign_params);
    VerificationConfig cfg;
    cfg.certainty_margin = 0.5;
    cfg.sample_count = 100;
    const double rsd_poisoned = rsd_experiment(poisoned, corpus.test, corpus.key, cfg, 100);
    const double rsd_benign = rsd_experiment(benign, corpus.test, corpus.key, cfg, 100);
    c.detail << "    RSD watermarked " << rsd_poisoned << ", RSD benign " << rsd_benign
             << "\n";
    c.expect(rsd_poisoned == 1.0, "RSD against watermarked model != 1.00");
    c.expect(rsd_benign == 0.0, "RSD against benign sibling != 0.00");

    const double total = elapsed_training + seconds_since(t0);
    c.detail << "    runtime " << total << "s\n";
    c.expect(total <= 300.0, "runtime above 5 minutes");
}

void criterion5_ablation(const Corpus& corpus) {
    Criterion c("criterion 5: ablation trends over gamma and blend value");

    ArchDescriptor arch;
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 0.05;
    cfg.seed = 1;

    auto wsr_for = [&](double gamma, double blend_value) {
        WatermarkKey key = WatermarkKey::make(
            TriggerSpec{corpus.train.shape(), SquareGeometry{3, Corner::bottom_right, 1, 1},
                        255, blend_value},
            1);
        auto wm = watermark_dataset(corpus.train, key, {gamma, 7, false});
        TrainResult r = train(wm.dataset, arch, cfg);
        MiniNetClassifier model(r.params);
        return watermark_success_rate(model, corpus.test, key);
    };

    std::vector<double> gamma_wsr;
    for (double g : {0.01, 0.02, 0.05, 0.10}) gamma_wsr.push_back(wsr_for(g, 1.0));
    c.detail << "    WSR over gamma:";
    for (double w : gamma_wsr) c.detail << " " << w;
    c.detail << "\n";
    for (std::size_t i = 1; i < gamma_wsr.size(); ++i) {
        c.expect(gamma_wsr[i] >= gamma_wsr[i - 1] - 0.02,
                 "gamma step " + std::to_string(i) + " decreased beyond the 2-point slack");
    }

    std::vector<double> blend_wsr;
    for (double b : {0.1, 0.2, 0.5, 1.0}) blend_wsr.push_back(wsr_for(0.05, b));
    c.detail << "    WSR over blend:";
    for (double w : blend_wsr) c.detail << " " << w;
    c.detail << "\n";
    for (std::size_t i = 1; i < blend_wsr.size(); ++i) {
        c.expect(blend_wsr[i] >= blend_wsr[i - 1] - 0.02,
                 "blend step " + std::to_string(i) + " decreased beyond the 2-point slack");
    }
}

void criterion6_trainer() {
    Criterion c("criterion 6: trainer integrity");

    std::mt19937_64 rng(606);
    std::uniform_int_distribution<int> pix(0, 255);
    auto random_image = [&](Shape shape) {
        std::vector<std::uint8_t> px(shape.pixel_count());
        for (auto& v : px) v = static_cast<std::uint8_t>(pix(rng));
        return Image(shape, std::move(px));
    };

    const LabeledImage mlp_sample{random_image(Shape{1, 6, 6}), 1};
    const double mlp_err = gradient_check(ArchDescriptor{false, 8, {64}}, mlp_sample, 3, 17);
    c.detail << "    MLP max relative gradient error " << mlp_err << "\n";
    c.expect(mlp_err <= 1e-4, "MLP gradient error above 1e-4");

    const LabeledImage conv_sample{random_image(Shape{3, 6, 6}), 2};
    const double conv_err = gradient_check(ArchDescriptor{true, 8, {16}}, conv_sample, 3, 19);
    c.detail << "    conv max relative gradient error " << conv_err << "\n";
    c.expect(conv_err <= 1e-4, "conv gradient error above 1e-4");

    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.per_class = 30;
    spec.shape = Shape{1, 4, 4};
    spec.seed = 4;
    Dataset data = generate_synthetic(spec).first;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    cfg.seed = 23;
    TrainResult r = train(data, ArchDescriptor{}, cfg);
    MiniNetParams fresh = init_params(ArchDescriptor{}, data.shape(), 3, 23, 1.0);
    bool identical = r.params.dense.size() == fresh.dense.size();
    for (std::size_t i = 0; identical && i < fresh.dense.size(); ++i) {
        identical = r.params.dense[i].weights == fresh.dense[i].weights &&
                    r.params.dense[i].biases == fresh.dense[i].biases;
    }
    c.expect(identical, "zero learning rate changed parameters");
}

void criterion7_remote(const Corpus& corpus) {
    Criterion c("criterion 7: remote path equivalence");

    const std::string params_file =
        (fs::temp_directory_path() / "datamark_acceptance_params.json").string();
    save_params(corpus.watermarked_params, params_file);

    auto served = std::make_shared<MiniNetClassifier>(load_params(params_file));
    PosteriorServer server(served);
    const int port = server.start("127.0.0.1", 0);
    RemoteClassifier remote("http://127.0.0.1:" + std::to_string(port));
    MiniNetClassifier local(corpus.watermarked_params);

    VerificationConfig cfg;
    cfg.certainty_margin = 0.5;
    cfg.sample_count = 100;
    cfg.seed = 77;
    const auto local_out = verify_dataset_usage(local, corpus.test, corpus.key, cfg);
    const auto remote_out = verify_dataset_usage(remote, corpus.test, corpus.key, cfg);
    server.stop();
    fs::remove(params_file);

    c.detail << "    local p " << local_out.report.p_value << ", remote p "
             << remote_out.report.p_value << "\n";
    c.expect(local_out.decision == remote_out.decision, "decisions differ");
    c.expect(std::abs(local_out.report.p_value - remote_out.report.p_value) <= 1e-6,
             "p-values differ by more than 1e-6");
}

void criterion8_formats() {
    Criterion c("criterion 8: format robustness under fuzzing");

    const fs::path dir = fs::temp_directory_path() / "datamark_fuzz";
    fs::create_directories(dir);
    const std::string cifar_path = (dir / "fuzz_cifar.bin").string();
    const std::string idx_img_path = (dir / "fuzz_img.idx").string();
    const std::string idx_lab_path = (dir / "fuzz_lab.idx").string();

    std::mt19937_64 rng(808);
    std::uniform_int_distribution<int> pix(0, 255);

    // valid baselines
    std::vector<std::uint8_t> cifar;
    for (int r = 0; r < 4; ++r) {
        cifar.push_back(static_cast<std::uint8_t>(r % 10));
        for (int i = 0; i < 3072; ++i) cifar.push_back(static_cast<std::uint8_t>(pix(rng)));
    }
    std::vector<std::uint8_t> idx_img = {0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0, 4};
    for (int i = 0; i < 48; ++i) idx_img.push_back(static_cast<std::uint8_t>(pix(rng)));
    std::vector<std::uint8_t> idx_lab = {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3};

    auto write = [](const std::string& path, const std::vector<std::uint8_t>& bytes) {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    };

    // the untouched fixtures load
    write(cifar_path, cifar);
    write(idx_img_path, idx_img);
    write(idx_lab_path, idx_lab);
    bool fixtures_ok = true;
    try {
        fixtures_ok = load_cifar10_binary(cifar_path).size() == 4 &&
                      load_idx(idx_img_path, idx_lab_path, 10).size() == 3;
    } catch (const Error&) {
        fixtures_ok = false;
    }
    c.expect(fixtures_ok, "valid fixtures failed to load");

    int escaped = 0;
    for (int iter = 0; iter < 1000; ++iter) {
        const int mode = iter % 4;
        try {
            if (mode == 0) {
                // truncate CIFAR to a non-multiple of 3073
                std::uniform_int_distribution<std::size_t> cut(0, cifar.size() - 1);
                std::size_t n = cut(rng);
                if (n % 3073 == 0) ++n;
                write(cifar_path, std::vector<std::uint8_t>(cifar.begin(), cifar.begin() + n));
                load_cifar10_binary(cifar_path);
            } else if (mode == 1) {
                // corrupt a CIFAR label byte to an out-of-range value
                std::vector<std::uint8_t> bad = cifar;
                std::uniform_int_distribution<int> rec(0, 3);
                std::uniform_int_distribution<int> val(10, 255);
                bad[static_cast<std::size_t>(rec(rng)) * 3073] =
                    static_cast<std::uint8_t>(val(rng));
                write(cifar_path, bad);
                load_cifar10_binary(cifar_path);
            } else if (mode == 2) {
                // truncate the IDX image payload or header
                std::uniform_int_distribution<std::size_t> cut(0, idx_img.size() - 1);
                write(idx_img_path,
                      std::vector<std::uint8_t>(idx_img.begin(), idx_img.begin() + cut(rng)));
                write(idx_lab_path, idx_lab);
                load_idx(idx_img_path, idx_lab_path, 10);
            } else {
                // corrupt one byte in the first 12 header bytes of either file
                std::vector<std::uint8_t> img = idx_img, lab = idx_lab;
                std::uniform_int_distribution<int> which(0, 1);
                std::uniform_int_distribution<int> pos(0, 7);
                std::uniform_int_distribution<int> delta(1, 255);
                if (which(rng) == 0) {
                    const int p = pos(rng);
                    img[p] = static_cast<std::uint8_t>(img[p] + delta(rng));
                } else {
                    const int p = pos(rng);
                    lab[p] = static_cast<std::uint8_t>(lab[p] + delta(rng));
                }
                write(idx_img_path, img);
                write(idx_lab_path, lab);
                load_idx(idx_img_path, idx_lab_path, 10);
            }
            ++escaped;  // no exception: a corrupted input produced a Dataset
        } catch (const FormatError&) {
        } catch (const Error&) {
        }
    }
    c.expect(escaped == 0,
             std::to_string(escaped) + " corrupted inputs decoded without an error");
    fs::remove_all(dir);
}

}  // namespace

int main() {
    criterion1_blend();
    criterion2_statistics();

    const auto t0 = Clock::now();
    const Corpus corpus = build_corpus();
    const double training_time = seconds_since(t0);

    criterion3_type1(corpus);
    criterion4_end_to_end(corpus, training_time);
    criterion5_ablation(corpus);
    criterion6_trainer();
    criterion7_remote(corpus);
    criterion8_formats();

    if (failures > 0) {
        std::cout << failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all acceptance criteria passed\n";
    return 0;
}
