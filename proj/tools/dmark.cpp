// dmark: watermark image-classification datasets with backdoor triggers and
// verify, via a pairwise hypothesis test, whether a classifier was trained on
// the watermarked data.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "datamark/core.hpp"
#include "datamark/io.hpp"
#include "datamark/mock.hpp"
#include "datamark/model.hpp"
#include "datamark/remote.hpp"
#include "datamark/stats.hpp"
#include "datamark/verify.hpp"
#include "datamark/watermark.hpp"

namespace dm = datamark;
using nlohmann::json;

namespace {

struct ShapeOpt {
    int c = 3, w = 8, h = 8;
};

dm::Shape parse_shape(const std::string& s) {
    int c, w, h;
    char x1, x2;
    std::istringstream is(s);
    if (!(is >> c >> x1 >> w >> x2 >> h) || x1 != 'x' || x2 != 'x') {
        throw dm::ValidationError("shape must be CxWxH, got '" + s + "'");
    }
    return dm::Shape{c, w, h};
}

struct DatasetOpts {
    std::string format;  // cifar10 | idx | png | synthetic
    std::string data;    // cifar file/dir or png root
    std::string images, labels;  // idx pair
    std::string labels_csv;      // png
    int classes = 10;
    // synthetic
    int per_class = 625;
    std::string shape = "3x8x8";
    double noise = 25.0;
    std::uint64_t data_seed = 1;
    std::string split = "train";  // synthetic only
};

void add_dataset_options(CLI::App* cmd, DatasetOpts& o) {
    cmd->add_option("--format", o.format, "dataset format: cifar10|idx|png|synthetic")
        ->required()
        ->check(CLI::IsMember({"cifar10", "idx", "png", "synthetic"}));
    cmd->add_option("--data", o.data, "cifar10 file/dir or png root directory");
    cmd->add_option("--images", o.images, "IDX images file");
    cmd->add_option("--labels", o.labels, "IDX labels file");
    cmd->add_option("--labels-csv", o.labels_csv, "CSV of relative_path,label for png");
    cmd->add_option("--classes", o.classes, "number of classes K");
    cmd->add_option("--per-class", o.per_class, "synthetic: samples per class");
    cmd->add_option("--shape", o.shape, "synthetic: image shape CxWxH");
    cmd->add_option("--noise", o.noise, "synthetic: pixel noise stddev");
    cmd->add_option("--data-seed", o.data_seed, "synthetic: generator seed");
    cmd->add_option("--split", o.split, "synthetic: train|test half")
        ->check(CLI::IsMember({"train", "test"}));
}

dm::Dataset load_dataset(const DatasetOpts& o) {
    if (o.format == "cifar10") {
        if (o.data.empty()) throw dm::ValidationError("--data is required for cifar10");
        return dm::load_cifar10_binary(o.data);
    }
    if (o.format == "idx") {
        if (o.images.empty() || o.labels.empty()) {
            throw dm::ValidationError("--images and --labels are required for idx");
        }
        return dm::load_idx(o.images, o.labels, o.classes);
    }
    if (o.format == "png") {
        if (o.data.empty() || o.labels_csv.empty()) {
            throw dm::ValidationError("--data and --labels-csv are required for png");
        }
        return dm::load_png_dir(o.data, o.labels_csv, o.classes);
    }
    dm::SyntheticSpec spec;
    spec.num_classes = o.classes;
    spec.per_class = o.per_class;
    spec.shape = parse_shape(o.shape);
    spec.noise_stddev = o.noise;
    spec.seed = o.data_seed;
    auto [train, test] = dm::generate_synthetic(spec);
    return o.split == "train" ? std::move(train) : std::move(test);
}

struct TriggerOpts {
    std::string kind = "square";
    int side = 3;
    std::string anchor = "bottom_right";
    int dx = 1, dy = 1;
    int band_width = 3;
    std::string orientation = "horizontal";
    int position = -1;
    int intensity = 255;
    double blend = 1.0;
};

void add_trigger_options(CLI::App* cmd, TriggerOpts& o) {
    cmd->add_option("--kind", o.kind, "trigger kind: square|line")
        ->check(CLI::IsMember({"square", "line"}));
    cmd->add_option("--side", o.side, "square: side length in pixels");
    cmd->add_option("--anchor", o.anchor, "square: anchor corner")
        ->check(CLI::IsMember({"top_left", "top_right", "bottom_left", "bottom_right"}));
    cmd->add_option("--dx", o.dx, "square: x offset from the anchor");
    cmd->add_option("--dy", o.dy, "square: y offset from the anchor");
    cmd->add_option("--band-width", o.band_width, "line: band width in pixels");
    cmd->add_option("--orientation", o.orientation, "line: horizontal|vertical")
        ->check(CLI::IsMember({"horizontal", "vertical"}));
    cmd->add_option("--position", o.position, "line: start row/col, -1 = far edge");
    cmd->add_option("--intensity", o.intensity, "trigger pixel value 0-255");
    cmd->add_option("--blend", o.blend, "blend value in (0,1]; 1.0 stamps the pattern");
}

dm::TriggerSpec make_trigger_spec(const TriggerOpts& o, dm::Shape shape) {
    dm::TriggerSpec spec;
    spec.shape = shape;
    spec.intensity = o.intensity;
    spec.blend_value = o.blend;
    if (o.kind == "square") {
        spec.geometry = dm::SquareGeometry{o.side, dm::corner_from_string(o.anchor), o.dx,
                                           o.dy};
    } else {
        spec.geometry = dm::LineGeometry{o.band_width,
                                         dm::orientation_from_string(o.orientation),
                                         o.position};
    }
    return spec;
}

struct ModelOpts {
    std::string params;
    std::string endpoint;
    std::string mock;
    std::vector<double> constant_posterior;
    double gap_mean = 0.0;
    double gap_stddev = 0.05;
    double base_p = 0.1;
    std::uint64_t mock_seed = 0;
};

void add_model_options(CLI::App* cmd, ModelOpts& o) {
    cmd->add_option("--params", o.params, "trained model parameters JSON");
    cmd->add_option("--endpoint", o.endpoint, "remote classifier http://host:port");
    cmd->add_option("--mock", o.mock,
                    "mock classifier: perfect_backdoor|constant|uniform|stochastic_gap|echo");
    cmd->add_option("--posterior", o.constant_posterior, "constant mock posterior");
    cmd->add_option("--gap-mean", o.gap_mean, "stochastic_gap: mean of q-p");
    cmd->add_option("--gap-stddev", o.gap_stddev, "stochastic_gap: stddev of q-p");
    cmd->add_option("--base-p", o.base_p, "stochastic_gap: benign posterior at target");
    cmd->add_option("--mock-seed", o.mock_seed, "mock randomness seed");
}

std::shared_ptr<dm::Classifier> build_model(const ModelOpts& o,
                                            const std::optional<dm::WatermarkKey>& key,
                                            std::shared_ptr<const dm::Dataset> lookup,
                                            int num_classes) {
    const int sources = !o.params.empty() + !o.endpoint.empty() + !o.mock.empty();
    if (sources != 1) {
        throw dm::ValidationError("exactly one of --params, --endpoint, --mock is required");
    }
    if (!o.params.empty()) {
        return std::make_shared<dm::MiniNetClassifier>(dm::load_params(o.params));
    }
    if (!o.endpoint.empty()) {
        return std::make_shared<dm::RemoteClassifier>(o.endpoint);
    }
    dm::MockSpec spec;
    spec.kind = dm::mock_kind_from_string(o.mock);
    spec.num_classes = num_classes;
    spec.constant_posterior = o.constant_posterior;
    spec.gap_mean = o.gap_mean;
    spec.gap_stddev = o.gap_stddev;
    spec.base_p = o.base_p;
    spec.seed = o.mock_seed;
    spec.key = key;
    if (key) spec.target_label = key->target_label;
    spec.lookup = std::move(lookup);
    return dm::make_mock(spec);
}

int run(int argc, char** argv) {
    CLI::App app{"backdoor-based dataset watermarking and ownership verification"};
    app.require_subcommand(1);

    // make-trigger
    auto* mk = app.add_subcommand("make-trigger", "emit a watermark key JSON");
    TriggerOpts mk_trig;
    std::string mk_shape = "3x32x32", mk_out;
    int mk_target = 1;
    add_trigger_options(mk, mk_trig);
    mk->add_option("--image-shape", mk_shape, "dataset image shape CxWxH")->required();
    mk->add_option("--target-label", mk_target, "target label (0-based)")->required();
    mk->add_option("--out", mk_out, "write the key JSON here");

    // watermark
    auto* wm = app.add_subcommand("watermark", "blend the trigger into a training set");
    DatasetOpts wm_data;
    add_dataset_options(wm, wm_data);
    std::string wm_key, wm_out, wm_out_images, wm_out_labels, wm_manifest;
    double wm_rate = 0.05;
    std::uint64_t wm_seed = 0;
    bool wm_exclude = false;
    wm->add_option("--key", wm_key, "watermark key JSON")->required();
    wm->add_option("--rate", wm_rate, "watermarking rate gamma");
    wm->add_option("--seed", wm_seed, "selection seed");
    wm->add_flag("--exclude-target", wm_exclude,
                 "do not poison samples already carrying the target label");
    wm->add_option("--out", wm_out, "output file (cifar10) or directory (png)");
    wm->add_option("--out-images", wm_out_images, "output IDX images file");
    wm->add_option("--out-labels", wm_out_labels, "output IDX labels file");
    wm->add_option("--manifest", wm_manifest, "write modified-index manifest JSON here");

    // train
    auto* tr = app.add_subcommand("train", "train a mini-net on a dataset");
    DatasetOpts tr_data;
    add_dataset_options(tr, tr_data);
    std::string tr_arch = "mlp", tr_out;
    std::vector<int> tr_hidden = {64};
    int tr_filters = 8;
    dm::TrainConfig tr_cfg;
    tr->add_option("--arch", tr_arch, "mlp|conv")->check(CLI::IsMember({"mlp", "conv"}));
    tr->add_option("--hidden", tr_hidden, "dense hidden layer widths");
    tr->add_option("--filters", tr_filters, "conv filters");
    tr->add_option("--epochs", tr_cfg.epochs, "training epochs");
    tr->add_option("--batch", tr_cfg.batch_size, "mini-batch size");
    tr->add_option("--lr", tr_cfg.learning_rate, "learning rate");
    tr->add_option("--momentum", tr_cfg.momentum, "SGD momentum");
    tr->add_option("--seed", tr_cfg.seed, "training seed");
    tr->add_option("--init-scale", tr_cfg.weight_init_scale, "weight init scale");
    tr->add_option("--out", tr_out, "write model parameters JSON here")->required();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "compute BA and WSR on a test set");
    DatasetOpts ev_data;
    ModelOpts ev_model;
    std::string ev_key;
    add_dataset_options(ev, ev_data);
    add_model_options(ev, ev_model);
    ev->add_option("--key", ev_key, "watermark key JSON")->required();

    // verify
    auto* vf = app.add_subcommand("verify", "pairwise hypothesis test against a classifier");
    DatasetOpts vf_data;
    ModelOpts vf_model;
    std::string vf_key, vf_test = "t";
    dm::VerificationConfig vf_cfg;
    int vf_source = -1;
    bool vf_verbose = false;
    add_dataset_options(vf, vf_data);
    add_model_options(vf, vf_model);
    vf->add_option("--key", vf_key, "watermark key JSON")->required();
    vf->add_option("--alpha", vf_cfg.certainty_margin, "certainty margin alpha");
    vf->add_option("--samples", vf_cfg.sample_count, "verification sample count M");
    vf->add_option("--significance", vf_cfg.significance, "significance level");
    vf->add_option("--source-label", vf_source, "class to draw samples from");
    vf->add_option("--seed", vf_cfg.seed, "sampling seed");
    vf->add_option("--test", vf_test, "t|wilcoxon")->check(CLI::IsMember({"t", "wilcoxon"}));
    vf->add_flag("--verbose", vf_verbose, "include pairs and differences in the JSON");

    // rsd
    auto* rs = app.add_subcommand("rsd", "ratio of successful detections over repetitions");
    DatasetOpts rs_data;
    ModelOpts rs_model;
    std::string rs_key, rs_test = "t";
    dm::VerificationConfig rs_cfg;
    int rs_source = -1, rs_reps = 100;
    add_dataset_options(rs, rs_data);
    add_model_options(rs, rs_model);
    rs->add_option("--key", rs_key, "watermark key JSON")->required();
    rs->add_option("--alpha", rs_cfg.certainty_margin, "certainty margin alpha");
    rs->add_option("--samples", rs_cfg.sample_count, "verification sample count M");
    rs->add_option("--significance", rs_cfg.significance, "significance level");
    rs->add_option("--source-label", rs_source, "class to draw samples from");
    rs->add_option("--seed", rs_cfg.seed, "base sampling seed");
    rs->add_option("--test", rs_test, "t|wilcoxon")->check(CLI::IsMember({"t", "wilcoxon"}));
    rs->add_option("--repetitions", rs_reps, "number of verification repetitions");

    // serve-mock
    auto* sv = app.add_subcommand("serve-mock", "serve a classifier over HTTP");
    ModelOpts sv_model;
    std::string sv_key, sv_host = "127.0.0.1";
    int sv_port = 8464, sv_classes = 10;
    add_model_options(sv, sv_model);
    sv->add_option("--key", sv_key, "watermark key JSON (for trigger-aware mocks)");
    sv->add_option("--classes", sv_classes, "number of classes for mocks");
    sv->add_option("--host", sv_host, "bind address");
    sv->add_option("--port", sv_port, "bind port");

    // ablate
    auto* ab = app.add_subcommand("ablate", "sweep gamma or blend and report WSR per value");
    DatasetOpts ab_data;
    TriggerOpts ab_trig;
    std::string ab_param = "gamma", ab_out;
    std::vector<double> ab_values;
    int ab_target = 1;
    double ab_rate = 0.05;
    dm::TrainConfig ab_cfg;
    std::vector<int> ab_hidden = {64};
    std::uint64_t ab_wm_seed = 0;
    add_dataset_options(ab, ab_data);
    add_trigger_options(ab, ab_trig);
    ab->add_option("--param", ab_param, "gamma|blend")
        ->check(CLI::IsMember({"gamma", "blend"}));
    ab->add_option("--values", ab_values, "values to sweep")->required()->delimiter(',');
    ab->add_option("--target-label", ab_target, "target label");
    ab->add_option("--rate", ab_rate, "fixed gamma when sweeping blend");
    ab->add_option("--epochs", ab_cfg.epochs, "training epochs");
    ab->add_option("--batch", ab_cfg.batch_size, "mini-batch size");
    ab->add_option("--lr", ab_cfg.learning_rate, "learning rate");
    ab->add_option("--momentum", ab_cfg.momentum, "SGD momentum");
    ab->add_option("--seed", ab_cfg.seed, "training seed");
    ab->add_option("--hidden", ab_hidden, "dense hidden layer widths");
    ab->add_option("--wm-seed", ab_wm_seed, "poison selection seed");
    ab->add_option("--out", ab_out, "write the CSV here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    if (mk->parsed()) {
        const dm::Shape shape = parse_shape(mk_shape);
        const dm::WatermarkKey key =
            dm::WatermarkKey::make(make_trigger_spec(mk_trig, shape), mk_target);
        const std::string text = dm::key_to_json(key);
        if (!mk_out.empty()) dm::save_key(key, mk_out);
        std::cout << text << "\n";
        return 0;
    }

    if (wm->parsed()) {
        const dm::Dataset data = load_dataset(wm_data);
        const dm::WatermarkKey key = dm::load_key(wm_key);
        dm::WatermarkConfig cfg{wm_rate, wm_seed, wm_exclude};
        const dm::WatermarkResult result = dm::watermark_dataset(data, key, cfg);
        if (wm_data.format == "cifar10") {
            if (wm_out.empty()) throw dm::ValidationError("--out is required for cifar10");
            dm::save_cifar10_binary(result.dataset, wm_out);
        } else if (wm_data.format == "idx") {
            if (wm_out_images.empty() || wm_out_labels.empty()) {
                throw dm::ValidationError("--out-images/--out-labels are required for idx");
            }
            dm::save_idx(result.dataset, wm_out_images, wm_out_labels);
        } else {
            if (wm_out.empty()) throw dm::ValidationError("--out directory is required");
            dm::save_png_dir(result.dataset, wm_out);
        }
        json j;
        j["modified_indices"] = result.modified_indices;
        j["modified_count"] = result.modified_indices.size();
        j["total"] = data.size();
        if (!wm_manifest.empty()) {
            std::ofstream out(wm_manifest);
            out << j.dump(2) << "\n";
        }
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (tr->parsed()) {
        const dm::Dataset data = load_dataset(tr_data);
        dm::ArchDescriptor arch;
        arch.conv_frontend = tr_arch == "conv";
        arch.conv_filters = tr_filters;
        arch.hidden = tr_hidden;
        const dm::TrainResult result = dm::train(data, arch, tr_cfg);
        dm::save_params(result.params, tr_out);
        json j;
        j["epoch_losses"] = result.epoch_losses;
        j["parameters"] = result.params.parameter_count();
        j["out"] = tr_out;
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (ev->parsed()) {
        auto data = std::make_shared<const dm::Dataset>(load_dataset(ev_data));
        const dm::WatermarkKey key = dm::load_key(ev_key);
        const auto model = build_model(ev_model, key, data, data->num_classes());
        const dm::MetricsReport m = dm::evaluate_metrics(*model, *data, key);
        std::cout << dm::metrics_to_json(m) << "\n";
        return 0;
    }

    if (vf->parsed()) {
        auto data = std::make_shared<const dm::Dataset>(load_dataset(vf_data));
        const dm::WatermarkKey key = dm::load_key(vf_key);
        const auto model = build_model(vf_model, key, data, data->num_classes());
        if (vf_source >= 0) vf_cfg.source_label = vf_source;
        vf_cfg.test_kind = vf_test == "t" ? dm::TestKind::t : dm::TestKind::wilcoxon;
        const dm::VerificationOutcome out = dm::verify_dataset_usage(*model, *data, key, vf_cfg);
        std::cerr << (out.decision == dm::Decision::trained_on_watermarked
                          ? "verdict: H0 rejected - the model was trained on the "
                            "watermarked dataset"
                          : "verdict: H0 not rejected - no evidence of training on the "
                            "watermarked dataset")
                  << " (p=" << out.report.p_value << ")\n";
        std::cout << dm::outcome_to_json(out, vf_verbose) << "\n";
        return 0;
    }

    if (rs->parsed()) {
        auto data = std::make_shared<const dm::Dataset>(load_dataset(rs_data));
        const dm::WatermarkKey key = dm::load_key(rs_key);
        const auto model = build_model(rs_model, key, data, data->num_classes());
        if (rs_source >= 0) rs_cfg.source_label = rs_source;
        rs_cfg.test_kind = rs_test == "t" ? dm::TestKind::t : dm::TestKind::wilcoxon;
        const double rsd = dm::rsd_experiment(*model, *data, key, rs_cfg, rs_reps);
        json j;
        j["rsd"] = rsd;
        j["repetitions"] = rs_reps;
        j["certainty_margin"] = rs_cfg.certainty_margin;
        j["sample_count"] = rs_cfg.sample_count;
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (sv->parsed()) {
        std::optional<dm::WatermarkKey> key;
        if (!sv_key.empty()) key = dm::load_key(sv_key);
        const auto model = build_model(sv_model, key, nullptr, sv_classes);
        dm::PosteriorServer server(model);
        std::cerr << "serving posteriors on " << sv_host << ":" << sv_port << "\n";
        server.run(sv_host, sv_port);
        return 0;
    }

    if (ab->parsed()) {
        const dm::Dataset train_set = load_dataset(ab_data);
        DatasetOpts test_opts = ab_data;
        test_opts.split = "test";
        if (ab_data.format != "synthetic") {
            throw dm::ValidationError("ablate currently supports --format synthetic only");
        }
        const dm::Dataset test_set = load_dataset(test_opts);

        dm::ArchDescriptor arch;
        arch.hidden = ab_hidden;
        std::ostringstream csv;
        csv << "param,value,wsr,ba\n";
        for (double value : ab_values) {
            TriggerOpts trig = ab_trig;
            double rate = ab_rate;
            if (ab_param == "gamma") {
                rate = value;
            } else {
                trig.blend = value;
            }
            const dm::WatermarkKey key = dm::WatermarkKey::make(
                make_trigger_spec(trig, train_set.shape()), ab_target);
            const dm::WatermarkConfig cfg{rate, ab_wm_seed, false};
            const dm::WatermarkResult wmres = dm::watermark_dataset(train_set, key, cfg);
            const dm::TrainResult tres = dm::train(wmres.dataset, arch, ab_cfg);
            const dm::MiniNetClassifier model(tres.params);
            const double wsr = dm::watermark_success_rate(model, test_set, key);
            const double ba = dm::benign_accuracy(model, test_set);
            csv << ab_param << "," << value << "," << wsr << "," << ba << "\n";
            std::cerr << ab_param << "=" << value << " wsr=" << wsr << " ba=" << ba << "\n";
        }
        if (!ab_out.empty()) {
            std::ofstream out(ab_out);
            out << csv.str();
        } else {
            std::cout << csv.str();
        }
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const dm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
