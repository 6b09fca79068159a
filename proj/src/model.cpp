#include "datamark/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace datamark {

using nlohmann::json;

namespace {

constexpr int kKernel = 3;

struct Dims {
    int conv_w = 0, conv_h = 0;  // conv output spatial size
    int pool_w = 0, pool_h = 0;
    std::size_t conv_size = 0;  // filters * conv_w * conv_h
    std::size_t pool_size = 0;
    std::size_t dense_in = 0;  // input width of the first dense layer
};

Dims compute_dims(const ArchDescriptor& arch, const Shape& shape) {
    Dims d;
    if (arch.conv_frontend) {
        if (shape.width < kKernel || shape.height < kKernel) {
            throw ValidationError("input " + to_string(shape) +
                                  " too small for a 3x3 convolution");
        }
        d.conv_w = shape.width - kKernel + 1;
        d.conv_h = shape.height - kKernel + 1;
        d.pool_w = d.conv_w / 2;
        d.pool_h = d.conv_h / 2;
        if (d.pool_w < 1 || d.pool_h < 1) {
            throw ValidationError("input " + to_string(shape) + " too small for 2x2 pooling");
        }
        d.conv_size = static_cast<std::size_t>(arch.conv_filters) * d.conv_w * d.conv_h;
        d.pool_size = static_cast<std::size_t>(arch.conv_filters) * d.pool_w * d.pool_h;
        d.dense_in = d.pool_size;
    } else {
        d.dense_in = shape.pixel_count();
    }
    return d;
}

struct Activations {
    std::vector<double> conv_pre;
    std::vector<double> conv_act;
    std::vector<double> pool_out;
    std::vector<std::size_t> pool_argmax;       // index into conv_act
    std::vector<std::vector<double>> layer_in;  // input of each dense layer
    std::vector<std::vector<double>> pre;       // pre-activation of each dense layer
    std::vector<double> logits;
};

std::vector<double> dense_forward(const DenseLayer& layer, const std::vector<double>& in) {
    std::vector<double> out(layer.out);
    for (int o = 0; o < layer.out; ++o) {
        double acc = layer.biases[o];
        const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in;
        for (int i = 0; i < layer.in; ++i) acc += w[i] * in[i];
        out[o] = acc;
    }
    return out;
}

void forward(const MiniNetParams& p, const std::vector<double>& input, Activations& act) {
    const Dims d = compute_dims(p.arch, p.input_shape);
    const int W = p.input_shape.width;
    const int H = p.input_shape.height;
    const int C = p.input_shape.channels;

    std::vector<double> dense_input;
    if (p.arch.conv_frontend) {
        const int F = p.arch.conv_filters;
        act.conv_pre.assign(d.conv_size, 0.0);
        for (int f = 0; f < F; ++f) {
            for (int y = 0; y < d.conv_h; ++y) {
                for (int x = 0; x < d.conv_w; ++x) {
                    double acc = p.conv_biases[f];
                    for (int c = 0; c < C; ++c) {
                        for (int ky = 0; ky < kKernel; ++ky) {
                            const double* in_row =
                                input.data() + (static_cast<std::size_t>(c) * H + y + ky) * W + x;
                            const double* k_row =
                                p.conv_weights.data() +
                                ((static_cast<std::size_t>(f) * C + c) * kKernel + ky) * kKernel;
                            for (int kx = 0; kx < kKernel; ++kx) acc += k_row[kx] * in_row[kx];
                        }
                    }
                    act.conv_pre[(static_cast<std::size_t>(f) * d.conv_h + y) * d.conv_w + x] = acc;
                }
            }
        }
        act.conv_act.resize(d.conv_size);
        for (std::size_t i = 0; i < d.conv_size; ++i) {
            act.conv_act[i] = act.conv_pre[i] > 0.0 ? act.conv_pre[i] : 0.0;
        }
        act.pool_out.assign(d.pool_size, 0.0);
        act.pool_argmax.assign(d.pool_size, 0);
        for (int f = 0; f < F; ++f) {
            for (int py = 0; py < d.pool_h; ++py) {
                for (int px = 0; px < d.pool_w; ++px) {
                    std::size_t best = (static_cast<std::size_t>(f) * d.conv_h + 2 * py) * d.conv_w +
                                       2 * px;
                    for (int oy = 0; oy < 2; ++oy) {
                        for (int ox = 0; ox < 2; ++ox) {
                            const std::size_t i =
                                (static_cast<std::size_t>(f) * d.conv_h + 2 * py + oy) * d.conv_w +
                                2 * px + ox;
                            if (act.conv_act[i] > act.conv_act[best]) best = i;
                        }
                    }
                    const std::size_t o =
                        (static_cast<std::size_t>(f) * d.pool_h + py) * d.pool_w + px;
                    act.pool_out[o] = act.conv_act[best];
                    act.pool_argmax[o] = best;
                }
            }
        }
        dense_input = act.pool_out;
    } else {
        dense_input = input;
    }

    act.layer_in.clear();
    act.pre.clear();
    std::vector<double> cur = std::move(dense_input);
    for (std::size_t l = 0; l < p.dense.size(); ++l) {
        act.layer_in.push_back(cur);
        std::vector<double> z = dense_forward(p.dense[l], cur);
        act.pre.push_back(z);
        if (l + 1 < p.dense.size()) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
            cur = std::move(z);
        } else {
            act.logits = std::move(z);
        }
    }
}

MiniNetParams zero_like(const MiniNetParams& p) {
    MiniNetParams g = p;
    std::fill(g.conv_weights.begin(), g.conv_weights.end(), 0.0);
    std::fill(g.conv_biases.begin(), g.conv_biases.end(), 0.0);
    for (auto& layer : g.dense) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.biases.begin(), layer.biases.end(), 0.0);
    }
    return g;
}

std::vector<double*> all_params(MiniNetParams& p) {
    std::vector<double*> ptrs;
    ptrs.reserve(p.parameter_count());
    for (double& v : p.conv_weights) ptrs.push_back(&v);
    for (double& v : p.conv_biases) ptrs.push_back(&v);
    for (auto& layer : p.dense) {
        for (double& v : layer.weights) ptrs.push_back(&v);
        for (double& v : layer.biases) ptrs.push_back(&v);
    }
    return ptrs;
}

// Cross-entropy loss of one sample; accumulates gradients into *grads when set.
double loss_and_grad(const MiniNetParams& p, const std::vector<double>& input, int label,
                     MiniNetParams* grads) {
    Activations act;
    forward(p, input, act);
    const PosteriorVector post = softmax(act.logits);
    const double loss = -std::log(std::max(post[label], 1e-300));
    if (grads == nullptr) return loss;

    std::vector<double> delta(post.probs);
    delta[label] -= 1.0;

    for (int l = static_cast<int>(p.dense.size()) - 1; l >= 0; --l) {
        const DenseLayer& layer = p.dense[l];
        DenseLayer& g = grads->dense[l];
        const std::vector<double>& in = act.layer_in[l];
        for (int o = 0; o < layer.out; ++o) {
            g.biases[o] += delta[o];
            double* gw = g.weights.data() + static_cast<std::size_t>(o) * layer.in;
            for (int i = 0; i < layer.in; ++i) gw[i] += delta[o] * in[i];
        }
        if (l == 0 && !p.arch.conv_frontend) break;
        std::vector<double> prev(layer.in, 0.0);
        for (int o = 0; o < layer.out; ++o) {
            const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in;
            for (int i = 0; i < layer.in; ++i) prev[i] += w[i] * delta[o];
        }
        if (l > 0) {
            for (int i = 0; i < layer.in; ++i) {
                if (act.pre[l - 1][i] <= 0.0) prev[i] = 0.0;
            }
            delta = std::move(prev);
        } else {
            // Into the conv front end: unpool, ReLU mask, then kernel grads.
            const Dims d = compute_dims(p.arch, p.input_shape);
            std::vector<double> dconv(d.conv_size, 0.0);
            for (std::size_t o = 0; o < d.pool_size; ++o) {
                dconv[act.pool_argmax[o]] += prev[o];
            }
            for (std::size_t i = 0; i < d.conv_size; ++i) {
                if (act.conv_pre[i] <= 0.0) dconv[i] = 0.0;
            }
            const int W = p.input_shape.width;
            const int H = p.input_shape.height;
            const int C = p.input_shape.channels;
            for (int f = 0; f < p.arch.conv_filters; ++f) {
                for (int y = 0; y < d.conv_h; ++y) {
                    for (int x = 0; x < d.conv_w; ++x) {
                        const double dv =
                            dconv[(static_cast<std::size_t>(f) * d.conv_h + y) * d.conv_w + x];
                        if (dv == 0.0) continue;
                        grads->conv_biases[f] += dv;
                        for (int c = 0; c < C; ++c) {
                            for (int ky = 0; ky < kKernel; ++ky) {
                                const double* in_row =
                                    input.data() +
                                    (static_cast<std::size_t>(c) * H + y + ky) * W + x;
                                double* gk_row =
                                    grads->conv_weights.data() +
                                    ((static_cast<std::size_t>(f) * C + c) * kKernel + ky) *
                                        kKernel;
                                for (int kx = 0; kx < kKernel; ++kx) {
                                    gk_row[kx] += dv * in_row[kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return loss;
}

std::vector<double> scaled_input(const Image& image) {
    const auto px = image.pixels();
    std::vector<double> in(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) in[i] = px[i] / 255.0;
    return in;
}

}  // namespace

std::size_t MiniNetParams::parameter_count() const {
    std::size_t n = conv_weights.size() + conv_biases.size();
    for (const auto& layer : dense) n += layer.weights.size() + layer.biases.size();
    return n;
}

MiniNetParams init_params(const ArchDescriptor& arch, Shape input_shape, int num_classes,
                          std::uint64_t seed, double weight_init_scale) {
    if (num_classes < 2) {
        throw ValidationError("network needs at least 2 output classes");
    }
    if (arch.conv_frontend && arch.conv_filters < 1) {
        throw ValidationError("conv front end needs at least one filter");
    }
    for (int h : arch.hidden) {
        if (h < 1) throw ValidationError("hidden layer width must be positive");
    }

    MiniNetParams p;
    p.arch = arch;
    p.input_shape = input_shape;
    p.num_classes = num_classes;
    p.init_seed = seed;
    const Dims d = compute_dims(arch, input_shape);

    std::mt19937_64 rng(seed);
    auto fill_uniform = [&](std::vector<double>& v, std::size_t n, int fan_in) {
        const double s = weight_init_scale / std::sqrt(static_cast<double>(fan_in));
        v.assign(n, 0.0);
        if (s == 0.0) return;
        std::uniform_real_distribution<double> dist(-s, s);
        for (double& x : v) x = dist(rng);
    };

    if (arch.conv_frontend) {
        const int fan_in = input_shape.channels * kKernel * kKernel;
        fill_uniform(p.conv_weights,
                     static_cast<std::size_t>(arch.conv_filters) * input_shape.channels *
                         kKernel * kKernel,
                     fan_in);
        p.conv_biases.assign(arch.conv_filters, 0.0);
    }

    int in_dim = static_cast<int>(d.dense_in);
    std::vector<int> widths = arch.hidden;
    widths.push_back(num_classes);
    for (int out_dim : widths) {
        DenseLayer layer;
        layer.in = in_dim;
        layer.out = out_dim;
        fill_uniform(layer.weights, static_cast<std::size_t>(out_dim) * in_dim, in_dim);
        layer.biases.assign(out_dim, 0.0);
        p.dense.push_back(std::move(layer));
        in_dim = out_dim;
    }
    return p;
}

TrainResult train(const Dataset& train_set, const ArchDescriptor& arch,
                  const TrainConfig& config) {
    if (config.epochs < 1 || config.batch_size < 1) {
        throw ValidationError("epochs and batch_size must be >= 1");
    }
    if (!(config.learning_rate >= 0.0) || !(config.momentum >= 0.0)) {
        throw ValidationError("learning_rate and momentum must be nonnegative");
    }

    MiniNetParams params = init_params(arch, train_set.shape(), train_set.num_classes(),
                                       config.seed, config.weight_init_scale);
    MiniNetParams velocity = zero_like(params);
    MiniNetParams grads = zero_like(params);
    auto w_ptrs = all_params(params);
    auto v_ptrs = all_params(velocity);
    auto g_ptrs = all_params(grads);
    const std::size_t np = w_ptrs.size();

    std::vector<std::vector<double>> inputs;
    inputs.reserve(train_set.size());
    for (const auto& s : train_set.samples()) inputs.push_back(scaled_input(s.image));

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(),
                                             start + static_cast<std::size_t>(config.batch_size));
            for (std::size_t i = 0; i < np; ++i) *g_ptrs[i] = 0.0;
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                batch_loss +=
                    loss_and_grad(params, inputs[idx], train_set[idx].label, &grads);
            }
            if (!std::isfinite(batch_loss)) {
                throw Error("training diverged at epoch " + std::to_string(epoch) +
                            ", batch starting at sample " + std::to_string(start));
            }
            epoch_loss += batch_loss;
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = 0; i < np; ++i) {
                *v_ptrs[i] = config.momentum * *v_ptrs[i] + *g_ptrs[i] * inv;
                *w_ptrs[i] -= config.learning_rate * *v_ptrs[i];
            }
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    result.params = std::move(params);
    return result;
}

PosteriorVector predict_posterior(const MiniNetParams& params, const Image& image) {
    if (!(image.shape() == params.input_shape)) {
        throw ValidationError("image shape " + to_string(image.shape()) +
                              " does not match network input " + to_string(params.input_shape));
    }
    Activations act;
    const std::vector<double> input = scaled_input(image);
    forward(params, input, act);
    return softmax(act.logits);
}

PosteriorVector MiniNetClassifier::posterior(const Image& image) const {
    return predict_posterior(params_, image);
}

double gradient_check(const ArchDescriptor& arch, const LabeledImage& sample,
                      int num_classes, std::uint64_t seed) {
    MiniNetParams params = init_params(arch, sample.image.shape(), num_classes, seed, 1.0);

    // Shift inputs off exact ReLU kink points.
    std::vector<double> input = scaled_input(sample.image);
    for (double& v : input) v += 1e-3;

    MiniNetParams analytic = zero_like(params);
    loss_and_grad(params, input, sample.label, &analytic);

    auto w_ptrs = all_params(params);
    auto a_ptrs = all_params(analytic);
    constexpr double step = 1e-4;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < w_ptrs.size(); ++i) {
        const double saved = *w_ptrs[i];
        *w_ptrs[i] = saved + step;
        const double up = loss_and_grad(params, input, sample.label, nullptr);
        *w_ptrs[i] = saved - step;
        const double down = loss_and_grad(params, input, sample.label, nullptr);
        *w_ptrs[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = *a_ptrs[i];
        if (!std::isfinite(a) || !std::isfinite(numeric)) {
            throw Error("non-finite gradient at parameter " + std::to_string(i));
        }
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

std::string params_to_json(const MiniNetParams& p) {
    json j;
    j["version"] = 1;
    j["arch"] = {{"conv_frontend", p.arch.conv_frontend},
                 {"conv_filters", p.arch.conv_filters},
                 {"hidden", p.arch.hidden}};
    j["input_shape"] = {p.input_shape.channels, p.input_shape.width, p.input_shape.height};
    j["num_classes"] = p.num_classes;
    j["seed"] = p.init_seed;
    j["conv_weights"] = p.conv_weights;
    j["conv_biases"] = p.conv_biases;
    json layers = json::array();
    for (const auto& layer : p.dense) {
        layers.push_back({{"in", layer.in},
                          {"out", layer.out},
                          {"weights", layer.weights},
                          {"biases", layer.biases}});
    }
    j["dense"] = layers;
    return j.dump();
}

MiniNetParams params_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model parameters are not valid JSON: ") + e.what());
    }
    try {
        MiniNetParams p;
        p.arch.conv_frontend = j.at("arch").at("conv_frontend").get<bool>();
        p.arch.conv_filters = j.at("arch").at("conv_filters").get<int>();
        p.arch.hidden = j.at("arch").at("hidden").get<std::vector<int>>();
        const auto shape = j.at("input_shape");
        p.input_shape = Shape{shape.at(0).get<int>(), shape.at(1).get<int>(),
                              shape.at(2).get<int>()};
        p.num_classes = j.at("num_classes").get<int>();
        p.init_seed = j.at("seed").get<std::uint64_t>();
        p.conv_weights = j.at("conv_weights").get<std::vector<double>>();
        p.conv_biases = j.at("conv_biases").get<std::vector<double>>();
        for (const auto& l : j.at("dense")) {
            DenseLayer layer;
            layer.in = l.at("in").get<int>();
            layer.out = l.at("out").get<int>();
            layer.weights = l.at("weights").get<std::vector<double>>();
            layer.biases = l.at("biases").get<std::vector<double>>();
            if (layer.weights.size() != static_cast<std::size_t>(layer.in) * layer.out ||
                layer.biases.size() != static_cast<std::size_t>(layer.out)) {
                throw FormatError("dense layer array sizes do not match declared dims");
            }
            p.dense.push_back(std::move(layer));
        }
        if (p.dense.empty()) throw FormatError("model has no dense layers");
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model parameters missing field: ") + e.what());
    }
}

void save_params(const MiniNetParams& params, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << params_to_json(params) << "\n";
}

MiniNetParams load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model parameters '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return params_from_json(text);
}

}  // namespace datamark
