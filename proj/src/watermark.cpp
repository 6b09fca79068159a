#include "datamark/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace datamark {

using nlohmann::json;

Corner corner_from_string(const std::string& s) {
    if (s == "top_left") return Corner::top_left;
    if (s == "top_right") return Corner::top_right;
    if (s == "bottom_left") return Corner::bottom_left;
    if (s == "bottom_right") return Corner::bottom_right;
    throw ValidationError("unknown corner '" + s + "'");
}

std::string to_string(Corner c) {
    switch (c) {
        case Corner::top_left: return "top_left";
        case Corner::top_right: return "top_right";
        case Corner::bottom_left: return "bottom_left";
        case Corner::bottom_right: return "bottom_right";
    }
    throw ValidationError("invalid corner value");
}

Orientation orientation_from_string(const std::string& s) {
    if (s == "horizontal") return Orientation::horizontal;
    if (s == "vertical") return Orientation::vertical;
    throw ValidationError("unknown orientation '" + s + "'");
}

std::string to_string(Orientation o) {
    return o == Orientation::horizontal ? "horizontal" : "vertical";
}

namespace {

void check_intensity(int intensity) {
    if (intensity < 0 || intensity > 255) {
        throw ValidationError("trigger intensity " + std::to_string(intensity) +
                              " outside [0, 255]");
    }
}

void check_blend_value(double blend_value) {
    if (!(blend_value > 0.0 && blend_value <= 1.0)) {
        throw ValidationError("blend_value " + std::to_string(blend_value) +
                              " outside (0, 1]");
    }
}

Trigger build_patch_trigger(Shape shape, int x0, int y0, int pw, int ph, int intensity,
                            double blend_value) {
    std::vector<std::uint8_t> pattern(shape.pixel_count(), 0);
    std::vector<double> weights(shape.pixel_count(), 0.0);
    Image probe = Image::filled(shape, 0);  // for index arithmetic
    for (int c = 0; c < shape.channels; ++c) {
        for (int y = y0; y < y0 + ph; ++y) {
            for (int x = x0; x < x0 + pw; ++x) {
                const std::size_t i = probe.index(c, x, y);
                pattern[i] = static_cast<std::uint8_t>(intensity);
                weights[i] = blend_value;
            }
        }
    }
    return Trigger{Image(shape, std::move(pattern)), std::move(weights)};
}

}  // namespace

Trigger make_square_trigger(Shape shape, int side, Corner anchor, int dx, int dy,
                            int intensity, double blend_value) {
    check_intensity(intensity);
    check_blend_value(blend_value);
    if (side <= 0 || dx < 0 || dy < 0) {
        throw ValidationError("square trigger needs positive side and nonnegative offsets");
    }
    int x0 = 0, y0 = 0;
    switch (anchor) {
        case Corner::top_left: x0 = dx; y0 = dy; break;
        case Corner::top_right: x0 = shape.width - dx - side; y0 = dy; break;
        case Corner::bottom_left: x0 = dx; y0 = shape.height - dy - side; break;
        case Corner::bottom_right:
            x0 = shape.width - dx - side;
            y0 = shape.height - dy - side;
            break;
    }
    if (x0 < 0 || y0 < 0 || x0 + side > shape.width || y0 + side > shape.height) {
        throw ValidationError("square trigger (side " + std::to_string(side) + ", offset " +
                              std::to_string(dx) + "," + std::to_string(dy) +
                              ") does not fit inside " + to_string(shape));
    }
    return build_patch_trigger(shape, x0, y0, side, side, intensity, blend_value);
}

Trigger make_line_trigger(Shape shape, int band_width, Orientation orientation,
                          int position, int intensity, double blend_value) {
    check_intensity(intensity);
    check_blend_value(blend_value);
    if (band_width <= 0) {
        throw ValidationError("line trigger band width must be positive");
    }
    if (orientation == Orientation::horizontal) {
        if (position < 0) position = shape.height - band_width;
        if (position < 0 || position + band_width > shape.height) {
            throw ValidationError("horizontal band [" + std::to_string(position) + ", " +
                                  std::to_string(position + band_width) +
                                  ") does not fit inside height " +
                                  std::to_string(shape.height));
        }
        return build_patch_trigger(shape, 0, position, shape.width, band_width, intensity,
                                   blend_value);
    }
    if (position < 0) position = shape.width - band_width;
    if (position < 0 || position + band_width > shape.width) {
        throw ValidationError("vertical band [" + std::to_string(position) + ", " +
                              std::to_string(position + band_width) +
                              ") does not fit inside width " + std::to_string(shape.width));
    }
    return build_patch_trigger(shape, position, 0, band_width, shape.height, intensity,
                               blend_value);
}

Trigger make_trigger(const TriggerSpec& spec) {
    if (const auto* sq = std::get_if<SquareGeometry>(&spec.geometry)) {
        return make_square_trigger(spec.shape, sq->side, sq->anchor, sq->dx, sq->dy,
                                   spec.intensity, spec.blend_value);
    }
    const auto& ln = std::get<LineGeometry>(spec.geometry);
    return make_line_trigger(spec.shape, ln.band_width, ln.orientation, ln.position,
                             spec.intensity, spec.blend_value);
}

WatermarkKey WatermarkKey::make(TriggerSpec spec, int target_label) {
    if (target_label < 0) {
        throw ValidationError("target_label must be nonnegative");
    }
    Trigger t = make_trigger(spec);
    return WatermarkKey{std::move(spec), target_label, std::move(t)};
}

std::string key_to_json(const WatermarkKey& key) {
    json j;
    j["version"] = 1;
    j["target_label"] = key.target_label;
    j["shape"] = {key.spec.shape.channels, key.spec.shape.width, key.spec.shape.height};
    j["intensity"] = key.spec.intensity;
    j["blend_value"] = key.spec.blend_value;
    if (const auto* sq = std::get_if<SquareGeometry>(&key.spec.geometry)) {
        j["trigger_kind"] = "square";
        j["side"] = sq->side;
        j["anchor"] = to_string(sq->anchor);
        j["dx"] = sq->dx;
        j["dy"] = sq->dy;
    } else {
        const auto& ln = std::get<LineGeometry>(key.spec.geometry);
        j["trigger_kind"] = "line";
        j["band_width"] = ln.band_width;
        j["orientation"] = to_string(ln.orientation);
        j["position"] = ln.position;
    }
    return j.dump(2);
}

WatermarkKey key_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("watermark key is not valid JSON: ") + e.what());
    }
    try {
        TriggerSpec spec;
        const auto shape = j.at("shape");
        spec.shape = Shape{shape.at(0).get<int>(), shape.at(1).get<int>(),
                           shape.at(2).get<int>()};
        spec.intensity = j.at("intensity").get<int>();
        spec.blend_value = j.at("blend_value").get<double>();
        const std::string kind = j.at("trigger_kind").get<std::string>();
        if (kind == "square") {
            SquareGeometry sq;
            sq.side = j.at("side").get<int>();
            sq.anchor = corner_from_string(j.at("anchor").get<std::string>());
            sq.dx = j.at("dx").get<int>();
            sq.dy = j.at("dy").get<int>();
            spec.geometry = sq;
        } else if (kind == "line") {
            LineGeometry ln;
            ln.band_width = j.at("band_width").get<int>();
            ln.orientation = orientation_from_string(j.at("orientation").get<std::string>());
            ln.position = j.at("position").get<int>();
            spec.geometry = ln;
        } else {
            throw FormatError("unknown trigger_kind '" + kind + "'");
        }
        return WatermarkKey::make(std::move(spec), j.at("target_label").get<int>());
    } catch (const json::exception& e) {
        throw FormatError(std::string("watermark key missing field: ") + e.what());
    }
}

void save_key(const WatermarkKey& key, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << key_to_json(key) << "\n";
}

WatermarkKey load_key(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open watermark key '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return key_from_json(text);
}

Image blend(const Image& benign, const Trigger& trigger) {
    if (!(benign.shape() == trigger.pattern.shape())) {
        throw ValidationError("blend shape mismatch: image " + to_string(benign.shape()) +
                              " vs trigger " + to_string(trigger.pattern.shape()));
    }
    const auto x = benign.pixels();
    const auto t = trigger.pattern.pixels();
    std::vector<std::uint8_t> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lam = trigger.blend_weights[i];
        const double v = (1.0 - lam) * x[i] + lam * t[i];
        const long long r = std::llround(v);  // half away from zero
        out[i] = static_cast<std::uint8_t>(std::clamp(r, 0LL, 255LL));
    }
    return Image(benign.shape(), std::move(out));
}

bool trigger_stamped(const Image& image, const Trigger& trigger) {
    if (!(image.shape() == trigger.pattern.shape())) return false;
    const auto px = image.pixels();
    const auto pt = trigger.pattern.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (trigger.blend_weights[i] > 0.0 && px[i] != pt[i]) return false;
    }
    return true;
}

WatermarkResult watermark_dataset(const Dataset& train, const WatermarkKey& key,
                                  const WatermarkConfig& config) {
    if (key.target_label >= train.num_classes()) {
        throw ValidationError("target_label " + std::to_string(key.target_label) +
                              " >= num_classes " + std::to_string(train.num_classes()));
    }
    if (!(key.trigger.pattern.shape() == train.shape())) {
        throw ValidationError("trigger shape " + to_string(key.trigger.pattern.shape()) +
                              " does not match dataset shape " + to_string(train.shape()));
    }
    if (config.rate < 0.0 || config.rate > 1.0) {
        throw ValidationError("watermarking rate must lie in [0, 1]");
    }

    const std::size_t n = train.size();
    std::size_t m = static_cast<std::size_t>(std::llround(config.rate * static_cast<double>(n)));
    if (config.rate > 0.0 && m == 0) {
        std::cerr << "warning: rate " << config.rate << " selects zero of " << n
                  << " samples; dataset left unmodified\n";
    }

    std::vector<std::size_t> eligible;
    eligible.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (config.exclude_target_labeled && train[i].label == key.target_label) continue;
        eligible.push_back(i);
    }
    if (m > eligible.size()) {
        throw ValidationError("cannot select " + std::to_string(m) + " samples from " +
                              std::to_string(eligible.size()) + " eligible ones");
    }

    // Partial Fisher-Yates for a seeded uniform draw without replacement.
    std::mt19937_64 rng(config.seed);
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
        std::swap(eligible[i], eligible[pick(rng)]);
    }
    std::vector<std::size_t> chosen(eligible.begin(), eligible.begin() + m);
    std::sort(chosen.begin(), chosen.end());

    std::vector<LabeledImage> samples(train.samples());
    for (std::size_t i : chosen) {
        samples[i] = LabeledImage{blend(train[i].image, key.trigger), key.target_label};
    }
    return WatermarkResult{Dataset(std::move(samples), train.num_classes()),
                           std::move(chosen)};
}

Dataset watermark_testset(const Dataset& test, const WatermarkKey& key) {
    if (!(key.trigger.pattern.shape() == test.shape())) {
        throw ValidationError("trigger shape " + to_string(key.trigger.pattern.shape()) +
                              " does not match dataset shape " + to_string(test.shape()));
    }
    std::vector<LabeledImage> samples;
    samples.reserve(test.size());
    for (const auto& s : test.samples()) {
        if (s.label == key.target_label) continue;
        samples.push_back(LabeledImage{blend(s.image, key.trigger), s.label});
    }
    if (samples.empty()) {
        throw ValidationError("every test sample carries the target label; "
                              "nothing left to measure");
    }
    return Dataset(std::move(samples), test.num_classes());
}

}  // namespace datamark
