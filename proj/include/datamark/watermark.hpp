#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "datamark/core.hpp"

namespace datamark {

// Pattern tensor plus per-pixel blend weights in [0,1], same layout as Image.
struct Trigger {
    Image pattern;
    std::vector<double> blend_weights;
};

enum class Corner { top_left, top_right, bottom_left, bottom_right };

Corner corner_from_string(const std::string& s);
std::string to_string(Corner c);

struct SquareGeometry {
    int side = 3;
    Corner anchor = Corner::bottom_right;
    // Offset from the anchored corner toward the image interior.
    int dx = 1;
    int dy = 1;
};

enum class Orientation { horizontal, vertical };

Orientation orientation_from_string(const std::string& s);
std::string to_string(Orientation o);

struct LineGeometry {
    int band_width = 3;
    Orientation orientation = Orientation::horizontal;
    // Row (horizontal) or column (vertical) where the band starts; -1 means
    // flush against the bottom/right edge.
    int position = -1;
};

struct TriggerSpec {
    Shape shape;
    std::variant<SquareGeometry, LineGeometry> geometry;
    int intensity = 255;
    double blend_value = 1.0;
};

Trigger make_trigger(const TriggerSpec& spec);
Trigger make_square_trigger(Shape shape, int side, Corner anchor, int dx, int dy,
                            int intensity, double blend_value);
Trigger make_line_trigger(Shape shape, int band_width, Orientation orientation,
                          int position, int intensity, double blend_value);

// The protector's secret: trigger plus target label. The generating spec is
// kept alongside so the key serializes to a small JSON document that
// regenerates the trigger bit-exactly.
struct WatermarkKey {
    TriggerSpec spec;
    int target_label = 0;
    Trigger trigger;

    static WatermarkKey make(TriggerSpec spec, int target_label);
};

std::string key_to_json(const WatermarkKey& key);
WatermarkKey key_from_json(const std::string& text);
void save_key(const WatermarkKey& key, const std::string& path);
WatermarkKey load_key(const std::string& path);

struct WatermarkConfig {
    double rate = 0.05;  // gamma
    std::uint64_t seed = 0;
    bool exclude_target_labeled = false;
};

// Per pixel: clamp(round((1-lambda)*x + lambda*t), 0, 255), half away from zero.
Image blend(const Image& benign, const Trigger& trigger);

// True iff every blend-weight-positive position carries the pattern pixel
// exactly. Only meaningful for stamping triggers (blend_value = 1).
bool trigger_stamped(const Image& image, const Trigger& trigger);

struct WatermarkResult {
    Dataset dataset;
    std::vector<std::size_t> modified_indices;  // sorted
};

// Replaces round(rate*N) seeded-uniformly chosen samples with their blended,
// target-relabeled versions, in place; all other samples are bit-identical.
WatermarkResult watermark_dataset(const Dataset& train, const WatermarkKey& key,
                                  const WatermarkConfig& config);

// Drops target-labeled samples, blends the trigger into every remaining image,
// keeps the original labels.
Dataset watermark_testset(const Dataset& test, const WatermarkKey& key);

}  // namespace datamark
