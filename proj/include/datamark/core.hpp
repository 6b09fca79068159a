#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace datamark {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input fails a semantic check (bad posterior, label out of range, ...).
struct ValidationError : Error {
    using Error::Error;
};

// Input file or wire payload is structurally malformed.
struct FormatError : Error {
    using Error::Error;
};

struct Shape {
    int channels = 0;
    int width = 0;
    int height = 0;

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(channels) * width * height;
    }
    bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

// 8-bit image, channel-major then row-major: index = (c*H + y)*W + x.
class Image {
public:
    Image(Shape shape, std::vector<std::uint8_t> pixels);

    static Image filled(Shape shape, std::uint8_t value);

    const Shape& shape() const { return shape_; }
    std::span<const std::uint8_t> pixels() const { return pixels_; }

    std::uint8_t at(int c, int x, int y) const {
        return pixels_[index(c, x, y)];
    }
    std::size_t index(int c, int x, int y) const {
        return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
    }

    bool operator==(const Image&) const = default;

private:
    Shape shape_;
    std::vector<std::uint8_t> pixels_;
};

struct LabeledImage {
    Image image;
    int label = 0;  // 0-based
};

// Ordered labeled images with a fixed class count K. K is declared, never
// inferred from the labels actually present.
class Dataset {
public:
    Dataset(std::vector<LabeledImage> samples, int num_classes);

    const std::vector<LabeledImage>& samples() const { return samples_; }
    int num_classes() const { return num_classes_; }
    const Shape& shape() const { return shape_; }
    std::size_t size() const { return samples_.size(); }

    const LabeledImage& operator[](std::size_t i) const { return samples_[i]; }

private:
    std::vector<LabeledImage> samples_;
    int num_classes_;
    Shape shape_;
};

struct PosteriorVector {
    std::vector<double> probs;

    std::size_t size() const { return probs.size(); }
    double operator[](std::size_t i) const { return probs[i]; }

    // Lowest index wins ties.
    int argmax() const;
};

// Numerically stable softmax (max subtraction). Rejects non-finite input.
PosteriorVector softmax(std::span<const double> logits);

// Checks nonnegativity and |sum - 1| <= tolerance; throws ValidationError
// otherwise. expected_size < 0 skips the length check.
PosteriorVector validate_posterior(std::span<const double> probs, double tolerance,
                                   int expected_size = -1);

}  // namespace datamark
