#include "datamark/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace datamark {

std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << s.channels << "x" << s.width << "x" << s.height;
    return os.str();
}

Image::Image(Shape shape, std::vector<std::uint8_t> pixels)
    : shape_(shape), pixels_(std::move(pixels)) {
    if (shape_.channels <= 0 || shape_.width <= 0 || shape_.height <= 0) {
        throw ValidationError("image shape must be positive, got " + to_string(shape_));
    }
    if (pixels_.size() != shape_.pixel_count()) {
        throw ValidationError("pixel count " + std::to_string(pixels_.size()) +
                              " does not match shape " + to_string(shape_));
    }
}

Image Image::filled(Shape shape, std::uint8_t value) {
    return Image(shape, std::vector<std::uint8_t>(shape.pixel_count(), value));
}

Dataset::Dataset(std::vector<LabeledImage> samples, int num_classes)
    : samples_(std::move(samples)), num_classes_(num_classes) {
    if (num_classes_ <= 0) {
        throw ValidationError("num_classes must be positive");
    }
    if (samples_.empty()) {
        throw ValidationError("dataset must contain at least one sample");
    }
    shape_ = samples_.front().image.shape();
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (!(s.image.shape() == shape_)) {
            throw ValidationError("sample " + std::to_string(i) + " has shape " +
                                  to_string(s.image.shape()) + ", expected " + to_string(shape_));
        }
        if (s.label < 0 || s.label >= num_classes_) {
            throw ValidationError("sample " + std::to_string(i) + " label " +
                                  std::to_string(s.label) + " out of range [0, " +
                                  std::to_string(num_classes_) + ")");
        }
    }
}

int PosteriorVector::argmax() const {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

PosteriorVector softmax(std::span<const double> logits) {
    if (logits.size() < 2) {
        throw ValidationError("softmax needs at least 2 logits");
    }
    for (double v : logits) {
        if (!std::isfinite(v)) {
            throw ValidationError("softmax input contains non-finite value");
        }
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return PosteriorVector{std::move(out)};
}

PosteriorVector validate_posterior(std::span<const double> probs, double tolerance,
                                   int expected_size) {
    if (expected_size >= 0 && probs.size() != static_cast<std::size_t>(expected_size)) {
        throw ValidationError("posterior length " + std::to_string(probs.size()) +
                              " does not match expected " + std::to_string(expected_size));
    }
    if (probs.empty()) {
        throw ValidationError("posterior is empty");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!std::isfinite(probs[i]) || probs[i] < 0.0) {
            throw ValidationError("posterior entry " + std::to_string(i) + " = " +
                                  std::to_string(probs[i]) + " is negative or non-finite");
        }
        sum += probs[i];
    }
    if (std::abs(sum - 1.0) > tolerance) {
        throw ValidationError("posterior sums to " + std::to_string(sum) +
                              ", outside tolerance " + std::to_string(tolerance));
    }
    return PosteriorVector{std::vector<double>(probs.begin(), probs.end())};
}

}  // namespace datamark
