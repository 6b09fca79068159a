#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "datamark/core.hpp"
#include "datamark/model.hpp"
#include "datamark/watermark.hpp"

namespace datamark {

enum class MockKind { perfect_backdoor, constant, uniform, stochastic_gap, echo };

MockKind mock_kind_from_string(const std::string& s);

struct MockSpec {
    MockKind kind = MockKind::uniform;
    int num_classes = 0;
    int target_label = 0;                    // perfect_backdoor, stochastic_gap
    std::vector<double> constant_posterior;  // constant
    double gap_mean = 0.0;                   // stochastic_gap: q - p distribution
    double gap_stddev = 0.0;
    double base_p = 0.1;  // stochastic_gap: posterior mass at target without trigger
    std::uint64_t seed = 0;
    // perfect_backdoor / stochastic_gap need the key to recognize triggered
    // images (stamping triggers only); echo / perfect_backdoor may carry a
    // lookup dataset for clean-label behavior.
    std::optional<WatermarkKey> key;
    std::shared_ptr<const Dataset> lookup;
};

// Builds a deterministic classifier: repeated queries with the same image
// always return the same posterior (randomness is derived from image content).
std::shared_ptr<Classifier> make_mock(const MockSpec& spec);

}  // namespace datamark
