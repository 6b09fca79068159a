#pragma once

#include <span>
#include <string>
#include <vector>

#include "datamark/core.hpp"

namespace datamark {

// Posterior of the benign image (p) and its watermarked version (q) at the
// target label.
struct PairedSample {
    double p = 0.0;
    double q = 0.0;
};

enum class TestKind { t, wilcoxon };

std::string to_string(TestKind k);

struct TestReport {
    TestKind kind = TestKind::t;
    double statistic = 0.0;
    int degrees_of_freedom = 0;  // t only; -1 for wilcoxon
    double p_value = 1.0;
    double certainty_margin = 0.0;  // the margin alpha, not the significance level
    double significance = 0.05;
    bool reject_h0 = false;
    int sample_size = 0;
    double mean_difference = 0.0;
};

// Serializes every report field; differences included when provided.
std::string report_to_json(const TestReport& report,
                           std::span<const double> differences = {});

double regularized_incomplete_beta(double a, double b, double x);

// Lower-tail CDF of Student's t with df degrees of freedom.
double student_t_cdf(double t, int df);

// Standard normal lower-tail CDF.
double normal_cdf(double z);

// One-sided paired test of H0: E[q - p] <= margin vs H1: E[q - p] > margin.
TestReport paired_t_test(std::span<const PairedSample> pairs, double certainty_margin,
                         double significance);

// One-sided signed-rank test of median(q - p) > margin, normal approximation
// with tie correction and 0.5 continuity correction.
TestReport wilcoxon_signed_rank(std::span<const PairedSample> pairs,
                                double certainty_margin, double significance);

}  // namespace datamark
