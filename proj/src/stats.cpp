#include "datamark/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace datamark {

using nlohmann::json;

std::string to_string(TestKind k) {
    return k == TestKind::t ? "t" : "wilcoxon";
}

namespace {

// Continued fraction for the incomplete beta function, modified Lentz method.
double beta_continued_fraction(double a, double b, double x) {
    constexpr double eps = 1e-16;
    constexpr double tiny = 1e-300;
    constexpr int max_iter = 500;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) {
        throw ValidationError("incomplete beta parameters must be positive");
    }
    if (x < 0.0 || x > 1.0) {
        throw ValidationError("incomplete beta argument outside [0, 1]");
    }
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, int df) {
    if (df < 1) {
        throw ValidationError("degrees of freedom must be >= 1");
    }
    if (!std::isfinite(t)) {
        throw ValidationError("t statistic must be finite");
    }
    if (t == 0.0) return 0.5;
    const double x = df / (df + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

namespace {

std::vector<double> differences(std::span<const PairedSample> pairs) {
    std::vector<double> d;
    d.reserve(pairs.size());
    for (const auto& s : pairs) {
        if (!std::isfinite(s.p) || !std::isfinite(s.q)) {
            throw ValidationError("paired sample contains non-finite posterior");
        }
        d.push_back(s.q - s.p);
    }
    return d;
}

}  // namespace

TestReport paired_t_test(std::span<const PairedSample> pairs, double certainty_margin,
                         double significance) {
    if (pairs.size() < 2) {
        throw ValidationError("paired t-test requires at least 2 pairs");
    }
    if (certainty_margin < 0.0 || certainty_margin > 1.0) {
        throw ValidationError("certainty margin must lie in [0, 1]");
    }
    if (!(significance > 0.0 && significance < 1.0)) {
        throw ValidationError("significance level must lie in (0, 1)");
    }
    const std::vector<double> d = differences(pairs);
    const int m = static_cast<int>(d.size());
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / m;
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (m - 1));

    TestReport r;
    r.kind = TestKind::t;
    r.degrees_of_freedom = m - 1;
    r.certainty_margin = certainty_margin;
    r.significance = significance;
    r.sample_size = m;
    r.mean_difference = mean;
    if (sd == 0.0) {
        // Zero variance: a perfectly deterministic gap still needs a verdict.
        r.reject_h0 = mean > certainty_margin;
        r.p_value = r.reject_h0 ? 0.0 : 1.0;
        r.statistic = mean == certainty_margin
                          ? 0.0
                          : std::copysign(std::numeric_limits<double>::infinity(),
                                          mean - certainty_margin);
        return r;
    }
    r.statistic = (mean - certainty_margin) / (sd / std::sqrt(static_cast<double>(m)));
    r.p_value = 1.0 - student_t_cdf(r.statistic, m - 1);
    r.reject_h0 = r.p_value < significance;
    return r;
}

TestReport wilcoxon_signed_rank(std::span<const PairedSample> pairs,
                                double certainty_margin, double significance) {
    if (certainty_margin < 0.0 || certainty_margin > 1.0) {
        throw ValidationError("certainty margin must lie in [0, 1]");
    }
    if (!(significance > 0.0 && significance < 1.0)) {
        throw ValidationError("significance level must lie in (0, 1)");
    }
    const std::vector<double> d = differences(pairs);
    std::vector<double> e;
    e.reserve(d.size());
    for (double v : d) {
        const double shifted = v - certainty_margin;
        if (shifted != 0.0) e.push_back(shifted);
    }
    const int n = static_cast<int>(e.size());
    if (n < 5) {
        throw ValidationError("wilcoxon test requires at least 5 nonzero differences, got " +
                              std::to_string(n));
    }

    // Average ranks of |e| over tie groups.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return std::abs(e[i]) < std::abs(e[j]); });
    std::vector<double> rank(n);
    double tie_correction = 0.0;
    for (int i = 0; i < n;) {
        int j = i;
        while (j < n && std::abs(e[order[j]]) == std::abs(e[order[i]])) ++j;
        const double avg = 0.5 * ((i + 1) + j);  // ranks are 1-based
        for (int k = i; k < j; ++k) rank[order[k]] = avg;
        const double t = j - i;
        tie_correction += t * t * t - t;
        i = j;
    }

    double w_plus = 0.0;
    for (int i = 0; i < n; ++i) {
        if (e[i] > 0.0) w_plus += rank[i];
    }

    const double mu = n * (n + 1) / 4.0;
    const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_correction / 48.0;
    const double z = (w_plus - mu - 0.5) / std::sqrt(var);

    TestReport r;
    r.kind = TestKind::wilcoxon;
    r.degrees_of_freedom = -1;
    r.certainty_margin = certainty_margin;
    r.significance = significance;
    r.sample_size = static_cast<int>(pairs.size());
    r.mean_difference = std::accumulate(d.begin(), d.end(), 0.0) / d.size();
    r.statistic = w_plus;
    r.p_value = 1.0 - normal_cdf(z);
    r.reject_h0 = r.p_value < significance;
    return r;
}

std::string report_to_json(const TestReport& report, std::span<const double> diffs) {
    json j;
    j["test_kind"] = to_string(report.kind);
    j["statistic"] = report.statistic;
    if (report.kind == TestKind::t) {
        j["degrees_of_freedom"] = report.degrees_of_freedom;
    }
    j["p_value"] = report.p_value;
    j["certainty_margin"] = report.certainty_margin;
    j["significance"] = report.significance;
    j["reject_h0"] = report.reject_h0;
    j["sample_size"] = report.sample_size;
    j["mean_difference"] = report.mean_difference;
    if (!diffs.empty()) {
        j["differences"] = std::vector<double>(diffs.begin(), diffs.end());
    }
    return j.dump(2);
}

}  // namespace datamark
