#pragma once

#include <optional>
#include <span>
#include <string>

namespace demf {

struct ConfusionMatrix {
    long tp = 0;
    long tn = 0;
    long fp = 0;
    long fn = 0;

    long total() const noexcept { return tp + tn + fp + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// An empty optional marks a metric whose denominator is zero.
struct MetricReport {
    std::optional<double> accuracy;
    std::optional<double> f1;
    std::optional<double> precision;
    std::optional<double> recall;
};

// Positive class is 1 (cancerous). Throws DataError on length mismatch,
// empty input or labels other than 0/1.
ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> truth);

// Throws DataError when the matrix is empty or has negative counts.
MetricReport compute_metrics(const ConfusionMatrix& cm);

// Rounded to 4 decimal places for reports.
double round4(double v) noexcept;
// "0.9813" or "undefined".
std::string format_metric(const std::optional<double>& v);

} // namespace demf
