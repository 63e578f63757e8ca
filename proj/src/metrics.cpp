#include "demf/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "demf/error.hpp"

namespace demf {

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> truth) {
    if (pred.size() != truth.size()) throw DataError("confusion: prediction and truth lengths differ");
    if (pred.empty()) throw DataError("confusion: no predictions");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred[i], t = truth[i];
        if ((p != 0 && p != 1) || (t != 0 && t != 1)) throw DataError("confusion: labels must be 0 or 1");
        if (p == 1) (t == 1 ? cm.tp : cm.fp)++;
        else (t == 1 ? cm.fn : cm.tn)++;
    }
    return cm;
}

MetricReport compute_metrics(const ConfusionMatrix& cm) {
    if (cm.tp < 0 || cm.tn < 0 || cm.fp < 0 || cm.fn < 0) throw DataError("compute_metrics: negative count");
    if (cm.total() == 0) throw DataError("compute_metrics: empty confusion matrix");
    auto ratio = [](long num, long den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    MetricReport r;
    r.accuracy = ratio(cm.tp + cm.tn, cm.total());
    r.f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn);
    r.precision = ratio(cm.tp, cm.tp + cm.fp);
    r.recall = ratio(cm.tp, cm.tp + cm.fn);
    return r;
}

double round4(double v) noexcept { return std::round(v * 1e4) / 1e4; }

std::string format_metric(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", round4(*v));
    return buf;
}

} // namespace demf
