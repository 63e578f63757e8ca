#include "demf/xai.hpp"

#include <algorithm>
#include <cmath>

#include "demf/error.hpp"
#include "demf/ingest.hpp"
#include "demf/render.hpp"

namespace demf {

namespace {

// Min-max normalization; returns false (and zeros the map) when flat.
bool normalize(Image& map) {
    const float lo = map.min(), hi = map.max();
    if (!(hi > lo)) {
        std::fill(map.pixels().begin(), map.pixels().end(), 0.0f);
        return false;
    }
    const float range = hi - lo;
    for (float& v : map.pixels()) v = (v - lo) / range;
    return true;
}

} // namespace

AttentionMap grad_cam(const Classifier& model, const Image& image, int target, const GradCamOptions& opts,
                      std::string slice_id) {
    if (model.feature_layer() < 0)
        throw CapabilityError("grad_cam: backbone " + model.spec().name + " has no convolutional features");
    if (target != 0 && target != 1) throw DataError("grad_cam: target must be 0 or 1");
    if (!(opts.gradient_scale > 0.0)) throw ConfigError("grad_cam: gradient_scale must be > 0");

    const Image* ptr = &image;
    const nn::Tensor x = model.to_input(std::span<const Image* const>(&ptr, 1));
    nn::Sequential net = model.network();
    nn::Tensor features, feature_grad;
    const int tap = model.feature_layer();
    const nn::Tensor logit = net.forward_train(x, tap, &features);

    // d score / d logit is +1 for the positive class and -1 for the negative.
    const double dscore = (target == 1 ? 1.0 : -1.0) * opts.gradient_scale;
    nn::Tensor seed(logit.n(), logit.c(), logit.h(), logit.w());
    seed.data()[0] = static_cast<float>(opts.unit_seed ? (dscore > 0 ? 1.0 : -1.0) : dscore);
    net.backward(seed, tap, &feature_grad);

    const int channels = features.c(), h = features.h(), w = features.w();
    const std::size_t plane = features.plane();
    Image cam(h, w);
    for (int k = 0; k < channels; ++k) {
        const float* g = feature_grad.data() + k * plane;
        double alpha = 0.0;
        for (std::size_t i = 0; i < plane; ++i) alpha += g[i];
        alpha /= static_cast<double>(plane);
        const float* a = features.data() + k * plane;
        for (std::size_t i = 0; i < plane; ++i) cam.pixels()[i] += static_cast<float>(alpha * a[i]);
    }
    for (float& v : cam.pixels()) v = std::max(v, 0.0f);

    AttentionMap out;
    out.map = resize_slice(cam, image.rows(), image.cols());
    for (float& v : out.map.pixels()) v = std::max(v, 0.0f);
    // A rectified map with no positive mass carries no evidence.
    out.degenerate = !(cam.max() > 0.0f) || !normalize(out.map);
    if (out.degenerate) std::fill(out.map.pixels().begin(), out.map.pixels().end(), 0.0f);
    out.slice_id = std::move(slice_id);
    out.predicted_label = target;
    return out;
}

AttentionMap ensemble_attention(const EnsembleModel& model, const Image& image, std::string slice_id,
                                const GradCamOptions& opts) {
    const auto pred = predict_ensemble(model, {image});
    const int label = pred.labels.front();
    AttentionMap out;
    out.map = Image(image.rows(), image.cols());
    int used = 0;
    for (std::size_t j = 0; j < model.size(); ++j) {
        if (pred.votes.front()[j] != label) continue;
        const auto m = grad_cam(model.members()[j], image, label, opts);
        auto dst = out.map.pixels();
        auto src = m.map.pixels();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        ++used;
    }
    if (used > 0)
        for (float& v : out.map.pixels()) v /= static_cast<float>(used);
    out.degenerate = !normalize(out.map);
    out.slice_id = std::move(slice_id);
    out.predicted_label = label;
    return out;
}

std::pair<int, int> attention_peak(const Image& map) {
    if (map.empty()) throw DataError("attention_peak: empty map");
    const auto px = map.pixels();
    const auto it = std::max_element(px.begin(), px.end());
    const auto idx = static_cast<int>(it - px.begin());
    return {idx / map.cols(), idx % map.cols()};
}

bool peak_in_box(const Image& map, const BoundingBox& box, int dilation) {
    const auto [r, c] = attention_peak(map);
    return box.contains(r, c, dilation);
}

std::optional<BoundingBox> attention_box(const Image& map, double level) {
    std::optional<BoundingBox> box;
    if (!(map.max() > 0.0f)) return box;
    for (int r = 0; r < map.rows(); ++r)
        for (int c = 0; c < map.cols(); ++c) {
            if (map(r, c) < level) continue;
            if (!box) box = BoundingBox{r, c, r, c};
            box->row0 = std::min(box->row0, r);
            box->row1 = std::max(box->row1, r);
            box->col0 = std::min(box->col0, c);
            box->col1 = std::max(box->col1, c);
        }
    return box;
}

void write_attention_overlay(const std::filesystem::path& path, const SlicePair& pair, const Image& fused,
                             const AttentionMap& attention, int scale) {
    if (!fused.same_shape(attention.map) || !pair.ct.same_shape(fused))
        throw DataError("attention overlay: image sizes differ");
    if (scale <= 0) scale = std::max(1, (128 + fused.cols() - 1) / fused.cols());
    const int pw = fused.cols() * scale, ph = fused.rows() * scale;
    const int pad = 6, title = 14;
    Canvas canvas(4 * pw + 5 * pad, ph + title + 2 * pad, {0, 0, 0});
    const char* titles[] = {"CT", "PET", "FUSED", "ATTENTION"};
    const Image* panels[] = {&pair.ct, &pair.pet, &fused, &fused};
    for (int i = 0; i < 4; ++i) {
        const int x = pad + i * (pw + pad), y = pad + title;
        canvas.text(x, pad, titles[i], {255, 255, 255});
        canvas.draw_gray(x, y, *panels[i], scale);
        if (i < 3) continue;
        canvas.draw_heat(x, y, attention.map, scale, 0.6);
        if (pair.tumor_bbox) canvas.draw_box(x, y, *pair.tumor_bbox, scale, {0, 255, 0});
        if (const auto box = attention_box(attention.map)) canvas.draw_box(x, y, *box, scale, {255, 0, 0});
    }
    canvas.write_png(path);
}

} // namespace demf
