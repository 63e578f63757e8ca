#include "demf/augment.hpp"

#include <cmath>

#include "demf/error.hpp"
#include "demf/rng.hpp"

namespace demf {

std::string_view to_string(TransformKind k) noexcept {
    switch (k) {
    case TransformKind::rotation: return "rotation";
    case TransformKind::width_shift: return "width_shift";
    case TransformKind::height_shift: return "height_shift";
    case TransformKind::zoom: return "zoom";
    case TransformKind::shear: return "shear";
    }
    return "?";
}

void AugmentPolicy::validate() const {
    for (double r : {rotation_deg, width_shift, height_shift, zoom, shear})
        if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("augment: ranges must be finite and >= 0");
    if (zoom >= 1.0) throw ConfigError("augment: zoom range must be < 1");
    if (fold_cancerous < 1 || fold_healthy < 1) throw ConfigError("augment: folds must be >= 1");
}

double AugmentPolicy::range(TransformKind k) const noexcept {
    switch (k) {
    case TransformKind::rotation: return rotation_deg;
    case TransformKind::width_shift: return width_shift;
    case TransformKind::height_shift: return height_shift;
    case TransformKind::zoom: return zoom;
    case TransformKind::shear: return shear;
    }
    return 0.0;
}

namespace {

float sample_bilinear(const Image& img, double r, double c) {
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(c));
    const double fr = r - r0, fc = c - c0;
    auto at = [&](int rr, int cc) -> double {
        if (rr < 0 || rr >= img.rows() || cc < 0 || cc >= img.cols()) return 0.0;
        return img(rr, cc);
    };
    const double v = (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
                     fr * ((1 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
    return static_cast<float>(v);
}

} // namespace

Image apply_transform(const Image& img, TransformKind kind, double p) {
    const double cr = (img.rows() - 1) / 2.0, cc = (img.cols() - 1) / 2.0;
    // Inverse map: output (y, x) relative to the centre -> source offset.
    double a = 1, b = 0, c = 0, d = 1, tr = 0, tc = 0;
    switch (kind) {
    case TransformKind::rotation: {
        const double t = p * M_PI / 180.0;
        a = std::cos(t), b = std::sin(t), c = -std::sin(t), d = std::cos(t);
        break;
    }
    case TransformKind::width_shift: tc = -p * img.cols(); break;
    case TransformKind::height_shift: tr = -p * img.rows(); break;
    case TransformKind::zoom: a = d = 1.0 / (1.0 + p); break;
    case TransformKind::shear: c = -p; break;
    }
    Image out(img.rows(), img.cols());
    for (int y = 0; y < img.rows(); ++y)
        for (int x = 0; x < img.cols(); ++x) {
            const double dy = y - cr, dx = x - cc;
            const double sr = a * dy + b * dx + tr + cr;
            const double sc = c * dy + d * dx + tc + cc;
            out(y, x) = sample_bilinear(img, sr, sc);
        }
    clamp(out);
    return out;
}

AugmentResult augment_training_set(const std::vector<TrainingSlice>& train, const AugmentPolicy& policy) {
    policy.validate();
    for (const auto& s : train) {
        if (s.split != Split::train)
            throw ContaminationError("augment: slice " + s.slice_id + " belongs to the test split");
        if (s.augmentation_parent)
            throw ContaminationError("augment: slice " + s.slice_id + " is already an augmented copy");
    }

    AugmentResult result;
    for (const auto& s : train) {
        const int fold = s.label == Label::cancerous ? policy.fold_cancerous : policy.fold_healthy;
        int j = 0;
        if (policy.include_original) {
            result.slices.push_back(s);
            ++j;
        }
        Rng rng(derive_seed(policy.seed, fnv1a(s.slice_id)));
        for (; j < fold; ++j) {
            const auto kind = static_cast<TransformKind>(rng.below(kTransformKinds));
            const double r = policy.range(kind);
            const double param = rng.uniform(-r, r);

            TrainingSlice copy;
            copy.slice_id = s.slice_id + "#aug" + std::to_string(j);
            copy.fused = FusedSlice{apply_transform(s.fused.image, kind, param), s.fused.strategy,
                                    s.fused.parent_slice_id};
            copy.label = s.label;
            copy.split = Split::train;
            copy.augmentation_parent = s.slice_id;
            // The box no longer matches the warped content; copies are only
            // used for training, where boxes are not consulted.
            copy.tumor_bbox.reset();
            result.log.push_back({copy.slice_id, s.slice_id, kind, param});
            result.slices.push_back(std::move(copy));
        }
    }
    return result;
}

} // namespace demf
