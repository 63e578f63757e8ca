#include "demf/slice.hpp"

#include <cmath>

#include "demf/error.hpp"

namespace demf {

std::string_view to_string(Label l) noexcept {
    return l == Label::cancerous ? "cancerous" : "healthy";
}

Label label_from_string(std::string_view s) {
    if (s == "cancerous") return Label::cancerous;
    if (s == "healthy") return Label::healthy;
    throw DataError("unknown label '" + std::string(s) + "'");
}

std::string_view to_string(Split s) noexcept { return s == Split::train ? "train" : "test"; }

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + std::string(s) + "'");
}

BoundingBox BoundingBox::scaled(double row_scale, double col_scale) const noexcept {
    return {static_cast<int>(std::floor(row0 * row_scale)),
            static_cast<int>(std::floor(col0 * col_scale)),
            static_cast<int>(std::ceil((row1 + 1) * row_scale)) - 1,
            static_cast<int>(std::ceil((col1 + 1) * col_scale)) - 1};
}

void validate(const SlicePair& pair) {
    if (!pair.ct.same_shape(pair.pet))
        throw DataError("slice " + pair.slice_id + ": CT and PET dimensions differ");
    if ((pair.label == Label::cancerous) != pair.tumor_bbox.has_value())
        throw DataError("slice " + pair.slice_id + ": label and tumor_bbox disagree");
    for (const Image* img : {&pair.ct, &pair.pet})
        for (float v : img->pixels())
            if (!(v >= 0.0f && v <= 1.0f))
                throw DataError("slice " + pair.slice_id + ": intensity outside [0,1]");
}

std::string_view to_string(FusionStrategy s) noexcept {
    switch (s) {
    case FusionStrategy::pcae: return "pcae";
    case FusionStrategy::pca_only: return "pca_only";
    case FusionStrategy::ae_only: return "ae_only";
    case FusionStrategy::mean: return "mean";
    case FusionStrategy::max: return "max";
    case FusionStrategy::ct_only: return "ct_only";
    case FusionStrategy::pet_only: return "pet_only";
    }
    return "unknown";
}

FusionStrategy fusion_strategy_from_string(std::string_view s) {
    for (auto v : {FusionStrategy::pcae, FusionStrategy::pca_only, FusionStrategy::ae_only,
                   FusionStrategy::mean, FusionStrategy::max, FusionStrategy::ct_only,
                   FusionStrategy::pet_only})
        if (to_string(v) == s) return v;
    throw ConfigError("unknown fusion strategy '" + std::string(s) + "'");
}

} // namespace demf
