#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "demf/slice.hpp"

namespace demf {

enum class TransformKind { rotation, width_shift, height_shift, zoom, shear };
inline constexpr int kTransformKinds = 5;
std::string_view to_string(TransformKind k) noexcept;

// Symmetric ranges: a parameter is drawn uniformly from [-r, r].
struct AugmentPolicy {
    double rotation_deg = 10.0;
    double width_shift = 0.1;   // fraction of the width
    double height_shift = 0.1;  // fraction of the height
    double zoom = 0.2;          // magnification 1 + z
    double shear = 0.2;         // shear coefficient (column offset per row)
    int fold_cancerous = 17;
    int fold_healthy = 3;
    std::uint64_t seed = 0;
    bool include_original = true;

    void validate() const;
    double range(TransformKind k) const noexcept;
};

// Every sampled transform, for auditing the ranges.
struct TransformSample {
    std::string slice_id;
    std::string parent_id;
    TransformKind kind = TransformKind::rotation;
    double parameter = 0.0;
};

struct AugmentResult {
    std::vector<TrainingSlice> slices;
    std::vector<TransformSample> log;
};

// Geometric transform about the image centre with bilinear sampling;
// pixels mapped from outside the frame are 0.
Image apply_transform(const Image& img, TransformKind kind, double parameter);

// Each cancerous slice yields fold_cancerous outputs and each healthy one
// fold_healthy, the original counted among them when include_original.
// Copies are named "<parent>#aug<j>". Throws ContaminationError if any input
// belongs to the test split.
AugmentResult augment_training_set(const std::vector<TrainingSlice>& train, const AugmentPolicy& policy);

} // namespace demf
