#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "demf/ensemble.hpp"
#include "demf/image.hpp"
#include "demf/slice.hpp"

namespace demf {

struct AttentionMap {
    Image map;  // [0, 1], input resolution
    std::string slice_id;
    // Member index, or empty for the ensemble aggregate.
    std::optional<int> member;
    int predicted_label = 0;
    // All-zero map (no positive evidence for the target class).
    bool degenerate = false;
};

struct GradCamOptions {
    // Multiplies the gradient of the class score before it is propagated.
    double gradient_scale = 1.0;
    // Propagate only the sign of the class-score gradient, which makes the
    // normalized map exactly invariant to positive scaling.
    bool unit_seed = true;
};

// Grad-CAM at the classifier's last convolutional activation for class
// `target` (score = logit for 1, -logit for 0). Throws CapabilityError when
// the model has no convolutional features and DataError on geometry mismatch.
AttentionMap grad_cam(const Classifier& model, const Image& image, int target, const GradCamOptions& opts = {},
                      std::string slice_id = {});

// Mean of the maps of the members that voted with the ensembled label
// (target = ensembled label), min-max renormalized.
AttentionMap ensemble_attention(const EnsembleModel& model, const Image& image, std::string slice_id = {},
                                const GradCamOptions& opts = {});

// Row-major first argmax.
std::pair<int, int> attention_peak(const Image& map);
bool peak_in_box(const Image& map, const BoundingBox& box, int dilation = 4);

// Bounding box of the pixels at or above `level`; empty for degenerate maps.
std::optional<BoundingBox> attention_box(const Image& map, double level = 0.5);

// Four panels (CT, PET, fused, fused with heat overlay) with the
// ground-truth box in green and the attention box in red. scale 0 picks a
// magnification that makes each panel at least 128 pixels wide.
void write_attention_overlay(const std::filesystem::path& path, const SlicePair& pair, const Image& fused,
                             const AttentionMap& attention, int scale = 0);

} // namespace demf
