#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "demf/image.hpp"

namespace demf {

enum class Label : int { healthy = 0, cancerous = 1 };

inline int to_int(Label l) noexcept { return static_cast<int>(l); }
std::string_view to_string(Label l) noexcept;
Label label_from_string(std::string_view s);

enum class Split { train, test };
std::string_view to_string(Split s) noexcept;
Split split_from_string(std::string_view s);

// Inclusive pixel rectangle.
struct BoundingBox {
    int row0 = 0;
    int col0 = 0;
    int row1 = 0;
    int col1 = 0;

    bool contains(int r, int c, int dilation = 0) const noexcept {
        return r >= row0 - dilation && r <= row1 + dilation && c >= col0 - dilation &&
               c <= col1 + dilation;
    }
    // Box in a grid rescaled by (row_scale, col_scale).
    BoundingBox scaled(double row_scale, double col_scale) const noexcept;

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Co-registered CT/PET slice pair, both normalized to [0, 1].
struct SlicePair {
    Image ct;
    Image pet;
    Label label = Label::healthy;
    std::optional<BoundingBox> tumor_bbox;
    std::string slice_id;
    std::map<std::string, std::string> modality_meta;
};

// Throws DataError if the pair breaks its invariants (shape, range, label/bbox).
void validate(const SlicePair& pair);

enum class FusionStrategy { pcae, pca_only, ae_only, mean, max, ct_only, pet_only };
std::string_view to_string(FusionStrategy s) noexcept;
FusionStrategy fusion_strategy_from_string(std::string_view s);

struct FusedSlice {
    Image image;
    FusionStrategy strategy = FusionStrategy::mean;
    std::string parent_slice_id;
};

// Classifier-facing sample with the bookkeeping augmentation and the test
// isolation audit rely on.
struct TrainingSlice {
    FusedSlice fused;
    Label label = Label::healthy;
    Split split = Split::train;
    std::string slice_id;
    std::optional<std::string> augmentation_parent;
    std::optional<BoundingBox> tumor_bbox;
};

} // namespace demf
