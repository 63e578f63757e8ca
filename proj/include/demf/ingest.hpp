#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "demf/slice.hpp"

namespace demf {

struct PreprocessConfig {
    double hu_min = -1024.0;
    double hu_max = 3071.0;
    int target_size = 128;
    double split_ratio = 0.8;
    std::uint64_t split_seed = 0;

    void validate() const;
};

// Clip to [hu_min, hu_max] and map affinely onto [0, 1].
Image normalize_hu(const Image& raw, const PreprocessConfig& cfg);

// Min-max scale a whole PET stack to [0, 1] with one (min, max) pair.
std::vector<Image> normalize_pet_volume(const std::vector<Image>& raw);

// Bilinear resampling (pixel-centre aligned) to target x target.
Image resize_slice(const Image& img, int target);
Image resize_slice(const Image& img, int target_rows, int target_cols);

enum class SliceSource { phantom, external };

struct ManifestEntry {
    std::string slice_id;
    Label label = Label::healthy;
    Split split = Split::train;
    SliceSource source = SliceSource::phantom;
    std::optional<std::string> augmentation_parent;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string created_at;
    std::string config_digest;

    // Throws DataError on duplicate ids, dangling or non-train augmentation
    // parents, or augmented entries outside the train split.
    void validate() const;

    const ManifestEntry* find(const std::string& slice_id) const;
    std::vector<std::string> ids(Split split, bool include_augmented = true) const;
    std::size_t count(Split split, Label label) const;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);
};

// Per-label stratified split; train = floor(ratio * n), remainder to test.
DatasetManifest split_dataset(const std::vector<SlicePair>& pairs, const PreprocessConfig& cfg);

std::string utc_timestamp();

// ------------------------------------------------------------------ storage

// Writes <dir>/ct/<id>.dfa and <dir>/pet/<id>.dfa; label, bbox and
// provenance go to the CT sidecar.
void write_slice_pairs(const std::filesystem::path& dir, const std::vector<SlicePair>& pairs);
SlicePair read_slice_pair(const std::filesystem::path& dir, const std::string& slice_id);

// ------------------------------------------------------- external volumes

struct VolumeSlice {
    Image raw;
    std::optional<Label> label;
    std::optional<BoundingBox> tumor_bbox;
};

struct Volume {
    std::string volume_id;
    std::string modality;  // "ct" or "pet"
    std::vector<VolumeSlice> slices;
};

// Adapter point for real data; concrete readers (DICOM, NIfTI, ...) live
// outside this library.
class VolumeSource {
public:
    virtual ~VolumeSource() = default;
    virtual Volume load() const = 0;
};

// One volume = one directory holding slice files in the portable array
// container plus "volume.json":
//
//   {"volume_id": "p001", "modality": "ct",
//    "slices": [{"file": "s000.dfa", "label": "cancerous",
//                "tumor_bbox": [row0, col0, row1, col1]}, ...]}
//
// CT slices hold raw HU values; PET slices hold raw uptake values.
class DirectoryVolume final : public VolumeSource {
public:
    explicit DirectoryVolume(std::filesystem::path dir) : dir_(std::move(dir)) {}
    Volume load() const override;

private:
    std::filesystem::path dir_;
};

void write_volume(const std::filesystem::path& dir, const Volume& volume);

// Pairs co-registered stacks by slice index, normalizes (HU window for CT,
// per-volume min-max for PET) and resizes to target_size. Labels and boxes
// come from the CT volume.
std::vector<SlicePair> pair_volumes(const Volume& ct, const Volume& pet, const PreprocessConfig& cfg);

} // namespace demf
