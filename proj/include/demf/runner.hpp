#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "demf/augment.hpp"
#include "demf/autoencoder.hpp"
#include "demf/ensemble.hpp"
#include "demf/ingest.hpp"
#include "demf/metrics.hpp"
#include "demf/phantom.hpp"
#include "json.hpp"

namespace demf {

struct AutoencoderConfig {
    AutoencoderSpec spec;
    AutoencoderTrainOptions train;
    int pca_components = 20;
};

// Cells of the ablation grid. A modality of "fused" expands into one cell
// per fusion strategy ("fused:<strategy>"); "ct" and "pet" are single cells.
struct AblationAxes {
    std::vector<FusionStrategy> fusion;
    std::vector<std::string> modality;

    bool empty() const noexcept { return fusion.empty() && modality.empty(); }
};

struct EnsembleConfig {
    double threshold = 0.5;
    TieBreak tie_break = TieBreak::positive;
};

// Which artifacts are written besides the ones stages need to hand over.
struct ArtifactOptions {
    bool augmented_slices = false;
    int fused_previews = 4;
    int attention_overlays = 8;
};

// Patients laid out as <root>/<patient>/ct and <root>/<patient>/pet, each a
// directory volume.
struct ExternalDataset {
    std::string name;
    std::filesystem::path root;
};

struct ExperimentConfig {
    PhantomConfig phantom;
    PreprocessConfig preprocess;
    FusionStrategy fusion_strategy = FusionStrategy::pcae;
    AutoencoderConfig autoencoder;
    AugmentPolicy augment;
    std::vector<BackboneSpec> backbones = desk_scale_backbones();
    TrainOptions train;
    EnsembleConfig ensemble;
    std::optional<AblationAxes> ablation_axes;
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "runs/demf";
    ArtifactOptions artifacts;
    // Train on external volumes instead of the phantom.
    std::optional<ExternalDataset> training_data;
    // Extra test-only datasets evaluated with the trained artifacts.
    std::vector<ExternalDataset> external_test_sets;
    // Refit the fusion autoencoders on each external test set's own images
    // (labels unused) instead of reusing the trained ones.
    bool refit_autoencoder_per_test_set = false;
    // Linear stub member, few autoencoder steps: checks plumbing quickly.
    bool dry_run = false;

    void validate() const;
    std::vector<std::string> cells() const;
};

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
// Throws ConfigError on unknown keys, wrong types or invalid values.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);
std::string config_digest(const ExperimentConfig& cfg);

// Compute device from DEMF_DEVICE; absent or "cpu" means CPU. Anything else
// throws CapabilityError since only the CPU backend exists.
std::string compute_device();

struct ReportRow {
    std::uint64_t seed = 0;
    std::string test_set = "primary";
    std::string cell;
    std::string classifier;  // backbone name or "ensemble"
    std::optional<int> member_index;
    ConfusionMatrix confusion;
    MetricReport metrics;
};

struct LocalizationStats {
    std::uint64_t seed = 0;
    std::string cell;
    int correct_positives = 0;
    int peak_in_box = 0;
    double fraction() const noexcept {
        return correct_positives ? static_cast<double>(peak_in_box) / correct_positives : 0.0;
    }
};

struct EvaluationReport {
    std::vector<ReportRow> rows;
    std::vector<LocalizationStats> localization;
    std::string config_digest;
    std::string device = "cpu";
    double wall_time_seconds = 0.0;
    bool complete = false;
    std::optional<std::string> failed_stage;
    std::string error;
    // Isolation audit counters; all zero on a clean run.
    std::map<std::string, long> audit;
    std::vector<std::string> cells;

    const ReportRow* find(std::uint64_t seed, const std::string& cell, const std::string& classifier,
                          const std::string& test_set = "primary") const;

    nlohmann::ordered_json to_json() const;
    static EvaluationReport from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static EvaluationReport load(const std::filesystem::path& path);
};

enum class Stage { generate, fuse, train, evaluate, explain, report };
std::string_view to_string(Stage s) noexcept;
Stage stage_from_string(std::string_view s);

// Stage functions work on <output_dir>/seed_<s> and hand over through files,
// so each can be rerun on its own once its inputs exist.
namespace stages {

// Slices (phantom or external), split, manifest.
void generate(const ExperimentConfig& cfg, std::uint64_t seed);
// Fusion autoencoders when a cell needs them, fused images per cell.
void fuse(const ExperimentConfig& cfg, std::uint64_t seed);
// Augmentation of the train split, member training, ensemble checkpoints.
void train(const ExperimentConfig& cfg, std::uint64_t seed);
// Test-split evaluation, vote CSVs and the isolation audit.
std::vector<ReportRow> evaluate(const ExperimentConfig& cfg, std::uint64_t seed, std::map<std::string, long>& audit);
// Grad-CAM localization over correctly classified positives plus overlays.
std::vector<LocalizationStats> explain(const ExperimentConfig& cfg, std::uint64_t seed);

} // namespace stages

std::filesystem::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed);
std::string cell_dir_name(const std::string& cell);

// generate -> fuse -> train -> evaluate -> explain -> report for every
// seed. Failures are rethrown as StageError after a partial report marked
// incomplete has been written.
EvaluationReport run_pipeline(const ExperimentConfig& cfg);
// As run_pipeline, requiring non-empty ablation axes.
EvaluationReport run_ablation(const ExperimentConfig& cfg);

// Collects per-seed stage outputs into report.json, report.csv and the
// accuracy charts.
EvaluationReport assemble_report(const ExperimentConfig& cfg, double wall_time_seconds);
void write_report_outputs(const ExperimentConfig& cfg, const EvaluationReport& report);

} // namespace demf
