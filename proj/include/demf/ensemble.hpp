#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "demf/nn.hpp"
#include "demf/slice.hpp"

namespace demf {

// Small CNN: `depth` blocks of conv(kernel, base_width) + ReLU, 2x2 max-pool
// between blocks, then global average pooling and a 1-logit dense head.
// depth == 0 selects the linear stub (mean/max summary features + dense)
// used for dry runs.
struct BackboneSpec {
    std::string name;
    int depth = 2;
    int base_width = 16;
    int kernel = 3;
    // The single-channel fused slice is replicated to this many channels.
    int input_channels = 1;

    bool is_stub() const noexcept { return depth == 0; }
    void validate() const;
};

std::vector<BackboneSpec> desk_scale_backbones();
BackboneSpec linear_stub_backbone();

struct TrainOptions {
    double learning_rate = 1e-5;
    double decay = 1e-8;
    int batch_size = 16;
    int max_epochs = 100;
    std::uint64_t seed = 0;
    std::optional<int> early_stop_patience;

    void validate() const;
};

class Classifier {
public:
    Classifier(BackboneSpec spec, int rows, int cols, std::uint64_t init_seed);

    const BackboneSpec& spec() const noexcept { return spec_; }
    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    nn::Sequential& network() noexcept { return net_; }
    const nn::Sequential& network() const noexcept { return net_; }

    // Index of the layer whose output feeds Grad-CAM (the activation after
    // the last convolution); -1 for the stub.
    int feature_layer() const noexcept { return feature_layer_; }

    // Stacks images into a [n, input_channels, rows, cols] tensor.
    // Throws DataError on geometry mismatch.
    nn::Tensor to_input(std::span<const Image* const> images) const;

    // Entry 0 is the loss on the training data before the first update,
    // entry e the mean batch loss of epoch e.
    std::vector<double> loss_history;
    std::uint64_t seed = 0;
    bool trained = false;

    void save(const std::filesystem::path& dir) const;
    static Classifier load(const std::filesystem::path& dir);

private:
    BackboneSpec spec_;
    int rows_, cols_;
    nn::Sequential net_;
    int feature_layer_ = -1;
};

// Throws DegenerateInputError if both classes are not present, DataError on
// inconsistent geometry, DivergenceError on a non-finite loss and
// TrainingError if the final epoch loss is not below the initial loss.
Classifier train_member(const BackboneSpec& spec, const std::vector<TrainingSlice>& data, const TrainOptions& opts);

// Probability of the cancerous class per image.
std::vector<double> predict_member(const Classifier& model, const std::vector<Image>& images);

enum class TieBreak { positive, negative };
std::string_view to_string(TieBreak t) noexcept;
TieBreak tie_break_from_string(std::string_view s);

// Label with strictly more votes, tie_break on exact ties. Throws DataError
// on an empty or non-binary vote list.
int majority_vote(std::span<const int> votes, TieBreak tie_break = TieBreak::positive);

class EnsembleModel {
public:
    // Throws ConfigError when empty or when two members share a
    // (depth, base_width, kernel) triple.
    explicit EnsembleModel(std::vector<Classifier> members, double threshold = 0.5,
                           TieBreak tie_break = TieBreak::positive);

    const std::vector<Classifier>& members() const noexcept { return members_; }
    std::size_t size() const noexcept { return members_.size(); }
    double threshold() const noexcept { return threshold_; }
    TieBreak tie_break() const noexcept { return tie_break_; }

    void save(const std::filesystem::path& dir) const;
    static EnsembleModel load(const std::filesystem::path& dir);

private:
    std::vector<Classifier> members_;
    double threshold_;
    TieBreak tie_break_;
};

struct EnsemblePrediction {
    std::vector<int> labels;                        // per slice
    std::vector<std::vector<int>> votes;            // [slice][member]
    std::vector<std::vector<double>> probabilities; // [slice][member]
};

// Throws StateError if any member is untrained.
EnsemblePrediction predict_ensemble(const EnsembleModel& model, const std::vector<Image>& images);

// Columns: slice_id, member_0..member_{N-1}, ensembled, truth.
void write_vote_csv(const std::filesystem::path& path, const std::vector<std::string>& slice_ids,
                    const EnsemblePrediction& prediction, const std::vector<int>& truth);

} // namespace demf
