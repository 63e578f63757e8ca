#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "demf/image.hpp"
#include "demf/nn.hpp"

namespace demf {

// What the 2-in/1-out autoencoder learns to reproduce.
enum class FusionTarget { max, mean };
std::string_view to_string(FusionTarget t) noexcept;
FusionTarget fusion_target_from_string(std::string_view s);

// Three (conv, 2x2 max-pool) encoder stages, two (2x upsample, conv) decoder
// stages and an output head (2x upsample, 1-channel conv, rectified tanh)
// that restores the input resolution. Input spatial size must be divisible
// by 8.
struct AutoencoderSpec {
    std::vector<int> encoder_channels{16, 32, 64};
    std::vector<int> decoder_channels{32, 16};
    int kernel = 3;
    int input_channels = 2;
    FusionTarget target = FusionTarget::max;

    void validate() const;
};

struct AutoencoderTrainOptions {
    int steps = 50;
    int batch_size = 16;
    double learning_rate = 1e-5;
    double decay = 1e-8;
    std::uint64_t seed = 0;
};

struct ImagePair {
    Image ct;
    Image pet;
};

nn::Sequential build_autoencoder(const AutoencoderSpec& spec);

// Pixel-wise max or mean of the two inputs.
Image fusion_target(const Image& a, const Image& b, FusionTarget target);

class Autoencoder {
public:
    Autoencoder(AutoencoderSpec spec, std::uint64_t init_seed);

    const AutoencoderSpec& spec() const noexcept { return spec_; }
    nn::Sequential& network() noexcept { return net_; }
    const nn::Sequential& network() const noexcept { return net_; }

    // Fused image in [0, 1] with the input's size.
    Image fuse(const Image& ct, const Image& pet) const;
    std::vector<Image> fuse_batch(const std::vector<ImagePair>& pairs) const;

    // Mean-squared error against the fusion target over a whole set.
    double loss(const std::vector<ImagePair>& pairs) const;

    // Per-step batch loss, recorded before each update.
    std::vector<double> loss_history;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool trained = false;

    void save(const std::filesystem::path& dir) const;
    static Autoencoder load(const std::filesystem::path& dir);

private:
    AutoencoderSpec spec_;
    nn::Sequential net_;
};

// Adam on MSE between the network output and fusion_target(ct, pet).
// Throws DataError for empty or mismatched inputs and DivergenceError when
// the loss becomes non-finite.
Autoencoder train_autoencoder(const std::vector<ImagePair>& pairs, const AutoencoderSpec& spec,
                              const AutoencoderTrainOptions& opts);

} // namespace demf
