#pragma once

#include <vector>

#include "demf/autoencoder.hpp"
#include "demf/pca.hpp"
#include "demf/slice.hpp"

namespace demf {

inline constexpr int kDefaultPcaComponents = 20;

struct FusionModels {
    // Trained on PCA-reconstructed pairs; required for pcae.
    const Autoencoder* pcae = nullptr;
    // Trained on raw normalized pairs; required for ae_only.
    const Autoencoder* ae_only = nullptr;
    int pca_components = kDefaultPcaComponents;
};

// Per-modality PCA reconstruction at min(k, rows, cols) components.
ImagePair pca_reconstructed_pair(const SlicePair& pair, int k);

// pcae:     PCA-reconstruct both modalities, then autoencoder decode
// pca_only: pixel-wise mean of the two PCA reconstructions
// ae_only:  autoencoder on the raw normalized modalities
// mean/max: pixel-wise mean/max of the normalized inputs
// ct_only/pet_only: pass one modality through (single-modality ablation)
FusedSlice fuse(const SlicePair& pair, FusionStrategy strategy, const FusionModels& models = {});

// Same as fuse() for many slices; batches autoencoder inference.
std::vector<FusedSlice> fuse_all(const std::vector<SlicePair>& pairs, FusionStrategy strategy,
                                 const FusionModels& models = {});

} // namespace demf
