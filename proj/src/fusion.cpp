#include "demf/fusion.hpp"

#include <algorithm>

#include "demf/error.hpp"

namespace demf {

namespace {

const Autoencoder& require(const Autoencoder* ae, FusionStrategy s) {
    if (!ae) throw ConfigError("fuse: strategy " + std::string(to_string(s)) + " needs a trained autoencoder");
    return *ae;
}

void check_pair(const SlicePair& pair) {
    if (!pair.ct.same_shape(pair.pet) || pair.ct.empty())
        throw DataError("fuse: slice " + pair.slice_id + " has mismatched or empty modalities");
}

} // namespace

ImagePair pca_reconstructed_pair(const SlicePair& pair, int k) {
    check_pair(pair);
    const int kk = std::min({k, pair.ct.rows(), pair.ct.cols()});
    return {pca_reconstruct(pair.ct, pca_fit(pair.ct, kk)), pca_reconstruct(pair.pet, pca_fit(pair.pet, kk))};
}

FusedSlice fuse(const SlicePair& pair, FusionStrategy strategy, const FusionModels& models) {
    return fuse_all({pair}, strategy, models).front();
}

std::vector<FusedSlice> fuse_all(const std::vector<SlicePair>& pairs, FusionStrategy strategy,
                                 const FusionModels& models) {
    std::vector<FusedSlice> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) check_pair(p);

    auto emit = [&](const SlicePair& p, Image img) {
        clamp(img);
        out.push_back(FusedSlice{std::move(img), strategy, p.slice_id});
    };

    switch (strategy) {
    case FusionStrategy::mean:
    case FusionStrategy::max:
        for (const auto& p : pairs)
            emit(p, fusion_target(p.ct, p.pet, strategy == FusionStrategy::max ? FusionTarget::max : FusionTarget::mean));
        break;
    case FusionStrategy::ct_only:
        for (const auto& p : pairs) emit(p, p.ct);
        break;
    case FusionStrategy::pet_only:
        for (const auto& p : pairs) emit(p, p.pet);
        break;
    case FusionStrategy::pca_only:
        for (const auto& p : pairs) {
            const auto rec = pca_reconstructed_pair(p, models.pca_components);
            emit(p, fusion_target(rec.ct, rec.pet, FusionTarget::mean));
        }
        break;
    case FusionStrategy::pcae:
    case FusionStrategy::ae_only: {
        const Autoencoder& ae = require(strategy == FusionStrategy::pcae ? models.pcae : models.ae_only, strategy);
        std::vector<ImagePair> inputs;
        inputs.reserve(pairs.size());
        for (const auto& p : pairs)
            inputs.push_back(strategy == FusionStrategy::pcae ? pca_reconstructed_pair(p, models.pca_components)
                                                              : ImagePair{p.ct, p.pet});
        auto fused = ae.fuse_batch(inputs);
        for (std::size_t i = 0; i < pairs.size(); ++i) emit(pairs[i], std::move(fused[i]));
        break;
    }
    }
    return out;
}

} // namespace demf
