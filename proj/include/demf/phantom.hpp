#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "demf/slice.hpp"

namespace demf {

struct PhantomConfig {
    std::uint64_t seed = 0;
    int num_cancerous = 0;
    int num_healthy = 0;
    int image_size = 128;
    double lesion_radius_min = 4.0;
    double lesion_radius_max = 8.0;
    double hotspot_intensity = 0.9;
    // Probability that a healthy slice carries one single-modality anomaly.
    double decoy_rate = 0.4;
    double noise_sigma = 0.02;

    // Throws ConfigError.
    void validate() const;
};

// A disk-shaped CT lesion or a Gaussian PET hotspot, in pixel coordinates.
struct Anomaly {
    double row = 0.0;
    double col = 0.0;
    double radius = 0.0;
    double intensity = 0.0;
};

// Generated pair together with the generator's ground truth.
struct PhantomSample {
    SlicePair pair;
    std::vector<Anomaly> ct_lesions;
    std::vector<Anomaly> pet_hotspots;
};

std::vector<PhantomSample> generate_phantom_samples(const PhantomConfig& config);
std::vector<SlicePair> generate_phantom(const PhantomConfig& config);

// Label implied by the generator internals: cancerous iff some PET hotspot
// centre lies within a CT lesion.
Label fused_label(const PhantomSample& sample);

struct ModalityAccuracy {
    double ct_only = 0.0;
    double pet_only = 0.0;
};

// Accuracy of the best single-threshold rule on a per-modality summary
// intensity (maximum of the 3x3 box-filtered slice).
ModalityAccuracy single_modality_bayes_gap(const std::vector<SlicePair>& pairs);

// Summary statistic used by single_modality_bayes_gap.
double summary_intensity(const Image& img);

// Best accuracy over all rules "predict 1 iff score > t" and "iff score < t".
double best_threshold_accuracy(const std::vector<double>& scores, const std::vector<int>& labels);

} // namespace demf
