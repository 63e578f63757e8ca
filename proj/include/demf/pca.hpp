#pragma once

#include <Eigen/Core>
#include <vector>

#include "demf/image.hpp"

namespace demf {

// Per-image PCA with rows as observations and columns as features.
//
// Components whose singular value falls below float resolution of the input
// are dropped, so k() can be smaller than the requested count; a reduction
// with no components is flagged degenerate and reconstructs every row as the
// column mean.
struct PcaReduction {
    int requested_k = 0;
    Eigen::MatrixXd components;             // k x d, orthonormal rows
    Eigen::VectorXd mean;                   // d
    std::vector<double> explained_variance; // k, non-increasing
    bool degenerate = true;

    int k() const noexcept { return static_cast<int>(components.rows()); }
    int features() const noexcept { return static_cast<int>(mean.size()); }
};

// Throws ConfigError when k is outside [0, min(rows, cols)] and DataError on
// non-finite pixels.
PcaReduction pca_fit(const Image& img, int k);

// Projection onto the component span, without clipping.
Eigen::MatrixXd pca_project(const Image& img, const PcaReduction& red);

// Projection clipped to [0, 1].
Image pca_reconstruct(const Image& img, const PcaReduction& red);

} // namespace demf
