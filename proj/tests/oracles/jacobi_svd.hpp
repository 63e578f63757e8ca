#pragma once

// One-sided Jacobi SVD on plain nested vectors. Deliberately independent of
// Eigen so PCA results can be cross-checked against it.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;  // row-major, [rows][cols]

struct Svd {
    std::vector<double> singular;  // descending
    Matrix v;                      // v[i] = i-th right singular vector (length cols)
};

inline Svd jacobi_svd(Matrix a) {
    const std::size_t m = a.size(), n = m ? a[0].size() : 0;
    Matrix v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0, beta = 0, gamma = 0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += a[i][p] * a[i][p];
                    beta += a[i][q] * a[i][q];
                    gamma += a[i][p] * a[i][q];
                }
                if (gamma == 0.0) continue;
                const double scale = std::sqrt(alpha * beta);
                if (scale == 0.0 || std::abs(gamma) / scale < 1e-15) continue;
                off = std::max(off, std::abs(gamma) / scale);
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double ap = a[i][p], aq = a[i][q];
                    a[i][p] = c * ap - s * aq;
                    a[i][q] = s * ap + c * aq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v[i][p], vq = v[i][q];
                    v[i][p] = c * vp - s * vq;
                    v[i][q] = s * vp + c * vq;
                }
            }
        if (off < 1e-15) break;
    }

    std::vector<double> norms(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) norms[j] += a[i][j] * a[i][j];
        norms[j] = std::sqrt(norms[j]);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    Svd out;
    for (std::size_t j : order) {
        out.singular.push_back(norms[j]);
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = v[i][j];
        out.v.push_back(col);
    }
    return out;
}

struct Pca {
    std::vector<double> mean;
    Matrix components;  // k rows
    std::vector<double> singular;
};

// Rows as observations; top-k right singular vectors of the centred matrix,
// sign fixed so the largest-magnitude coordinate is positive.
inline Pca pca(const Matrix& x, int k) {
    const std::size_t n = x.size(), d = x[0].size();
    Pca out;
    out.mean.assign(d, 0.0);
    for (const auto& row : x)
        for (std::size_t j = 0; j < d; ++j) out.mean[j] += row[j] / static_cast<double>(n);
    Matrix c = x;
    for (auto& row : c)
        for (std::size_t j = 0; j < d; ++j) row[j] -= out.mean[j];
    const Svd svd = jacobi_svd(c);
    for (int i = 0; i < k && i < static_cast<int>(svd.v.size()); ++i) {
        auto v = svd.v[i];
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
        if (v[arg] < 0)
            for (double& e : v) e = -e;
        out.components.push_back(v);
        out.singular.push_back(svd.singular[i]);
    }
    return out;
}

// mean + (x - mean) V^T V over the first k components, unclipped.
inline Matrix reconstruct(const Matrix& x, const Pca& p, std::size_t k) {
    Matrix out = x;
    const std::size_t d = p.mean.size();
    for (std::size_t r = 0; r < x.size(); ++r) {
        std::vector<double> centred(d);
        for (std::size_t j = 0; j < d; ++j) centred[j] = x[r][j] - p.mean[j];
        for (std::size_t j = 0; j < d; ++j) out[r][j] = p.mean[j];
        for (std::size_t i = 0; i < k && i < p.components.size(); ++i) {
            double coord = 0.0;
            for (std::size_t j = 0; j < d; ++j) coord += centred[j] * p.components[i][j];
            for (std::size_t j = 0; j < d; ++j) out[r][j] += coord * p.components[i][j];
        }
    }
    return out;
}

} // namespace oracle
