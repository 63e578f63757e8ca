#include "demf/pca.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cfloat>
#include <cmath>

#include "demf/error.hpp"

namespace demf {

namespace {

Eigen::MatrixXd to_matrix(const Image& img) {
    Eigen::MatrixXd x(img.rows(), img.cols());
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) {
            const double v = img(r, c);
            if (!std::isfinite(v)) throw DataError("pca: non-finite pixel");
            x(r, c) = v;
        }
    return x;
}

} // namespace

PcaReduction pca_fit(const Image& img, int k) {
    if (img.empty()) throw DataError("pca_fit: empty image");
    const int n = img.rows(), d = img.cols();
    if (k < 0 || k > std::min(n, d))
        throw ConfigError("pca_fit: k=" + std::to_string(k) + " outside [0, " + std::to_string(std::min(n, d)) + "]");

    const Eigen::MatrixXd x = to_matrix(img);
    PcaReduction red;
    red.requested_k = k;
    red.mean = x.colwise().mean().transpose();
    red.components.resize(0, d);
    if (k == 0) return red;

    const Eigen::MatrixXd centered = x.rowwise() - red.mean.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double tol = s.size() ? s(0) * std::max(n, d) * static_cast<double>(FLT_EPSILON) : 0.0;
    int rank = 0;
    while (rank < s.size() && s(rank) > tol && s(rank) > 0.0) ++rank;
    const int keep = std::min(k, rank);

    red.components.resize(keep, d);
    const double dof = n > 1 ? n - 1.0 : 1.0;
    for (int i = 0; i < keep; ++i) {
        Eigen::VectorXd v = svd.matrixV().col(i);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        red.components.row(i) = v.transpose();
        red.explained_variance.push_back(s(i) * s(i) / dof);
    }
    red.degenerate = keep == 0;
    return red;
}

Eigen::MatrixXd pca_project(const Image& img, const PcaReduction& red) {
    if (img.cols() != red.features())
        throw DataError("pca_reconstruct: image has " + std::to_string(img.cols()) + " columns, reduction expects " +
                        std::to_string(red.features()));
    const Eigen::MatrixXd x = to_matrix(img);
    const Eigen::MatrixXd centered = x.rowwise() - red.mean.transpose();
    Eigen::MatrixXd out = (centered * red.components.transpose()) * red.components;
    out.rowwise() += red.mean.transpose();
    return out;
}

Image pca_reconstruct(const Image& img, const PcaReduction& red) {
    const Eigen::MatrixXd m = pca_project(img, red);
    Image out(img.rows(), img.cols());
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) out(r, c) = static_cast<float>(std::clamp(m(r, c), 0.0, 1.0));
    return out;
}

} // namespace demf
