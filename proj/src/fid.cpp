// Copyright (C) 2026 The mtat Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "mtat/diffusion.hpp"
#include "mtat/errors.hpp"
#include "mtat/util.hpp"

namespace mtat::diffusion {

namespace {

Eigen::MatrixXd stack(const std::vector<Tensor>& set, std::size_t dims) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(dims));
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set[i].size() != dims) throw DimensionError("fid_proxy: samples have differing sizes");
        for (std::size_t j = 0; j < dims; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = set[i][j];
    }
    return m;
}

struct Gaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

Gaussian fit(const Eigen::MatrixXd& x) {
    constexpr double kRegularization = 1e-6;
    Gaussian g;
    g.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
    const auto n = x.rows();
    g.cov = n > 1 ? Eigen::MatrixXd((centered.transpose() * centered) / static_cast<double>(n - 1))
                  : Eigen::MatrixXd::Zero(x.cols(), x.cols());
    g.cov.diagonal().array() += kRegularization;
    return g;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid_proxy(const std::vector<Tensor>& generated, const std::vector<Tensor>& reference,
                 std::uint64_t projection_seed, std::size_t max_dims) {
    if (generated.empty() || reference.empty()) throw DomainError("fid_proxy: both sets must be non-empty");
    const std::size_t dims = generated.front().size();
    if (reference.front().size() != dims) throw DimensionError("fid_proxy: sets have different dimensionality");
    if (max_dims < 1) throw DomainError("fid_proxy: max_dims must be positive");

    Eigen::MatrixXd a = stack(generated, dims);
    Eigen::MatrixXd b = stack(reference, dims);
    if (dims > max_dims) {
        std::mt19937_64 rng(derive_seed(projection_seed, "fid-projection"));
        const Tensor proj = Tensor::randn({dims, max_dims}, rng, 1.0 / std::sqrt(static_cast<double>(max_dims)));
        const Eigen::MatrixXd p = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            proj.data().data(), static_cast<Eigen::Index>(dims), static_cast<Eigen::Index>(max_dims));
        a = a * p;
        b = b * p;
    }
    const Gaussian g1 = fit(a), g2 = fit(b);
    const Eigen::MatrixXd s1_half = psd_sqrt(g1.cov);
    const Eigen::MatrixXd inner = s1_half * g2.cov * s1_half;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((inner + inner.transpose()) * 0.5, Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double mean_term = (g1.mean - g2.mean).squaredNorm();
    const double fd = mean_term + g1.cov.trace() + g2.cov.trace() - 2.0 * tr_sqrt;
    if (!std::isfinite(fd)) throw NumericError("fid_proxy: non-finite distance");
    return std::max(0.0, fd);
}

}  // namespace mtat::diffusion
