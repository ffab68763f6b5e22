/*
 * Copyright 2026 The cryoclass Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cryoclass/basis.hpp"
#include "cryoclass/error.hpp"
#include "cryoclass/image.hpp"
#include "cryoclass/parallel.hpp"

// Covariance Wiener filtering in a block-diagonal coefficient space.
// Every image i has noisy coefficients y_i = A_g x_i + n_i where g is its
// defocus group, A_g acts blockwise and n_i is white with variance sigma^2.

namespace cryoclass {

struct CovarianceModel {
    Coeffs mu;
    std::vector<Eigen::MatrixXcd> sigma_blocks;
    double noise_var = 1.0;
};

/// Posterior moments of the clean coefficients given each observation:
/// mean alpha_i per image, covariance L_g per defocus group. principal[b]
/// spans the retained eigenvectors of the prior covariance in block b; the
/// affinity works in that subspace.
struct ConditionalMoments {
    BlockLayout layout;
    Coeffs mu;
    std::vector<Coeffs> alpha;
    std::vector<int> group_of;
    std::vector<std::vector<Eigen::MatrixXcd>> l_blocks; // [group][block]
    std::vector<std::vector<Eigen::MatrixXcd>> gain;     // [group][block], Sigma A^H (A Sigma A^H + s^2 I)^-1
    std::vector<Eigen::MatrixXcd> principal;             // [block], orthonormal columns

    [[nodiscard]] int num_groups() const { return static_cast<int>(l_blocks.size()); }
    [[nodiscard]] std::size_t size() const { return alpha.size(); }
    [[nodiscard]] int group(std::size_t i) const { return group_of[i]; }

    /// Total dimension of the retained subspace over all blocks.
    [[nodiscard]] int reduced_dim() const {
        int d = 0;
        for (const auto& u : principal)
            d += static_cast<int>(u.cols());
        return d;
    }
};

namespace cwf_detail {

inline void check_inputs(const BlockLayout& layout, std::span<const Coeffs> coeffs, std::span<const BlockOperator> ops,
                         std::span<const int> group_of) {
    require(!coeffs.empty(), "CWF estimation needs at least one image");
    require(group_of.size() == coeffs.size(), "CWF: group label count does not match coefficient count");
    for (const auto& c : coeffs)
        layout.check(c, "CWF");
    for (int g : group_of)
        require(g >= 0 && static_cast<std::size_t>(g) < ops.size(), "CWF: group index without a CTF operator");
    for (const auto& op : ops) {
        require(op.size() == layout.blocks.size(), "CWF: operator block count does not match the layout");
        for (std::size_t b = 0; b < op.size(); ++b)
            require(op[b].rows() == layout.blocks[b].size && op[b].cols() == layout.blocks[b].size,
                    "CWF: operator block has the wrong shape");
    }
}

inline Eigen::MatrixXcd hermitize(const Eigen::MatrixXcd& m, bool real_block) {
    Eigen::MatrixXcd h = 0.5 * (m + m.adjoint());
    if (real_block)
        h = h.real().cast<std::complex<double>>();
    return h;
}

inline std::string block_name(const Block& blk, std::size_t index) {
    return "block " + std::to_string(index) + " (m=" + std::to_string(blk.m) + ")";
}

} // namespace cwf_detail

/// Pooled sample variance of every pixel farther than `radius` from the center.
inline double estimate_noise_var(const ImageStack& stack, double radius) {
    require(!stack.empty(), "estimate_noise_var: empty stack");
    const int p = stack.side();
    const double c = grid_center(p);
    std::vector<int> outside;
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
            if ((x - c) * (x - c) + (y - c) * (y - c) > radius * radius)
                outside.push_back(y * p + x);
    if (outside.empty())
        throw PreconditionError("estimate_noise_var: no pixels outside radius " + std::to_string(radius));
    double sum = 0.0;
    for (const auto& img : stack.images)
        for (int k : outside)
            sum += img.pixels.data()[k];
    const double count = static_cast<double>(outside.size()) * static_cast<double>(stack.size());
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& img : stack.images)
        for (int k : outside) {
            const double d = img.pixels.data()[k] - mean;
            ss += d * d;
        }
    return count > 1.0 ? ss / (count - 1.0) : 0.0;
}

/// Least-squares mean: per block, (sum_i A^T A + ridge)^-1 sum_i A^T y_i.
///
/// With noise_var > 0 the solution is additionally denoised in whitened
/// coordinates: each eigen-direction k of the normal matrix N gives a statistic
/// w_k = (N^-1/2 sum_i A^T y_i)_k / sigma with unit noise variance; components
/// with |w_k| below sqrt(2 log d) (d = total coefficient count) are dropped and
/// the rest are scaled by 1 - 1/|w_k|^2. Without it, directions the CTF barely
/// transmits come back amplified by 1/|A|.
inline Coeffs estimate_mean(const BlockLayout& layout, std::span<const Coeffs> coeffs, std::span<const BlockOperator> ops,
                            std::span<const int> group_of, double noise_var = 0.0) {
    require(noise_var >= 0.0, "estimate_mean: noise variance must be non-negative");
    cwf_detail::check_inputs(layout, coeffs, ops, group_of);
    const std::size_t groups = ops.size();
    std::vector<Coeffs> group_sum(groups, Coeffs::Zero(layout.total));
    std::vector<double> group_count(groups, 0.0);
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
        group_sum[static_cast<std::size_t>(group_of[i])] += coeffs[i];
        group_count[static_cast<std::size_t>(group_of[i])] += 1.0;
    }
    Coeffs mu = Coeffs::Zero(layout.total);
    for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
        const auto& blk = layout.blocks[b];
        Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(blk.size, blk.size);
        Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(blk.size);
        for (std::size_t g = 0; g < groups; ++g) {
            if (group_count[g] == 0.0)
                continue;
            const Eigen::MatrixXd& a = ops[g][b];
            normal += group_count[g] * a.transpose() * a;
            rhs += a.transpose().cast<std::complex<double>>() * layout.segment(group_sum[g], blk);
        }
        const Eigen::MatrixXd raw_normal = normal;
        normal.diagonal().array() += 1e-8 * normal.trace();
        const Eigen::LLT<Eigen::MatrixXd> llt(normal);
        if (llt.info() != Eigen::Success || !(normal.trace() > 0.0))
            throw NumericalError("estimate_mean: singular normal matrix in " + cwf_detail::block_name(blk, b));
        Eigen::VectorXcd sol(blk.size);
        if (noise_var > 0.0) {
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(raw_normal);
            const double top = eig.eigenvalues().maxCoeff();
            const double ridge = 1e-8 * raw_normal.trace();
            const double cut = 2.0 * std::log(std::max<double>(2.0, static_cast<double>(layout.total)));
            const Eigen::MatrixXcd q = eig.eigenvectors().cast<std::complex<double>>();
            Eigen::VectorXcd proj = q.adjoint() * rhs;
            for (Eigen::Index k = 0; k < proj.size(); ++k) {
                const double nu = eig.eigenvalues()[k];
                if (!(nu > 1e-12 * top)) {
                    proj[k] = 0.0;
                    continue;
                }
                const double w2 = std::norm(proj[k]) / (nu * noise_var);
                proj[k] = w2 > cut ? proj[k] * (1.0 - 1.0 / w2) / (nu + ridge) : 0.0;
            }
            sol = q * proj;
        } else {
            sol.real() = llt.solve(rhs.real());
            sol.imag() = llt.solve(rhs.imag());
        }
        if (blk.real())
            sol.imag().setZero();
        layout.segment(mu, blk) = sol;
    }
    return mu;
}

/// Covariance estimate per block, Hermitized, floored to PSD and shrunk:
/// eigenvalues below shrink_tau times the largest eigenvalue over all blocks
/// are zeroed.
///
/// Without spiked_shrink each block solves the least-squares system
///   sum_g n_g A_g^T A_g Sigma A_g^T A_g = sum_g A_g^T (S_g - n_g sigma^2 I) A_g
/// (S_g the scatter of y - A_g mu) densely through its Kronecker form.
///
/// With spiked_shrink the problem is whitened by the noise part sigma^2 N,
/// N = sum_i A_i^T A_i. In the eigenbasis Q, D of N the back-projected scatter
/// becomes a sample covariance with identity noise; its significant part is
/// replaced by Frobenius-optimal spiked-model estimates E. The denoised
/// right-hand side R = sigma^2 Q D^1/2 E D^1/2 Q^H is mapped back as
///   Sigma = P^-1/2 R P^-1/2,  P = sum_g n_g (A_g^T A_g)^2.
/// This is exact for a single CTF and on the diagonal of commuting operators.
/// It avoids inverting the Kronecker operator, which is nearly singular for
/// frequency pairs seen by different groups; such pairs are shrunk instead.
/// Directions whose mean power transfer nu / n is below min_transfer are
/// treated as unobserved.
struct CovarianceOptions {
    double shrink_tau = 0.05;
    bool spiked_shrink = true;
    double min_transfer = 0.05;
};

namespace cwf_detail {

/// Signal eigenvalue estimate for a whitened sample eigenvalue ell with noise
/// level 1 and aspect ratio gamma; zero at or below the bulk edge.
inline double spiked_shrink(double ell, double gamma, double margin = 0.0) {
    const double edge = (1.0 + std::sqrt(gamma)) * (1.0 + std::sqrt(gamma));
    if (!(ell > edge * (1.0 + margin)))
        return 0.0;
    const double b = ell + 1.0 - gamma;
    const double spike = 0.5 * (b + std::sqrt(std::max(0.0, b * b - 4.0 * ell))) - 1.0;
    if (!(spike > 0.0))
        return 0.0;
    const double c2 = (1.0 - gamma / (spike * spike)) / (1.0 + gamma / spike);
    return std::max(0.0, spike * c2);
}

inline Eigen::MatrixXcd kronecker_solve(const Block& blk, std::size_t index, const std::vector<Eigen::MatrixXd>& a,
                                        const std::vector<double>& count, const Eigen::MatrixXcd& rhs) {
    const int r = blk.size;
    if (r * r > 16384)
        throw PreconditionError("estimate_covariance: " + block_name(blk, index) +
                                " is too large for the dense Kronecker solve");
    Eigen::MatrixXd kron = Eigen::MatrixXd::Zero(r * r, r * r);
    for (std::size_t g = 0; g < a.size(); ++g) {
        if (count[g] == 0.0)
            continue;
        const Eigen::MatrixXd m = a[g].transpose() * a[g];
        for (int l = 0; l < r; ++l)
            for (int k = 0; k < r; ++k)
                for (int j = 0; j < r; ++j)
                    for (int i = 0; i < r; ++i)
                        kron(i + r * j, k + r * l) += count[g] * m(i, k) * m(l, j);
    }
    const double trace = kron.trace();
    kron.diagonal().array() += 1e-8 * trace;
    const Eigen::LLT<Eigen::MatrixXd> llt(kron);
    if (!(trace > 0.0) || llt.info() != Eigen::Success)
        throw NumericalError("estimate_covariance: singular system in " + block_name(blk, index));
    const Eigen::VectorXd re = llt.solve(Eigen::Map<const Eigen::VectorXd>(Eigen::MatrixXd(rhs.real()).data(), r * r));
    const Eigen::VectorXd im = llt.solve(Eigen::Map<const Eigen::VectorXd>(Eigen::MatrixXd(rhs.imag()).data(), r * r));
    Eigen::MatrixXcd sigma(r, r);
    sigma.real() = Eigen::Map<const Eigen::MatrixXd>(re.data(), r, r);
    sigma.imag() = Eigen::Map<const Eigen::MatrixXd>(im.data(), r, r);
    return sigma;
}

/// Whitened spiked estimate of one block (see CovarianceOptions).
inline Eigen::MatrixXcd spiked_estimate(const Block& blk, const Eigen::MatrixXd& normal, const Eigen::MatrixXd& fourth,
                                        const Eigen::MatrixXcd& rhs, double total, double noise_var, double min_transfer,
                                        double dims) {
    const int r = blk.size;
    using cd = std::complex<double>;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ne(normal);
    const double top = ne.eigenvalues().maxCoeff();
    Eigen::VectorXd inv_half = Eigen::VectorXd::Zero(r);
    for (int k = 0; k < r; ++k) {
        const double nu = ne.eigenvalues()[k];
        if (top > 0.0 && nu > 1e-12 * top && nu >= min_transfer * total)
            inv_half[k] = 1.0 / std::sqrt(nu);
    }
    const Eigen::MatrixXcd q = ne.eigenvectors().cast<cd>();
    // rhs / sigma^2 = D^1/2 (T - I) D^1/2 in the eigenbasis, T the whitened scatter.
    const Eigen::MatrixXcd excess = hermitize(
        inv_half.cast<cd>().asDiagonal() * (q.adjoint() * rhs * q) * inv_half.cast<cd>().asDiagonal() / noise_var,
        blk.real());
    // A direction is kept only if its excess variance is significant; its
    // sampling sd is sqrt(2 / n) for real blocks, sqrt(1 / n) for complex.
    const double z = std::sqrt(2.0 * std::log(std::max(2.0, dims)));
    const double sd = std::sqrt((blk.real() ? 2.0 : 1.0) / total);
    std::vector<Eigen::Index> kept;
    for (int k = 0; k < r; ++k)
        if (inv_half[k] > 0.0 && excess(k, k).real() > z * sd)
            kept.push_back(k);
    Eigen::MatrixXcd shrunk = Eigen::MatrixXcd::Zero(r, r);
    if (!kept.empty()) {
        const auto nk = static_cast<Eigen::Index>(kept.size());
        const Eigen::MatrixXcd sub = excess(kept, kept);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> te(sub);
        // Edge fluctuations are O(1/sqrt(n)); the margin keeps the chance of a
        // spurious detection small across all blocks.
        const double gamma = static_cast<double>(nk) / total, margin = z / std::sqrt(total);
        Eigen::VectorXd ev(nk);
        for (Eigen::Index k = 0; k < nk; ++k)
            ev[k] = spiked_shrink(te.eigenvalues()[k] + 1.0, gamma, margin);
        shrunk(kept, kept) = te.eigenvectors() * ev.cast<cd>().asDiagonal() * te.eigenvectors().adjoint();
    }
    // Denoised right-hand side, then Sigma = P^-1/2 rhs P^-1/2.
    const Eigen::VectorXd half = (inv_half.array() > 0.0).select(inv_half.cwiseInverse(), 0.0);
    const Eigen::MatrixXcd clean_rhs =
        noise_var * q * (half.cast<cd>().asDiagonal() * shrunk * half.cast<cd>().asDiagonal()) * q.adjoint();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pe(fourth);
    const double ptop = pe.eigenvalues().maxCoeff();
    Eigen::VectorXd p_inv_half = Eigen::VectorXd::Zero(r);
    for (int k = 0; k < r; ++k)
        if (ptop > 0.0 && pe.eigenvalues()[k] > 1e-12 * ptop)
            p_inv_half[k] = 1.0 / std::sqrt(pe.eigenvalues()[k]);
    const Eigen::MatrixXcd pq = pe.eigenvectors().cast<cd>();
    const Eigen::MatrixXcd k_inv = pq * p_inv_half.cast<cd>().asDiagonal() * pq.adjoint();
    return k_inv * clean_rhs * k_inv;
}

} // namespace cwf_detail

inline CovarianceModel estimate_covariance(const BlockLayout& layout, std::span<const Coeffs> coeffs,
                                           std::span<const BlockOperator> ops, std::span<const int> group_of,
                                           const Coeffs& mu, double noise_var, const CovarianceOptions& options = {}) {
    const double shrink_tau = options.shrink_tau;
    cwf_detail::check_inputs(layout, coeffs, ops, group_of);
    require(coeffs.size() >= 2, "estimate_covariance needs at least two images");
    require(noise_var >= 0.0, "estimate_covariance: noise variance must be non-negative");
    require(shrink_tau >= 0.0 && shrink_tau < 1.0, "estimate_covariance: shrink_tau must lie in [0, 1)");
    layout.check(mu, "estimate_covariance");
    const std::size_t groups = ops.size();
    const std::size_t nblocks = layout.blocks.size();

    std::vector<Eigen::VectorXd> eigenvalues(nblocks);
    std::vector<Eigen::MatrixXcd> eigenvectors(nblocks);

    parallel_for(nblocks, [&](std::size_t b) {
        const auto& blk = layout.blocks[b];
        const int r = blk.size;
        std::vector<Eigen::MatrixXcd> scatter(groups, Eigen::MatrixXcd::Zero(r, r));
        std::vector<double> count(groups, 0.0);
        for (std::size_t i = 0; i < coeffs.size(); ++i) {
            const auto g = static_cast<std::size_t>(group_of[i]);
            const Eigen::VectorXcd z = layout.segment(coeffs[i], blk) -
                                       ops[g][b].cast<std::complex<double>>() * layout.segment(mu, blk);
            scatter[g].noalias() += z * z.adjoint();
            count[g] += 1.0;
        }
        std::vector<Eigen::MatrixXd> a(groups);
        Eigen::MatrixXcd rhs = Eigen::MatrixXcd::Zero(r, r);
        Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(r, r), fourth = Eigen::MatrixXd::Zero(r, r);
        double total = 0.0;
        for (std::size_t g = 0; g < groups; ++g) {
            a[g] = ops[g][b];
            if (count[g] == 0.0)
                continue;
            const Eigen::MatrixXcd centered =
                scatter[g] - count[g] * noise_var * Eigen::MatrixXcd::Identity(r, r);
            rhs += a[g].transpose().cast<std::complex<double>>() * centered * a[g].cast<std::complex<double>>();
            const Eigen::MatrixXd ata = a[g].transpose() * a[g];
            normal += count[g] * ata;
            fourth += count[g] * ata * ata;
            total += count[g];
        }
        Eigen::MatrixXcd sigma;
        if (options.spiked_shrink && noise_var > 0.0)
            sigma = cwf_detail::spiked_estimate(blk, normal, fourth, rhs, total, noise_var, options.min_transfer,
                                                static_cast<double>(layout.total));
        else
            sigma = cwf_detail::kronecker_solve(blk, b, a, count, rhs);
        sigma = cwf_detail::hermitize(sigma, blk.real());
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(sigma);
        eigenvalues[b] = eig.eigenvalues().cwiseMax(0.0);
        eigenvectors[b] = eig.eigenvectors();
        if (blk.real())
            eigenvectors[b] = eigenvectors[b].real().cast<std::complex<double>>();
    });

    double largest = 0.0;
    for (const auto& ev : eigenvalues)
        if (ev.size() > 0)
            largest = std::max(largest, ev.maxCoeff());

    CovarianceModel model;
    model.mu = mu;
    model.noise_var = noise_var;
    model.sigma_blocks.resize(nblocks);
    for (std::size_t b = 0; b < nblocks; ++b) {
        Eigen::VectorXd ev = eigenvalues[b];
        for (Eigen::Index k = 0; k < ev.size(); ++k)
            if (ev[k] < shrink_tau * largest)
                ev[k] = 0.0;
        const Eigen::MatrixXcd& v = eigenvectors[b];
        model.sigma_blocks[b] =
            cwf_detail::hermitize(v * ev.cast<std::complex<double>>().asDiagonal() * v.adjoint(), layout.blocks[b].real());
    }
    return model;
}

/// Orthonormal basis of the eigenvectors of each covariance block whose
/// eigenvalue exceeds rel_tol times the largest eigenvalue over all blocks.
inline std::vector<Eigen::MatrixXcd> principal_subspace(const BlockLayout& layout,
                                                        const std::vector<Eigen::MatrixXcd>& sigma_blocks,
                                                        double rel_tol = 1e-9) {
    std::vector<Eigen::VectorXd> values(sigma_blocks.size());
    std::vector<Eigen::MatrixXcd> vectors(sigma_blocks.size());
    double largest = 0.0;
    for (std::size_t b = 0; b < sigma_blocks.size(); ++b) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(sigma_blocks[b]);
        values[b] = eig.eigenvalues();
        vectors[b] = eig.eigenvectors();
        if (layout.blocks[b].real())
            vectors[b] = vectors[b].real().cast<std::complex<double>>();
        if (values[b].size() > 0)
            largest = std::max(largest, values[b].maxCoeff());
    }
    std::vector<Eigen::MatrixXcd> out(sigma_blocks.size());
    for (std::size_t b = 0; b < sigma_blocks.size(); ++b) {
        std::vector<Eigen::Index> keep;
        // Eigen sorts ascending; keep the largest first.
        for (Eigen::Index k = values[b].size() - 1; k >= 0; --k)
            if (values[b][k] > rel_tol * largest && values[b][k] > 0.0)
                keep.push_back(k);
        Eigen::MatrixXcd u(sigma_blocks[b].rows(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k)
            u.col(static_cast<Eigen::Index>(k)) = vectors[b].col(keep[k]);
        out[b] = std::move(u);
    }
    return out;
}

/// Wiener gain, posterior covariance and posterior means. Per group and block:
///   K = Sigma A^H (A Sigma A^H + s^2 I)^-1,  L = Sigma - K A Sigma,
///   alpha_i = mu + K (y_i - A mu),
/// using a Cholesky factorization of A Sigma A^H + s^2 I.
inline ConditionalMoments conditional_moments(const BlockLayout& layout, std::span<const Coeffs> coeffs,
                                              std::span<const BlockOperator> ops, std::span<const int> group_of,
                                              const CovarianceModel& model) {
    cwf_detail::check_inputs(layout, coeffs, ops, group_of);
    require(model.sigma_blocks.size() == layout.blocks.size(), "conditional_moments: model block count mismatch");
    layout.check(model.mu, "conditional_moments");
    const std::size_t groups = ops.size();
    const std::size_t nblocks = layout.blocks.size();

    ConditionalMoments out;
    out.layout = layout;
    out.mu = model.mu;
    out.group_of.assign(group_of.begin(), group_of.end());
    out.l_blocks.assign(groups, std::vector<Eigen::MatrixXcd>(nblocks));
    out.gain.assign(groups, std::vector<Eigen::MatrixXcd>(nblocks));

    parallel_for(groups * nblocks, [&](std::size_t task) {
        const std::size_t g = task / nblocks, b = task % nblocks;
        const auto& blk = layout.blocks[b];
        const Eigen::MatrixXcd a = ops[g][b].cast<std::complex<double>>();
        const Eigen::MatrixXcd& sigma = model.sigma_blocks[b];
        Eigen::MatrixXcd c = a * sigma * a.adjoint();
        c.diagonal().array() += model.noise_var;
        c = cwf_detail::hermitize(c, blk.real());
        const Eigen::LLT<Eigen::MatrixXcd> llt(c);
        if (llt.info() != Eigen::Success)
            throw NumericalError("conditional_moments: A Sigma A^H + s^2 I is not positive definite in group " +
                                 std::to_string(g) + ", " + cwf_detail::block_name(blk, b));
        // K^H = C^-1 A Sigma since C and Sigma are Hermitian.
        const Eigen::MatrixXcd gain = llt.solve(a * sigma).adjoint();
        out.gain[g][b] = blk.real() ? Eigen::MatrixXcd(gain.real().cast<std::complex<double>>()) : gain;
        out.l_blocks[g][b] = cwf_detail::hermitize(sigma - out.gain[g][b] * a * sigma, blk.real());
    });

    out.alpha.resize(coeffs.size());
    parallel_for(coeffs.size(), [&](std::size_t i) {
        const auto g = static_cast<std::size_t>(group_of[i]);
        Coeffs a = model.mu;
        for (std::size_t b = 0; b < nblocks; ++b) {
            const auto& blk = layout.blocks[b];
            const Eigen::VectorXcd resid = layout.segment(coeffs[i], blk) -
                                           ops[g][b].cast<std::complex<double>>() * layout.segment(model.mu, blk);
            layout.segment(a, blk) += out.gain[g][b] * resid;
        }
        out.alpha[i] = std::move(a);
    });

    out.principal = principal_subspace(layout, model.sigma_blocks);
    return out;
}

/// Wiener-filtered images: evaluate(alpha_i). Equal to (I - H A) mu + H y.
inline ImageStack denoise(const ConditionalMoments& moments, const SteerableBasis& basis, double pixel_size = 1.0) {
    require(moments.layout == basis.layout(), "denoise: moments and basis layouts differ");
    ImageStack out;
    out.images.resize(moments.size());
    out.group_of = moments.group_of;
    parallel_for(moments.size(), [&](std::size_t i) { out.images[i] = basis.evaluate(moments.alpha[i], pixel_size); });
    return out;
}

} // namespace cryoclass
