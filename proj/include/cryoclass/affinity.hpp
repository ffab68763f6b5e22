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
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cryoclass/basis.hpp"
#include "cryoclass/cwf.hpp"
#include "cryoclass/error.hpp"
#include "cryoclass/parallel.hpp"
#include "cryoclass/random.hpp"

namespace cryoclass {

/// Cholesky factors of U^H (L_g + L_h) U per block, U the principal subspace.
struct GroupPairFactor {
    int g = 0;
    int h = 0;
    std::vector<Eigen::MatrixXcd> chol_blocks; // lower triangular
    double logdet = 0.0;                       // m > 0 blocks counted twice
    std::shared_ptr<const std::vector<Eigen::MatrixXcd>> principal;
    std::shared_ptr<const BlockLayout> layout;
};

struct Alignment {
    double theta = 0.0; // radians
    bool reflected = false;
};

struct AffinityScore {
    double value = 0.0;
    int i = 0;
    int j = 0;
    Alignment alignment;
};

namespace affinity_detail {

inline Eigen::MatrixXcd factorize(const Eigen::MatrixXcd& m, int g, int h, const Block& blk) {
    if (m.rows() == 0)
        return m;
    Eigen::MatrixXcd a = 0.5 * (m + m.adjoint());
    Eigen::LLT<Eigen::MatrixXcd> llt(a);
    if (llt.info() != Eigen::Success) {
        a.diagonal().array() += 1e-10 * std::max(a.trace().real(), 1e-300);
        llt.compute(a);
    }
    Eigen::MatrixXcd l = llt.matrixL();
    if (llt.info() != Eigen::Success || !l.diagonal().real().allFinite() || (l.diagonal().real().array() <= 0.0).any())
        throw NumericalError("pair factorization failed for groups (" + std::to_string(g) + "," + std::to_string(h) +
                             "), m=" + std::to_string(blk.m));
    return l;
}

inline double whitened_norm2(const Eigen::MatrixXcd& chol, const Eigen::VectorXcd& d) {
    if (d.size() == 0)
        return 0.0;
    return chol.triangularView<Eigen::Lower>().solve(d).squaredNorm();
}

} // namespace affinity_detail

/// Slot of the group pair (g, h) in the factor table: the upper triangle
/// including the diagonal, row-major.
inline std::size_t pair_index(int g, int h, int groups) {
    if (g > h)
        std::swap(g, h);
    require(g >= 0 && h < groups, "pair_index: group index out of range");
    return static_cast<std::size_t>(g * groups - g * (g - 1) / 2 + (h - g));
}

/// Factorizes every group pair g <= h once, in pair_index order.
inline std::vector<GroupPairFactor> build_pair_factors(const ConditionalMoments& moments) {
    const int groups = moments.num_groups();
    require(groups >= 1, "build_pair_factors needs at least one group");
    auto principal = std::make_shared<const std::vector<Eigen::MatrixXcd>>(moments.principal);
    auto layout = std::make_shared<const BlockLayout>(moments.layout);
    std::vector<std::pair<int, int>> pairs;
    for (int g = 0; g < groups; ++g)
        for (int h = g; h < groups; ++h)
            pairs.emplace_back(g, h);
    std::vector<GroupPairFactor> out(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t t) {
        const auto [g, h] = pairs[t];
        GroupPairFactor f;
        f.g = g;
        f.h = h;
        f.principal = principal;
        f.layout = layout;
        for (std::size_t b = 0; b < moments.layout.blocks.size(); ++b) {
            const auto& blk = moments.layout.blocks[b];
            const Eigen::MatrixXcd& u = (*principal)[b];
            const Eigen::MatrixXcd sum = moments.l_blocks[static_cast<std::size_t>(g)][b] +
                                         moments.l_blocks[static_cast<std::size_t>(h)][b];
            Eigen::MatrixXcd chol = affinity_detail::factorize(u.adjoint() * sum * u, g, h, blk);
            for (Eigen::Index k = 0; k < chol.rows(); ++k)
                f.logdet += blk.weight() * 2.0 * std::log(chol(k, k).real());
            f.chol_blocks.push_back(std::move(chol));
        }
        if (!std::isfinite(f.logdet))
            throw NumericalError("pair factorization for groups (" + std::to_string(g) + "," + std::to_string(h) +
                                 ") has a non-finite log-determinant");
        out[t] = std::move(f);
    });
    return out;
}

/// -1/2 log|L_i + L_j| - 1/2 (a_i - a_j)^H (L_i + L_j)^-1 (a_i - a_j) on the
/// principal subspace, with the real-image weights (m > 0 counted twice).
/// alpha_j must already be aligned to alpha_i.
inline double affinity(const Coeffs& alpha_i, const Coeffs& alpha_j, const GroupPairFactor& factor) {
    require(factor.layout != nullptr && factor.principal != nullptr, "affinity: factor is not initialized");
    const BlockLayout& layout = *factor.layout;
    layout.check(alpha_i, "affinity");
    layout.check(alpha_j, "affinity");
    double quad = 0.0;
    for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
        const auto& blk = layout.blocks[b];
        const Eigen::VectorXcd d = (*factor.principal)[b].adjoint() * (layout.segment(alpha_i, blk) - layout.segment(alpha_j, blk));
        quad += blk.weight() * affinity_detail::whitened_norm2(factor.chol_blocks[b], d);
    }
    return -0.5 * factor.logdet - 0.5 * quad;
}

/// Affinity scorer with cached pair factors and principal-subspace projections
/// of every alpha (and of its reflection), so a score costs a few small
/// triangular solves.
class AffinityModel {
public:
    AffinityModel(const ConditionalMoments& moments, std::vector<GroupPairFactor> factors)
        : moments_(&moments), factors_(std::move(factors)) {
        const int groups = moments.num_groups();
        require(factors_.size() == static_cast<std::size_t>(groups * (groups + 1) / 2),
                "AffinityModel: factor table does not cover every group pair");
        const auto& blocks = moments.layout.blocks;
        offsets_.resize(blocks.size() + 1, 0);
        for (std::size_t b = 0; b < blocks.size(); ++b)
            offsets_[b + 1] = offsets_[b] + static_cast<int>(moments.principal[b].cols());
        direct_.resize(moments.size());
        mirrored_.resize(moments.size());
        parallel_for(moments.size(), [&](std::size_t i) {
            direct_[i].resize(offsets_.back());
            mirrored_[i].resize(offsets_.back());
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                const auto seg = moments.layout.segment(moments.alpha[i], blocks[b]);
                const Eigen::MatrixXcd& u = moments.principal[b];
                direct_[i].segment(offsets_[b], u.cols()) = u.adjoint() * seg;
                mirrored_[i].segment(offsets_[b], u.cols()) = u.adjoint() * seg.conjugate();
            }
        });
        for (int g = 0; g < groups; ++g)
            for (int h = g; h < groups; ++h) {
                const auto& f = factors_[pair_slot(g, h)];
                require(f.g == g && f.h == h, "AffinityModel: factor table is out of order");
            }
    }

    explicit AffinityModel(const ConditionalMoments& moments) : AffinityModel(moments, build_pair_factors(moments)) {}

    [[nodiscard]] const GroupPairFactor& factor(int g, int h) const { return factors_[pair_slot(g, h)]; }
    [[nodiscard]] const std::vector<GroupPairFactor>& factors() const { return factors_; }
    [[nodiscard]] const ConditionalMoments& moments() const { return *moments_; }

    /// Affinity between image i and image j aligned by (theta, reflected).
    [[nodiscard]] double score(int i, int j, const Alignment& a) const {
        const auto& m = *moments_;
        require(i >= 0 && j >= 0 && static_cast<std::size_t>(i) < m.size() && static_cast<std::size_t>(j) < m.size(),
                "affinity score: image index out of range");
        const GroupPairFactor& f = factor(m.group(static_cast<std::size_t>(i)), m.group(static_cast<std::size_t>(j)));
        const Eigen::VectorXcd& pi = direct_[static_cast<std::size_t>(i)];
        const Eigen::VectorXcd& pj = a.reflected ? mirrored_[static_cast<std::size_t>(j)] : direct_[static_cast<std::size_t>(j)];
        double quad = 0.0;
        const auto& blocks = m.layout.blocks;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const int k = offsets_[b + 1] - offsets_[b];
            if (k == 0)
                continue;
            const std::complex<double> phase = std::polar(1.0, blocks[b].m * a.theta);
            const Eigen::VectorXcd d = pi.segment(offsets_[b], k) - phase * pj.segment(offsets_[b], k);
            quad += blocks[b].weight() * affinity_detail::whitened_norm2(f.chol_blocks[b], d);
        }
        return -0.5 * f.logdet - 0.5 * quad;
    }

    /// Scores for one image, sorted by value descending, ties by ascending j.
    [[nodiscard]] std::vector<AffinityScore> row(int i, std::span<const std::pair<int, Alignment>> candidates) const {
        require(!candidates.empty(), "affinity_row: empty candidate list");
        std::vector<AffinityScore> out;
        out.reserve(candidates.size());
        for (const auto& [j, a] : candidates) {
            require(j != i, "affinity_row: self pair");
            out.push_back(AffinityScore{score(i, j, a), i, j, a});
        }
        std::stable_sort(out.begin(), out.end(), [](const AffinityScore& x, const AffinityScore& y) {
            if (x.value != y.value)
                return x.value > y.value;
            return x.j < y.j;
        });
        return out;
    }

private:
    [[nodiscard]] std::size_t pair_slot(int g, int h) const { return pair_index(g, h, moments_->num_groups()); }

    const ConditionalMoments* moments_;
    std::vector<GroupPairFactor> factors_;
    std::vector<int> offsets_;
    std::vector<Eigen::VectorXcd> direct_;
    std::vector<Eigen::VectorXcd> mirrored_;
};

enum class NormKind { L1, L2, Linf };

struct BallProbability {
    double monte_carlo = 0.0;
    double closed_form = 0.0;
    std::uint64_t samples = 0;
    std::uint64_t hits = 0;

    [[nodiscard]] double ratio() const { return monte_carlo / closed_form; }
    /// Binomial standard error of monte_carlo relative to closed_form.
    [[nodiscard]] double relative_se() const {
        const double p = monte_carlo;
        return std::sqrt(p * (1.0 - p) / static_cast<double>(samples)) / closed_form;
    }
};

/// Volume of the unit ball of the given norm in d dimensions.
inline double unit_ball_volume(int d, NormKind norm) {
    switch (norm) {
    case NormKind::L1:
        return std::pow(2.0, d) / std::tgamma(d + 1.0);
    case NormKind::L2:
        return std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
    case NormKind::Linf:
        return std::pow(2.0, d);
    }
    return 0.0;
}

/// P(||x|| < eps) for x ~ N(mean, cov) by Monte Carlo, next to the small-ball
/// approximation eps^d Vol(B) (2 pi)^(-d/2) |cov|^(-1/2) exp(-1/2 mean^T cov^-1 mean).
/// Draws are generated coordinate by coordinate through the Cholesky factor
/// and abandoned as soon as the partial norm reaches eps, which does not
/// change the estimator. Chunks use independent keyed streams, so the result
/// does not depend on the thread count.
inline BallProbability validate_ball_probability(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double epsilon,
                                                 NormKind norm, std::uint64_t samples, std::uint64_t seed = 1) {
    const auto d = static_cast<int>(mean.size());
    require(d >= 1 && d <= 3, "validate_ball_probability supports dimensions 1 to 3");
    require(cov.rows() == d && cov.cols() == d, "validate_ball_probability: covariance shape mismatch");
    require(epsilon > 0.0, "validate_ball_probability: epsilon must be positive");
    require(samples > 0, "validate_ball_probability: no samples");
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    require(llt.info() == Eigen::Success, "validate_ball_probability: covariance is not positive definite");
    const Eigen::MatrixXd chol = llt.matrixL();

    BallProbability out;
    out.samples = samples;
    const double logdet = 2.0 * chol.diagonal().array().log().sum();
    const double maha = llt.solve(mean).dot(mean);
    out.closed_form = std::pow(epsilon, d) * unit_ball_volume(d, norm) *
                      std::exp(-0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * maha);

    constexpr std::uint64_t chunk = 1u << 20;
    const std::uint64_t chunks = (samples + chunk - 1) / chunk;
    std::vector<std::uint64_t> hits(chunks, 0);
    parallel_for(chunks, [&](std::size_t c) {
        auto rng = keyed_rng(seed, c, Stream::Test);
        std::normal_distribution<double> normal;
        const std::uint64_t begin = c * chunk, end = std::min<std::uint64_t>(samples, begin + chunk);
        std::uint64_t local = 0;
        double z[3];
        for (std::uint64_t s = begin; s < end; ++s) {
            double acc = 0.0;
            bool inside = true;
            for (int k = 0; k < d; ++k) {
                z[k] = normal(rng);
                double x = mean[k];
                for (int l = 0; l <= k; ++l)
                    x += chol(k, l) * z[l];
                const double ax = std::abs(x);
                if (norm == NormKind::L2)
                    acc += x * x;
                else if (norm == NormKind::L1)
                    acc += ax;
                else
                    acc = std::max(acc, ax);
                if (acc >= (norm == NormKind::L2 ? epsilon * epsilon : epsilon)) {
                    inside = false;
                    break;
                }
            }
            local += inside ? 1u : 0u;
        }
        hits[c] = local;
    });
    for (auto h : hits)
        out.hits += h;
    out.monte_carlo = static_cast<double>(out.hits) / static_cast<double>(samples);
    return out;
}

} // namespace cryoclass
