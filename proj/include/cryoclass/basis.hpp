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

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/bessel.hpp>

#include "cryoclass/ctf.hpp"
#include "cryoclass/error.hpp"
#include "cryoclass/image.hpp"

namespace cryoclass {

/// Expansion coefficients of one image, all angular-frequency blocks
/// concatenated (see BlockLayout for the offsets).
using Coeffs = Eigen::VectorXcd;

/// One angular-frequency block: coefficients [offset, offset + size) belong
/// to angular frequency m. Blocks with m > 0 stand for the conjugate m < 0
/// block as well, hence weight 2 in every real-space quadratic form.
struct Block {
    int m = 0;
    int size = 0;
    int offset = 0;

    [[nodiscard]] double weight() const { return m == 0 ? 1.0 : 2.0; }
    [[nodiscard]] bool real() const { return m == 0; }
};

struct BlockLayout {
    std::vector<Block> blocks;
    int total = 0;
    bool steerable = true; // false for the dense pixel basis

    static BlockLayout from_sizes(const std::vector<std::pair<int, int>>& m_and_size, bool steerable = true) {
        BlockLayout layout;
        layout.steerable = steerable;
        for (const auto& [m, size] : m_and_size) {
            layout.blocks.push_back(Block{m, size, layout.total});
            layout.total += size;
        }
        return layout;
    }

    [[nodiscard]] int max_m() const {
        int mm = 0;
        for (const auto& b : blocks)
            mm = std::max(mm, b.m);
        return mm;
    }

    [[nodiscard]] auto segment(Coeffs& c, const Block& b) const { return c.segment(b.offset, b.size); }
    [[nodiscard]] auto segment(const Coeffs& c, const Block& b) const { return c.segment(b.offset, b.size); }

    void check(const Coeffs& c, const char* what) const {
        if (c.size() != total)
            throw PreconditionError(std::string(what) + ": coefficient vector has " + std::to_string(c.size()) +
                                    " entries, layout expects " + std::to_string(total));
    }

    bool operator==(const BlockLayout& o) const {
        if (total != o.total || steerable != o.steerable || blocks.size() != o.blocks.size())
            return false;
        for (std::size_t i = 0; i < blocks.size(); ++i)
            if (blocks[i].m != o.blocks[i].m || blocks[i].size != o.blocks[i].size)
                return false;
        return true;
    }
};

/// Real inner product of the images represented by a and b (up to basis
/// non-orthogonality): sum over blocks of weight * Re(a^H b).
inline double weighted_dot(const BlockLayout& layout, const Coeffs& a, const Coeffs& b) {
    double acc = 0.0;
    for (const auto& blk : layout.blocks)
        acc += blk.weight() * std::real(layout.segment(a, blk).dot(layout.segment(b, blk)));
    return acc;
}

inline double weighted_norm(const BlockLayout& layout, const Coeffs& a) {
    return std::sqrt(std::max(0.0, weighted_dot(layout, a, a)));
}

/// Multiplies block m by exp(i m theta). The represented image f becomes
/// f(r, phi + theta), i.e. its content turns by -theta.
inline Coeffs rotate_coeffs(const Coeffs& c, const BlockLayout& layout, double theta) {
    layout.check(c, "rotate_coeffs");
    if (!layout.steerable && theta != 0.0)
        throw PreconditionError("rotate_coeffs: the pixel basis is not steerable");
    Coeffs out = c;
    for (const auto& blk : layout.blocks) {
        if (blk.m == 0)
            continue;
        const std::complex<double> phase = std::polar(1.0, blk.m * theta);
        layout.segment(out, blk) *= phase;
    }
    return out;
}

/// Conjugates every block: mirror about the x axis (y -> -y). Involution.
inline Coeffs reflect_coeffs(const Coeffs& c, const BlockLayout& layout) {
    layout.check(c, "reflect_coeffs");
    if (!layout.steerable)
        throw PreconditionError("reflect_coeffs: the pixel basis is not steerable");
    return c.conjugate();
}

/// Reflect (optionally) and then rotate: the alignment applied to a neighbor.
inline Coeffs align_coeffs(const Coeffs& c, const BlockLayout& layout, double theta, bool reflected) {
    if (!reflected && theta == 0.0)
        return c;
    return rotate_coeffs(reflected ? reflect_coeffs(c, layout) : c, layout, theta);
}

/// Per-block real operator, e.g. the CTF restricted to the basis.
using BlockOperator = std::vector<Eigen::MatrixXd>;

/// Fourier-Bessel basis J_m(R_mq r / radius) exp(i m phi) sampled on the disk
/// pixels, or the dense pixel basis (identity on the disk). Coefficients are
/// obtained by ridge-regularized least squares on the disk pixels.
class SteerableBasis {
public:
    static SteerableBasis fourier_bessel(int p, double radius) {
        check_geometry(p, radius);
        SteerableBasis basis(p, radius);
        const auto& pix = basis.disk_;
        const double c = grid_center(p);
        // Bessel roots up to pi (radius - 1/2): the Nyquist cutoff measured to
        // the edge of the last full pixel ring inside the disk.
        const double cutoff = std::numbers::pi * (radius - 0.5);
        std::vector<std::pair<int, int>> sizes;
        std::vector<Eigen::VectorXcd> columns;
        for (int m = 0;; ++m) {
            int count = 0;
            for (int q = 1;; ++q) {
                const double root = boost::math::cyl_bessel_j_zero(static_cast<double>(m), q);
                if (root > cutoff)
                    break;
                Eigen::VectorXcd col(static_cast<Eigen::Index>(pix.size()));
                for (std::size_t k = 0; k < pix.size(); ++k) {
                    const double x = pix[k] % p - c, y = pix[k] / p - c;
                    const double r = std::hypot(x, y), phi = std::atan2(y, x);
                    col[static_cast<Eigen::Index>(k)] = std::cyl_bessel_j(static_cast<double>(m), root * r / radius) *
                                                        std::polar(1.0, m * phi);
                }
                col /= col.norm();
                columns.push_back(std::move(col));
                ++count;
            }
            if (count == 0)
                break;
            sizes.emplace_back(m, count);
        }
        basis.layout_ = BlockLayout::from_sizes(sizes, true);
        basis.synth_.resize(static_cast<Eigen::Index>(pix.size()), basis.layout_.total);
        for (std::size_t k = 0; k < columns.size(); ++k)
            basis.synth_.col(static_cast<Eigen::Index>(k)) = columns[k];
        basis.build_analysis();
        return basis;
    }

    /// Dense pixel basis: a single real block with one coefficient per disk pixel.
    static SteerableBasis pixel(int p, double radius) {
        check_geometry(p, radius);
        SteerableBasis basis(p, radius);
        const auto npix = static_cast<int>(basis.disk_.size());
        basis.layout_ = BlockLayout::from_sizes({{0, npix}}, false);
        basis.synth_ = Eigen::MatrixXcd::Identity(npix, npix);
        basis.build_analysis();
        return basis;
    }

    [[nodiscard]] int side() const { return p_; }
    [[nodiscard]] double radius() const { return radius_; }
    [[nodiscard]] const BlockLayout& layout() const { return layout_; }
    [[nodiscard]] const std::vector<int>& disk_pixels() const { return disk_; }
    /// Complex basis functions on the disk pixels, one column per coefficient.
    [[nodiscard]] const Eigen::MatrixXcd& synthesis() const { return synth_; }

    /// Basis function as a full p x p complex grid (zero outside the disk).
    [[nodiscard]] ComplexGrid function_grid(int column) const {
        ComplexGrid g = ComplexGrid::Zero(p_, p_);
        for (std::size_t k = 0; k < disk_.size(); ++k)
            g.data()[disk_[k]] = synth_(static_cast<Eigen::Index>(k), column);
        return g;
    }

    /// Least-squares coefficients of the disk-masked image.
    [[nodiscard]] Coeffs expand(const Image& image) const {
        if (image.side() != p_)
            throw PreconditionError("expand: image side " + std::to_string(image.side()) + " does not match basis side " +
                                    std::to_string(p_));
        Eigen::VectorXd values(static_cast<Eigen::Index>(disk_.size()));
        for (std::size_t k = 0; k < disk_.size(); ++k)
            values[static_cast<Eigen::Index>(k)] = image.pixels.data()[disk_[k]];
        const Eigen::VectorXd v = analysis_ * values;
        Coeffs c(layout_.total);
        Eigen::Index r = 0;
        for (const auto& blk : layout_.blocks)
            for (int q = 0; q < blk.size; ++q) {
                if (blk.real()) {
                    c[blk.offset + q] = {v[r], 0.0};
                    r += 1;
                } else {
                    c[blk.offset + q] = {v[r], v[r + 1]};
                    r += 2;
                }
            }
        return c;
    }

    /// Real image represented by the coefficients; zero outside the disk.
    [[nodiscard]] Image evaluate(const Coeffs& c, double pixel_size = 1.0) const {
        layout_.check(c, "evaluate");
        Image img(p_, pixel_size);
        const Eigen::VectorXd v = design_ * real_parameters(c);
        for (std::size_t k = 0; k < disk_.size(); ++k)
            img.pixels.data()[disk_[k]] = v[static_cast<Eigen::Index>(k)];
        return img;
    }

    /// Real parameter vector (Re, Im interleaved for complex blocks).
    [[nodiscard]] Eigen::VectorXd real_parameters(const Coeffs& c) const {
        Eigen::VectorXd v(design_.cols());
        Eigen::Index r = 0;
        for (const auto& blk : layout_.blocks)
            for (int q = 0; q < blk.size; ++q) {
                v[r++] = c[blk.offset + q].real();
                if (!blk.real())
                    v[r++] = c[blk.offset + q].imag();
            }
        return v;
    }

private:
    SteerableBasis(int p, double radius) : p_(p), radius_(radius), disk_(disk_indices(p, radius)) {}

    static void check_geometry(int p, double radius) {
        if (p < 1 || p % 2 == 0)
            throw PreconditionError("basis: image side must be odd, got " + std::to_string(p));
        if (!(radius >= 1.0 && radius <= 0.5 * (p - 1)))
            throw PreconditionError("basis: radius must lie in [1, (p-1)/2]");
    }

    // Real design matrix: image = design * real_parameters. A complex block
    // coefficient c with function b contributes 2 Re(c b) to the image.
    void build_analysis() {
        Eigen::Index cols = 0;
        for (const auto& blk : layout_.blocks)
            cols += blk.real() ? blk.size : 2 * blk.size;
        design_.resize(static_cast<Eigen::Index>(disk_.size()), cols);
        Eigen::Index r = 0;
        for (const auto& blk : layout_.blocks)
            for (int q = 0; q < blk.size; ++q) {
                const auto b = synth_.col(blk.offset + q);
                if (blk.real()) {
                    design_.col(r++) = b.real();
                } else {
                    design_.col(r++) = 2.0 * b.real();
                    design_.col(r++) = -2.0 * b.imag();
                }
            }
        Eigen::MatrixXd normal = design_.transpose() * design_;
        normal.diagonal().array() += 1e-10 * normal.trace();
        const Eigen::MatrixXd m = normal.ldlt().solve(design_.transpose());
        // One refinement step, c += M (v - D c): the ridge bias drops from
        // lambda / nu to (lambda / nu)^2 on well-determined directions.
        analysis_ = 2.0 * m - m * (design_ * m);
    }

    int p_ = 0;
    double radius_ = 0.0;
    std::vector<int> disk_;
    BlockLayout layout_;
    Eigen::MatrixXcd synth_;
    Eigen::MatrixXd design_;
    Eigen::MatrixXd analysis_;
};

/// CTF restricted to each block: A[q, q'] = <b_q, CTF * b_q'> over the disk,
/// with the CTF applied to the full-grid basis function in Fourier space.
inline BlockOperator ctf_block_operator(const CtfGrid& grid, const SteerableBasis& basis) {
    if (grid.side() != basis.side())
        throw PreconditionError("ctf_block_operator: CTF grid side does not match the basis");
    const auto& layout = basis.layout();
    const auto& disk = basis.disk_pixels();
    BlockOperator ops;
    ops.reserve(layout.blocks.size());
    for (const auto& blk : layout.blocks) {
        Eigen::MatrixXcd filtered(static_cast<Eigen::Index>(disk.size()), blk.size);
        for (int q = 0; q < blk.size; ++q) {
            const ComplexGrid out = apply_ctf(basis.function_grid(blk.offset + q), grid);
            for (std::size_t k = 0; k < disk.size(); ++k)
                filtered(static_cast<Eigen::Index>(k), q) = out.data()[disk[k]];
        }
        const Eigen::MatrixXcd a = basis.synthesis().middleCols(blk.offset, blk.size).adjoint() * filtered;
        ops.push_back(a.real());
    }
    return ops;
}

/// Identity operator in every block.
inline BlockOperator identity_operator(const BlockLayout& layout) {
    BlockOperator ops;
    for (const auto& blk : layout.blocks)
        ops.push_back(Eigen::MatrixXd::Identity(blk.size, blk.size));
    return ops;
}

} // namespace cryoclass
