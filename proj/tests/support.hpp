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
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "cryoclass/basis.hpp"
#include "cryoclass/cwf.hpp"
#include "cryoclass/image.hpp"

namespace cryoclass::testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("cryoclass_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Random coefficients with m = 0 entries real.
inline Coeffs random_coeffs(const BlockLayout& layout, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Coeffs c(layout.total);
    for (const auto& blk : layout.blocks)
        for (int q = 0; q < blk.size; ++q)
            c[blk.offset + q] = {normal(rng), blk.real() ? 0.0 : normal(rng)};
    return c;
}

/// Random Hermitian PSD matrix of size r (real when real_block).
inline Eigen::MatrixXcd random_psd(int r, bool real_block, std::mt19937_64& rng, double ridge = 0.1) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXcd g(r, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
            g(i, j) = {normal(rng), real_block ? 0.0 : normal(rng)};
    Eigen::MatrixXcd m = g * g.adjoint() / static_cast<double>(r);
    m.diagonal().array() += ridge;
    return m;
}

/// Bilinear sample of an image at fractional pixel (x, y); zero outside.
inline double bilinear(const Image& img, double x, double y) {
    const int p = img.side();
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double ax = x - x0, ay = y - y0;
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            const int xi = x0 + dx, yi = y0 + dy;
            if (xi < 0 || yi < 0 || xi >= p || yi >= p)
                continue;
            acc += (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay) * img.pixels(yi, xi);
        }
    return acc;
}

/// out(x, y) = img(R(-angle) (x, y)) about the center: the content turns by
/// +angle (counterclockwise in x-right, y-down pixel coordinates means
/// toward +y from +x).
inline Image rotate_image(const Image& img, double angle) {
    const int p = img.side();
    const double c = grid_center(p);
    Image out(p, img.pixel_size);
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
            const double dx = x - c, dy = y - c;
            out.pixels(y, x) = bilinear(img, c + cs * dx + sn * dy, c - sn * dx + cs * dy);
        }
    return out;
}

/// Relative L2 error on the disk of the given radius.
inline double disk_rel_error(const Image& a, const Image& b, double radius) {
    double num = 0.0, den = 0.0;
    for (int k : disk_indices(a.side(), radius)) {
        const double d = a.pixels.data()[k] - b.pixels.data()[k];
        num += d * d;
        den += b.pixels.data()[k] * b.pixels.data()[k];
    }
    return std::sqrt(num / den);
}

/// Smooth test image: a few Gaussian bumps.
inline Image bump_image(int p, std::mt19937_64& rng, int bumps = 3, double width_px = 3.0) {
    std::uniform_real_distribution<double> pos(-0.4 * (p - 1) / 2.0, 0.4 * (p - 1) / 2.0), amp(0.5, 1.5);
    const double c = grid_center(p);
    Image img(p, 1.0);
    for (int b = 0; b < bumps; ++b) {
        const double bx = c + pos(rng), by = c + pos(rng), a = amp(rng);
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x)
                img.pixels(y, x) +=
                    a * std::exp(-((x - bx) * (x - bx) + (y - by) * (y - by)) / (2.0 * width_px * width_px));
    }
    return img;
}

/// Moments with identity principal subspaces and the given posterior covariances.
inline ConditionalMoments make_moments(const BlockLayout& layout, std::vector<std::vector<Eigen::MatrixXcd>> l_blocks,
                                       std::vector<Coeffs> alpha, std::vector<int> group_of) {
    ConditionalMoments m;
    m.layout = layout;
    m.mu = Coeffs::Zero(layout.total);
    m.alpha = std::move(alpha);
    m.group_of = std::move(group_of);
    m.l_blocks = std::move(l_blocks);
    for (const auto& blk : layout.blocks)
        m.principal.push_back(Eigen::MatrixXcd::Identity(blk.size, blk.size));
    return m;
}

/// Single-group moments with isotropic posterior covariance scale * I.
inline ConditionalMoments isotropic_moments(const BlockLayout& layout, std::vector<Coeffs> alpha, double scale = 1.0) {
    std::vector<std::vector<Eigen::MatrixXcd>> l(1);
    for (const auto& blk : layout.blocks)
        l[0].push_back(scale * Eigen::MatrixXcd::Identity(blk.size, blk.size));
    const std::vector<int> groups(alpha.size(), 0);
    return make_moments(layout, std::move(l), std::move(alpha), groups);
}

} // namespace cryoclass::testing
