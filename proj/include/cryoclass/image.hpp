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
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "cryoclass/error.hpp"

namespace cryoclass {

/// Real p x p grid, row = y, column = x, stored x-fastest like MRC data.
using PixelGrid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ComplexGrid = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Image {
    PixelGrid pixels;
    double pixel_size = 1.0; // Angstrom per pixel

    Image() = default;
    Image(int side, double pixel_size_ang)
        : pixels(PixelGrid::Zero(side, side)), pixel_size(pixel_size_ang) {}
    Image(PixelGrid grid, double pixel_size_ang) : pixels(std::move(grid)), pixel_size(pixel_size_ang) {}

    [[nodiscard]] int side() const { return static_cast<int>(pixels.rows()); }
    [[nodiscard]] bool empty() const { return pixels.size() == 0; }
    [[nodiscard]] bool finite() const { return pixels.allFinite(); }

    bool operator==(const Image&) const = default;
};

/// Orientation and noiseless, CTF-free projection of one particle.
struct GroundTruth {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Image clean; // may be empty when only the orientation is known
};

struct ImageStack {
    std::vector<Image> images;
    std::vector<int> group_of;
    std::vector<GroundTruth> truth;     // empty, or one record per image
    std::vector<double> defocus_um;     // empty, or one value per image

    [[nodiscard]] std::size_t size() const { return images.size(); }
    [[nodiscard]] bool empty() const { return images.empty(); }
    [[nodiscard]] int side() const { return images.empty() ? 0 : images.front().side(); }
    [[nodiscard]] double pixel_size() const { return images.empty() ? 0.0 : images.front().pixel_size; }
    [[nodiscard]] bool has_truth() const { return !truth.empty(); }
    [[nodiscard]] bool has_clean_truth() const {
        if (truth.empty())
            return false;
        for (const auto& t : truth)
            if (t.clean.empty())
                return false;
        return true;
    }

    [[nodiscard]] int num_groups() const {
        int g = 0;
        for (int x : group_of)
            g = std::max(g, x + 1);
        return g;
    }

    /// Throws PreconditionError when the stack breaks one of its invariants.
    void validate() const {
        require(!images.empty(), "image stack is empty");
        require(group_of.size() == images.size(), "group label count does not match image count");
        const int p = side();
        require(p > 0, "images have zero size");
        for (std::size_t i = 0; i < images.size(); ++i) {
            const auto& img = images[i];
            require(img.pixels.rows() == p && img.pixels.cols() == p,
                    "image " + std::to_string(i) + " is not " + std::to_string(p) + "x" + std::to_string(p));
            require(img.pixel_size == images.front().pixel_size,
                    "image " + std::to_string(i) + " has a different pixel size");
            require(img.finite(), "image " + std::to_string(i) + " has non-finite pixels");
            require(group_of[i] >= 0, "image " + std::to_string(i) + " has a negative group index");
        }
        require(truth.empty() || truth.size() == images.size(), "ground truth count does not match image count");
        for (std::size_t i = 0; i < truth.size(); ++i) {
            require(std::abs(truth[i].rotation.norm() - 1.0) <= 1e-9,
                    "ground truth quaternion " + std::to_string(i) + " is not unit norm");
        }
        require(defocus_um.empty() || defocus_um.size() == images.size(), "defocus count does not match image count");
    }

    bool operator==(const ImageStack& o) const {
        if (images != o.images || group_of != o.group_of || defocus_um != o.defocus_um)
            return false;
        if (truth.size() != o.truth.size())
            return false;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i].rotation.coeffs() != o.truth[i].rotation.coeffs() || truth[i].clean != o.truth[i].clean)
                return false;
        }
        return true;
    }
};

/// Partition of image indices by defocus group; groups ascending, indices
/// ascending within each group.
inline std::vector<std::pair<int, std::vector<int>>> split_by_group(const ImageStack& stack) {
    std::vector<std::pair<int, std::vector<int>>> out;
    const int groups = stack.num_groups();
    std::vector<std::vector<int>> members(static_cast<std::size_t>(groups));
    for (std::size_t i = 0; i < stack.group_of.size(); ++i)
        members[static_cast<std::size_t>(stack.group_of[i])].push_back(static_cast<int>(i));
    for (int g = 0; g < groups; ++g) {
        if (!members[static_cast<std::size_t>(g)].empty())
            out.emplace_back(g, std::move(members[static_cast<std::size_t>(g)]));
    }
    return out;
}

/// Pixel coordinate of the grid center for odd p.
inline double grid_center(int p) { return 0.5 * (p - 1); }

/// Flat (row-major) indices of pixels whose distance to the center is at most radius.
inline std::vector<int> disk_indices(int p, double radius) {
    std::vector<int> idx;
    const double c = grid_center(p);
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
            const double dx = x - c, dy = y - c;
            if (dx * dx + dy * dy <= radius * radius)
                idx.push_back(y * p + x);
        }
    return idx;
}

} // namespace cryoclass
