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
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "cryoclass/ctf.hpp"
#include "cryoclass/error.hpp"
#include "cryoclass/image.hpp"
#include "cryoclass/mrc.hpp"
#include "cryoclass/parallel.hpp"
#include "cryoclass/random.hpp"

namespace cryoclass {

/// Sum of isotropic 3D Gaussians. Object coordinates are scaled so that one
/// unit equals half the image side, (p - 1) / 2 pixels.
struct Phantom {
    struct Blob {
        Eigen::Vector3d center = Eigen::Vector3d::Zero();
        double sigma = 0.1;
        double weight = 1.0;
    };
    std::vector<Blob> blobs;

    void validate() const {
        require(!blobs.empty(), "phantom needs at least one blob");
        for (const auto& b : blobs) {
            require(b.sigma > 0.0, "phantom blob sigma must be positive");
            require(b.center.norm() <= 1.0, "phantom blob center must lie in the unit ball");
        }
    }
};

/// Random asymmetric phantom: blob centers uniform in a ball of radius
/// `extent`, widths in [sigma_min, sigma_max], weights in [0.5, 1.5].
inline Phantom random_phantom(int blobs, std::uint64_t seed, double extent = 0.5, double sigma_min = 0.08,
                              double sigma_max = 0.16) {
    require(blobs >= 1, "random_phantom needs at least one blob");
    auto rng = keyed_rng(seed, 0, Stream::Phantom);
    std::uniform_real_distribution<double> unit(-1.0, 1.0), u01(0.0, 1.0);
    Phantom ph;
    while (static_cast<int>(ph.blobs.size()) < blobs) {
        Eigen::Vector3d c(unit(rng), unit(rng), unit(rng));
        if (c.norm() > 1.0)
            continue;
        Phantom::Blob b;
        b.center = extent * c;
        b.sigma = sigma_min + (sigma_max - sigma_min) * u01(rng);
        b.weight = 0.5 + u01(rng);
        ph.blobs.push_back(b);
    }
    return ph;
}

/// Haar-uniform rotation from a normalized 4D Gaussian draw.
inline Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    for (;;) {
        Eigen::Vector4d v(normal(rng), normal(rng), normal(rng), normal(rng));
        const double nrm = v.norm();
        if (nrm < 1e-12)
            continue;
        v /= nrm;
        return Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
    }
}

/// Rotation i is drawn from the stream keyed by (seed, i), so prefixes agree
/// across counts.
inline std::vector<Eigen::Quaterniond> random_rotations(int count, std::uint64_t seed) {
    require(count >= 1, "random_rotations: count must be at least 1");
    std::vector<Eigen::Quaterniond> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        auto rng = keyed_rng(seed, static_cast<std::uint64_t>(i), Stream::Rotation);
        out.push_back(random_rotation(rng));
    }
    return out;
}

/// Line-integral projection along z of the rotated phantom. Each blob
/// weight / (2 pi s^2) exp(-|r - c|^2 / 2 s^2) projects exactly to a 2D
/// Gaussian of the same width with mass weight * sqrt(2 pi) s.
inline Image project_phantom(const Phantom& phantom, const Eigen::Quaterniond& rotation, int p, double pixel_size) {
    require(p >= 1 && p % 2 == 1, "project_phantom: image side must be odd");
    const Eigen::Matrix3d rot = rotation.normalized().toRotationMatrix();
    const double half = std::max(1.0, 0.5 * (p - 1));
    const double c = grid_center(p);
    Image img(p, pixel_size);
    for (const auto& blob : phantom.blobs) {
        const Eigen::Vector3d rc = rot * blob.center;
        const double s2 = blob.sigma * blob.sigma;
        const double amp = blob.weight * std::sqrt(2.0 * std::numbers::pi) * blob.sigma / (2.0 * std::numbers::pi * s2);
        for (int y = 0; y < p; ++y) {
            const double dy = (y - c) / half - rc.y();
            for (int x = 0; x < p; ++x) {
                const double dx = (x - c) / half - rc.x();
                img.pixels(y, x) += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
            }
        }
    }
    return img;
}

/// Cubic density map, voxel (z, y, x) = slice z, row y, column x.
struct Volume {
    int side = 0;
    std::vector<double> voxels;
    double pixel_size = 1.0;

    [[nodiscard]] double at(int z, int y, int x) const {
        return voxels[(static_cast<std::size_t>(z) * side + y) * side + x];
    }
};

/// Reads a cubic mode-2 MRC volume through the stack reader (z slices).
inline Volume read_mrc_volume(const std::filesystem::path& path) {
    const ImageStack slices = read_mrc_stack(path);
    const int n = slices.side();
    if (static_cast<int>(slices.size()) != n)
        throw FormatError(path.string() + ": volume is not cubic");
    Volume vol;
    vol.side = n;
    vol.pixel_size = slices.pixel_size();
    vol.voxels.resize(static_cast<std::size_t>(n) * n * n);
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                vol.voxels[(static_cast<std::size_t>(z) * n + y) * n + x] = slices.images[static_cast<std::size_t>(z)].pixels(y, x);
    return vol;
}

/// Real-space projection of a sampled volume: each output ray is integrated
/// with unit steps through the rotated volume using trilinear interpolation.
inline Image project_volume(const Volume& vol, const Eigen::Quaterniond& rotation) {
    const int n = vol.side;
    require(n >= 1 && n % 2 == 1, "project_volume: volume side must be odd");
    const Eigen::Matrix3d rt = rotation.normalized().toRotationMatrix().transpose();
    const double c = grid_center(n);
    auto sample = [&](const Eigen::Vector3d& r) {
        const double fx = r.x() + c, fy = r.y() + c, fz = r.z() + c;
        const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy)),
                  z0 = static_cast<int>(std::floor(fz));
        const double ax = fx - x0, ay = fy - y0, az = fz - z0;
        double acc = 0.0;
        for (int dz = 0; dz <= 1; ++dz)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dx = 0; dx <= 1; ++dx) {
                    const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
                    if (xi < 0 || yi < 0 || zi < 0 || xi >= n || yi >= n || zi >= n)
                        continue;
                    const double w = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay) * (dz ? az : 1.0 - az);
                    acc += w * vol.at(zi, yi, xi);
                }
        return acc;
    };
    Image img(n, vol.pixel_size);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double acc = 0.0;
            for (int z = 0; z < n; ++z)
                acc += sample(rt * Eigen::Vector3d(x - c, y - c, z - c));
            img.pixels(y, x) = acc;
        }
    return img;
}

struct SimConfig {
    int n = 1000;
    int p = 33;
    double snr = 1.0 / 40.0;
    std::vector<CtfParams> groups{CtfParams{}};
    std::uint64_t seed = 1;

    void validate() const {
        require(!groups.empty(), "simulation needs at least one defocus group");
        require(n >= static_cast<int>(groups.size()), "simulation needs n >= number of groups");
        require(snr > 0.0, "simulation snr must be positive");
        require(p >= 1 && p % 2 == 1, "simulation image side must be odd");
        for (const auto& g : groups)
            g.validate();
    }
};

/// Source of clean projections: either an analytic phantom or a volume.
struct ProjectionSource {
    const Phantom* phantom = nullptr;
    const Volume* volume = nullptr;

    [[nodiscard]] Image project(const Eigen::Quaterniond& q, int p, double pixel_size) const {
        if (phantom != nullptr)
            return project_phantom(*phantom, q, p, pixel_size);
        require(volume != nullptr, "projection source is empty");
        require(volume->side == p, "volume side does not match the image side");
        Image img = project_volume(*volume, q);
        img.pixel_size = pixel_size;
        return img;
    }
};

/// Simulated dataset: random orientation, clean projection, group CTF
/// (round-robin groups), then white Gaussian noise with one stack-wide
/// variance sigma^2 = mean per-image variance of the CTF-affected signal / snr.
inline ImageStack simulate(const ProjectionSource& source, const SimConfig& cfg) {
    cfg.validate();
    const int n = cfg.n, p = cfg.p;
    const int groups = static_cast<int>(cfg.groups.size());
    const double pixel_size = cfg.groups.front().pixel_size;

    std::vector<CtfGrid> grids;
    grids.reserve(cfg.groups.size());
    for (const auto& g : cfg.groups)
        grids.push_back(ctf_grid(g, p));

    ImageStack stack;
    stack.images.resize(static_cast<std::size_t>(n));
    stack.truth.resize(static_cast<std::size_t>(n));
    stack.group_of.resize(static_cast<std::size_t>(n));
    stack.defocus_um.resize(static_cast<std::size_t>(n));
    std::vector<double> signal_var(static_cast<std::size_t>(n));

    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        const int g = static_cast<int>(i) % groups;
        auto rng = keyed_rng(cfg.seed, i, Stream::Rotation);
        const Eigen::Quaterniond q = random_rotation(rng);
        Image clean = source.project(q, p, pixel_size);
        Image affected = apply_ctf(clean, grids[static_cast<std::size_t>(g)]);
        const double mean = affected.pixels.mean();
        signal_var[i] = (affected.pixels.array() - mean).square().mean();
        stack.truth[i] = GroundTruth{q, std::move(clean)};
        stack.images[i] = std::move(affected);
        stack.group_of[i] = g;
        stack.defocus_um[i] = cfg.groups[static_cast<std::size_t>(g)].defocus_um;
    });

    double mean_var = 0.0;
    for (double v : signal_var)
        mean_var += v;
    mean_var /= n;
    const double noise_sd = std::sqrt(mean_var / cfg.snr);

    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        auto rng = keyed_rng(cfg.seed, i, Stream::Noise);
        std::normal_distribution<double> normal(0.0, noise_sd);
        auto& px = stack.images[i].pixels;
        for (Eigen::Index k = 0; k < px.size(); ++k)
            px.data()[k] += normal(rng);
    });
    return stack;
}

inline ImageStack simulate(const Phantom& phantom, const SimConfig& cfg) {
    phantom.validate();
    return simulate(ProjectionSource{&phantom, nullptr}, cfg);
}

} // namespace cryoclass
