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
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Geometry>

#include "cryoclass/basis.hpp"
#include "cryoclass/classify.hpp"
#include "cryoclass/error.hpp"
#include "cryoclass/image.hpp"
#include "cryoclass/parallel.hpp"

namespace cryoclass {

/// Rotation- and reflection-maximized Pearson correlation between clean
/// images over the disk of radius (p-1)/2. Images are mean-subtracted on the
/// disk and expanded once in a Fourier-Bessel basis; each pair then costs one
/// phase-series evaluation per reflection state.
class CleanCorrelator {
public:
    CleanCorrelator(const ImageStack& stack, int angles = 360)
        : basis_(SteerableBasis::fourier_bessel(stack.empty() ? 1 : stack.side(), default_radius(stack))),
          angles_(angles) {
        if (!stack.has_clean_truth())
            throw PreconditionError("clean correlation needs ground-truth clean images");
        require(angles >= 8, "clean correlation needs at least 8 angles");
        coeffs_.resize(stack.size());
        norms_.resize(stack.size());
        const auto& disk = basis_.disk_pixels();
        parallel_for(stack.size(), [&](std::size_t i) {
            Image img = stack.truth[i].clean;
            double mean = 0.0;
            for (int k : disk)
                mean += img.pixels.data()[k];
            mean /= static_cast<double>(disk.size());
            img.pixels.array() -= mean;
            coeffs_[i] = basis_.expand(img);
            norms_[i] = weighted_norm(basis_.layout(), coeffs_[i]);
        });
    }

    [[nodiscard]] double operator()(int i, int j) const { return align(i, j).corr; }

    [[nodiscard]] AlignResult align(int i, int j) const {
        require(i >= 0 && j >= 0 && static_cast<std::size_t>(i) < coeffs_.size() &&
                    static_cast<std::size_t>(j) < coeffs_.size(),
                "clean correlation: index out of range");
        if (i == j)
            return {0.0, false, 1.0};
        const double denom = norms_[static_cast<std::size_t>(i)] * norms_[static_cast<std::size_t>(j)];
        if (!(denom > 0.0))
            return {0.0, false, 0.0};
        classify_detail::AlignScratch scratch(basis_.layout().max_m(), angles_);
        return classify_detail::align_with(coeffs_[static_cast<std::size_t>(i)], coeffs_[static_cast<std::size_t>(j)],
                                           basis_.layout(), angles_, denom, true, scratch);
    }

    [[nodiscard]] const SteerableBasis& basis() const { return basis_; }

private:
    static double default_radius(const ImageStack& stack) {
        require(!stack.empty(), "clean correlation: empty stack");
        return 0.5 * (stack.side() - 1);
    }

    SteerableBasis basis_;
    int angles_;
    std::vector<Coeffs> coeffs_;
    std::vector<double> norms_;
};

/// Correlation of clean images i and j maximized over in-plane rotation and
/// reflection.
inline double clean_pair_correlation(int i, int j, const ImageStack& stack, int angles = 360) {
    if (!stack.has_clean_truth())
        throw PreconditionError("clean_pair_correlation: stack has no ground truth");
    ImageStack pair;
    pair.images = {stack.images.at(static_cast<std::size_t>(i)), stack.images.at(static_cast<std::size_t>(j))};
    pair.truth = {stack.truth.at(static_cast<std::size_t>(i)), stack.truth.at(static_cast<std::size_t>(j))};
    pair.group_of = {0, 0};
    if (i == j)
        return 1.0;
    return CleanCorrelator(pair, angles)(0, 1);
}

/// Angle in degrees between the viewing directions (third rows of the
/// rotation matrices) of two orientations.
inline double angular_distance(const Eigen::Quaterniond& qi, const Eigen::Quaterniond& qj) {
    const Eigen::Vector3d vi = qi.normalized().toRotationMatrix().row(2).transpose();
    const Eigen::Vector3d vj = qj.normalized().toRotationMatrix().row(2).transpose();
    return std::atan2(vi.cross(vj).norm(), vi.dot(vj)) * 180.0 / std::numbers::pi;
}

struct EvalReport {
    long true_neighbor_count = 0;
    long pair_count = 0;
    double threshold = 0.9;
    std::vector<double> angular_distances; // degrees, one per directed pair, row-major
    std::vector<double> density;           // 180 bins of 1 degree, integrates to 1
    std::vector<std::pair<std::string, double>> extra; // additional metric rows for the CSV

    [[nodiscard]] double mass_below(double degrees) const {
        double m = 0.0;
        for (std::size_t b = 0; b < density.size(); ++b) {
            const double lo = static_cast<double>(b), hi = lo + 1.0;
            if (hi <= degrees)
                m += density[b];
            else if (lo < degrees)
                m += density[b] * (degrees - lo);
        }
        return m;
    }
};

/// Unit-integral histogram on [0, 180] degrees with 1-degree bins.
inline std::vector<double> angle_density(const std::vector<double>& degrees) {
    std::vector<double> d(180, 0.0);
    if (degrees.empty())
        return d;
    for (double a : degrees) {
        const auto b = std::clamp(static_cast<int>(std::floor(a)), 0, 179);
        d[static_cast<std::size_t>(b)] += 1.0;
    }
    for (auto& v : d)
        v /= static_cast<double>(degrees.size());
    return d;
}

/// Kolmogorov-Smirnov distance between the sample and the density sin(t)/2 on
/// [0, pi] (the law of the angle between two independent uniform directions).
inline double ks_distance_sine(std::vector<double> degrees) {
    require(!degrees.empty(), "ks_distance_sine: empty sample");
    std::sort(degrees.begin(), degrees.end());
    const double n = static_cast<double>(degrees.size());
    double d = 0.0;
    for (std::size_t k = 0; k < degrees.size(); ++k) {
        const double cdf = 0.5 * (1.0 - std::cos(degrees[k] * std::numbers::pi / 180.0));
        d = std::max({d, static_cast<double>(k + 1) / n - cdf, cdf - static_cast<double>(k) / n});
    }
    return d;
}

/// Counts directed pairs whose clean correlation exceeds the threshold and
/// collects viewing-angle distances (reflected pairs fold to min(t, 180 - t)).
inline EvalReport evaluate(const NeighborTable& table, const ImageStack& stack, const CleanCorrelator& corr,
                           double threshold = 0.9) {
    if (!stack.has_truth())
        throw PreconditionError("evaluate: stack has no ground truth");
    require(table.size() == stack.size(), "evaluate: table and stack disagree on the image count");
    EvalReport rep;
    rep.threshold = threshold;
    std::vector<std::size_t> offset(table.size() + 1, 0);
    for (std::size_t i = 0; i < table.size(); ++i)
        offset[i + 1] = offset[i] + table.rows[i].size();
    std::vector<char> hit(offset.back(), 0);
    rep.angular_distances.assign(offset.back(), 0.0);
    parallel_for(table.size(), [&](std::size_t i) {
        for (std::size_t r = 0; r < table.rows[i].size(); ++r) {
            const auto& nb = table.rows[i][r];
            hit[offset[i] + r] = corr(static_cast<int>(i), nb.j) > threshold ? 1 : 0;
            double a = angular_distance(stack.truth[i].rotation, stack.truth[static_cast<std::size_t>(nb.j)].rotation);
            if (nb.reflected)
                a = std::min(a, 180.0 - a);
            rep.angular_distances[offset[i] + r] = a;
        }
    });
    for (char h : hit)
        rep.true_neighbor_count += h;
    rep.pair_count = static_cast<long>(offset.back());
    rep.density = angle_density(rep.angular_distances);
    return rep;
}

inline EvalReport evaluate(const NeighborTable& table, const ImageStack& stack, double threshold = 0.9, int angles = 360) {
    if (!stack.has_clean_truth())
        throw PreconditionError("evaluate: stack has no ground truth");
    return evaluate(table, stack, CleanCorrelator(stack, angles), threshold);
}

/// `metric,value` rows, a blank line, then the `bin_deg,density` table.
inline void write_report_csv(const EvalReport& rep, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << "metric,value\n";
    out << "true_neighbor_count," << rep.true_neighbor_count << '\n';
    out << "pair_count," << rep.pair_count << '\n';
    out << "threshold," << csv_detail::format_double(rep.threshold) << '\n';
    out << "mass_0_20_deg," << csv_detail::format_double(rep.mass_below(20.0)) << '\n';
    for (const auto& [name, value] : rep.extra)
        out << name << ',' << csv_detail::format_double(value) << '\n';
    out << "reflected_distance,min(theta;180-theta)\n";
    out << '\n' << "bin_deg,density\n";
    for (std::size_t b = 0; b < rep.density.size(); ++b)
        out << b << ',' << csv_detail::format_double(rep.density[b]) << '\n';
    if (!out)
        throw IoError("write failed: " + path);
}

/// Reads the `bin_deg,density` table of a report written by write_report_csv.
inline std::vector<double> read_report_density(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::string line;
    bool table = false;
    std::vector<double> density;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!table) {
            table = line == "bin_deg,density";
            continue;
        }
        if (line.empty())
            continue;
        const auto cells = csv_detail::split(line);
        const std::string where = path + ": line " + std::to_string(lineno);
        if (cells.size() != 2)
            throw FormatError(where + ": expected bin_deg,density");
        if (csv_detail::parse_int(cells[0], where) != static_cast<long>(density.size()))
            throw FormatError(where + ": bins out of order");
        density.push_back(csv_detail::parse_double(cells[1], where));
    }
    if (density.empty())
        throw FormatError(path + ": no bin_deg,density table");
    return density;
}

} // namespace cryoclass
