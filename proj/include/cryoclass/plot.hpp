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
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cryoclass/error.hpp"
#include "cryoclass/eval.hpp"
#include "cryoclass/image.hpp"

namespace cryoclass {

/// 8-bit grayscale raster, row-major.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Raster() = default;
    Raster(int w, int h, std::uint8_t fill) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

inline void write_pgm(const Raster& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << r.width << ' ' << r.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (!out)
        throw IoError("write failed: " + path);
}

inline Raster read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        throw FormatError(path + ": not an 8-bit binary PGM");
    in.get();
    Raster r(w, h, 0);
    in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(r.pixels.size()))
        throw FormatError(path + ": truncated pixel data");
    return r;
}

/// Tiles images row-major with 1-pixel gutters (value 0), each tile min-max
/// scaled to [0, 255] on its own; a constant tile renders as 128.
inline Raster montage_raster(const std::vector<Image>& images, int cols) {
    require(!images.empty(), "montage: no images");
    require(cols >= 1, "montage: cols must be positive");
    const int p = images.front().side();
    for (const auto& im : images)
        require(im.side() == p, "montage: images differ in size");
    const int n = static_cast<int>(images.size());
    const int c = std::min(cols, n);
    const int rows = (n + c - 1) / c;
    Raster r(c * p + c + 1, rows * p + rows + 1, 0);
    for (int k = 0; k < n; ++k) {
        const auto& px = images[static_cast<std::size_t>(k)].pixels;
        const double lo = px.minCoeff(), hi = px.maxCoeff();
        const int x0 = 1 + (k % c) * (p + 1), y0 = 1 + (k / c) * (p + 1);
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x) {
                std::uint8_t v = 128;
                if (hi > lo)
                    v = static_cast<std::uint8_t>(std::lround(255.0 * (px(y, x) - lo) / (hi - lo)));
                r.at(x0 + x, y0 + y) = v;
            }
    }
    return r;
}

inline void plot_montage(const ImageStack& stack, int cols, const std::string& path) {
    require(!stack.empty(), "plot_montage: empty stack");
    write_pgm(montage_raster(stack.images, cols), path);
}

inline constexpr std::uint8_t kCurveLevels[2] = {64, 192};

/// Line plot of 1-degree densities (up to two curves, gray 64 then 192) on a
/// white 360x200 canvas, two pixels per degree, y scaled to the largest bin.
inline Raster density_raster(const std::vector<std::vector<double>>& curves) {
    require(!curves.empty() && curves.size() <= 2, "density plot takes one or two curves");
    constexpr int width = 360, height = 200;
    double top = 0.0;
    for (const auto& c : curves) {
        require(!c.empty(), "density plot: empty curve");
        for (double v : c)
            top = std::max(top, v);
    }
    Raster r(width, height, 255);
    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        const auto& c = curves[ci];
        auto row_of = [&](double v) {
            const double f = top > 0.0 ? v / top : 0.0;
            return std::clamp(static_cast<int>(std::lround((height - 1) * (1.0 - f))), 0, height - 1);
        };
        int prev = row_of(c.front());
        for (int x = 0; x < width; ++x) {
            const std::size_t bin = std::min(c.size() - 1, static_cast<std::size_t>(x) * c.size() / width);
            const int y = row_of(c[bin]);
            for (int yy = std::min(prev, y); yy <= std::max(prev, y); ++yy)
                r.at(x, yy) = kCurveLevels[ci];
            prev = y;
        }
    }
    return r;
}

/// Writes the density plot and, next to it (extension .csv), the density
/// values as `bin_deg,density[,density2]`.
inline void plot_density(const std::vector<const EvalReport*>& reports, const std::string& path) {
    require(!reports.empty(), "plot_density: no reports");
    std::vector<std::vector<double>> curves;
    for (const auto* r : reports) {
        if (r == nullptr || r->angular_distances.empty() || r->density.empty())
            throw PreconditionError("plot_density: empty report");
        curves.push_back(r->density);
    }
    write_pgm(density_raster(curves), path);
    std::string csv = path;
    const auto dot = csv.rfind('.');
    csv = (dot == std::string::npos ? csv : csv.substr(0, dot)) + ".csv";
    std::ofstream out(csv, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + csv + " for writing");
    out << "bin_deg";
    for (std::size_t k = 0; k < curves.size(); ++k)
        out << ",density" << (k ? std::to_string(k + 1) : "");
    out << '\n';
    for (std::size_t b = 0; b < curves.front().size(); ++b) {
        out << b;
        for (const auto& c : curves)
            out << ',' << csv_detail::format_double(c[b]);
        out << '\n';
    }
    if (!out)
        throw IoError("write failed: " + csv);
}

inline void plot_density(const EvalReport& report, const std::string& path) { plot_density({&report}, path); }

} // namespace cryoclass
