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
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cryoclass/affinity.hpp"
#include "cryoclass/basis.hpp"
#include "cryoclass/cwf.hpp"
#include "cryoclass/error.hpp"
#include "cryoclass/fft.hpp"
#include "cryoclass/image.hpp"
#include "cryoclass/parallel.hpp"

namespace cryoclass {

struct Neighbor {
    int j = 0;
    double theta = 0.0; // radians, applied to the neighbor: rotate(maybe-reflect(c_j), theta)
    bool reflected = false;
    double score = 0.0;

    [[nodiscard]] Alignment alignment() const { return {theta, reflected}; }
    bool operator==(const Neighbor&) const = default;
};

struct NeighborTable {
    std::vector<std::vector<Neighbor>> rows;
    int s_initial = 0;
    int k_final = 0;

    [[nodiscard]] std::size_t size() const { return rows.size(); }
    [[nodiscard]] int width() const {
        int w = 0;
        for (const auto& r : rows)
            w = std::max(w, static_cast<int>(r.size()));
        return w;
    }
    /// Each row cut to its first k entries.
    [[nodiscard]] NeighborTable truncated(int k) const {
        require(k >= 0, "NeighborTable::truncated: negative width");
        NeighborTable out = *this;
        for (auto& r : out.rows)
            if (static_cast<int>(r.size()) > k)
                r.resize(static_cast<std::size_t>(k));
        out.k_final = k;
        return out;
    }
    void validate() const {
        const auto n = static_cast<int>(rows.size());
        for (int i = 0; i < n; ++i) {
            std::vector<int> seen;
            for (const auto& nb : rows[static_cast<std::size_t>(i)]) {
                if (nb.j == i)
                    throw FormatError("neighbor table: self pair at row " + std::to_string(i));
                if (nb.j < 0 || nb.j >= n)
                    throw FormatError("neighbor table: index " + std::to_string(nb.j) + " out of range at row " +
                                      std::to_string(i));
                seen.push_back(nb.j);
            }
            std::sort(seen.begin(), seen.end());
            if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
                throw FormatError("neighbor table: duplicate neighbor at row " + std::to_string(i));
        }
    }
    bool operator==(const NeighborTable&) const = default;
};

struct AlignResult {
    double theta = 0.0;
    bool reflected = false;
    double corr = 0.0;
};

namespace classify_detail {

/// Per-angular-frequency sums h_m = sum_q conj(a_q) b_q, with b optionally
/// conjugated first; entry m holds the m-th Fourier coefficient of
/// theta -> Re <a, rotate(b, theta)> (weights folded in by cosine_series).
inline void phase_sums(const Coeffs& a, const Coeffs& b, const BlockLayout& layout, bool conj_b,
                       std::vector<std::complex<double>>& h) {
    std::fill(h.begin(), h.end(), std::complex<double>(0.0));
    for (const auto& blk : layout.blocks) {
        std::complex<double> acc = 0.0;
        for (int q = 0; q < blk.size; ++q) {
            const auto k = static_cast<Eigen::Index>(blk.offset + q);
            acc += std::conj(a[k]) * (conj_b ? std::conj(b[k]) : b[k]);
        }
        h[static_cast<std::size_t>(blk.m)] += acc;
    }
}

/// Best (angle index, reflected, value) of the correlation series, first
/// maximum winning, unreflected before reflected.
struct Peak {
    int index = 0;
    bool reflected = false;
    double value = -std::numeric_limits<double>::infinity();
};

inline void scan(const std::vector<double>& f, bool reflected, Peak& best) {
    for (std::size_t l = 0; l < f.size(); ++l)
        if (f[l] > best.value) {
            best.value = f[l];
            best.index = static_cast<int>(l);
            best.reflected = reflected;
        }
}

inline double grid_angle(int index, int angles) {
    double t = 2.0 * std::numbers::pi * index / angles;
    if (t > std::numbers::pi)
        t -= 2.0 * std::numbers::pi;
    return t;
}

/// Scratch buffers for repeated alignments on one thread.
struct AlignScratch {
    std::vector<std::complex<double>> h;
    std::vector<double> f;
    AlignScratch(int max_m, int angles) : h(static_cast<std::size_t>(max_m + 1)), f(static_cast<std::size_t>(angles)) {}
};

inline AlignResult align_with(const Coeffs& ci, const Coeffs& cj, const BlockLayout& layout, int angles, double norm,
                              bool allow_reflection, AlignScratch& s) {
    Peak best;
    phase_sums(ci, cj, layout, false, s.h);
    fft::cosine_series(s.h, angles, s.f);
    scan(s.f, false, best);
    if (allow_reflection) {
        phase_sums(ci, cj, layout, true, s.h);
        fft::cosine_series(s.h, angles, s.f);
        scan(s.f, true, best);
    }
    return {grid_angle(best.index, angles), best.reflected, best.value / norm};
}

} // namespace classify_detail

/// Maximizes Re<c_i, rotate(maybe-reflect(c_j), theta)> / (|c_i| |c_j|) (real-image
/// weights) over `angles` uniform angles and both reflection states. The
/// returned theta lies in (-pi, pi].
inline AlignResult align_pair(const Coeffs& ci, const Coeffs& cj, const BlockLayout& layout, int angles = 360,
                              bool allow_reflection = true) {
    require(angles >= 8, "align_pair needs at least 8 angles");
    require(layout.steerable, "align_pair needs a steerable basis");
    layout.check(ci, "align_pair");
    layout.check(cj, "align_pair");
    const double ni = weighted_norm(layout, ci), nj = weighted_norm(layout, cj);
    if (!(ni > 0.0) || !(nj > 0.0))
        throw PreconditionError("align_pair: zero-norm coefficients");
    classify_detail::AlignScratch scratch(layout.max_m(), angles);
    return classify_detail::align_with(ci, cj, layout, angles, ni * nj, allow_reflection, scratch);
}

/// The `s` best-correlated images for every image, by brute-force rotational
/// alignment of the posterior means alpha_i (the denoised coefficients).
/// Scores are the correlations; ties go to the smaller index.
inline NeighborTable initial_candidates(const ConditionalMoments& moments, int s, int angles = 360,
                                        bool allow_reflection = true) {
    const auto n = static_cast<int>(moments.size());
    require(s >= 1, "initial_candidates: S must be positive");
    if (s >= n)
        throw PreconditionError("initial_candidates: S = " + std::to_string(s) + " must be below n = " + std::to_string(n));
    require(angles >= 8, "initial_candidates needs at least 8 angles");
    const BlockLayout& layout = moments.layout;
    require(layout.steerable, "initial_candidates needs a steerable basis");

    const std::vector<Coeffs>& alpha = moments.alpha;
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        norms[static_cast<std::size_t>(i)] = weighted_norm(layout, alpha[static_cast<std::size_t>(i)]);

    NeighborTable table;
    table.s_initial = s;
    table.k_final = s;
    table.rows.resize(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        classify_detail::AlignScratch scratch(layout.max_m(), angles);
        std::vector<Neighbor> row;
        row.reserve(static_cast<std::size_t>(n - 1));
        for (int j = 0; j < n; ++j) {
            if (static_cast<std::size_t>(j) == i)
                continue;
            const double denom = norms[i] * norms[static_cast<std::size_t>(j)];
            if (!(denom > 0.0)) {
                row.push_back({j, 0.0, false, 0.0});
                continue;
            }
            const AlignResult a = classify_detail::align_with(alpha[i], alpha[static_cast<std::size_t>(j)], layout,
                                                              angles, denom, allow_reflection, scratch);
            row.push_back({j, a.theta, a.reflected, a.corr});
        }
        const auto keep = static_cast<std::ptrdiff_t>(s);
        std::partial_sort(row.begin(), row.begin() + keep, row.end(), [](const Neighbor& a, const Neighbor& b) {
            if (a.score != b.score)
                return a.score > b.score;
            return a.j < b.j;
        });
        row.resize(static_cast<std::size_t>(s));
        table.rows[i] = std::move(row);
    });
    return table;
}

/// Rescores every candidate with the anisotropic affinity and keeps the best k.
/// Alignments are carried over. k may equal the table width (reordering only).
inline NeighborTable rerank(const NeighborTable& table, const AffinityModel& model, int k) {
    require(k >= 1, "rerank: K must be positive");
    const int width = table.width();
    if (k > width)
        throw PreconditionError("rerank: K = " + std::to_string(k) + " exceeds the candidate count S = " +
                                std::to_string(width));
    require(table.size() == model.moments().size(), "rerank: table and moments disagree on the image count");
    NeighborTable out;
    out.s_initial = table.s_initial;
    out.k_final = k;
    out.rows.resize(table.size());
    parallel_for(table.size(), [&](std::size_t i) {
        const auto& row = table.rows[i];
        if (row.empty())
            return;
        std::vector<std::pair<int, Alignment>> cands;
        cands.reserve(row.size());
        for (const auto& nb : row)
            cands.emplace_back(nb.j, nb.alignment());
        const auto scores = model.row(static_cast<int>(i), cands);
        const std::size_t keep = std::min(scores.size(), static_cast<std::size_t>(k));
        for (std::size_t r = 0; r < keep; ++r)
            out.rows[i].push_back({scores[r].j, scores[r].alignment.theta, scores[r].alignment.reflected, scores[r].value});
    });
    return out;
}

struct ClassMember {
    int j = 0;
    double theta = 0.0;
    bool reflected = false;
};

struct ClassAverage {
    int center = 0;
    Image average;
    std::vector<ClassMember> members; // center first, identity alignment
};

/// Mean of the center's coefficients and its first k aligned neighbors,
/// evaluated on the grid (k < 0 uses the whole row).
inline ClassAverage class_average(int center, const NeighborTable& table, std::span<const Coeffs> coeffs,
                                  const SteerableBasis& basis, int k = -1, double pixel_size = 1.0) {
    require(center >= 0 && static_cast<std::size_t>(center) < table.size(), "class_average: center not in table");
    require(coeffs.size() == table.size(), "class_average: coefficient count does not match the table");
    const BlockLayout& layout = basis.layout();
    const auto& row = table.rows[static_cast<std::size_t>(center)];
    const std::size_t use = k < 0 ? row.size() : std::min(row.size(), static_cast<std::size_t>(k));
    ClassAverage out;
    out.center = center;
    out.members.push_back({center, 0.0, false});
    Coeffs sum = coeffs[static_cast<std::size_t>(center)];
    for (std::size_t r = 0; r < use; ++r) {
        const auto& nb = row[r];
        out.members.push_back({nb.j, nb.theta, nb.reflected});
        sum += align_coeffs(coeffs[static_cast<std::size_t>(nb.j)], layout, nb.theta, nb.reflected);
    }
    sum /= static_cast<double>(out.members.size());
    out.average = basis.evaluate(sum, pixel_size);
    return out;
}

/// Same, starting from images (expanded in the basis first).
inline ClassAverage class_average(int center, const NeighborTable& table, const ImageStack& images,
                                  const SteerableBasis& basis, int k = -1) {
    require(images.size() == table.size(), "class_average: image count does not match the table");
    const auto& row = table.rows[static_cast<std::size_t>(center)];
    std::vector<Coeffs> coeffs(images.size());
    coeffs[static_cast<std::size_t>(center)] = basis.expand(images.images[static_cast<std::size_t>(center)]);
    const std::size_t use = k < 0 ? row.size() : std::min(row.size(), static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < use; ++r)
        coeffs[static_cast<std::size_t>(row[r].j)] = basis.expand(images.images[static_cast<std::size_t>(row[r].j)]);
    for (auto& c : coeffs)
        if (c.size() == 0)
            c = Coeffs::Zero(basis.layout().total);
    return class_average(center, table, coeffs, basis, k, images.pixel_size());
}

namespace csv_detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(where + ": cannot parse number '" + s + "'");
    }
}

inline long parse_int(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size())
            throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(where + ": cannot parse integer '" + s + "'");
    }
}

} // namespace csv_detail

inline constexpr const char* kNeighborHeader = "i,j,rank,theta_deg,reflected,score";

inline void write_neighbor_csv(const NeighborTable& table, std::ostream& out) {
    out << kNeighborHeader << '\n';
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& row = table.rows[i];
        for (std::size_t r = 0; r < row.size(); ++r) {
            const auto& nb = row[r];
            out << i << ',' << nb.j << ',' << r << ',' << csv_detail::format_double(nb.theta * 180.0 / std::numbers::pi)
                << ',' << (nb.reflected ? 1 : 0) << ',' << csv_detail::format_double(nb.score) << '\n';
        }
    }
}

inline void write_neighbor_csv(const NeighborTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    write_neighbor_csv(table, out);
    if (!out)
        throw IoError("write failed: " + path);
}

/// Reads a neighbor table for n images (n <= 0: inferred from the largest index).
inline NeighborTable read_neighbor_csv(const std::string& path, int n = 0) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kNeighborHeader)
        throw FormatError(path + ": line 1: expected header '" + std::string(kNeighborHeader) + "'");
    struct Entry {
        long i, j, rank;
        Neighbor nb;
    };
    std::vector<Entry> entries;
    long max_index = -1;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const std::string where = path + ": line " + std::to_string(lineno);
        const auto cells = csv_detail::split(line);
        if (cells.size() != 6)
            throw FormatError(where + ": expected 6 fields");
        Entry e{};
        e.i = csv_detail::parse_int(cells[0], where);
        e.j = csv_detail::parse_int(cells[1], where);
        e.rank = csv_detail::parse_int(cells[2], where);
        const double deg = csv_detail::parse_double(cells[3], where);
        const long refl = csv_detail::parse_int(cells[4], where);
        if (refl != 0 && refl != 1)
            throw FormatError(where + ": reflected must be 0 or 1");
        if (e.i < 0 || e.j < 0 || e.rank < 0)
            throw FormatError(where + ": negative index");
        e.nb = {static_cast<int>(e.j), deg * std::numbers::pi / 180.0, refl == 1, csv_detail::parse_double(cells[5], where)};
        max_index = std::max({max_index, e.i, e.j});
        entries.push_back(e);
    }
    const long count = n > 0 ? n : max_index + 1;
    if (max_index >= count)
        throw FormatError(path + ": index " + std::to_string(max_index) + " exceeds the image count " + std::to_string(count));
    NeighborTable table;
    table.rows.resize(static_cast<std::size_t>(std::max<long>(count, 0)));
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.i != b.i ? a.i < b.i : a.rank < b.rank; });
    for (const auto& e : entries) {
        auto& row = table.rows[static_cast<std::size_t>(e.i)];
        if (static_cast<long>(row.size()) != e.rank)
            throw FormatError(path + ": ranks of row " + std::to_string(e.i) + " are not 0..k-1");
        row.push_back(e.nb);
    }
    table.validate();
    table.s_initial = table.k_final = table.width();
    return table;
}

/// Reranked scores as `i,j,theta,reflected,score` (theta in degrees).
inline void write_scores_csv(const NeighborTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << "i,j,theta,reflected,score\n";
    for (std::size_t i = 0; i < table.size(); ++i)
        for (const auto& nb : table.rows[i])
            out << i << ',' << nb.j << ',' << csv_detail::format_double(nb.theta * 180.0 / std::numbers::pi) << ','
                << (nb.reflected ? 1 : 0) << ',' << csv_detail::format_double(nb.score) << '\n';
    if (!out)
        throw IoError("write failed: " + path);
}

} // namespace cryoclass
