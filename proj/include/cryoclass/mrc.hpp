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

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cryoclass/error.hpp"
#include "cryoclass/image.hpp"

// MRC2014 subset: 1024-byte header, mode 2 (float32), little-endian, no
// extended header written. Group labels and orientations live in a JSON-lines
// sidecar "<stem>.meta.jsonl" next to the stack.

namespace cryoclass {

namespace mrc {

inline constexpr std::size_t kHeaderBytes = 1024;
inline constexpr std::int32_t kModeFloat32 = 2;

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
    return ((v & 0x000000FFu) << 24) | ((v & 0x0000FF00u) << 8) | ((v & 0x00FF0000u) >> 8) |
           ((v & 0xFF000000u) >> 24);
}

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little)
        return v;
    else
        return byteswap32(v);
}

inline void put_i32(std::array<char, kHeaderBytes>& h, int word, std::int32_t value) {
    const std::uint32_t v = to_le(std::bit_cast<std::uint32_t>(value));
    std::memcpy(h.data() + 4 * word, &v, 4);
}

inline void put_f32(std::array<char, kHeaderBytes>& h, int word, float value) {
    const std::uint32_t v = to_le(std::bit_cast<std::uint32_t>(value));
    std::memcpy(h.data() + 4 * word, &v, 4);
}

inline std::int32_t get_i32(const std::array<char, kHeaderBytes>& h, int word) {
    std::uint32_t v;
    std::memcpy(&v, h.data() + 4 * word, 4);
    return std::bit_cast<std::int32_t>(to_le(v));
}

inline float get_f32(const std::array<char, kHeaderBytes>& h, int word) {
    std::uint32_t v;
    std::memcpy(&v, h.data() + 4 * word, 4);
    return std::bit_cast<float>(to_le(v));
}

} // namespace detail

/// "<dir>/<stem>.meta.jsonl" for "<dir>/<stem>.mrcs".
inline std::filesystem::path sidecar_path(const std::filesystem::path& stack_path) {
    auto p = stack_path;
    p.replace_extension(".meta.jsonl");
    return p;
}

} // namespace mrc

/// Writes the images as an MRC2014 mode-2 stack (z = image index). Pixels are
/// rounded to float32. Also writes the metadata sidecar.
inline void write_mrc_stack(const ImageStack& stack, const std::filesystem::path& path) {
    using namespace mrc::detail;
    require(!stack.empty(), "cannot write an empty image stack");
    stack.validate();
    const int p = stack.side();
    const auto n = static_cast<std::int32_t>(stack.size());

    double dmin = stack.images[0].pixels(0, 0), dmax = dmin, sum = 0.0, sum2 = 0.0;
    for (const auto& img : stack.images) {
        dmin = std::min(dmin, img.pixels.minCoeff());
        dmax = std::max(dmax, img.pixels.maxCoeff());
        sum += img.pixels.sum();
        sum2 += img.pixels.squaredNorm();
    }
    const double count = static_cast<double>(n) * p * p;
    const double mean = sum / count;
    const double rms = std::sqrt(std::max(0.0, sum2 / count - mean * mean));

    std::array<char, mrc::kHeaderBytes> h{};
    put_i32(h, 0, p);
    put_i32(h, 1, p);
    put_i32(h, 2, n);
    put_i32(h, 3, mrc::kModeFloat32);
    put_i32(h, 7, p);
    put_i32(h, 8, p);
    put_i32(h, 9, 1);
    const auto cell = static_cast<float>(p * stack.pixel_size());
    put_f32(h, 10, cell);
    put_f32(h, 11, cell);
    put_f32(h, 12, static_cast<float>(stack.pixel_size()));
    put_f32(h, 13, 90.0f);
    put_f32(h, 14, 90.0f);
    put_f32(h, 15, 90.0f);
    put_i32(h, 16, 1);
    put_i32(h, 17, 2);
    put_i32(h, 18, 3);
    put_f32(h, 19, static_cast<float>(dmin));
    put_f32(h, 20, static_cast<float>(dmax));
    put_f32(h, 21, static_cast<float>(mean));
    put_i32(h, 22, 0); // ispg 0: image stack
    put_i32(h, 23, 0); // no extended header
    put_i32(h, 27, 20140);
    std::memcpy(h.data() + 208, "MAP ", 4);
    h[212] = 0x44;
    h[213] = 0x44;
    h[214] = 0x00;
    h[215] = 0x00;
    put_f32(h, 54, static_cast<float>(rms));

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    std::vector<std::uint32_t> row(static_cast<std::size_t>(p));
    for (const auto& img : stack.images) {
        for (int y = 0; y < p; ++y) {
            for (int x = 0; x < p; ++x)
                row[static_cast<std::size_t>(x)] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(img.pixels(y, x))));
            out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(4 * row.size()));
        }
    }
    if (!out)
        throw IoError("write failed for " + path.string());
    out.close();

    std::ofstream meta(mrc::sidecar_path(path));
    if (!meta)
        throw IoError("cannot open " + mrc::sidecar_path(path).string() + " for writing");
    for (std::size_t i = 0; i < stack.size(); ++i) {
        nlohmann::json rec;
        rec["group"] = stack.group_of[i];
        if (stack.has_truth()) {
            const auto& q = stack.truth[i].rotation;
            rec["quat"] = {q.w(), q.x(), q.y(), q.z()};
        }
        if (!stack.defocus_um.empty())
            rec["defocus_um"] = stack.defocus_um[i];
        meta << rec.dump() << '\n';
    }
    if (!meta)
        throw IoError("write failed for " + mrc::sidecar_path(path).string());
}

/// Reads a mode-2 MRC stack and, when present, its sidecar. Without a sidecar
/// every image is assigned to group 0.
inline ImageStack read_mrc_stack(const std::filesystem::path& path) {
    using namespace mrc::detail;
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::array<char, mrc::kHeaderBytes> h{};
    in.read(h.data(), static_cast<std::streamsize>(h.size()));
    if (in.gcount() != static_cast<std::streamsize>(h.size()))
        throw FormatError(path.string() + ": truncated header at byte offset " + std::to_string(in.gcount()));

    const std::int32_t nx = get_i32(h, 0), ny = get_i32(h, 1), nz = get_i32(h, 2), mode = get_i32(h, 3);
    if (nx <= 0 || ny <= 0 || nz <= 0)
        throw FormatError(path.string() + ": invalid dimensions at byte offset 0 (nx=" + std::to_string(nx) +
                          ", ny=" + std::to_string(ny) + ", nz=" + std::to_string(nz) + ")");
    if (std::memcmp(h.data() + 208, "MAP ", 4) != 0)
        throw FormatError(path.string() + ": missing \"MAP \" tag at byte offset 208");
    if (static_cast<unsigned char>(h[212]) != 0x44)
        throw FormatError(path.string() + ": unsupported machine stamp at byte offset 212 (big-endian data)");
    if (mode != mrc::kModeFloat32)
        throw FormatError(path.string() + ": unsupported mode " + std::to_string(mode) +
                          " at byte offset 12 (only mode 2, float32, is supported)");
    if (nx != ny)
        throw FormatError(path.string() + ": non-square images " + std::to_string(nx) + "x" + std::to_string(ny));
    const std::int32_t nsymbt = get_i32(h, 23);
    if (nsymbt < 0)
        throw FormatError(path.string() + ": negative extended header size at byte offset 92");
    in.seekg(static_cast<std::streamoff>(nsymbt), std::ios::cur);

    const std::int32_t mx = get_i32(h, 7);
    const float cell_x = get_f32(h, 10);
    double pixel_size = 1.0;
    if (mx > 0 && cell_x > 0.0f)
        pixel_size = static_cast<double>(cell_x) / mx;

    const int p = nx;
    ImageStack stack;
    stack.images.reserve(static_cast<std::size_t>(nz));
    std::vector<std::uint32_t> raw(static_cast<std::size_t>(p) * p);
    for (int z = 0; z < nz; ++z) {
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(4 * raw.size()));
        if (!in)
            throw FormatError(path.string() + ": truncated data at byte offset " +
                              std::to_string(mrc::kHeaderBytes + static_cast<std::size_t>(nsymbt) +
                                             static_cast<std::size_t>(z) * raw.size() * 4));
        Image img(p, pixel_size);
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x)
                img.pixels(y, x) = static_cast<double>(std::bit_cast<float>(to_le(raw[static_cast<std::size_t>(y) * p + x])));
        stack.images.push_back(std::move(img));
    }
    stack.group_of.assign(stack.images.size(), 0);

    const auto meta_path = mrc::sidecar_path(path);
    if (std::filesystem::exists(meta_path)) {
        std::ifstream meta(meta_path);
        std::string line;
        std::size_t i = 0;
        bool any_quat = false, any_defocus = false;
        std::vector<Eigen::Quaterniond> quats;
        std::vector<double> defocus;
        while (std::getline(meta, line)) {
            if (line.empty())
                continue;
            if (i >= stack.size())
                throw FormatError(meta_path.string() + ": more records than images");
            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(line);
                stack.group_of[i] = rec.at("group").get<int>();
                if (rec.contains("quat")) {
                    const auto q = rec["quat"].get<std::vector<double>>();
                    if (q.size() != 4)
                        throw FormatError(meta_path.string() + ": record " + std::to_string(i) + " quat needs 4 values");
                    quats.emplace_back(q[0], q[1], q[2], q[3]);
                    any_quat = true;
                }
                if (rec.contains("defocus_um")) {
                    defocus.push_back(rec["defocus_um"].get<double>());
                    any_defocus = true;
                }
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(meta_path.string() + ": record " + std::to_string(i) + ": " + e.what());
            }
            ++i;
        }
        if (i != stack.size())
            throw FormatError(meta_path.string() + ": " + std::to_string(i) + " records for " +
                              std::to_string(stack.size()) + " images");
        if (any_quat) {
            if (quats.size() != stack.size())
                throw FormatError(meta_path.string() + ": quat present on some records only");
            stack.truth.resize(stack.size());
            for (std::size_t k = 0; k < quats.size(); ++k)
                stack.truth[k].rotation = quats[k];
        }
        if (any_defocus) {
            if (defocus.size() != stack.size())
                throw FormatError(meta_path.string() + ": defocus_um present on some records only");
            stack.defocus_um = std::move(defocus);
        }
    }
    return stack;
}

} // namespace cryoclass
