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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "json.hpp"

#include "cryoclass/mrc.hpp"
#include "support.hpp"

namespace cryoclass {
namespace {

using testing::TempDir;

ImageStack random_stack(int n, int p, std::uint64_t seed, bool with_truth) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal; // float-valued pixels survive the float32 file format
    std::uniform_int_distribution<int> group(0, 3);
    ImageStack s;
    for (int i = 0; i < n; ++i) {
        Image img(p, 2.5);
        for (Eigen::Index k = 0; k < img.pixels.size(); ++k)
            img.pixels.data()[k] = normal(rng);
        s.images.push_back(img);
        s.group_of.push_back(group(rng));
        s.defocus_um.push_back(1.0 + 0.1 * s.group_of.back());
        if (with_truth) {
            Eigen::Vector4d v(normal(rng), normal(rng), normal(rng), normal(rng));
            v.normalize();
            s.truth.push_back({Eigen::Quaterniond(v[0], v[1], v[2], v[3]), Image()});
        }
    }
    return s;
}

// Hand-built little-endian header, independent of the writer.
void write_raw_mrc(const std::filesystem::path& path, int nx, int ny, int nz, int mode, std::size_t payload_bytes) {
    std::vector<char> h(1024, 0);
    auto put = [&](int word, std::int32_t v) { std::memcpy(h.data() + 4 * word, &v, 4); };
    put(0, nx);
    put(1, ny);
    put(2, nz);
    put(3, mode);
    std::memcpy(h.data() + 208, "MAP ", 4);
    h[212] = 0x44;
    h[213] = 0x44;
    std::ofstream out(path, std::ios::binary);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    std::vector<char> zeros(payload_bytes, 0);
    out.write(zeros.data(), static_cast<std::streamsize>(zeros.size()));
}

TEST(MrcStack, RoundTripIsBitExact) {
    TempDir dir("mrc");
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ImageStack s = random_stack(3 + static_cast<int>(seed), 5 + 2 * static_cast<int>(seed), seed, seed % 2 == 1);
        const auto path = dir / ("s" + std::to_string(seed) + ".mrcs");
        write_mrc_stack(s, path);
        const ImageStack back = read_mrc_stack(path);
        EXPECT_TRUE(back == s) << "seed " << seed;
        EXPECT_DOUBLE_EQ(back.pixel_size(), 2.5);
    }
}

TEST(MrcStack, HeaderContract) {
    TempDir dir("mrc");
    const auto path = dir / "raw.mrcs";
    write_raw_mrc(path, 33, 33, 100, 2, 33 * 33 * 100 * 4);
    const ImageStack s = read_mrc_stack(path);
    ASSERT_EQ(s.size(), 100u);
    EXPECT_EQ(s.side(), 33);
    EXPECT_EQ(s.group_of, std::vector<int>(100, 0));
}

TEST(MrcStack, UnsupportedModeIsFormatError) {
    TempDir dir("mrc");
    const auto path = dir / "int16.mrcs";
    write_raw_mrc(path, 33, 33, 2, 1, 33 * 33 * 2 * 2);
    EXPECT_THROW(read_mrc_stack(path), FormatError);
}

TEST(MrcStack, TruncatedDataIsFormatError) {
    TempDir dir("mrc");
    const auto path = dir / "short.mrcs";
    write_raw_mrc(path, 9, 9, 4, 2, 9 * 9 * 4 * 3);
    EXPECT_THROW(read_mrc_stack(path), FormatError);
}

TEST(MrcStack, MissingFileIsIoError) { EXPECT_THROW(read_mrc_stack("/nonexistent/none.mrcs"), IoError); }

TEST(MrcStack, EmptyStackIsPreconditionError) {
    TempDir dir("mrc");
    EXPECT_THROW(write_mrc_stack(ImageStack{}, dir / "e.mrcs"), PreconditionError);
}

TEST(MrcStack, SidecarHasOneRecordPerImageInOrder) {
    TempDir dir("mrc");
    const ImageStack s = random_stack(7, 9, 11, true);
    const auto path = dir / "t.mrcs";
    write_mrc_stack(s, path);
    std::ifstream in(mrc::sidecar_path(path));
    std::string line;
    std::size_t i = 0;
    while (std::getline(in, line)) {
        const auto rec = nlohmann::json::parse(line);
        ASSERT_LT(i, s.size());
        EXPECT_EQ(rec.at("group").get<int>(), s.group_of[i]);
        EXPECT_EQ(rec.at("quat").get<std::vector<double>>()[0], s.truth[i].rotation.w());
        ++i;
    }
    EXPECT_EQ(i, s.size());
}

TEST(SplitByGroup, Examples) {
    ImageStack s;
    s.images.resize(4);
    s.group_of = {0, 1, 0, 1};
    const auto parts = split_by_group(s);
    ASSERT_EQ(parts.size(), 2u);
    EXPECT_EQ(parts[0], (std::pair<int, std::vector<int>>{0, {0, 2}}));
    EXPECT_EQ(parts[1], (std::pair<int, std::vector<int>>{1, {1, 3}}));

    s.group_of = {0, 0, 0, 0};
    const auto one = split_by_group(s);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].second, (std::vector<int>{0, 1, 2, 3}));
}

TEST(SplitByGroup, RoundRobinCounts) {
    ImageStack s;
    s.images.resize(10000);
    for (int i = 0; i < 10000; ++i)
        s.group_of.push_back(i % 20);
    const auto parts = split_by_group(s);
    ASSERT_EQ(parts.size(), 20u);
    for (const auto& [g, idx] : parts)
        EXPECT_EQ(idx.size(), 500u) << "group " << g;
}

TEST(SplitByGroup, IsAStablePartition) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> group(0, 6);
    for (int trial = 0; trial < 20; ++trial) {
        ImageStack s;
        const int n = 1 + trial * 7;
        s.images.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            s.group_of.push_back(group(rng));
        std::vector<int> seen(static_cast<std::size_t>(n), 0);
        for (const auto& [g, idx] : split_by_group(s)) {
            EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
            for (int i : idx) {
                EXPECT_EQ(s.group_of[static_cast<std::size_t>(i)], g);
                ++seen[static_cast<std::size_t>(i)];
            }
        }
        for (int c : seen)
            EXPECT_EQ(c, 1);
    }
}

} // namespace
} // namespace cryoclass
