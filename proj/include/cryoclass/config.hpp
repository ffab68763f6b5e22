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
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cryoclass/ctf.hpp"
#include "cryoclass/error.hpp"

namespace cryoclass {

/// Flat `key = value` settings. Lines starting with '#' (after optional
/// whitespace) and trailing `# ...` comments are ignored.
using KeyValues = std::map<std::string, std::string>;

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace config_detail

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "config") {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = config_detail::trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = config_detail::trim(line.substr(0, eq));
        const std::string value = config_detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

inline KeyValues read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file " + path);
    return parse_key_values(in, path);
}

struct PipelineConfig {
    // simulation
    int n = 1000;
    int p = 33;
    double snr = 1.0 / 40.0;
    std::uint64_t seed = 1;
    int blobs = 10;
    std::string volume; // optional MRC volume instead of the blob phantom
    // microscope
    std::vector<double> defocus_um{1.0, 1.3, 1.6, 1.9};
    double cs_mm = 2.0;
    double lambda_pm = 2.51;
    double b_factor = 10.0;
    double amp_contrast = 0.07;
    double pixel_size_ang = 2.82;
    // basis and estimation
    std::string basis = "fourier_bessel";
    double radius = 0.0; // 0: default for p
    double shrink_tau = 0.05;
    double min_transfer = 0.05;
    // classification
    int S = 50;
    int K = 10;
    int angles = 360;
    bool reflections = true;
    double threshold = 0.9;
    int montage_count = 8;
    // paths
    std::string input; // stack to process instead of simulating

    [[nodiscard]] int groups() const { return static_cast<int>(defocus_um.size()); }

    /// Disk radius used for the basis: the configured one, or 7/8 of the
    /// half-width so a noise annulus remains.
    [[nodiscard]] double effective_radius() const {
        return radius > 0.0 ? radius : std::floor(0.875 * 0.5 * (p - 1));
    }

    [[nodiscard]] std::vector<CtfParams> ctf_groups() const {
        std::vector<CtfParams> out;
        for (double d : defocus_um) {
            CtfParams c;
            c.defocus_um = d;
            c.cs_mm = cs_mm;
            c.lambda_pm = lambda_pm;
            c.b_factor = b_factor;
            c.amp_contrast = amp_contrast;
            c.pixel_size = pixel_size_ang;
            out.push_back(c);
        }
        return out;
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError(m); };
        if (n < 2)
            fail("n must be at least 2");
        if (p < 5 || p % 2 == 0)
            fail("p must be odd and at least 5");
        if (!(snr > 0.0) || !std::isfinite(snr))
            fail("snr must be positive");
        if (blobs < 1)
            fail("blobs must be positive");
        if (defocus_um.empty())
            fail("defocus_um needs at least one value");
        for (double d : defocus_um)
            if (!(d > 0.0))
                fail("defocus_um values must be positive");
        if (!(cs_mm > 0.0) || !(lambda_pm > 0.0) || !(pixel_size_ang > 0.0))
            fail("cs_mm, lambda_pm and pixel_size_ang must be positive");
        if (b_factor < 0.0)
            fail("b_factor must be non-negative");
        if (amp_contrast < 0.0 || amp_contrast >= 1.0)
            fail("amp_contrast must lie in [0, 1)");
        if (basis != "fourier_bessel" && basis != "pixel")
            fail("basis must be 'fourier_bessel' or 'pixel'");
        const double r = effective_radius();
        if (!(r >= 1.0) || !(r < 0.5 * (p - 1)))
            fail("radius must lie in [1, (p-1)/2) so a noise annulus remains");
        if (shrink_tau < 0.0 || shrink_tau >= 1.0)
            fail("shrink_tau must lie in [0, 1)");
        if (min_transfer < 0.0)
            fail("min_transfer must be non-negative");
        if (!(K >= 1 && K < S))
            fail("K must satisfy 1 <= K < S (got K=" + std::to_string(K) + ", S=" + std::to_string(S) + ")");
        if (!(S < n))
            fail("S must be below n (got S=" + std::to_string(S) + ", n=" + std::to_string(n) + ")");
        if (angles < 8)
            fail("angles must be at least 8");
        if (threshold < -1.0 || threshold > 1.0)
            fail("threshold must lie in [-1, 1]");
        if (montage_count < 1)
            fail("montage_count must be positive");
    }

    /// Canonical `key = value` listing of every setting, sorted by key.
    [[nodiscard]] KeyValues to_key_values() const;

    /// Settings that define the data and the computation; paths are left out so
    /// the same experiment in another directory hashes the same.
    [[nodiscard]] std::string canonical() const {
        std::ostringstream os;
        for (const auto& [k, v] : to_key_values())
            os << k << '=' << v << '\n';
        return os.str();
    }
};

namespace config_detail {

/// Shortest of %.15g / %.17g that reads back to the same double.
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", v);
    if (std::strtod(buf, nullptr) != v)
        std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_number(const std::string& key, const std::string& value) {
    // Accept plain numbers and ratios such as 1/40.
    const auto slash = value.find('/');
    try {
        std::size_t used = 0;
        if (slash != std::string::npos) {
            const std::string a = trim(value.substr(0, slash)), b = trim(value.substr(slash + 1));
            std::size_t ua = 0, ub = 0;
            const double num = std::stod(a, &ua), den = std::stod(b, &ub);
            if (ua != a.size() || ub != b.size() || den == 0.0)
                throw std::invalid_argument(value);
            return num / den;
        }
        const double v = std::stod(value, &used);
        if (used != value.size())
            throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': cannot parse number '" + value + "'");
    }
}

inline long long parse_integer(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size())
            throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': cannot parse integer '" + value + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes")
        return true;
    if (value == "false" || value == "0" || value == "no")
        return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + value + "'");
}

inline int parse_int(const std::string& key, const std::string& value) {
    const long long v = parse_integer(key, value);
    if (v < -2147483647LL || v > 2147483647LL)
        throw ConfigError("key '" + key + "': value out of range");
    return static_cast<int>(v);
}

} // namespace config_detail

inline KeyValues PipelineConfig::to_key_values() const {
    using config_detail::fmt;
    KeyValues kv;
    kv["n"] = std::to_string(n);
    kv["p"] = std::to_string(p);
    kv["snr"] = fmt(snr);
    kv["seed"] = std::to_string(seed);
    kv["blobs"] = std::to_string(blobs);
    kv["volume"] = volume;
    std::string d;
    for (std::size_t k = 0; k < defocus_um.size(); ++k)
        d += (k ? "," : "") + fmt(defocus_um[k]);
    kv["defocus_um"] = d;
    kv["cs_mm"] = fmt(cs_mm);
    kv["lambda_pm"] = fmt(lambda_pm);
    kv["b_factor"] = fmt(b_factor);
    kv["amp_contrast"] = fmt(amp_contrast);
    kv["pixel_size_ang"] = fmt(pixel_size_ang);
    kv["basis"] = basis;
    kv["radius"] = fmt(effective_radius());
    kv["shrink_tau"] = fmt(shrink_tau);
    kv["min_transfer"] = fmt(min_transfer);
    kv["S"] = std::to_string(S);
    kv["K"] = std::to_string(K);
    kv["angles"] = std::to_string(angles);
    kv["reflections"] = reflections ? "true" : "false";
    kv["threshold"] = fmt(threshold);
    kv["montage_count"] = std::to_string(montage_count);
    kv["input"] = input;
    return kv;
}

/// Applies settings on top of cfg. Unknown keys are rejected.
inline void apply_key_values(PipelineConfig& cfg, const KeyValues& kv) {
    using namespace config_detail;
    for (const auto& [key, value] : kv) {
        if (key == "n")
            cfg.n = parse_int(key, value);
        else if (key == "p")
            cfg.p = parse_int(key, value);
        else if (key == "snr")
            cfg.snr = parse_number(key, value);
        else if (key == "seed") {
            const long long s = parse_integer(key, value);
            if (s < 0)
                throw ConfigError("key 'seed': must be non-negative");
            cfg.seed = static_cast<std::uint64_t>(s);
        } else if (key == "blobs")
            cfg.blobs = parse_int(key, value);
        else if (key == "volume")
            cfg.volume = value;
        else if (key == "defocus_um") {
            cfg.defocus_um.clear();
            std::istringstream in(value);
            std::string item;
            while (std::getline(in, item, ','))
                cfg.defocus_um.push_back(parse_number(key, trim(item)));
        } else if (key == "cs_mm")
            cfg.cs_mm = parse_number(key, value);
        else if (key == "lambda_pm")
            cfg.lambda_pm = parse_number(key, value);
        else if (key == "b_factor")
            cfg.b_factor = parse_number(key, value);
        else if (key == "amp_contrast")
            cfg.amp_contrast = parse_number(key, value);
        else if (key == "pixel_size_ang")
            cfg.pixel_size_ang = parse_number(key, value);
        else if (key == "basis")
            cfg.basis = value;
        else if (key == "radius")
            cfg.radius = parse_number(key, value);
        else if (key == "shrink_tau")
            cfg.shrink_tau = parse_number(key, value);
        else if (key == "min_transfer")
            cfg.min_transfer = parse_number(key, value);
        else if (key == "S")
            cfg.S = parse_int(key, value);
        else if (key == "K")
            cfg.K = parse_int(key, value);
        else if (key == "angles")
            cfg.angles = parse_int(key, value);
        else if (key == "reflections")
            cfg.reflections = parse_bool(key, value);
        else if (key == "threshold")
            cfg.threshold = parse_number(key, value);
        else if (key == "montage_count")
            cfg.montage_count = parse_int(key, value);
        else if (key == "input")
            cfg.input = value;
        else
            throw ConfigError("unknown config key '" + key + "'");
    }
}

} // namespace cryoclass
