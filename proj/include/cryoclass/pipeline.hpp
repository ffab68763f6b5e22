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

#include <boost/version.hpp>
#include <fftw3.h>

#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cryoclass/affinity.hpp"
#include "cryoclass/basis.hpp"
#include "cryoclass/classify.hpp"
#include "cryoclass/config.hpp"
#include "cryoclass/ctf.hpp"
#include "cryoclass/cwf.hpp"
#include "cryoclass/error.hpp"
#include "cryoclass/eval.hpp"
#include "cryoclass/hash.hpp"
#include "cryoclass/log.hpp"
#include "cryoclass/mrc.hpp"
#include "cryoclass/plot.hpp"
#include "cryoclass/synth.hpp"

#ifndef CRYOCLASS_VERSION
#define CRYOCLASS_VERSION "0.1.0"
#endif

namespace cryoclass {

namespace fs = std::filesystem;

struct StageRecord {
    std::string name;
    double seconds = 0.0;
    bool cached = false;
    std::vector<std::pair<std::string, std::string>> outputs; // file name -> content hash
};

/// Output directory with per-stage cache records in .cache/<stage>.json.
class Workspace {
public:
    explicit Workspace(fs::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        fs::create_directories(dir_ / ".cache", ec);
        if (ec)
            throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
    }

    [[nodiscard]] const fs::path& dir() const { return dir_; }
    [[nodiscard]] fs::path file(const std::string& name) const { return dir_ / name; }

    /// True when the stage was last run with this key and every output still
    /// has the recorded content hash.
    [[nodiscard]] bool cache_hit(const std::string& stage, std::uint64_t key) const {
        const fs::path rec = dir_ / ".cache" / (stage + ".json");
        std::ifstream in(rec);
        if (!in)
            return false;
        try {
            const auto j = nlohmann::json::parse(in);
            if (j.at("key").get<std::string>() != hex64(key))
                return false;
            for (const auto& [name, h] : j.at("outputs").items()) {
                const fs::path f = dir_ / name;
                if (!fs::exists(f) || hex64(hash_file(f)) != h.get<std::string>())
                    return false;
            }
            return true;
        } catch (const std::exception&) {
            return false;
        }
    }

    void cache_store(const std::string& stage, std::uint64_t key, const std::vector<std::string>& outputs) const {
        nlohmann::json j;
        j["key"] = hex64(key);
        j["outputs"] = nlohmann::json::object();
        for (const auto& name : outputs)
            j["outputs"][name] = hex64(hash_file(dir_ / name));
        std::ofstream out(dir_ / ".cache" / (stage + ".json"));
        out << j.dump(2) << '\n';
    }

    [[nodiscard]] std::vector<std::pair<std::string, std::string>> hashes(const std::vector<std::string>& names) const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& n : names)
            out.emplace_back(n, hex64(hash_file(dir_ / n)));
        return out;
    }

private:
    fs::path dir_;
};

// ---------------------------------------------------------------------------
// Model cache

namespace pipeline_detail {

inline constexpr char kModelMagic[16] = {'C', 'R', 'Y', 'O', 'C', 'L', 'A', 'S', 'S', 'M', 'O', 'D', 'E', 'L', '0', '1'};

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in)
        throw FormatError(path + ": truncated model cache");
    return v;
}

} // namespace pipeline_detail

inline void write_model_cache(const CovarianceModel& model, const BlockLayout& layout, std::uint64_t key,
                              const fs::path& path) {
    using pipeline_detail::put;
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out.write(pipeline_detail::kModelMagic, sizeof pipeline_detail::kModelMagic);
    put<std::uint64_t>(out, key);
    put<double>(out, model.noise_var);
    put<std::int64_t>(out, layout.total);
    put<std::int64_t>(out, static_cast<std::int64_t>(layout.blocks.size()));
    for (const auto& b : layout.blocks) {
        put<std::int32_t>(out, b.m);
        put<std::int32_t>(out, b.size);
    }
    for (Eigen::Index k = 0; k < model.mu.size(); ++k)
        put<std::complex<double>>(out, model.mu[k]);
    for (const auto& s : model.sigma_blocks)
        for (Eigen::Index k = 0; k < s.size(); ++k)
            put<std::complex<double>>(out, s.data()[k]);
    if (!out)
        throw IoError("write failed: " + path.string());
}

/// The cached model, or nothing when the file is absent or was written for a
/// different key or layout.
inline std::optional<CovarianceModel> read_model_cache(const fs::path& path, std::uint64_t key, const BlockLayout& layout) {
    using pipeline_detail::get;
    std::ifstream in(path, std::ios::binary);
    if (!in)
        return std::nullopt;
    const std::string p = path.string();
    char magic[16];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, pipeline_detail::kModelMagic, sizeof magic) != 0)
        throw FormatError(p + ": not a model cache file");
    if (get<std::uint64_t>(in, p) != key)
        return std::nullopt;
    CovarianceModel model;
    model.noise_var = get<double>(in, p);
    const auto total = get<std::int64_t>(in, p);
    const auto nblocks = get<std::int64_t>(in, p);
    if (total != layout.total || nblocks != static_cast<std::int64_t>(layout.blocks.size()))
        return std::nullopt;
    for (const auto& b : layout.blocks) {
        const auto m = get<std::int32_t>(in, p);
        const auto size = get<std::int32_t>(in, p);
        if (m != b.m || size != b.size)
            return std::nullopt;
    }
    model.mu.resize(layout.total);
    for (Eigen::Index k = 0; k < model.mu.size(); ++k)
        model.mu[k] = get<std::complex<double>>(in, p);
    for (const auto& b : layout.blocks) {
        Eigen::MatrixXcd s(b.size, b.size);
        for (Eigen::Index k = 0; k < s.size(); ++k)
            s.data()[k] = get<std::complex<double>>(in, p);
        model.sigma_blocks.push_back(std::move(s));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Stages

inline std::uint64_t stack_key(const ImageStack& stack) {
    Fnv1a h;
    for (const auto& img : stack.images) {
        h.update(img.pixels.data(), sizeof(double) * static_cast<std::size_t>(img.pixels.size()));
        h.update(&img.pixel_size, sizeof(double));
    }
    h.update(stack.group_of.data(), sizeof(int) * stack.group_of.size());
    h.update(stack.defocus_um.data(), sizeof(double) * stack.defocus_um.size());
    return h.digest();
}

inline fs::path clean_path_for(const fs::path& stack_path) {
    fs::path p = stack_path;
    p.replace_extension(".clean.mrcs");
    return p;
}

inline SteerableBasis make_basis(const PipelineConfig& cfg, int p) {
    const double r = cfg.radius > 0.0 ? cfg.radius : std::floor(0.875 * 0.5 * (p - 1));
    return cfg.basis == "pixel" ? SteerableBasis::pixel(p, r) : SteerableBasis::fourier_bessel(p, r);
}

/// CTF parameters per defocus group: the defocus recorded for the group's
/// images when present, the configured list otherwise.
inline std::vector<CtfParams> group_ctf(const PipelineConfig& cfg, const ImageStack& stack) {
    const int groups = std::max(1, stack.num_groups());
    const auto base = cfg.ctf_groups();
    std::vector<CtfParams> out;
    for (int g = 0; g < groups; ++g) {
        CtfParams c = base.front();
        if (stack.pixel_size() > 0.0)
            c.pixel_size = stack.pixel_size();
        bool found = false;
        if (!stack.defocus_um.empty())
            for (std::size_t i = 0; i < stack.size(); ++i)
                if (stack.group_of[i] == g) {
                    c.defocus_um = stack.defocus_um[i];
                    found = true;
                    break;
                }
        if (!found) {
            if (static_cast<std::size_t>(g) >= cfg.defocus_um.size())
                throw ConfigError("stack has " + std::to_string(groups) + " defocus groups but defocus_um lists " +
                                  std::to_string(cfg.defocus_um.size()));
            c.defocus_um = cfg.defocus_um[static_cast<std::size_t>(g)];
        }
        c.validate();
        out.push_back(c);
    }
    return out;
}

/// Simulates the stack (or reads cfg.input) and returns it as stored on disk,
/// with clean images attached when available.
inline ImageStack load_stack(const PipelineConfig& cfg, const Workspace& ws) {
    const fs::path path = cfg.input.empty() ? ws.file("stack.mrcs") : fs::path(cfg.input);
    if (!fs::exists(path))
        throw IoError("stack file " + path.string() + " does not exist (run `simulate` first or set input)");
    ImageStack stack = read_mrc_stack(path);
    const fs::path clean = clean_path_for(path);
    if (fs::exists(clean)) {
        const ImageStack c = read_mrc_stack(clean);
        if (c.size() == stack.size() && stack.has_truth())
            for (std::size_t i = 0; i < stack.size(); ++i)
                stack.truth[i].clean = c.images[i];
    }
    stack.validate();
    return stack;
}

inline std::uint64_t simulation_key(const PipelineConfig& cfg) {
    Fnv1a h;
    for (const char* k : {"n", "p", "snr", "seed", "blobs", "volume", "defocus_um", "cs_mm", "lambda_pm", "b_factor",
                          "amp_contrast", "pixel_size_ang"}) {
        h.update(k);
        h.update(cfg.to_key_values().at(k));
    }
    if (!cfg.volume.empty())
        h.update(hex64(hash_file(cfg.volume)));
    return h.digest();
}

inline StageRecord stage_simulate(const PipelineConfig& cfg, const Workspace& ws) {
    StageRecord rec{"simulate"};
    const std::vector<std::string> outputs{"stack.mrcs", "stack.meta.jsonl", "stack.clean.mrcs", "stack.clean.meta.jsonl"};
    const std::uint64_t key = simulation_key(cfg);
    if (ws.cache_hit("simulate", key)) {
        rec.cached = true;
        rec.outputs = ws.hashes(outputs);
        return rec;
    }
    SimConfig sim;
    sim.n = cfg.n;
    sim.p = cfg.p;
    sim.snr = cfg.snr;
    sim.groups = cfg.ctf_groups();
    sim.seed = cfg.seed;
    ImageStack stack;
    if (cfg.volume.empty()) {
        const Phantom phantom = random_phantom(cfg.blobs, cfg.seed);
        stack = simulate(phantom, sim);
    } else {
        const Volume vol = read_mrc_volume(cfg.volume);
        stack = simulate(ProjectionSource{nullptr, &vol}, sim);
    }
    write_mrc_stack(stack, ws.file("stack.mrcs"));
    ImageStack clean;
    clean.images.reserve(stack.size());
    for (const auto& t : stack.truth)
        clean.images.push_back(t.clean);
    clean.group_of = stack.group_of;
    clean.defocus_um = stack.defocus_um;
    for (const auto& t : stack.truth)
        clean.truth.push_back(GroundTruth{t.rotation, Image{}});
    write_mrc_stack(clean, ws.file("stack.clean.mrcs"));
    ws.cache_store("simulate", key, outputs);
    rec.outputs = ws.hashes(outputs);
    return rec;
}

/// Everything derived from the stack by the estimation stages.
struct Estimate {
    SteerableBasis basis;
    std::vector<CtfParams> ctf;
    std::vector<BlockOperator> ops;
    std::vector<Coeffs> coeffs;
    CovarianceModel model;
    ConditionalMoments moments;
    std::uint64_t key = 0;
};

inline std::uint64_t estimation_key(const PipelineConfig& cfg, const ImageStack& stack) {
    Fnv1a h;
    h.update(hex64(stack_key(stack)));
    const auto kv = cfg.to_key_values();
    for (const char* k : {"basis", "radius", "cs_mm", "lambda_pm", "b_factor", "amp_contrast", "defocus_um", "shrink_tau",
                          "min_transfer"}) {
        h.update(k);
        h.update(kv.at(k));
    }
    return h.digest();
}

/// Basis, CTF operators and expansions ("basis" stage), then the covariance
/// model (cached in model.bin) and the conditional moments ("estimate").
inline Estimate run_estimate(const PipelineConfig& cfg, const ImageStack& stack, const Workspace* ws,
                             StageRecord* basis_rec = nullptr, StageRecord* estimate_rec = nullptr) {
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    const int p = stack.side();
    Estimate est{make_basis(cfg, p)};
    est.ctf = group_ctf(cfg, stack);
    for (const auto& c : est.ctf)
        est.ops.push_back(ctf_block_operator(ctf_grid(c, p), est.basis));
    est.coeffs.resize(stack.size());
    parallel_for(stack.size(), [&](std::size_t i) { est.coeffs[i] = est.basis.expand(stack.images[i]); });
    if (basis_rec) {
        basis_rec->name = "basis";
        basis_rec->seconds = std::chrono::duration<double>(clock::now() - t0).count();
    }
    t0 = clock::now();
    est.key = estimation_key(cfg, stack);
    const BlockLayout& layout = est.basis.layout();
    std::optional<CovarianceModel> cached;
    if (ws)
        cached = read_model_cache(ws->file("model.bin"), est.key, layout);
    if (cached) {
        est.model = std::move(*cached);
        log::debug("covariance model loaded from cache");
    } else {
        const double noise_var = estimate_noise_var(stack, est.basis.radius());
        const Coeffs mu = estimate_mean(layout, est.coeffs, est.ops, stack.group_of, noise_var);
        CovarianceOptions opts;
        opts.shrink_tau = cfg.shrink_tau;
        opts.min_transfer = cfg.min_transfer;
        est.model = estimate_covariance(layout, est.coeffs, est.ops, stack.group_of, mu, noise_var, opts);
        if (ws)
            write_model_cache(est.model, layout, est.key, ws->file("model.bin"));
    }
    est.moments = conditional_moments(layout, est.coeffs, est.ops, stack.group_of, est.model);
    log::info("noise variance " + csv_detail::format_double(est.model.noise_var) + ", principal dimension " +
              std::to_string(est.moments.reduced_dim()));
    if (estimate_rec) {
        estimate_rec->name = "estimate";
        estimate_rec->seconds = std::chrono::duration<double>(clock::now() - t0).count();
        estimate_rec->cached = cached.has_value();
        if (ws)
            estimate_rec->outputs = ws->hashes({"model.bin"});
    }
    return est;
}

inline StageRecord stage_denoise(const Estimate& est, const ImageStack& stack, const Workspace& ws) {
    StageRecord rec{"denoise"};
    write_mrc_stack(
        [&] {
            ImageStack d = denoise(est.moments, est.basis, stack.pixel_size());
            d.defocus_um = stack.defocus_um;
            return d;
        }(),
        ws.file("denoised.mrcs"));
    rec.outputs = ws.hashes({"denoised.mrcs"});
    return rec;
}

inline StageRecord stage_candidates(const PipelineConfig& cfg, const Estimate& est, const Workspace& ws) {
    StageRecord rec{"candidates"};
    Fnv1a h;
    h.update(hex64(est.key));
    h.update("S=" + std::to_string(cfg.S) + ";angles=" + std::to_string(cfg.angles) +
             ";reflections=" + (cfg.reflections ? "1" : "0"));
    const std::uint64_t key = h.digest();
    if (ws.cache_hit("candidates", key)) {
        rec.cached = true;
    } else {
        const NeighborTable table = initial_candidates(est.moments, cfg.S, cfg.angles, cfg.reflections);
        write_neighbor_csv(table, ws.file("candidates.csv").string());
        ws.cache_store("candidates", key, {"candidates.csv"});
    }
    rec.outputs = ws.hashes({"candidates.csv"});
    return rec;
}

inline NeighborTable read_table(const Workspace& ws, const std::string& name, std::size_t n) {
    const fs::path f = ws.file(name);
    if (!fs::exists(f))
        throw IoError(f.string() + " does not exist (run the stage that produces it first)");
    return read_neighbor_csv(f.string(), static_cast<int>(n));
}

inline StageRecord stage_rerank(const PipelineConfig& cfg, const Estimate& est, const Workspace& ws) {
    StageRecord rec{"rerank"};
    const NeighborTable cand = read_table(ws, "candidates.csv", est.moments.size());
    const AffinityModel model(est.moments);
    const NeighborTable rr = rerank(cand, model, cfg.K);
    write_neighbor_csv(rr, ws.file("neighbors.csv").string());
    write_scores_csv(rr, ws.file("scores.csv").string());
    rec.outputs = ws.hashes({"neighbors.csv", "scores.csv"});
    return rec;
}

inline StageRecord stage_average(const PipelineConfig& cfg, const Estimate& est, const ImageStack& stack,
                                 const Workspace& ws) {
    StageRecord rec{"average"};
    const NeighborTable table = read_table(ws, "neighbors.csv", stack.size());
    ImageStack avg;
    avg.images.resize(stack.size());
    avg.group_of.assign(stack.size(), 0);
    parallel_for(stack.size(), [&](std::size_t i) {
        avg.images[i] =
            class_average(static_cast<int>(i), table, est.moments.alpha, est.basis, cfg.K, stack.pixel_size()).average;
    });
    write_mrc_stack(avg, ws.file("averages.mrcs"));
    rec.outputs = ws.hashes({"averages.mrcs", "averages.meta.jsonl"});
    return rec;
}

/// Fig. 4a-style montage: rows of clean (when known), noisy, denoised and
/// class-averaged images for the first `count` images.
inline void write_overview_montage(const ImageStack& stack, const ImageStack& denoised, const ImageStack& averages,
                                   int count, const fs::path& path) {
    const auto c = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(count), stack.size()));
    std::vector<Image> tiles;
    if (stack.has_clean_truth())
        for (std::size_t i = 0; i < c; ++i)
            tiles.push_back(stack.truth[i].clean);
    for (const ImageStack* s : {&stack, &denoised, &averages})
        for (std::size_t i = 0; i < c; ++i)
            tiles.push_back(s->images.at(i));
    write_pgm(montage_raster(tiles, static_cast<int>(c)), path.string());
}

inline StageRecord stage_evaluate(const PipelineConfig& cfg, const ImageStack& stack, const Workspace& ws) {
    StageRecord rec{"evaluate"};
    if (!stack.has_clean_truth())
        throw PreconditionError("evaluate needs a stack with ground truth (clean images and orientations)");
    const NeighborTable cand = read_table(ws, "candidates.csv", stack.size());
    const NeighborTable rr = read_table(ws, "neighbors.csv", stack.size());
    const CleanCorrelator corr(stack, cfg.angles);
    EvalReport initial = evaluate(cand.truncated(cfg.K), stack, corr, cfg.threshold);
    EvalReport reranked = evaluate(rr, stack, corr, cfg.threshold);

    // Denoising quality against the clean images, next to phase flipping.
    const ImageStack denoised = read_mrc_stack(ws.file("denoised.mrcs"));
    const PipelineConfig c = cfg;
    const auto ctf = group_ctf(c, stack);
    std::vector<CtfGrid> grids;
    for (const auto& g : ctf)
        grids.push_back(ctf_grid(g, stack.side()));
    std::vector<double> mse_d(stack.size()), mse_f(stack.size());
    parallel_for(stack.size(), [&](std::size_t i) {
        const auto& clean = stack.truth[i].clean.pixels;
        const Image flipped = phase_flip(stack.images[i], grids[static_cast<std::size_t>(stack.group_of[i])]);
        mse_d[i] = (denoised.images[i].pixels - clean).squaredNorm() / static_cast<double>(clean.size());
        mse_f[i] = (flipped.pixels - clean).squaredNorm() / static_cast<double>(clean.size());
    });
    double md = 0.0, mf = 0.0;
    for (std::size_t i = 0; i < stack.size(); ++i) {
        md += mse_d[i];
        mf += mse_f[i];
    }
    md /= static_cast<double>(stack.size());
    mf /= static_cast<double>(stack.size());
    for (EvalReport* r : {&initial, &reranked}) {
        r->extra.emplace_back("mse_denoised", md);
        r->extra.emplace_back("mse_phase_flipped", mf);
    }
    write_report_csv(initial, ws.file("report_initial.csv").string());
    write_report_csv(reranked, ws.file("report.csv").string());
    plot_density({&initial, &reranked}, ws.file("density.pgm").string());
    if (fs::exists(ws.file("averages.mrcs")))
        write_overview_montage(stack, denoised, read_mrc_stack(ws.file("averages.mrcs")), cfg.montage_count,
                               ws.file("montage.pgm"));
    log::info("true neighbors (corr > " + csv_detail::format_double(cfg.threshold) + "): initial " +
              std::to_string(initial.true_neighbor_count) + ", reranked " + std::to_string(reranked.true_neighbor_count));
    std::vector<std::string> outs{"report_initial.csv", "report.csv", "density.pgm", "density.csv"};
    if (fs::exists(ws.file("montage.pgm")))
        outs.emplace_back("montage.pgm");
    rec.outputs = ws.hashes(outs);
    return rec;
}

/// Redraws density.pgm from the two report files and, when the image stacks
/// exist, montage.pgm.
inline StageRecord stage_plot(const PipelineConfig& cfg, const Workspace& ws) {
    StageRecord rec{"plot"};
    EvalReport initial, reranked;
    initial.density = read_report_density(ws.file("report_initial.csv").string());
    reranked.density = read_report_density(ws.file("report.csv").string());
    initial.angular_distances = {0.0};
    reranked.angular_distances = {0.0};
    plot_density({&initial, &reranked}, ws.file("density.pgm").string());
    std::vector<std::string> outs{"density.pgm", "density.csv"};
    if (fs::exists(ws.file("denoised.mrcs")) && fs::exists(ws.file("averages.mrcs"))) {
        const ImageStack stack = load_stack(cfg, ws);
        write_overview_montage(stack, read_mrc_stack(ws.file("denoised.mrcs")), read_mrc_stack(ws.file("averages.mrcs")),
                               cfg.montage_count, ws.file("montage.pgm"));
        outs.emplace_back("montage.pgm");
    }
    rec.outputs = ws.hashes(outs);
    return rec;
}

// ---------------------------------------------------------------------------
// Manifest

inline nlohmann::json versions_json() {
    nlohmann::json v;
    v["cryoclass"] = CRYOCLASS_VERSION;
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    v["fftw"] = std::string(fftw_version);
    v["boost"] = BOOST_LIB_VERSION;
    return v;
}

/// Merges stage records into manifest.json (replacing stages of the same
/// name) together with the configuration and its hash.
inline void update_manifest(const PipelineConfig& cfg, const Workspace& ws, const std::vector<StageRecord>& stages,
                            int threads) {
    const fs::path path = ws.file("manifest.json");
    nlohmann::json m;
    if (fs::exists(path)) {
        try {
            std::ifstream in(path);
            m = nlohmann::json::parse(in);
        } catch (const std::exception&) {
            m = nlohmann::json::object();
        }
    }
    m["config_hash"] = hex64(hash_string(cfg.canonical()));
    m["config"] = cfg.to_key_values();
    m["versions"] = versions_json();
    m["threads"] = threads;
    if (!m.contains("stages") || !m["stages"].is_array())
        m["stages"] = nlohmann::json::array();
    for (const auto& s : stages) {
        nlohmann::json js;
        js["name"] = s.name;
        js["seconds"] = s.seconds;
        js["cached"] = s.cached;
        js["outputs"] = nlohmann::json::object();
        for (const auto& [f, h] : s.outputs)
            js["outputs"][f] = h;
        bool replaced = false;
        for (auto& e : m["stages"])
            if (e.value("name", "") == s.name) {
                e = js;
                replaced = true;
            }
        if (!replaced)
            m["stages"].push_back(js);
    }
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << m.dump(2) << '\n';
}

/// Runs fn and records its wall-clock time on the returned record.
inline StageRecord timed(const std::function<StageRecord()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    StageRecord r = fn();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log::info("stage " + r.name + (r.cached ? " (cached)" : "") + ": " + csv_detail::format_double(r.seconds) + " s");
    return r;
}

/// simulate -> basis -> estimate -> denoise -> candidates -> rerank -> average
/// -> evaluate, all artifacts under out_dir.
inline std::vector<StageRecord> run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    const Workspace ws(out_dir);
    std::vector<StageRecord> stages;
    if (cfg.input.empty())
        stages.push_back(timed([&] { return stage_simulate(cfg, ws); }));
    else
        stages.push_back(StageRecord{"simulate", 0.0, true, {}});
    const ImageStack stack = load_stack(cfg, ws);
    StageRecord basis_rec, est_rec;
    const Estimate est = run_estimate(cfg, stack, &ws, &basis_rec, &est_rec);
    stages.push_back(basis_rec);
    stages.push_back(est_rec);
    log::info("stage basis: " + csv_detail::format_double(basis_rec.seconds) + " s");
    log::info("stage estimate" + std::string(est_rec.cached ? " (cached)" : "") + ": " +
              csv_detail::format_double(est_rec.seconds) + " s");
    stages.push_back(timed([&] { return stage_denoise(est, stack, ws); }));
    stages.push_back(timed([&] { return stage_candidates(cfg, est, ws); }));
    stages.push_back(timed([&] { return stage_rerank(cfg, est, ws); }));
    stages.push_back(timed([&] { return stage_average(cfg, est, stack, ws); }));
    if (stack.has_clean_truth())
        stages.push_back(timed([&] { return stage_evaluate(cfg, stack, ws); }));
    else
        stages.push_back(StageRecord{"evaluate", 0.0, false, {}});
    update_manifest(cfg, ws, stages, thread_count());
    return stages;
}

} // namespace cryoclass
