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

// Command-line driver: one subcommand per pipeline stage plus `pipeline`.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cryoclass/pipeline.hpp"

namespace {

using namespace cryoclass;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kFormat = 3, kNumerical = 4 };

struct Options {
    std::string config;
    std::string out = "cryoclass_out";
    int threads = 0;
    std::int64_t seed = -1;
    std::vector<std::string> set;
};

PipelineConfig resolve(const Options& o) {
    PipelineConfig cfg;
    if (!o.config.empty())
        apply_key_values(cfg, read_key_values(o.config));
    KeyValues overrides;
    for (const auto& s : o.set) {
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + s + "'");
        overrides[config_detail::trim(s.substr(0, eq))] = config_detail::trim(s.substr(eq + 1));
    }
    if (o.seed >= 0)
        overrides["seed"] = std::to_string(o.seed);
    apply_key_values(cfg, overrides);
    cfg.validate();
    return cfg;
}

int run(const std::string& command, const Options& o) {
    if (o.threads < 0)
        throw ConfigError("--threads must be non-negative");
    set_thread_count(o.threads);
    const PipelineConfig cfg = resolve(o);
    const Workspace ws(o.out);
    std::vector<StageRecord> stages;

    if (command == "pipeline") {
        run_pipeline(cfg, o.out);
        return kOk;
    }
    if (command == "simulate") {
        stages.push_back(timed([&] { return stage_simulate(cfg, ws); }));
    } else if (command == "plot") {
        stages.push_back(timed([&] { return stage_plot(cfg, ws); }));
    } else {
        const ImageStack stack = load_stack(cfg, ws);
        if (command == "evaluate") {
            stages.push_back(timed([&] { return stage_evaluate(cfg, stack, ws); }));
        } else {
            StageRecord basis_rec, est_rec;
            const Estimate est = run_estimate(cfg, stack, &ws, &basis_rec, &est_rec);
            stages.push_back(basis_rec);
            stages.push_back(est_rec);
            if (command == "denoise")
                stages.push_back(timed([&] { return stage_denoise(est, stack, ws); }));
            else if (command == "neighbors")
                stages.push_back(timed([&] { return stage_candidates(cfg, est, ws); }));
            else if (command == "rerank")
                stages.push_back(timed([&] { return stage_rerank(cfg, est, ws); }));
            else if (command == "average")
                stages.push_back(timed([&] { return stage_average(cfg, est, stack, ws); }));
        }
    }
    update_manifest(cfg, ws, stages, thread_count());
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cryoclass: CTF-aware anisotropic affinity and class averaging for projection images"};
    app.require_subcommand(1, 1);
    Options o;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "Simulate a CTF-affected noisy projection stack with ground truth"},
        {"denoise", "Estimate the covariance model and write Wiener-filtered images"},
        {"neighbors", "Initial candidate lists by rotational correlation"},
        {"rerank", "Re-rank candidates with the anisotropic affinity"},
        {"average", "Class averages from the re-ranked neighbor table"},
        {"evaluate", "Ground-truth metrics for the initial and re-ranked tables"},
        {"plot", "Density plot and overview montage from existing artifacts"},
        {"pipeline", "Run every stage in order"}};
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "Flat key = value configuration file");
        sub->add_option("--out", o.out, "Output directory")->capture_default_str();
        sub->add_option("--threads", o.threads, "Worker thread cap (0: hardware concurrency)");
        sub->add_option("--seed", o.seed, "Random seed (overrides the config)");
        sub->add_option("--set", o.set, "Override a config key, key=value (repeatable)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    std::string command;
    for (const auto* sub : app.get_subcommands())
        command = sub->get_name();
    try {
        return run(command, o);
    } catch (const ConfigError& e) {
        log::error(command + ": config error: " + e.what());
        return kConfig;
    } catch (const PreconditionError& e) {
        log::error(command + ": invalid input: " + e.what());
        return kConfig;
    } catch (const FormatError& e) {
        log::error(command + ": data format error: " + e.what());
        return kFormat;
    } catch (const IoError& e) {
        log::error(command + ": " + e.what());
        return kFormat;
    } catch (const NumericalError& e) {
        log::error(command + ": numerical failure: " + e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        log::error(command + ": " + e.what());
        return kFailure;
    }
}
