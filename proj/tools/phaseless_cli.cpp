// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------
//
// Command line front end: one subcommand per pipeline stage.
//
//   phaseless codebook --config exp.json --out runs/a
//   phaseless dataset  --config exp.json --out runs/a --threads 4
//   phaseless sweep    --config exp.json --out runs/a --threshold-db 3 --percentile 90
//   phaseless figure   --config exp.json --out runs/a --which fig1
//
// Exit codes: 0 success, 2 configuration error, 3 missing upstream artifact, 4 numerical failure.

#include "phaseless/experiment.hpp"
#include "phaseless/json_util.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace
{
    constexpr int kExitConfig = 2;
    constexpr int kExitMissing = 3;
    constexpr int kExitNumerical = 4;

    struct Options
    {
        std::string config;
        std::string out = "out";
        std::optional<std::uint64_t> seed;
        std::optional<int> threads;
        std::optional<double> threshold_db;
        std::optional<double> percentile;
        std::string which = "all";
    };

    void common_flags(CLI::App *cmd, Options &o)
    {
        cmd->add_option("--config", o.config, "experiment configuration (JSON)")->required();
        cmd->add_option("--out", o.out, "artifact directory");
        cmd->add_option("--seed", o.seed, "derive every named seed from this master seed");
        cmd->add_option("--threads", o.threads, "worker threads (never changes results)")->check(CLI::PositiveNumber);
    }
} // namespace

int main(int argc, char **argv)
{
    using namespace phaseless;
    CLI::App app{"Phase-less beam alignment experiments"};
    app.require_subcommand(1);
    Options o;

    auto *codebook = app.add_subcommand("codebook", "generate directional and sensing codebooks");
    auto *dataset = app.add_subcommand("dataset", "simulate the labeled RSS dataset");
    auto *train = app.add_subcommand("train", "train the learned predictors");
    auto *eval = app.add_subcommand("eval", "evaluate every algorithm on the test split");
    auto *sweep = app.add_subcommand("sweep", "required measurements at a gain-loss threshold");
    auto *figure = app.add_subcommand("figure", "flatten results into per-figure CSV files");
    auto *run = app.add_subcommand("run", "all stages except fig1, reusing matching artifacts");
    for (auto *c : {codebook, dataset, train, eval, sweep, figure, run})
        common_flags(c, o);
    for (auto *c : {sweep, run})
    {
        c->add_option("--threshold-db", o.threshold_db, "gain-loss threshold in dB");
        c->add_option("--percentile", o.percentile, "gain-loss percentile")->check(CLI::Range(0.0, 100.0));
    }
    figure->add_option("--which", o.which, "fig1, fig6, fig7, fig8, fig9 or all");
    figure->add_option("--percentile", o.percentile, "gain-loss percentile")->check(CLI::Range(0.0, 100.0));

    CLI11_PARSE(app, argc, argv);

    try
    {
        ExperimentConfig cfg = load_config(o.config);
        if (o.seed)
            override_seeds(cfg, *o.seed);
        if (o.threads)
            cfg.threads = *o.threads;
        if (o.threshold_db)
            cfg.metrics.threshold_db = *o.threshold_db;
        if (o.percentile)
            cfg.metrics.percentile = *o.percentile;

        if (codebook->parsed())
            run_codebook_stage(cfg, o.out);
        else if (dataset->parsed())
            run_dataset_stage(cfg, o.out);
        else if (train->parsed())
            run_train_stage(cfg, o.out);
        else if (eval->parsed())
            run_eval_stage(cfg, o.out);
        else if (sweep->parsed())
            run_sweep_stage(cfg, o.out);
        else if (figure->parsed())
            run_figure_stage(cfg, o.out, o.which);
        else
            run_experiment(cfg, o.out);
    }
    catch (const ConfigError &e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
    catch (const MissingArtifactError &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMissing;
    }
    catch (const NumericalError &e)
    {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
