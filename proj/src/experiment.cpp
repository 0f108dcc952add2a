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

#include "phaseless/experiment.hpp"
#include "phaseless/json_util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace phaseless
{
    // ---------------------------------------------------------------- names

    std::string to_string(Algorithm a)
    {
        switch (a)
        {
        case Algorithm::Exhaustive:
            return "exhaustive";
        case Algorithm::RssMp:
            return "rss_mp";
        case Algorithm::PhaselessL1:
            return "phaseless_l1";
        case Algorithm::Mlp:
            return "mlp";
        case Algorithm::Cnn:
            return "cnn";
        }
        return "?";
    }

    Algorithm algorithm_from_string(const std::string &name)
    {
        for (auto a : {Algorithm::Exhaustive, Algorithm::RssMp, Algorithm::PhaselessL1, Algorithm::Mlp, Algorithm::Cnn})
            if (to_string(a) == name)
                return a;
        throw ConfigError("unknown algorithm '" + name + "' (expected exhaustive, rss_mp, phaseless_l1, mlp or cnn)");
    }

    // ---------------------------------------------------------------- configuration

    namespace
    {
        // Collects every configuration problem so they can be reported together.
        struct Problems
        {
            std::vector<std::string> list;

            template <class F>
            void guard(F &&f)
            {
                try
                {
                    f();
                }
                catch (const ConfigError &e)
                {
                    list.push_back(e.what());
                }
                catch (const json::exception &e)
                {
                    list.push_back(e.what());
                }
            }
            void check(bool ok, const std::string &what)
            {
                if (!ok)
                    list.push_back(what);
            }
        };

        template <class T>
        void read(const json &j, const char *key, T &dst)
        {
            if (j.contains(key))
                dst = j.at(key).get<T>();
        }

        CodebookSpec codebooks_from_json(const json &j, Problems &pr)
        {
            CodebookSpec c;
            pr.guard([&] { require_known_keys(j, {"directional", "pn", "sa", "qpd"}, "codebooks"); });
            if (j.contains("directional"))
                pr.guard([&] {
                    const auto &d = j.at("directional");
                    require_known_keys(d, {"n_beams", "min_deg", "max_deg"}, "codebooks.directional");
                    read(d, "n_beams", c.n_directional);
                    read(d, "min_deg", c.directional_min_deg);
                    read(d, "max_deg", c.directional_max_deg);
                });
            if (j.contains("pn"))
                pr.guard([&] {
                    const auto &d = j.at("pn");
                    require_known_keys(d, {"n_beams", "seed"}, "codebooks.pn");
                    read(d, "n_beams", c.n_pn);
                    read(d, "seed", c.pn_seed);
                });
            if (j.contains("sa"))
                pr.guard([&] {
                    const auto &d = j.at("sa");
                    require_known_keys(d, {"n_beams", "spacing_deg", "n_subarrays", "finger_separation_deg"},
                                       "codebooks.sa");
                    read(d, "n_beams", c.n_sa);
                    read(d, "spacing_deg", c.sa_spacing_deg);
                    read(d, "n_subarrays", c.sa.n_subarrays);
                    read(d, "finger_separation_deg", c.sa.finger_separation_deg);
                });
            if (j.contains("qpd"))
                pr.guard([&] {
                    const auto &d = j.at("qpd");
                    require_known_keys(d, {"n_beams", "spacing_deg", "phi_max"}, "codebooks.qpd");
                    read(d, "n_beams", c.n_qpd);
                    read(d, "spacing_deg", c.qpd_spacing_deg);
                    read(d, "phi_max", c.qpd_phi_max);
                });
            pr.check(c.n_directional >= 1, "codebooks.directional.n_beams must be >= 1");
            pr.check(c.directional_min_deg > -90.0 && c.directional_max_deg < 90.0 &&
                         c.directional_min_deg <= c.directional_max_deg,
                     "codebooks.directional angles must satisfy -90 < min_deg <= max_deg < 90");
            pr.check(c.n_pn >= 0 && c.n_sa >= 0 && c.n_qpd >= 0, "codebooks beam counts must be >= 0");
            pr.check(c.n_pn + c.n_sa + c.n_qpd >= 1, "codebooks must define at least one sensing beam");
            pr.check(c.qpd_phi_max > 0.0, "codebooks.qpd.phi_max must be positive");
            return c;
        }

        json codebooks_to_json(const CodebookSpec &c)
        {
            return {{"directional",
                     {{"n_beams", c.n_directional}, {"min_deg", c.directional_min_deg}, {"max_deg", c.directional_max_deg}}},
                    {"pn", {{"n_beams", c.n_pn}, {"seed", c.pn_seed}}},
                    {"sa",
                     {{"n_beams", c.n_sa},
                      {"spacing_deg", c.sa_spacing_deg},
                      {"n_subarrays", c.sa.n_subarrays},
                      {"finger_separation_deg", c.sa.finger_separation_deg}}},
                    {"qpd", {{"n_beams", c.n_qpd}, {"spacing_deg", c.qpd_spacing_deg}, {"phi_max", c.qpd_phi_max}}}};
        }

        const char *mode_name(FeatureMode m) { return m == FeatureMode::DbNormalized ? "db_normalized" : "linear_rss"; }

        AlgorithmSpec algorithm_from_json(const json &j, int index, Problems &pr)
        {
            AlgorithmSpec a;
            const std::string where = "algorithms[" + std::to_string(index) + "]";
            pr.guard([&] {
                require_known_keys(j,
                                   {"name", "mixes", "m_values", "n_iters", "gamma", "max_iters", "tol", "hidden", "conv",
                                    "train", "features"},
                                   where);
            });
            pr.guard([&] { a.algorithm = algorithm_from_string(j.at("name").get<std::string>()); });
            pr.guard([&] {
                read(j, "mixes", a.mixes);
                for (const auto &m : a.mixes)
                    parse_mix(m);
            });
            pr.guard([&] { read(j, "m_values", a.m_values); });
            pr.guard([&] { read(j, "n_iters", a.mp_iters); });
            pr.guard([&] {
                read(j, "gamma", a.l1.gamma);
                read(j, "max_iters", a.l1.max_iters);
                read(j, "tol", a.l1.tol);
            });
            pr.guard([&] { read(j, "hidden", a.hidden); });
            if (j.contains("conv"))
                pr.guard([&] {
                    a.conv.clear();
                    for (const auto &c : j.at("conv"))
                    {
                        require_known_keys(c, {"filters", "kernel_size", "stride"}, where + ".conv");
                        ConvSpec s;
                        read(c, "filters", s.filters);
                        read(c, "kernel_size", s.kernel_size);
                        read(c, "stride", s.stride);
                        a.conv.push_back(s);
                    }
                });
            if (j.contains("train"))
                pr.guard([&] { a.train = train_config_from_json(j.at("train")); });
            if (j.contains("features"))
                pr.guard([&] {
                    const auto &f = j.at("features");
                    require_known_keys(f, {"mode", "floor_db"}, where + ".features");
                    const auto mode = f.value("mode", std::string("db_normalized"));
                    if (mode != "db_normalized" && mode != "linear_rss")
                        throw ConfigError(where + ".features.mode must be db_normalized or linear_rss");
                    a.transform.mode = mode == "db_normalized" ? FeatureMode::DbNormalized : FeatureMode::LinearRss;
                    read(f, "floor_db", a.transform.floor_db);
                });
            pr.check(a.algorithm == Algorithm::Exhaustive || !a.mixes.empty(), where + ".mixes must not be empty");
            for (int m : a.m_values)
                pr.check(m >= 1, where + ".m_values entries must be >= 1");
            pr.check(a.mp_iters >= 1, where + ".n_iters must be >= 1");
            pr.check(a.l1.gamma > 0.0 && a.l1.max_iters >= 1 && a.l1.tol > 0.0,
                     where + " needs gamma > 0, max_iters >= 1 and tol > 0");
            for (int h : a.hidden)
                pr.check(h >= 1, where + ".hidden widths must be >= 1");
            for (const auto &c : a.conv)
                pr.check(c.filters >= 1 && c.kernel_size >= 1 && c.stride >= 1,
                         where + ".conv entries need filters, kernel_size and stride >= 1");
            pr.check(std::isfinite(a.transform.floor_db), where + ".features.floor_db must be finite");
            return a;
        }

        json algorithm_to_json(const AlgorithmSpec &a)
        {
            json j{{"name", to_string(a.algorithm)}, {"mixes", a.mixes}, {"m_values", a.m_values}};
            switch (a.algorithm)
            {
            case Algorithm::RssMp:
                j["n_iters"] = a.mp_iters;
                break;
            case Algorithm::PhaselessL1:
                j["gamma"] = a.l1.gamma;
                j["max_iters"] = a.l1.max_iters;
                j["tol"] = a.l1.tol;
                break;
            case Algorithm::Cnn: {
                json conv = json::array();
                for (const auto &c : a.conv)
                    conv.push_back({{"filters", c.filters}, {"kernel_size", c.kernel_size}, {"stride", c.stride}});
                j["conv"] = conv;
                [[fallthrough]];
            }
            case Algorithm::Mlp:
                j["hidden"] = a.hidden;
                j["train"] = train_config_to_json(a.train);
                j["features"] = {{"mode", mode_name(a.transform.mode)}, {"floor_db", a.transform.floor_db}};
                break;
            case Algorithm::Exhaustive:
                break;
            }
            return j;
        }

        SparsityStudyConfig fig1_from_json(const json &j, Problems &pr)
        {
            SparsityStudyConfig c;
            pr.guard([&] {
                require_known_keys(j,
                                   {"n_elements", "n_grid", "n_measurements", "path_counts", "trials", "alpha", "phi_max",
                                    "pn_seed", "seed", "gamma", "max_iters", "tol"},
                                   "fig1");
                read(j, "n_elements", c.n_elements);
                read(j, "n_grid", c.n_grid);
                read(j, "n_measurements", c.n_measurements);
                read(j, "path_counts", c.path_counts);
                read(j, "trials", c.trials);
                read(j, "alpha", c.alpha);
                read(j, "phi_max", c.phi_max);
                read(j, "pn_seed", c.pn_seed);
                read(j, "seed", c.seed);
                read(j, "gamma", c.solver.gamma);
                read(j, "max_iters", c.solver.max_iters);
                read(j, "tol", c.solver.tol);
            });
            pr.check(c.n_elements >= 2 && c.n_grid >= 1 && c.n_measurements >= 1 && c.trials >= 1,
                     "fig1 sizes must be positive (n_elements >= 2)");
            for (int l : c.path_counts)
                pr.check(l >= 1 && l <= c.n_grid, "fig1.path_counts entries must lie in [1, n_grid]");
            pr.check(c.solver.gamma > 0.0 && c.solver.max_iters >= 1 && c.solver.tol > 0.0,
                     "fig1 needs gamma > 0, max_iters >= 1 and tol > 0");
            return c;
        }

        json fig1_to_json(const SparsityStudyConfig &c)
        {
            return {{"n_elements", c.n_elements}, {"n_grid", c.n_grid},     {"n_measurements", c.n_measurements},
                    {"path_counts", c.path_counts}, {"trials", c.trials},     {"alpha", c.alpha},
                    {"phi_max", c.phi_max},         {"pn_seed", c.pn_seed},   {"seed", c.seed},
                    {"gamma", c.solver.gamma},      {"max_iters", c.solver.max_iters}, {"tol", c.solver.tol}};
        }
    } // namespace

    ExperimentConfig config_from_json(const json &j)
    {
        Problems pr;
        ExperimentConfig cfg;
        pr.guard([&] {
            require_known_keys(j,
                               {"version", "geometry", "codebooks", "protocol", "split", "algorithms", "metrics", "fig1",
                                "threads"},
                               "config");
        });
        if (!j.is_object())
            throw ConfigError(pr.list.front());
        if (!j.contains("version"))
            pr.list.push_back("config.version is required");
        else
            pr.guard([&] {
                cfg.version = j.at("version").get<int>();
                if (cfg.version != kConfigVersion)
                    throw ConfigError("config.version " + std::to_string(cfg.version) + " is not supported (expected " +
                                      std::to_string(kConfigVersion) + ")");
            });
        if (j.contains("geometry"))
            pr.guard([&] {
                const auto &g = j.at("geometry");
                require_known_keys(g, {"n_elements", "spacing"}, "geometry");
                read(g, "n_elements", cfg.n_elements);
                read(g, "spacing", cfg.spacing);
            });
        pr.check(cfg.n_elements >= 2, "geometry.n_elements must be >= 2");
        pr.check(cfg.spacing > 0.0, "geometry.spacing must be positive");
        if (j.contains("codebooks"))
            cfg.codebooks = codebooks_from_json(j.at("codebooks"), pr);
        pr.check(cfg.codebooks.sa.n_subarrays >= 1 && cfg.n_elements % std::max(1, cfg.codebooks.sa.n_subarrays) == 0,
                 "codebooks.sa.n_subarrays must divide geometry.n_elements");
        if (j.contains("protocol"))
            pr.guard([&] { cfg.protocol = protocol_from_json(j.at("protocol")); });
        if (j.contains("split"))
            pr.guard([&] { cfg.split = split_from_json(j.at("split")); });
        if (j.contains("algorithms"))
        {
            std::set<Algorithm> seen;
            int i = 0;
            for (const auto &a : j.at("algorithms"))
            {
                cfg.algorithms.push_back(algorithm_from_json(a, i++, pr));
                if (!seen.insert(cfg.algorithms.back().algorithm).second)
                    pr.list.push_back("algorithm '" + to_string(cfg.algorithms.back().algorithm) + "' listed twice");
            }
        }
        pr.check(!cfg.algorithms.empty(), "config.algorithms must list at least one algorithm");
        if (j.contains("metrics"))
            pr.guard([&] {
                const auto &m = j.at("metrics");
                require_known_keys(m, {"threshold_db", "percentile", "report_percentiles", "sweep_alpha"}, "metrics");
                read(m, "threshold_db", cfg.metrics.threshold_db);
                read(m, "percentile", cfg.metrics.percentile);
                read(m, "report_percentiles", cfg.metrics.report_percentiles);
                read(m, "sweep_alpha", cfg.metrics.sweep_alpha);
            });
        pr.check(cfg.metrics.percentile >= 0.0 && cfg.metrics.percentile <= 100.0,
                 "metrics.percentile must lie in [0, 100]");
        for (double p : cfg.metrics.report_percentiles)
            pr.check(p >= 0.0 && p <= 100.0, "metrics.report_percentiles entries must lie in [0, 100]");
        pr.check(std::find(cfg.protocol.alphas.begin(), cfg.protocol.alphas.end(), cfg.metrics.sweep_alpha) !=
                     cfg.protocol.alphas.end(),
                 "metrics.sweep_alpha must be one of protocol.alphas");
        if (j.contains("fig1"))
            cfg.fig1 = fig1_from_json(j.at("fig1"), pr);
        if (j.contains("threads"))
            pr.guard([&] { cfg.threads = j.at("threads").get<int>(); });
        pr.check(cfg.threads >= 1, "config.threads must be >= 1");

        if (!pr.list.empty())
        {
            std::string msg = "invalid configuration:";
            for (const auto &p : pr.list)
                msg += "\n  - " + p;
            throw ConfigError(msg);
        }
        return cfg;
    }

    json config_to_json(const ExperimentConfig &cfg)
    {
        json algs = json::array();
        for (const auto &a : cfg.algorithms)
            algs.push_back(algorithm_to_json(a));
        return {{"version", cfg.version},
                {"geometry", {{"n_elements", cfg.n_elements}, {"spacing", cfg.spacing}}},
                {"codebooks", codebooks_to_json(cfg.codebooks)},
                {"protocol", protocol_to_json(cfg.protocol)},
                {"split", split_to_json(cfg.split)},
                {"algorithms", algs},
                {"metrics",
                 {{"threshold_db", cfg.metrics.threshold_db},
                  {"percentile", cfg.metrics.percentile},
                  {"report_percentiles", cfg.metrics.report_percentiles},
                  {"sweep_alpha", cfg.metrics.sweep_alpha}}},
                {"fig1", fig1_to_json(cfg.fig1)},
                {"threads", cfg.threads}};
    }

    ExperimentConfig load_config(const fs::path &path)
    {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("cannot open config file " + path.string());
        json j;
        try
        {
            j = json::parse(in);
        }
        catch (const json::parse_error &e)
        {
            throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
        }
        return config_from_json(j);
    }

    void override_seeds(ExperimentConfig &cfg, std::uint64_t master)
    {
        cfg.codebooks.pn_seed = derive_seed(master, 1);
        cfg.protocol.channel_seed = derive_seed(master, 2);
        cfg.protocol.noise_seed = derive_seed(master, 3);
        cfg.split.split_seed = derive_seed(master, 4);
        for (auto &a : cfg.algorithms)
            a.train.seed = derive_seed(master, 5);
        cfg.fig1.seed = derive_seed(master, 6);
        cfg.fig1.pn_seed = derive_seed(master, 7);
    }

    std::string config_hash(const ExperimentConfig &cfg)
    {
        json j = config_to_json(cfg);
        j.erase("threads"); // worker count never changes results
        return fnv1a_hex(j.dump());
    }

    // ---------------------------------------------------------------- codebooks and workspace

    Codebooks build_codebooks(const ExperimentConfig &cfg)
    {
        const auto geom = ArrayGeometry::ideal(cfg.n_elements, cfg.spacing);
        const auto &c = cfg.codebooks;
        const auto dir_angles = linspace(c.directional_min_deg, c.directional_max_deg, c.n_directional);
        std::vector<Codebook> families;
        if (c.n_pn > 0)
            families.push_back(pn_codebook(geom, c.n_pn, c.pn_seed));
        if (c.n_sa > 0)
        {
            const auto centers = centered_grid(c.n_sa, c.sa_spacing_deg);
            families.push_back(sa_codebook(geom, c.sa, centers));
        }
        if (c.n_qpd > 0)
        {
            std::vector<QpdParams> q;
            for (double a : centered_grid(c.n_qpd, c.qpd_spacing_deg))
                q.push_back({c.qpd_phi_max, a});
            families.push_back(qpd_codebook(geom, q));
        }
        return {geom, pencil_codebook(geom, dir_angles), make_sensing_pool(families)};
    }

    Workspace make_workspace(const ExperimentConfig &cfg, Codebooks books, SampleSet dataset)
    {
        Workspace ws{std::move(books), std::move(dataset), {}, {}};
        ws.split = validate_and_split(ws.dataset, cfg.split);
        ws.test_powers = directional_powers(ws.books.geom, ws.books.directional, ws.split.test.channels);
        return ws;
    }

    std::string Cell::id() const
    {
        return to_string(spec->algorithm) + "_" + (mix.empty() ? std::string("pencil") : mix) + "_M" + std::to_string(m);
    }

    std::vector<Cell> expand_cells(const ExperimentConfig &cfg, const SensingPool &pool, int n_directional)
    {
        std::vector<Cell> cells;
        for (const auto &a : cfg.algorithms)
        {
            if (a.algorithm == Algorithm::Exhaustive)
            {
                cells.push_back({&a, "", n_directional});
                continue;
            }
            for (const auto &name : a.mixes)
            {
                const MixSpec mix = parse_mix(name);
                const int top = max_measurements(pool, mix);
                std::vector<int> ms = a.m_values;
                if (ms.empty())
                    for (int m = 1; m <= top; ++m)
                        ms.push_back(m);
                for (int m : ms)
                    if (m <= top)
                        cells.push_back({&a, mix.name(), m});
            }
        }
        return cells;
    }

    namespace
    {
        std::vector<int> cell_columns(const Workspace &ws, const Cell &cell)
        {
            return mix_columns(ws.books.pool, parse_mix(cell.mix), cell.m);
        }

        Architecture cell_architecture(const Cell &cell, int n_classes)
        {
            if (cell.spec->algorithm == Algorithm::Mlp)
                return MlpArch{cell.m, cell.spec->hidden, n_classes};
            CnnArch cnn;
            cnn.conv = cell.spec->conv;
            cnn.hidden = cell.spec->hidden;
            cnn.output_dim = n_classes;
            return fit_to_input(cnn, cell.m);
        }

        json provenance_config(const Workspace &ws, const Cell &cell)
        {
            return {{"cell", cell.id()},
                    {"columns", cell_columns(ws, cell)},
                    {"algorithm", algorithm_to_json(*cell.spec)},
                    {"kept_labels", ws.split.kept_labels}};
        }

        template <class F>
        void parallel_for(int n, int threads, F &&f)
        {
            threads = std::clamp(threads, 1, std::max(1, n));
            if (threads == 1)
            {
                for (int i = 0; i < n; ++i)
                    f(i);
                return;
            }
            std::atomic<int> next{0};
            std::exception_ptr failure;
            std::mutex m;
            std::vector<std::thread> pool;
            for (int t = 0; t < threads; ++t)
                pool.emplace_back([&] {
                    try
                    {
                        for (int i = next++; i < n; i = next++)
                            f(i);
                    }
                    catch (...)
                    {
                        std::lock_guard lock(m);
                        if (!failure)
                            failure = std::current_exception();
                    }
                });
            for (auto &t : pool)
                t.join();
            if (failure)
                std::rethrow_exception(failure);
        }
    } // namespace

    TrainResult train_cell(const Workspace &ws, const Cell &cell, const std::string &dataset_hash)
    {
        if (!cell.spec->is_learned())
            throw std::invalid_argument("cell " + cell.id() + " has no trainable model");
        const auto train_set = ws.split.train.with_columns(cell_columns(ws, cell));
        const RMatrix X = transform_features(train_set.features, cell.spec->transform);
        TrainResult res = train(X, train_set.labels, cell_architecture(cell, ws.split.n_kept()), cell.spec->train);
        res.model.transform = cell.spec->transform;
        res.model.provenance.dataset_hash = dataset_hash;
        res.model.provenance.config = provenance_config(ws, cell);
        res.model.provenance.config["train"] = train_config_to_json(cell.spec->train);
        return res;
    }

    std::vector<EvalReport> evaluate_cell(const Workspace &ws, const Cell &cell, const MetricSpec &metrics,
                                          const PredictorModel *model, int threads)
    {
        const auto &test = ws.split.test;
        const auto &kept = ws.split.kept_labels;
        const int n = test.size();
        std::vector<int> predicted(n, 0);
        std::vector<int> failures(n, 0);
        const Algorithm algo = cell.spec->algorithm;

        if (algo == Algorithm::Exhaustive)
        {
            const auto &protocol = ws.dataset.meta.protocol;
            parallel_for(n, threads, [&](int i) {
                const auto &c = test.channels[i];
                const CVector h = channel_vector(ws.books.geom, c);
                const CVector noise = sample_noise(ws.books.geom, protocol, c, test.sample_ids[i]);
                const RVector y = measure_rss(ws.books.directional, h, noise, c.pilot);
                predicted[i] = exhaustive_predict({y.data(), static_cast<std::size_t>(y.size())});
            });
        }
        else
        {
            const auto cols = cell_columns(ws, cell);
            const RMatrix Y = test.with_columns(cols).features;
            if (algo == Algorithm::RssMp || algo == Algorithm::PhaselessL1)
            {
                const Codebook sensing = ws.books.pool.codebook.select(cols);
                const auto dict = build_rss_dictionary(sensing, ws.books.directional,
                                                       algo == Algorithm::RssMp ? NormMode::Power : NormMode::Magnitude);
                parallel_for(n, threads, [&](int i) {
                    const std::span<const double> y(Y.row(i).data(), static_cast<std::size_t>(Y.cols()));
                    if (algo == Algorithm::RssMp)
                    {
                        predicted[i] = rss_mp_predict(dict, y, cell.spec->mp_iters);
                        return;
                    }
                    try
                    {
                        predicted[i] = solve_phaseless_l1(dict, y, cell.spec->l1).selected;
                    }
                    catch (const NonConvergenceError &e)
                    {
                        predicted[i] = e.last_iterate().selected;
                        failures[i] = 1;
                    }
                });
            }
            else
            {
                if (!model)
                    throw std::invalid_argument("cell " + cell.id() + " needs a trained model");
                if (model->input_dim() != cell.m || model->output_dim() != ws.split.n_kept())
                    throw ConfigError("model for " + cell.id() + " does not match the current split");
                const auto dense = predict(*model, transform_features(Y, model->transform));
                for (int i = 0; i < n; ++i)
                    predicted[i] = kept[dense[i]];
            }
        }

        std::vector<int> truth(n);
        for (int i = 0; i < n; ++i)
            truth[i] = kept[test.labels[i]];
        const auto losses = gain_loss_db(ws.test_powers, truth, predicted);

        std::vector<double> pct = metrics.report_percentiles;
        if (std::find(pct.begin(), pct.end(), metrics.percentile) == pct.end())
            pct.push_back(metrics.percentile);
        std::sort(pct.begin(), pct.end());

        std::vector<EvalReport> reports;
        for (double alpha : ws.dataset.meta.protocol.alphas)
        {
            std::vector<SampleRecord> rec;
            for (int i = 0; i < n; ++i)
                if (test.channels[i].alpha == alpha)
                    rec.push_back({test.sample_ids[i], truth[i], predicted[i], losses[i]});
            if (rec.empty())
                continue;
            reports.push_back(make_report(to_string(algo), cell.mix.empty() ? "pencil" : cell.mix, cell.m, alpha,
                                          ws.split.n_kept(), std::move(rec), pct));
        }
        int n_failed = 0;
        for (int f : failures)
            n_failed += f;
        if (n_failed > 0)
            std::cerr << "note: " << cell.id() << ": " << n_failed
                      << " L1 solves hit max_iters; their last iterates were scored\n";
        return reports;
    }

    // ---------------------------------------------------------------- artifacts

    namespace
    {
        std::string read_file(const fs::path &p)
        {
            std::ifstream in(p, std::ios::binary);
            if (!in)
                throw std::runtime_error("cannot read " + p.string());
            std::ostringstream ss;
            ss << in.rdbuf();
            return ss.str();
        }

        void write_file(const fs::path &p, const std::string &bytes)
        {
            fs::create_directories(p.parent_path());
            const fs::path tmp = p.string() + ".tmp";
            {
                std::ofstream out(tmp, std::ios::binary);
                if (!out)
                    throw std::runtime_error("cannot write " + tmp.string());
                out << bytes;
                if (!out)
                    throw std::runtime_error("failed writing " + tmp.string());
            }
            fs::rename(tmp, p);
        }

        std::string require_file(const fs::path &p, const std::string &stage)
        {
            if (!fs::exists(p))
                throw MissingArtifactError(stage, p);
            return read_file(p);
        }

        // Records a stage in the manifest: its outputs with digests and the seeds it consumed.
        void record_stage(const ExperimentConfig &cfg, const fs::path &out_dir, const std::string &stage,
                          const std::vector<fs::path> &outputs, json extra = json::object())
        {
            const fs::path path = out_dir / "manifest.json";
            const std::string hash = config_hash(cfg);
            json m;
            if (fs::exists(path))
            {
                try
                {
                    m = json::parse(read_file(path));
                }
                catch (const json::exception &)
                {
                    m = json::object();
                }
                if (m.value("config_hash", std::string()) != hash)
                    m = json::object();
            }
            m["format_version"] = 1;
            m["config_hash"] = hash;
            m["config"] = config_to_json(cfg);
            m["config"].erase("threads");
            json files = json::object();
            for (const auto &o : outputs)
                files[fs::relative(o, out_dir).generic_string()] = fnv1a_hex(read_file(o));
            json entry{{"outputs", files}};
            for (auto &[k, v] : extra.items())
                entry[k] = v;
            m["stages"][stage] = entry;
            write_file(path, m.dump(2) + "\n");
        }

        struct Paths
        {
            fs::path root;
            fs::path directional() const { return root / "codebooks" / "directional.json"; }
            fs::path pool() const { return root / "codebooks" / "sensing_pool.json"; }
            fs::path dataset_csv() const { return root / "dataset" / "dataset.csv"; }
            fs::path dataset_json() const { return root / "dataset" / "dataset.json"; }
            fs::path model(const Cell &c) const { return root / "models" / (c.id() + ".json"); }
            fs::path history(const Cell &c) const { return root / "models" / (c.id() + ".history.csv"); }
            fs::path reports() const { return root / "eval" / "reports.json"; }
            fs::path metrics() const { return root / "eval" / "metrics.csv"; }
            fs::path records() const { return root / "eval" / "records.csv"; }
            fs::path sweep_json() const { return root / "sweep" / "sweep.json"; }
            fs::path required_csv() const { return root / "sweep" / "required.csv"; }
            fs::path figure(const std::string &which) const { return root / "figures" / (which + ".csv"); }
        };

        Codebooks load_codebooks(const ExperimentConfig &cfg, const Paths &p)
        {
            const auto dir = codebook_from_json(json::parse(require_file(p.directional(), "codebook")));
            const auto pool = codebook_from_json(json::parse(require_file(p.pool(), "codebook")));
            if (dir.n_elements() != cfg.n_elements || pool.n_elements() != cfg.n_elements)
                throw ConfigError("persisted codebooks do not match geometry.n_elements; rerun the 'codebook' stage");
            return {ArrayGeometry::ideal(cfg.n_elements, cfg.spacing), dir, make_sensing_pool({pool})};
        }

        json protocol_key(const ExperimentConfig &cfg, const Codebooks &books)
        {
            return {{"protocol", protocol_to_json(cfg.protocol)},
                    {"sensing_hash", books.pool.codebook.hash()},
                    {"directional_hash", books.directional.hash()}};
        }

        struct LoadedDataset
        {
            SampleSet samples;
            std::string hash;
        };

        LoadedDataset load_dataset(const ExperimentConfig &cfg, const Codebooks &books, const Paths &p)
        {
            const std::string csv = require_file(p.dataset_csv(), "dataset");
            const json side = json::parse(require_file(p.dataset_json(), "dataset"));
            const json key = protocol_key(cfg, books);
            if (side.at("codebooks").at("sensing_hash") != key.at("sensing_hash") ||
                side.at("codebooks").at("directional_hash") != key.at("directional_hash") ||
                side.at("protocol") != key.at("protocol"))
                throw ConfigError("persisted dataset was generated from a different configuration; rerun the "
                                  "'dataset' stage");
            std::istringstream in(csv);
            return {read_dataset(in, side), fnv1a_hex(csv)};
        }

    } // namespace

    // ---------------------------------------------------------------- stages

    void run_codebook_stage(const ExperimentConfig &cfg, const fs::path &out_dir)
    {
        const Paths p{out_dir};
        const Codebooks books = build_codebooks(cfg);
        write_file(p.directional(), codebook_to_json(books.directional).dump() + "\n");
        write_file(p.pool(), codebook_to_json(books.pool.codebook).dump() + "\n");
        std::vector<fs::path> outputs{p.directional(), p.pool()};

        // one representative pattern per family
        std::vector<double> grid;
        for (int i = -899; i <= 899; ++i)
            grid.push_back(i / 10.0);
        auto pattern = [&](const Codebook &cb, int beam, const std::string &name) {
            std::ostringstream ss;
            write_pattern_csv(ss, grid, beam_pattern(cb, beam, grid));
            const fs::path f = out_dir / "patterns" / (name + ".csv");
            write_file(f, ss.str());
            outputs.push_back(f);
        };
        pattern(books.directional, books.directional.n_beams() / 2, "pencil");
        const auto &pool = books.pool;
        if (!pool.pn.empty())
            pattern(pool.codebook, pool.pn.front(), "pn");
        if (!pool.sa.empty())
            pattern(pool.codebook, pool.sa.front(), "sa");
        if (!pool.qpd.empty())
            pattern(pool.codebook, pool.qpd.front(), "qpd");
        record_stage(cfg, out_dir, "codebook", outputs, {{"seeds", {{"pn_seed", cfg.codebooks.pn_seed}}}});
    }

    void run_dataset_stage(const ExperimentConfig &cfg, const fs::path &out_dir)
    {
        const Paths p{out_dir};
        const Codebooks books = load_codebooks(cfg, p);
        bool reuse = false;
        if (fs::exists(p.dataset_csv()) && fs::exists(p.dataset_json()))
        {
            try
            {
                const json side = json::parse(read_file(p.dataset_json()));
                const json key = protocol_key(cfg, books);
                reuse = side.at("codebooks").at("sensing_hash") == key.at("sensing_hash") &&
                        side.at("codebooks").at("directional_hash") == key.at("directional_hash") &&
                        side.at("protocol") == key.at("protocol");
            }
            catch (const json::exception &)
            {
                reuse = false;
            }
        }
        if (reuse)
            std::cerr << "dataset: reusing " << p.dataset_csv().string() << '\n';
        else
        {
            const SampleSet s =
                generate_sim_dataset(books.geom, books.pool.codebook, books.directional, cfg.protocol, cfg.threads);
            std::ostringstream csv;
            write_dataset_csv(csv, s);
            write_file(p.dataset_csv(), csv.str());
            write_file(p.dataset_json(), dataset_sidecar(s).dump(2) + "\n");
        }
        record_stage(cfg, out_dir, "dataset", {p.dataset_csv(), p.dataset_json()},
                     {{"seeds",
                       {{"channel_seed", cfg.protocol.channel_seed}, {"noise_seed", cfg.protocol.noise_seed}}}});
    }

    void run_train_stage(const ExperimentConfig &cfg, const fs::path &out_dir)
    {
        const Paths p{out_dir};
        Codebooks books = load_codebooks(cfg, p);
        auto data = load_dataset(cfg, books, p);
        const Workspace ws = make_workspace(cfg, std::move(books), std::move(data.samples));
        std::vector<Cell> learned;
        for (const auto &c : expand_cells(cfg, ws.books.pool, ws.books.directional.n_beams()))
            if (c.spec->is_learned())
                learned.push_back(c);

        // reuse models whose provenance matches
        std::vector<char> todo(learned.size(), 1);
        for (std::size_t i = 0; i < learned.size(); ++i)
        {
            const auto &c = learned[i];
            if (!fs::exists(p.model(c)) || !fs::exists(p.history(c)))
                continue;
            try
            {
                const json m = json::parse(read_file(p.model(c)));
                json expect = provenance_config(ws, c);
                expect["train"] = train_config_to_json(c.spec->train);
                todo[i] = !(m.at("provenance").at("dataset_hash") == data.hash && m.at("provenance").at("config") == expect);
            }
            catch (const json::exception &)
            {
            }
        }
        parallel_for(static_cast<int>(learned.size()), cfg.threads, [&](int i) {
            if (!todo[i])
                return;
            const auto &c = learned[i];
            TrainResult r = train_cell(ws, c, data.hash);
            std::ostringstream hist;
            write_history_csv(hist, r.history);
            write_file(p.model(c), model_to_json(r.model).dump() + "\n");
            write_file(p.history(c), hist.str());
        });

        std::vector<fs::path> outputs;
        json overhead = json::array();
        const int K = ws.books.directional.n_beams();
        for (const auto &c : learned)
        {
            outputs.push_back(p.model(c));
            outputs.push_back(p.history(c));
        }
        for (const auto &c : expand_cells(cfg, ws.books.pool, K))
        {
            // the training stage sounds both the sensing and the directional codebook
            const bool learned_cell = c.spec->is_learned();
            overhead.push_back({{"cell", c.id()},
                                {"train_measurements", learned_cell ? c.m + K : c.m},
                                {"test_measurements", c.m}});
        }
        json seeds = json::object();
        seeds["split_seed"] = cfg.split.split_seed;
        for (const auto &a : cfg.algorithms)
            if (a.is_learned())
                seeds[to_string(a.algorithm) + "_seed"] = a.train.seed;
        record_stage(cfg, out_dir, "train", outputs,
                     {{"seeds", seeds},
                      {"dataset_hash", data.hash},
                      {"kept_labels", ws.split.n_kept()},
                      {"n_train", ws.split.train.size()},
                      {"n_test", ws.split.test.size()},
                      {"overhead", overhead}});
    }

    void run_eval_stage(const ExperimentConfig &cfg, const fs::path &out_dir)
    {
        const Paths p{out_dir};
        Codebooks books = load_codebooks(cfg, p);
        auto data = load_dataset(cfg, books, p);
        const Workspace ws = make_workspace(cfg, std::move(books), std::move(data.samples));
        const auto cells = expand_cells(cfg, ws.books.pool, ws.books.directional.n_beams());

        json reports = json::array();
        std::ostringstream metrics, records;
        std::vector<SweepPoint> points;
        records << "algorithm,codebook,M,alpha,sample_id,truth,predicted,loss_db\n";
        for (const auto &c : cells)
        {
            std::optional<PredictorModel> model;
            if (c.spec->is_learned())
                model = model_from_json(json::parse(require_file(p.model(c), "train")));
            for (const auto &r : evaluate_cell(ws, c, cfg.metrics, model ? &*model : nullptr, cfg.threads))
            {
                reports.push_back(report_to_json(r));
                for (const auto &[pct, loss] : r.loss_percentiles_db)
                    points.push_back({r.algorithm, r.codebook, r.n_measurements, r.alpha, pct, loss});
                for (const auto &s : r.records)
                    records << r.algorithm << ',' << r.codebook << ',' << r.n_measurements << ','
                            << format_double(r.alpha) << ',' << s.sample_id << ',' << s.truth << ','
                            << s.predicted << ',' << format_double(s.loss_db) << '\n';
            }
        }
        write_sweep_csv(metrics, points);
        write_file(p.reports(), reports.dump(2) + "\n");
        write_file(p.metrics(), metrics.str());
        write_file(p.records(), records.str());
        record_stage(cfg, out_dir, "eval", {p.reports(), p.metrics(), p.records()},
                     {{"dataset_hash", data.hash}, {"seeds", {{"noise_seed", cfg.protocol.noise_seed}}}});
    }

    void run_sweep_stage(const ExperimentConfig &cfg, const fs::path &out_dir)
    {
        const Paths p{out_dir};
        const json reports = json::parse(require_file(p.reports(), "eval"));
        std::istringstream rec(require_file(p.records(), "eval"));
        if (reports.empty())
            throw ConfigError("evaluation produced no reports");
        // a sensing codebook is only worth having when it is smaller than the directional one
        const int K = codebook_from_json(json::parse(require_file(p.directional(), "codebook"))).n_beams();

        // percentiles are recomputed from the per-sample records so any percentile can be requested
        std::map<std::tuple<std::string, std::string, int, double>, std::vector<double>> losses;
        std::vector<std::tuple<std::string, std::string, int, double>> order;
        std::string line;
        std::getline(rec, line);
        while (std::getline(rec, line))
        {
            if (line.empty())
                continue;
            std::vector<std::string> f;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ','))
                f.push_back(cell);
            if (f.size() != 8)
                throw ConfigError("eval records row has " + std::to_string(f.size()) + " fields");
            auto key = std::make_tuple(f[0], f[1], static_cast<int>(parse_double(f[2])), parse_double(f[3]));
            if (!losses.contains(key))
                order.push_back(key);
            losses[key].push_back(parse_double(f[7]));
        }
        std::vector<SweepPoint> points;
        for (const auto &key : order)
            points.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key),
                              cfg.metrics.percentile, percentile(losses[key], cfg.metrics.percentile)});
        const SweepResult s =
            summarize_sweep(points, cfg.metrics.sweep_alpha, cfg.metrics.threshold_db, cfg.metrics.percentile, K);

        std::ostringstream req;
        req << "algorithm,codebook,required_M,threshold_db,percentile,alpha\n";
        for (const auto &r : s.required)
            req << r.algorithm << ',' << r.codebook << ',' << (r.m ? std::to_string(*r.m) : "unmet") << ','
                << format_double(s.threshold_db) << ',' << format_double(s.percentile) << ','
                << format_double(s.alpha) << '\n';
        write_file(p.sweep_json(), sweep_to_json(s).dump(2) + "\n");
        write_file(p.required_csv(), req.str());
        std::cout << req.str();
        record_stage(cfg, out_dir, "sweep", {p.sweep_json(), p.required_csv()},
                     {{"threshold_db", s.threshold_db}, {"percentile", s.percentile}, {"alpha", s.alpha}});
    }

    void run_figure_stage(const ExperimentConfig &cfg, const fs::path &out_dir, const std::string &which)
    {
        static const std::vector<std::string> all{"fig1", "fig6", "fig7", "fig8", "fig9"};
        if (which == "all")
        {
            for (const auto &w : all)
                run_figure_stage(cfg, out_dir, w);
            return;
        }
        if (std::find(all.begin(), all.end(), which) == all.end())
            throw ConfigError("unknown figure '" + which + "' (expected fig1, fig6, fig7, fig8, fig9 or all)");
        const Paths p{out_dir};
        std::ostringstream out;
        json seeds = json::object();
        if (which == "fig1")
        {
            out << "L,codebook,accuracy,median_epsilon\n";
            for (const auto &r : run_sparsity_study(cfg.fig1, cfg.threads))
                out << r.n_paths << ',' << r.codebook << ',' << format_double(r.accuracy) << ','
                    << format_double(r.median_epsilon) << '\n';
            seeds = {{"seed", cfg.fig1.seed}, {"pn_seed", cfg.fig1.pn_seed}};
        }
        else if (which == "fig9")
        {
            const SweepResult s = sweep_from_json(json::parse(require_file(p.sweep_json(), "sweep")));
            out << "algorithm,codebook,required_M\n";
            for (const auto &r : s.required)
                out << r.algorithm << ',' << r.codebook << ',' << (r.m ? std::to_string(*r.m) : "unmet") << '\n';
        }
        else
        {
            const json reports = json::parse(require_file(p.reports(), "eval"));
            auto loss_at = [&](const json &r) {
                for (const auto &e : r.at("loss_percentiles_db"))
                    if (e.at("percentile").get<double>() == cfg.metrics.percentile)
                        return number_or_inf(e.at("loss_db"));
                throw ConfigError("percentile " + format_double(cfg.metrics.percentile) +
                                  " is missing from eval reports; rerun the 'eval' stage");
            };
            if (which == "fig6")
                out << "algorithm,codebook,M,alpha,accuracy\n";
            else if (which == "fig7")
                out << "algorithm,codebook,M,alpha,loss_db\n";
            else
                out << "algorithm,codebook,M,loss_db\n";
            for (const auto &r : reports)
            {
                const auto head = r.at("algorithm").get<std::string>() + "," + r.at("codebook").get<std::string>() +
                                  "," + std::to_string(r.at("M").get<int>());
                const double alpha = r.at("alpha").get<double>();
                if (which == "fig6")
                    out << head << ',' << format_double(alpha) << ',' << format_double(r.at("accuracy").get<double>())
                        << '\n';
                else if (which == "fig7")
                    out << head << ',' << format_double(alpha) << ',' << format_double(loss_at(r)) << '\n';
                else if (alpha == cfg.metrics.sweep_alpha)
                    out << head << ',' << format_double(loss_at(r)) << '\n';
            }
        }
        write_file(p.figure(which), out.str());
        record_stage(cfg, out_dir, "figure_" + which, {p.figure(which)}, {{"seeds", seeds}});
    }

    void run_experiment(const ExperimentConfig &cfg, const fs::path &out_dir)
    {
        run_codebook_stage(cfg, out_dir);
        run_dataset_stage(cfg, out_dir);
        run_train_stage(cfg, out_dir);
        run_eval_stage(cfg, out_dir);
        run_sweep_stage(cfg, out_dir);
        for (const auto &w : {"fig6", "fig7", "fig8", "fig9"})
            run_figure_stage(cfg, out_dir, w);
    }

} // namespace phaseless
