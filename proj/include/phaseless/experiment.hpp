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

#ifndef PHASELESS_EXPERIMENT_HPP
#define PHASELESS_EXPERIMENT_HPP

#include "phaseless/eval_metrics.hpp"
#include "phaseless/ml_predictor.hpp"
#include "phaseless/sparse_baselines.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace phaseless
{
    inline constexpr int kConfigVersion = 1;

    // A stage found no artifact from the stage it depends on.
    class MissingArtifactError : public std::runtime_error
    {
    public:
        MissingArtifactError(const std::string &stage, const std::filesystem::path &path)
            : std::runtime_error("missing " + path.string() + "; run the '" + stage + "' stage first"), stage_(stage)
        {
        }
        const std::string &stage() const { return stage_; }

    private:
        std::string stage_;
    };

    struct CodebookSpec
    {
        int n_directional = 64;
        double directional_min_deg = -45.0;
        double directional_max_deg = 45.0;
        int n_pn = 64;
        std::uint64_t pn_seed = 7;
        int n_sa = 10;
        double sa_spacing_deg = 9.0;
        SaParams sa;
        int n_qpd = 10;
        double qpd_spacing_deg = 9.0;
        double qpd_phi_max = kPi;
    };

    enum class Algorithm
    {
        Exhaustive,
        RssMp,
        PhaselessL1,
        Mlp,
        Cnn
    };

    std::string to_string(Algorithm a);
    Algorithm algorithm_from_string(const std::string &name);

    struct AlgorithmSpec
    {
        Algorithm algorithm = Algorithm::Exhaustive;
        std::vector<std::string> mixes; // sensing mixes; unused by exhaustive search
        std::vector<int> m_values;      // M grid; values beyond a mix's pool are skipped
        int mp_iters = 3;
        L1Config l1;
        std::vector<int> hidden{128, 128};
        std::vector<ConvSpec> conv{{16, 3, 1}, {16, 3, 1}};
        TrainConfig train;
        FeatureTransform transform;

        bool is_learned() const { return algorithm == Algorithm::Mlp || algorithm == Algorithm::Cnn; }
    };

    struct MetricSpec
    {
        double threshold_db = 3.0;
        double percentile = 90.0;
        std::vector<double> report_percentiles{50.0, 90.0};
        double sweep_alpha = 0.2; // alpha at which required measurements are read off
    };

    struct ExperimentConfig
    {
        int version = kConfigVersion;
        int n_elements = 36;
        double spacing = 0.5;
        CodebookSpec codebooks;
        SimProtocol protocol;
        SplitSpec split;
        std::vector<AlgorithmSpec> algorithms;
        MetricSpec metrics;
        SparsityStudyConfig fig1;
        int threads = 1;
    };

    // Parses and validates a configuration; every problem found is listed in one ConfigError.
    ExperimentConfig config_from_json(const nlohmann::json &j);
    nlohmann::json config_to_json(const ExperimentConfig &cfg);
    ExperimentConfig load_config(const std::filesystem::path &path);

    // Replaces every named seed with a stream derived from one master seed.
    void override_seeds(ExperimentConfig &cfg, std::uint64_t master);

    // Digest of the canonical JSON form of a configuration.
    std::string config_hash(const ExperimentConfig &cfg);

    struct Codebooks
    {
        ArrayGeometry geom;
        Codebook directional;
        SensingPool pool;
    };

    Codebooks build_codebooks(const ExperimentConfig &cfg);

    // Everything the evaluation of one sensing configuration needs.
    struct Workspace
    {
        Codebooks books;
        SampleSet dataset; // features over the whole sensing pool
        Split split;
        RMatrix test_powers; // noise-free directional powers of the test rows
    };

    Workspace make_workspace(const ExperimentConfig &cfg, Codebooks books, SampleSet dataset);

    // One (algorithm, mix, M) grid cell.
    struct Cell
    {
        const AlgorithmSpec *spec = nullptr;
        std::string mix; // empty for exhaustive search
        int m = 0;

        std::string id() const; // e.g. "mlp_1pn+sa_M6"
    };

    std::vector<Cell> expand_cells(const ExperimentConfig &cfg, const SensingPool &pool, int n_directional);

    // Trains the model of a learned cell on the training split.
    TrainResult train_cell(const Workspace &ws, const Cell &cell, const std::string &dataset_hash);

    // Evaluates one cell on the test split, one report per alpha. Learned cells need a model.
    std::vector<EvalReport> evaluate_cell(const Workspace &ws, const Cell &cell, const MetricSpec &metrics,
                                          const PredictorModel *model, int threads = 1);

    // Stage entry points. Each reads upstream artifacts under out_dir and updates out_dir/manifest.json.
    void run_codebook_stage(const ExperimentConfig &cfg, const std::filesystem::path &out_dir);
    void run_dataset_stage(const ExperimentConfig &cfg, const std::filesystem::path &out_dir);
    void run_train_stage(const ExperimentConfig &cfg, const std::filesystem::path &out_dir);
    void run_eval_stage(const ExperimentConfig &cfg, const std::filesystem::path &out_dir);
    void run_sweep_stage(const ExperimentConfig &cfg, const std::filesystem::path &out_dir);
    // which: fig1, fig6, fig7, fig8, fig9 or all.
    void run_figure_stage(const ExperimentConfig &cfg, const std::filesystem::path &out_dir, const std::string &which);

    // All stages in order; persisted datasets and models are reused when they match the configuration.
    void run_experiment(const ExperimentConfig &cfg, const std::filesystem::path &out_dir);

} // namespace phaseless

#endif
