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

#ifndef PHASELESS_ML_PREDICTOR_HPP
#define PHASELESS_ML_PREDICTOR_HPP

#include "phaseless/common.hpp"

#include <json.hpp>

#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace phaseless
{
    enum class FeatureMode
    {
        LinearRss,
        DbNormalized // 20 log10(max(y, floor)) minus the row maximum
    };

    struct FeatureTransform
    {
        FeatureMode mode = FeatureMode::DbNormalized;
        double floor_db = -60.0; // absolute floor, 10^(floor_db / 20) in linear RSS

        bool operator==(const FeatureTransform &) const = default;
    };

    RMatrix transform_features(const RMatrix &features, const FeatureTransform &t);

    struct MlpArch
    {
        int input_dim = 0;
        std::vector<int> hidden{128, 128};
        int output_dim = 0;

        bool operator==(const MlpArch &) const = default;
    };

    struct ConvSpec
    {
        int filters = 16;
        int kernel_size = 3;
        int stride = 1;

        bool operator==(const ConvSpec &) const = default;
    };

    // 1D convolution stack (ReLU after each layer), flattened into the same MLP head as MlpArch.
    struct CnnArch
    {
        int input_dim = 0;
        std::vector<ConvSpec> conv{{16, 3, 1}, {16, 3, 1}};
        std::vector<int> hidden{128, 128};
        int output_dim = 0;

        bool operator==(const CnnArch &) const = default;
    };

    using Architecture = std::variant<MlpArch, CnnArch>;

    // floor((length - kernel) / stride) + 1; throws if the kernel does not fit.
    int conv_output_length(int length, int kernel, int stride);

    // Throws std::invalid_argument on non-positive widths or a kernel longer than its input.
    void validate(const Architecture &arch);

    // Copy of a CNN whose kernels are shrunk where needed to fit a short input.
    CnnArch fit_to_input(CnnArch arch, int input_dim);

    int input_dim(const Architecture &arch);
    int output_dim(const Architecture &arch);

    // One trainable layer. Convolution activations are laid out channel-major: index c * length + t.
    struct Layer
    {
        enum class Kind
        {
            Dense,
            Conv1d
        };
        Kind kind = Kind::Dense;
        RMatrix weight; // Dense: out x in; Conv1d: filters x (in_channels * kernel)
        RVector bias;
        bool relu = true;
        int in_channels = 1;
        int in_length = 0;
        int kernel = 1;
        int stride = 1;
        int out_length = 1;

        int in_size() const { return kind == Kind::Dense ? static_cast<int>(weight.cols()) : in_channels * in_length; }
        int out_size() const
        {
            return kind == Kind::Dense ? static_cast<int>(weight.rows()) : static_cast<int>(weight.rows()) * out_length;
        }
    };

    struct RmsProp
    {
        double learning_rate = 1e-3;
        double decay_rho = 0.9;
        double epsilon_stab = 1e-7;
    };

    struct TrainConfig
    {
        RmsProp optimizer;
        int batch_size = 64;
        int epochs = 100;
        std::uint64_t seed = 0;
    };

    nlohmann::json train_config_to_json(const TrainConfig &cfg);
    TrainConfig train_config_from_json(const nlohmann::json &j); // rejects unknown keys

    struct Provenance
    {
        std::string dataset_hash;
        nlohmann::json config; // training configuration as recorded at train time
    };

    class PredictorModel
    {
    public:
        PredictorModel(Architecture arch, std::uint64_t seed);

        const Architecture &arch() const { return arch_; }
        std::uint64_t seed() const { return seed_; }
        std::vector<Layer> &layers() { return layers_; }
        const std::vector<Layer> &layers() const { return layers_; }
        int input_dim() const { return phaseless::input_dim(arch_); }
        int output_dim() const { return phaseless::output_dim(arch_); }
        std::size_t parameter_count() const;

        FeatureTransform transform;
        Provenance provenance;

    private:
        Architecture arch_;
        std::uint64_t seed_;
        std::vector<Layer> layers_;
    };

    // Scores for each row of X (N x input_dim); returns N x K.
    RMatrix forward_batch(const PredictorModel &model, const RMatrix &X);
    RVector forward(const PredictorModel &model, std::span<const double> row);

    RVector softmax(const RVector &scores);

    // Row-wise argmax of the scores, lowest index on ties.
    std::vector<int> predict(const PredictorModel &model, const RMatrix &X);

    // Parameter gradients, one entry per layer.
    struct Gradients
    {
        std::vector<RMatrix> weight;
        std::vector<RVector> bias;
    };

    // Mean softmax cross-entropy over the batch; fills grads when non-null.
    double loss_and_gradients(const PredictorModel &model, const RMatrix &X, std::span<const int> labels,
                              Gradients *grads);

    struct EpochRecord
    {
        int epoch = 0;
        double loss = 0.0;
        double train_acc = 0.0;
    };

    struct TrainResult
    {
        PredictorModel model;
        std::vector<EpochRecord> history;
    };

    /**
     * Mini-batch RMSprop on softmax cross-entropy.
     *
     * Rows are first put in a canonical order (label, then features) and every epoch shuffles that
     * order with a stream derived from (cfg.seed, epoch), so the result depends only on the set of
     * training rows and the seeds. Throws NumericalError if the loss turns non-finite.
     */
    TrainResult train(const RMatrix &X, std::span<const int> labels, const Architecture &arch, const TrainConfig &cfg);

    struct GradCheckResult
    {
        double max_rel_error = 0.0;
        std::vector<double> per_layer; // max relative error of each layer's weights and bias
        bool finite = true;
    };

    // Analytic vs. central-difference gradients (step 1e-4) on a given model and batch.
    GradCheckResult grad_check(const PredictorModel &model, const RMatrix &X, std::span<const int> labels);

    // Same on a randomly initialized model and a random batch drawn from seed.
    GradCheckResult grad_check(const Architecture &arch, std::uint64_t seed, int batch = 4, bool zero_input = false);

    nlohmann::json model_to_json(const PredictorModel &model);
    PredictorModel model_from_json(const nlohmann::json &j);

    void write_history_csv(std::ostream &out, const std::vector<EpochRecord> &history);

} // namespace phaseless

#endif
