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

#include "phaseless/ml_predictor.hpp"
#include "phaseless/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace phaseless
{
    // ---------------------------------------------------------------- features

    RMatrix transform_features(const RMatrix &features, const FeatureTransform &t)
    {
        if (t.mode == FeatureMode::LinearRss)
            return features;
        if (!std::isfinite(t.floor_db))
            throw std::invalid_argument("feature floor must be finite");
        const double floor_lin = std::pow(10.0, t.floor_db / 20.0);
        RMatrix out(features.rows(), features.cols());
        for (Eigen::Index i = 0; i < features.rows(); ++i)
        {
            for (Eigen::Index j = 0; j < features.cols(); ++j)
                out(i, j) = 20.0 * std::log10(std::max(features(i, j), floor_lin));
            if (features.cols() > 0)
                out.row(i).array() -= out.row(i).maxCoeff();
        }
        return out;
    }

    // ---------------------------------------------------------------- architecture

    int conv_output_length(int length, int kernel, int stride)
    {
        if (kernel < 1 || stride < 1 || kernel > length)
            throw std::invalid_argument("convolution kernel " + std::to_string(kernel) + " does not fit length " +
                                        std::to_string(length));
        return (length - kernel) / stride + 1;
    }

    int input_dim(const Architecture &arch)
    {
        return std::visit([](const auto &a) { return a.input_dim; }, arch);
    }

    int output_dim(const Architecture &arch)
    {
        return std::visit([](const auto &a) { return a.output_dim; }, arch);
    }

    void validate(const Architecture &arch)
    {
        std::visit(
            [](const auto &a) {
                if (a.input_dim < 1 || a.output_dim < 1)
                    throw std::invalid_argument("input and output widths must be >= 1");
                for (int h : a.hidden)
                    if (h < 1)
                        throw std::invalid_argument("hidden widths must be >= 1");
            },
            arch);
        if (const auto *cnn = std::get_if<CnnArch>(&arch))
        {
            int len = cnn->input_dim;
            for (const auto &c : cnn->conv)
            {
                if (c.filters < 1)
                    throw std::invalid_argument("convolution needs at least one filter");
                len = conv_output_length(len, c.kernel_size, c.stride);
            }
        }
    }

    CnnArch fit_to_input(CnnArch arch, int input_dim)
    {
        arch.input_dim = input_dim;
        int len = input_dim;
        for (auto &c : arch.conv)
        {
            c.kernel_size = std::min(c.kernel_size, len);
            len = conv_output_length(len, c.kernel_size, c.stride);
        }
        return arch;
    }

    // ---------------------------------------------------------------- model

    namespace
    {
        Layer dense(int in, int out, bool relu)
        {
            Layer l;
            l.kind = Layer::Kind::Dense;
            l.weight = RMatrix::Zero(out, in);
            l.bias = RVector::Zero(out);
            l.relu = relu;
            return l;
        }

        std::vector<Layer> build_layers(const Architecture &arch)
        {
            std::vector<Layer> layers;
            int width = input_dim(arch);
            std::vector<int> hidden;
            if (const auto *mlp = std::get_if<MlpArch>(&arch))
                hidden = mlp->hidden;
            else
            {
                const auto &cnn = std::get<CnnArch>(arch);
                hidden = cnn.hidden;
                int channels = 1;
                int len = cnn.input_dim;
                for (const auto &c : cnn.conv)
                {
                    Layer l;
                    l.kind = Layer::Kind::Conv1d;
                    l.in_channels = channels;
                    l.in_length = len;
                    l.kernel = c.kernel_size;
                    l.stride = c.stride;
                    l.out_length = conv_output_length(len, c.kernel_size, c.stride);
                    l.weight = RMatrix::Zero(c.filters, channels * c.kernel_size);
                    l.bias = RVector::Zero(c.filters);
                    l.relu = true;
                    layers.push_back(std::move(l));
                    channels = c.filters;
                    len = layers.back().out_length;
                }
                width = channels * len; // flatten
            }
            for (int h : hidden)
            {
                layers.push_back(dense(width, h, true));
                width = h;
            }
            layers.push_back(dense(width, output_dim(arch), false));
            return layers;
        }
    } // namespace

    PredictorModel::PredictorModel(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)), seed_(seed)
    {
        validate(arch_);
        layers_ = build_layers(arch_);
        // He-uniform weights, zero biases
        Rng rng(seed_);
        for (auto &l : layers_)
        {
            const double limit = std::sqrt(6.0 / static_cast<double>(l.weight.cols()));
            for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
                for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
                    l.weight(i, j) = uniform_real(rng, -limit, limit);
        }
    }

    std::size_t PredictorModel::parameter_count() const
    {
        std::size_t n = 0;
        for (const auto &l : layers_)
            n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    // ---------------------------------------------------------------- forward / backward

    namespace
    {
        RMatrix im2col(const Layer &l, const RMatrix &A)
        {
            const Eigen::Index B = A.rows();
            RMatrix im(B * l.out_length, l.in_channels * l.kernel);
            for (Eigen::Index b = 0; b < B; ++b)
                for (int p = 0; p < l.out_length; ++p)
                    for (int c = 0; c < l.in_channels; ++c)
                        for (int j = 0; j < l.kernel; ++j)
                            im(b * l.out_length + p, c * l.kernel + j) = A(b, c * l.in_length + p * l.stride + j);
            return im;
        }

        RMatrix layer_forward(const Layer &l, const RMatrix &A)
        {
            if (l.kind == Layer::Kind::Dense)
            {
                RMatrix Z = A * l.weight.transpose();
                Z.rowwise() += l.bias.transpose();
                return Z;
            }
            const Eigen::Index B = A.rows();
            RMatrix out = im2col(l, A) * l.weight.transpose();
            out.rowwise() += l.bias.transpose();
            const int F = static_cast<int>(l.weight.rows());
            RMatrix Z(B, F * l.out_length);
            for (Eigen::Index b = 0; b < B; ++b)
                for (int p = 0; p < l.out_length; ++p)
                    for (int f = 0; f < F; ++f)
                        Z(b, f * l.out_length + p) = out(b * l.out_length + p, f);
            return Z;
        }

        struct Trace
        {
            std::vector<RMatrix> inputs; // input to each layer
            std::vector<RMatrix> pre;    // pre-activation of each layer
        };

        RMatrix run_forward(const PredictorModel &model, const RMatrix &X, Trace *trace)
        {
            if (X.cols() != model.input_dim())
                throw std::invalid_argument("feature width " + std::to_string(X.cols()) + " does not match model input " +
                                            std::to_string(model.input_dim()));
            RMatrix a = X;
            for (const auto &l : model.layers())
            {
                RMatrix z = layer_forward(l, a);
                if (trace)
                {
                    trace->inputs.push_back(std::move(a));
                    trace->pre.push_back(z);
                }
                a = l.relu ? RMatrix(z.cwiseMax(0.0)) : z;
            }
            return a;
        }

        // Returns dL/dA for the layer input and fills the parameter gradients.
        RMatrix layer_backward(const Layer &l, const RMatrix &A, const RMatrix &dZ, RMatrix &dW, RVector &db)
        {
            if (l.kind == Layer::Kind::Dense)
            {
                dW = dZ.transpose() * A;
                db = dZ.colwise().sum().transpose();
                return dZ * l.weight;
            }
            const Eigen::Index B = A.rows();
            const int F = static_cast<int>(l.weight.rows());
            RMatrix d_out(B * l.out_length, F);
            for (Eigen::Index b = 0; b < B; ++b)
                for (int p = 0; p < l.out_length; ++p)
                    for (int f = 0; f < F; ++f)
                        d_out(b * l.out_length + p, f) = dZ(b, f * l.out_length + p);
            const RMatrix im = im2col(l, A);
            dW = d_out.transpose() * im;
            db = d_out.colwise().sum().transpose();
            const RMatrix d_im = d_out * l.weight;
            RMatrix dA = RMatrix::Zero(B, A.cols());
            for (Eigen::Index b = 0; b < B; ++b)
                for (int p = 0; p < l.out_length; ++p)
                    for (int c = 0; c < l.in_channels; ++c)
                        for (int j = 0; j < l.kernel; ++j)
                            dA(b, c * l.in_length + p * l.stride + j) += d_im(b * l.out_length + p, c * l.kernel + j);
            return dA;
        }

        // Mean cross-entropy of logits; optionally writes dL/dlogits.
        double cross_entropy(const RMatrix &logits, std::span<const int> labels, RMatrix *d_logits)
        {
            const Eigen::Index B = logits.rows();
            double loss = 0.0;
            if (d_logits)
                d_logits->resize(B, logits.cols());
            for (Eigen::Index b = 0; b < B; ++b)
            {
                const int y = labels[static_cast<std::size_t>(b)];
                if (y < 0 || y >= logits.cols())
                    throw std::out_of_range("label " + std::to_string(y) + " outside [0, K)");
                const double mx = logits.row(b).maxCoeff();
                const RVector e = (logits.row(b).array() - mx).exp().transpose();
                const double s = e.sum();
                loss += -(logits(b, y) - mx - std::log(s));
                if (d_logits)
                {
                    d_logits->row(b) = (e / s).transpose() / static_cast<double>(B);
                    (*d_logits)(b, y) -= 1.0 / static_cast<double>(B);
                }
            }
            return loss / static_cast<double>(B);
        }

        double loss_grads_logits(const PredictorModel &model, const RMatrix &X, std::span<const int> labels,
                                 Gradients *grads, RMatrix *logits_out)
        {
            if (static_cast<Eigen::Index>(labels.size()) != X.rows() || X.rows() == 0)
                throw std::invalid_argument("need one label per row and a non-empty batch");
            Trace trace;
            RMatrix logits = run_forward(model, X, grads ? &trace : nullptr);
            RMatrix d;
            const double loss = cross_entropy(logits, labels, grads ? &d : nullptr);
            if (grads)
            {
                const auto &layers = model.layers();
                const std::size_t n = layers.size();
                grads->weight.assign(n, {});
                grads->bias.assign(n, {});
                for (std::size_t i = n; i-- > 0;)
                {
                    if (layers[i].relu)
                        d = d.cwiseProduct((trace.pre[i].array() > 0.0).cast<double>().matrix());
                    d = layer_backward(layers[i], trace.inputs[i], d, grads->weight[i], grads->bias[i]);
                }
            }
            if (logits_out)
                *logits_out = std::move(logits);
            return loss;
        }
    } // namespace

    RMatrix forward_batch(const PredictorModel &model, const RMatrix &X)
    {
        return run_forward(model, X, nullptr);
    }

    RVector forward(const PredictorModel &model, std::span<const double> row)
    {
        RMatrix X(1, static_cast<Eigen::Index>(row.size()));
        for (std::size_t i = 0; i < row.size(); ++i)
            X(0, static_cast<Eigen::Index>(i)) = row[i];
        return forward_batch(model, X).row(0).transpose();
    }

    RVector softmax(const RVector &scores)
    {
        const RVector e = (scores.array() - scores.maxCoeff()).exp().matrix();
        return e / e.sum();
    }

    std::vector<int> predict(const PredictorModel &model, const RMatrix &X)
    {
        const RMatrix s = forward_batch(model, X);
        std::vector<int> out(static_cast<std::size_t>(s.rows()));
        for (Eigen::Index i = 0; i < s.rows(); ++i)
        {
            int best = 0;
            for (Eigen::Index k = 1; k < s.cols(); ++k)
                if (s(i, k) > s(i, best))
                    best = static_cast<int>(k);
            out[static_cast<std::size_t>(i)] = best;
        }
        return out;
    }

    double loss_and_gradients(const PredictorModel &model, const RMatrix &X, std::span<const int> labels,
                              Gradients *grads)
    {
        return loss_grads_logits(model, X, labels, grads, nullptr);
    }

    // ---------------------------------------------------------------- training

    nlohmann::json train_config_to_json(const TrainConfig &cfg)
    {
        return {{"optimizer",
                 {{"learning_rate", cfg.optimizer.learning_rate},
                  {"decay_rho", cfg.optimizer.decay_rho},
                  {"epsilon_stab", cfg.optimizer.epsilon_stab}}},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"seed", cfg.seed}};
    }

    TrainConfig train_config_from_json(const nlohmann::json &j)
    {
        require_known_keys(j, {"optimizer", "batch_size", "epochs", "seed"}, "train");
        TrainConfig cfg;
        if (j.contains("optimizer"))
        {
            const auto &o = j.at("optimizer");
            require_known_keys(o, {"learning_rate", "decay_rho", "epsilon_stab"}, "train.optimizer");
            cfg.optimizer.learning_rate = o.value("learning_rate", cfg.optimizer.learning_rate);
            cfg.optimizer.decay_rho = o.value("decay_rho", cfg.optimizer.decay_rho);
            cfg.optimizer.epsilon_stab = o.value("epsilon_stab", cfg.optimizer.epsilon_stab);
        }
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.seed = j.value("seed", cfg.seed);
        if (!(cfg.optimizer.learning_rate > 0.0))
            throw ConfigError("train.optimizer.learning_rate must be positive");
        if (!(cfg.optimizer.decay_rho > 0.0 && cfg.optimizer.decay_rho < 1.0))
            throw ConfigError("train.optimizer.decay_rho must lie in (0, 1)");
        if (!(cfg.optimizer.epsilon_stab > 0.0))
            throw ConfigError("train.optimizer.epsilon_stab must be positive");
        if (cfg.batch_size < 1 || cfg.epochs < 0)
            throw ConfigError("train.batch_size must be >= 1 and train.epochs >= 0");
        return cfg;
    }

    TrainResult train(const RMatrix &X, std::span<const int> labels, const Architecture &arch, const TrainConfig &cfg)
    {
        if (!(cfg.optimizer.learning_rate > 0.0) || !(cfg.optimizer.decay_rho > 0.0 && cfg.optimizer.decay_rho < 1.0))
            throw std::invalid_argument("RMSprop needs learning_rate > 0 and 0 < rho < 1");
        if (cfg.batch_size < 1)
            throw std::invalid_argument("batch size must be >= 1");
        if (static_cast<Eigen::Index>(labels.size()) != X.rows() || X.rows() == 0)
            throw std::invalid_argument("training needs one label per row and at least one row");
        const int K = output_dim(arch);
        for (int y : labels)
            if (y < 0 || y >= K)
                throw std::out_of_range("training label " + std::to_string(y) + " outside [0, K)");

        TrainResult res{PredictorModel(arch, cfg.seed), {}};
        PredictorModel &model = res.model;
        model.provenance.config = train_config_to_json(cfg);

        const auto n = static_cast<int>(X.rows());
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (labels[a] != labels[b])
                return labels[a] < labels[b];
            for (Eigen::Index j = 0; j < X.cols(); ++j)
                if (X(a, j) != X(b, j))
                    return X(a, j) < X(b, j);
            return false;
        });

        std::vector<RMatrix> ms_w;
        std::vector<RVector> ms_b;
        for (const auto &l : model.layers())
        {
            ms_w.push_back(RMatrix::Zero(l.weight.rows(), l.weight.cols()));
            ms_b.push_back(RVector::Zero(l.bias.size()));
        }
        const double lr = cfg.optimizer.learning_rate;
        const double rho = cfg.optimizer.decay_rho;
        const double eps = cfg.optimizer.epsilon_stab;

        Gradients g;
        RMatrix logits;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch)
        {
            Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1));
            std::vector<int> perm = order;
            for (int i = n - 1; i > 0; --i)
                std::swap(perm[i], perm[rng() % static_cast<std::uint64_t>(i + 1)]);

            double loss_sum = 0.0;
            int correct = 0;
            for (int start = 0; start < n; start += cfg.batch_size)
            {
                const int bs = std::min(cfg.batch_size, n - start);
                RMatrix xb(bs, X.cols());
                std::vector<int> yb(bs);
                for (int i = 0; i < bs; ++i)
                {
                    xb.row(i) = X.row(perm[start + i]);
                    yb[i] = labels[perm[start + i]];
                }
                const double loss = loss_grads_logits(model, xb, yb, &g, &logits);
                if (!std::isfinite(loss))
                    throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch starting at " +
                                         std::to_string(start) + " (loss " + format_double(loss) + ")");
                loss_sum += loss * bs;
                for (int i = 0; i < bs; ++i)
                {
                    Eigen::Index best = 0;
                    for (Eigen::Index k = 1; k < logits.cols(); ++k)
                        if (logits(i, k) > logits(i, best))
                            best = k;
                    correct += best == yb[i];
                }
                auto &layers = model.layers();
                for (std::size_t li = 0; li < layers.size(); ++li)
                {
                    ms_w[li] = rho * ms_w[li] + (1.0 - rho) * g.weight[li].cwiseAbs2();
                    ms_b[li] = rho * ms_b[li] + (1.0 - rho) * g.bias[li].cwiseAbs2();
                    layers[li].weight.array() -= lr * g.weight[li].array() / (ms_w[li].array().sqrt() + eps);
                    layers[li].bias.array() -= lr * g.bias[li].array() / (ms_b[li].array().sqrt() + eps);
                }
            }
            res.history.push_back({epoch + 1, loss_sum / n, static_cast<double>(correct) / n});
        }
        return res;
    }

    // ---------------------------------------------------------------- gradient check

    GradCheckResult grad_check(const PredictorModel &model, const RMatrix &X, std::span<const int> labels)
    {
        constexpr double step = 1e-4;
        constexpr double floor = 1e-7; // below this both gradients count as zero
        Gradients g;
        loss_and_gradients(model, X, labels, &g);

        PredictorModel probe = model;
        GradCheckResult res;
        auto rel = [&](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}); };
        auto central = [&](double &param) {
            const double keep = param;
            param = keep + step;
            const double up = loss_and_gradients(probe, X, labels, nullptr);
            param = keep - step;
            const double down = loss_and_gradients(probe, X, labels, nullptr);
            param = keep;
            return (up - down) / (2.0 * step);
        };
        for (std::size_t li = 0; li < probe.layers().size(); ++li)
        {
            auto &l = probe.layers()[li];
            double worst = 0.0;
            for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
                for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
                {
                    const double a = g.weight[li](i, j);
                    res.finite = res.finite && std::isfinite(a);
                    worst = std::max(worst, rel(a, central(l.weight(i, j))));
                }
            for (Eigen::Index i = 0; i < l.bias.size(); ++i)
            {
                const double a = g.bias[li](i);
                res.finite = res.finite && std::isfinite(a);
                worst = std::max(worst, rel(a, central(l.bias(i))));
            }
            res.per_layer.push_back(worst);
            res.max_rel_error = std::max(res.max_rel_error, worst);
        }
        return res;
    }

    GradCheckResult grad_check(const Architecture &arch, std::uint64_t seed, int batch, bool zero_input)
    {
        PredictorModel model(arch, seed);
        Rng rng(derive_seed(seed, 0x6772616443ULL));
        // small random biases keep ReLU pre-activations away from exact zero
        for (auto &l : model.layers())
            for (Eigen::Index i = 0; i < l.bias.size(); ++i)
                l.bias(i) = uniform_real(rng, -0.1, 0.1);
        RMatrix X = RMatrix::Zero(batch, model.input_dim());
        std::vector<int> labels(batch);
        for (int b = 0; b < batch; ++b)
        {
            if (!zero_input)
                for (Eigen::Index j = 0; j < X.cols(); ++j)
                    X(b, j) = standard_normal(rng);
            labels[b] = static_cast<int>(rng() % static_cast<std::uint64_t>(model.output_dim()));
        }
        return grad_check(model, X, labels);
    }

    // ---------------------------------------------------------------- persistence

    namespace
    {
        nlohmann::json arch_to_json(const Architecture &arch)
        {
            if (const auto *mlp = std::get_if<MlpArch>(&arch))
                return {{"type", "mlp"}, {"input_dim", mlp->input_dim}, {"hidden", mlp->hidden}, {"output_dim", mlp->output_dim}};
            const auto &cnn = std::get<CnnArch>(arch);
            nlohmann::json conv = nlohmann::json::array();
            for (const auto &c : cnn.conv)
                conv.push_back({{"filters", c.filters}, {"kernel_size", c.kernel_size}, {"stride", c.stride}});
            return {{"type", "cnn"},
                    {"input_dim", cnn.input_dim},
                    {"conv", conv},
                    {"hidden", cnn.hidden},
                    {"output_dim", cnn.output_dim}};
        }

        Architecture arch_from_json(const nlohmann::json &j)
        {
            const auto type = j.at("type").get<std::string>();
            if (type == "mlp")
                return MlpArch{j.at("input_dim").get<int>(), j.at("hidden").get<std::vector<int>>(),
                               j.at("output_dim").get<int>()};
            if (type != "cnn")
                throw ConfigError("unknown architecture type '" + type + "'");
            CnnArch cnn;
            cnn.input_dim = j.at("input_dim").get<int>();
            cnn.conv.clear();
            for (const auto &c : j.at("conv"))
                cnn.conv.push_back({c.at("filters").get<int>(), c.at("kernel_size").get<int>(), c.at("stride").get<int>()});
            cnn.hidden = j.at("hidden").get<std::vector<int>>();
            cnn.output_dim = j.at("output_dim").get<int>();
            return cnn;
        }
    } // namespace

    nlohmann::json model_to_json(const PredictorModel &model)
    {
        using nlohmann::json;
        json tensors = json::array();
        for (const auto &l : model.layers())
        {
            json w = json::array();
            for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
            {
                json row = json::array();
                for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
                    row.push_back(l.weight(i, j));
                w.push_back(std::move(row));
            }
            tensors.push_back({{"weight", std::move(w)}, {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
        }
        return {{"format_version", 1},
                {"arch", arch_to_json(model.arch())},
                {"transform",
                 {{"mode", model.transform.mode == FeatureMode::DbNormalized ? "db_normalized" : "linear_rss"},
                  {"floor_db", model.transform.floor_db}}},
                {"seed", model.seed()},
                {"provenance", {{"dataset_hash", model.provenance.dataset_hash}, {"config", model.provenance.config}}},
                {"tensors", std::move(tensors)}};
    }

    PredictorModel model_from_json(const nlohmann::json &j)
    {
        if (j.at("format_version").get<int>() != 1)
            throw ConfigError("unsupported model format_version " + j.at("format_version").dump());
        PredictorModel model(arch_from_json(j.at("arch")), j.at("seed").get<std::uint64_t>());
        const auto &t = j.at("transform");
        const auto mode = t.at("mode").get<std::string>();
        if (mode != "db_normalized" && mode != "linear_rss")
            throw ConfigError("unknown feature transform '" + mode + "'");
        model.transform.mode = mode == "db_normalized" ? FeatureMode::DbNormalized : FeatureMode::LinearRss;
        model.transform.floor_db = t.at("floor_db").get<double>();
        model.provenance.dataset_hash = j.at("provenance").at("dataset_hash").get<std::string>();
        model.provenance.config = j.at("provenance").at("config");
        const auto &tensors = j.at("tensors");
        if (tensors.size() != model.layers().size())
            throw ConfigError("model JSON has " + std::to_string(tensors.size()) + " tensors, architecture needs " +
                              std::to_string(model.layers().size()));
        for (std::size_t li = 0; li < model.layers().size(); ++li)
        {
            auto &l = model.layers()[li];
            const auto &w = tensors[li].at("weight");
            const auto b = tensors[li].at("bias").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(w.size()) != l.weight.rows() ||
                static_cast<Eigen::Index>(b.size()) != l.bias.size())
                throw ConfigError("tensor shape mismatch in layer " + std::to_string(li));
            for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
            {
                const auto row = w[static_cast<std::size_t>(i)].get<std::vector<double>>();
                if (static_cast<Eigen::Index>(row.size()) != l.weight.cols())
                    throw ConfigError("tensor shape mismatch in layer " + std::to_string(li));
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                    l.weight(i, c) = row[static_cast<std::size_t>(c)];
            }
            for (Eigen::Index i = 0; i < l.bias.size(); ++i)
                l.bias(i) = b[static_cast<std::size_t>(i)];
        }
        return model;
    }

    void write_history_csv(std::ostream &out, const std::vector<EpochRecord> &history)
    {
        out << "epoch,loss,train_acc\n";
        for (const auto &r : history)
            out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.train_acc) << '\n';
    }

} // namespace phaseless
