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

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace phaseless;

namespace
{
    // Two well-separated Gaussian blobs per class in 4 dimensions.
    void blobs(int per_class, int classes, std::uint64_t seed, RMatrix &X, std::vector<int> &y)
    {
        Rng rng(seed);
        X.resize(per_class * classes, 4);
        y.clear();
        for (int c = 0; c < classes; ++c)
            for (int i = 0; i < per_class; ++i)
            {
                const int r = c * per_class + i;
                for (int j = 0; j < 4; ++j)
                    X(r, j) = (j == c % 4 ? 3.0 : 0.0) + (c >= 4 ? -3.0 : 0.0) * (j == 0) + 0.3 * standard_normal(rng);
                y.push_back(c);
            }
    }
} // namespace

TEST_CASE("dB-normalized features")
{
    RMatrix f(2, 3);
    f << 1.0, 0.1, 0.0, 2.0, 2.0, 0.5;
    const auto t = transform_features(f, FeatureTransform{FeatureMode::DbNormalized, -60.0});
    CHECK(t(0, 0) == doctest::Approx(0.0));
    CHECK(t(0, 1) == doctest::Approx(-20.0));
    CHECK(t(0, 2) == doctest::Approx(-60.0)); // zero RSS clamps to the floor
    CHECK(t(1, 0) == doctest::Approx(0.0));
    CHECK(t(1, 2) == doctest::Approx(20.0 * std::log10(0.25)));
    CHECK(transform_features(f, FeatureTransform{FeatureMode::LinearRss, -60.0}) == f);
    // invariant to a common gain while no entry touches the floor
    const RMatrix g = f.array() + 0.01;
    const auto tg = transform_features(g, FeatureTransform{});
    const auto t2 = transform_features(g * 7.0, FeatureTransform{});
    CHECK((t2 - tg).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("convolution output length agrees with a sliding-window count")
{
    for (int len = 1; len <= 12; ++len)
        for (int k = 1; k <= len; ++k)
            for (int s = 1; s <= 3; ++s)
            {
                int count = 0;
                for (int start = 0; start + k <= len; start += s)
                    ++count;
                CHECK(conv_output_length(len, k, s) == count);
            }
    CHECK_THROWS(conv_output_length(2, 3, 1));
    CHECK_THROWS(conv_output_length(4, 0, 1));
}

TEST_CASE("architecture validation and kernel fitting")
{
    CHECK_THROWS(validate(Architecture{MlpArch{0, {8}, 4}}));
    CHECK_THROWS(validate(Architecture{MlpArch{4, {0}, 4}}));
    CHECK_THROWS(validate(Architecture{CnnArch{2, {{4, 3, 1}}, {8}, 4}}));
    const auto fitted = fit_to_input(CnnArch{2, {{4, 3, 1}, {4, 3, 1}}, {8}, 4}, 2);
    CHECK(fitted.conv[0].kernel_size == 2);
    CHECK(fitted.conv[1].kernel_size == 1);
    CHECK_NOTHROW(validate(Architecture{fitted}));
    const auto wide = fit_to_input(CnnArch{12, {{4, 3, 1}, {4, 3, 1}}, {8}, 4}, 12);
    CHECK(wide.conv[0].kernel_size == 3);
}

TEST_CASE("initialization: zero biases, bounded weights, layer shapes")
{
    PredictorModel m(CnnArch{10, {{4, 3, 1}, {5, 3, 2}}, {7}, 6}, 3);
    REQUIRE(m.layers().size() == 4);
    CHECK(m.layers()[0].out_length == 8);
    CHECK(m.layers()[1].out_length == 3);
    CHECK(m.layers()[2].weight.cols() == 15);
    CHECK(m.layers()[3].weight.rows() == 6);
    CHECK_FALSE(m.layers()[3].relu);
    for (const auto &l : m.layers())
    {
        CHECK(l.bias.isZero());
        const int fan_in = static_cast<int>(l.weight.cols());
        CHECK(l.weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / fan_in));
    }
    std::size_t count = 0;
    for (const auto &l : m.layers())
        count += l.weight.size() + l.bias.size();
    CHECK(m.parameter_count() == count);
}

TEST_CASE("zero weights tie on every class and predict index 0")
{
    PredictorModel m(MlpArch{3, {4}, 5}, 1);
    for (auto &l : m.layers())
    {
        l.weight.setZero();
        l.bias.setZero();
    }
    RMatrix X = RMatrix::Random(6, 3);
    for (int p : predict(m, X))
        CHECK(p == 0);
    const RVector s = softmax(forward(m, std::vector<double>{1.0, 2.0, 3.0}));
    for (int k = 0; k < 5; ++k)
        CHECK(s(k) == doctest::Approx(0.2));
    std::vector<int> labels(6, 2);
    CHECK(loss_and_gradients(m, X, labels, nullptr) == doctest::Approx(std::log(5.0)));
}

TEST_CASE("identity layer passes features through")
{
    PredictorModel m(MlpArch{3, {}, 3}, 1);
    REQUIRE(m.layers().size() == 1);
    m.layers()[0].weight = RMatrix::Identity(3, 3);
    m.layers()[0].bias.setZero();
    const RVector out = forward(m, std::vector<double>{-1.0, 0.5, 2.0});
    CHECK(out(0) == -1.0);
    CHECK(out(2) == 2.0);
    RMatrix X(2, 3);
    X << 0.1, 0.9, 0.3, 5.0, -1.0, 5.0;
    CHECK(predict(m, X) == std::vector<int>{1, 0});
}

TEST_CASE("softmax is a distribution and stable for large scores")
{
    RVector s(4);
    s << 1000.0, 1001.0, -5.0, 0.0;
    const RVector p = softmax(s);
    CHECK(p.sum() == doctest::Approx(1.0));
    CHECK(p.allFinite());
    CHECK(p(1) > p(0));
}

TEST_CASE("gradient checks")
{
    SUBCASE("mlp 8-16-8")
    {
        const auto r = grad_check(MlpArch{8, {16}, 8}, 5);
        CHECK(r.finite);
        CHECK(r.max_rel_error < 1e-4);
        CHECK(r.per_layer.size() == 2);
    }
    SUBCASE("cnn with one convolution")
    {
        const auto r = grad_check(CnnArch{8, {{4, 3, 1}}, {8}, 5}, 6);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("cnn with strided convolutions")
    {
        const auto r = grad_check(CnnArch{11, {{3, 3, 2}, {4, 2, 1}}, {6, 6}, 4}, 7);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("zero input stays finite")
    {
        const auto r = grad_check(MlpArch{6, {8}, 3}, 8, 4, true);
        CHECK(r.finite);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("training separates blobs and overfits a small set")
{
    RMatrix X;
    std::vector<int> y;
    blobs(40, 4, 1, X, y);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.seed = 3;
    const auto res = train(X, y, MlpArch{4, {16}, 4}, cfg);
    const auto p = predict(res.model, X);
    int hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        hit += p[i] == y[i];
    CHECK(hit >= 0.95 * y.size());
    CHECK(res.history.size() == 30);
    CHECK(res.history.back().loss < res.history.front().loss);

    // 32 arbitrary labels on random inputs can be memorized
    Rng rng(2);
    RMatrix Z(32, 6);
    std::vector<int> z;
    for (int i = 0; i < 32; ++i)
    {
        for (int j = 0; j < 6; ++j)
            Z(i, j) = standard_normal(rng);
        z.push_back(static_cast<int>(rng() % 4));
    }
    TrainConfig big;
    big.epochs = 400;
    big.batch_size = 8;
    big.optimizer.learning_rate = 3e-3;
    const auto fit = train(Z, z, MlpArch{6, {64, 64}, 4}, big);
    CHECK(fit.history.back().train_acc == 1.0);
}

TEST_CASE("training is deterministic and ignores the row order")
{
    RMatrix X;
    std::vector<int> y;
    blobs(10, 3, 4, X, y);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 7;
    cfg.seed = 9;
    const Architecture arch = CnnArch{4, {{3, 2, 1}}, {8}, 3};
    const auto a = train(X, y, arch, cfg);
    const auto b = train(X, y, arch, cfg);
    CHECK(model_to_json(a.model).dump() == model_to_json(b.model).dump());

    RMatrix Xr = X.colwise().reverse();
    std::vector<int> yr(y.rbegin(), y.rend());
    const auto c = train(Xr, yr, arch, cfg);
    CHECK(model_to_json(c.model).dump() == model_to_json(a.model).dump());

    cfg.seed = 10;
    CHECK(model_to_json(train(X, y, arch, cfg).model).dump() != model_to_json(a.model).dump());
}

TEST_CASE("training input errors")
{
    RMatrix X = RMatrix::Zero(2, 3);
    CHECK_THROWS(train(X, std::vector<int>{0}, MlpArch{3, {4}, 2}, {}));
    CHECK_THROWS(train(X, std::vector<int>{0, 2}, MlpArch{3, {4}, 2}, {}));
    TrainConfig bad;
    bad.optimizer.learning_rate = 0.0;
    CHECK_THROWS(train(X, std::vector<int>{0, 1}, MlpArch{3, {4}, 2}, bad));

    TrainConfig blow;
    blow.optimizer.learning_rate = 1e300;
    blow.epochs = 3;
    RMatrix W = RMatrix::Constant(2, 3, 1e10);
    CHECK_THROWS_AS(train(W, std::vector<int>{0, 1}, MlpArch{3, {4}, 2}, blow), NumericalError);
}

TEST_CASE("model and config JSON round trips")
{
    PredictorModel m(CnnArch{7, {{3, 3, 1}}, {5}, 4}, 12);
    m.transform = FeatureTransform{FeatureMode::DbNormalized, -50.0};
    m.provenance.dataset_hash = "abc";
    m.provenance.config = {{"k", 1}};
    const auto j = model_to_json(m);
    const auto back = model_from_json(nlohmann::json::parse(j.dump()));
    CHECK(model_to_json(back).dump() == j.dump());
    CHECK(back.transform == m.transform);
    RMatrix X = RMatrix::Random(5, 7);
    CHECK(forward_batch(back, X) == forward_batch(m, X));

    auto broken = j;
    broken["format_version"] = 99;
    CHECK_THROWS(model_from_json(broken));

    TrainConfig cfg;
    cfg.epochs = 17;
    cfg.optimizer.learning_rate = 0.01;
    const auto tc = train_config_from_json(train_config_to_json(cfg));
    CHECK(tc.epochs == 17);
    CHECK(tc.optimizer.learning_rate == 0.01);
    auto tj = train_config_to_json(cfg);
    tj["momentum"] = 0.9;
    CHECK_THROWS(train_config_from_json(tj));

    std::ostringstream h;
    write_history_csv(h, {{1, 0.5, 0.25}});
    CHECK(h.str().rfind("epoch,loss,train_acc\n", 0) == 0);
}

TEST_CASE("batch prediction equals a per-row scan")
{
    PredictorModel m(MlpArch{5, {9}, 6}, 4);
    Rng rng(1);
    RMatrix X(20, 5);
    for (Eigen::Index i = 0; i < X.size(); ++i)
        X.data()[i] = standard_normal(rng);
    const auto p = predict(m, X);
    for (int i = 0; i < 20; ++i)
    {
        const RVector s = forward(m, std::vector<double>(X.row(i).data(), X.row(i).data() + 5));
        int best = 0;
        for (int k = 1; k < 6; ++k)
            if (s(k) > s(best))
                best = k;
        CHECK(p[i] == best);
    }
}
