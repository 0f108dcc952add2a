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

#include "phaseless/eval_metrics.hpp"
#include "phaseless/json_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

using namespace phaseless;

namespace
{
    SampleSet labeled(const std::vector<int> &counts)
    {
        SampleSet s;
        int id = 0;
        for (std::size_t label = 0; label < counts.size(); ++label)
            for (int i = 0; i < counts[label]; ++i)
            {
                s.labels.push_back(static_cast<int>(label));
                s.sample_ids.push_back(id++);
                s.channels.push_back(ChannelParams{0.2, {0.0}});
            }
        s.features = RMatrix(id, 1);
        for (int i = 0; i < id; ++i)
            s.features(i, 0) = i;
        s.meta.n_directional = static_cast<int>(counts.size());
        s.meta.n_sensing = 1;
        return s;
    }

    SensingPool small_pool()
    {
        const auto g = ArrayGeometry::ideal(16);
        const auto c = centered_grid(4, 9.0);
        std::vector<QpdParams> q;
        for (double x : c)
            q.push_back({kPi, x});
        return make_sensing_pool({pn_codebook(g, 6, 1), sa_codebook(g, SaParams{2, 25.0}, c), qpd_codebook(g, q)});
    }
} // namespace

TEST_CASE("split keeps 144 per label for training and the rest for test")
{
    const auto s = labeled({200, 200, 100, 150});
    const auto sp = validate_and_split(s, SplitSpec{});
    CHECK(sp.kept_labels == std::vector<int>{0, 1, 3});
    CHECK(sp.train.size() == 3 * 144);
    CHECK(sp.test.size() == 56 + 56 + 6);
    std::set<int> train_ids(sp.train.sample_ids.begin(), sp.train.sample_ids.end());
    for (int id : sp.test.sample_ids)
        CHECK(train_ids.count(id) == 0);
    for (int l : sp.test.labels)
        CHECK((l >= 0 && l < 3));
    // dense label 2 maps back to beam 3
    for (int i = 0; i < sp.test.size(); ++i)
        if (sp.test.labels[i] == 2)
            CHECK(s.labels[sp.test.sample_ids[i]] == 3);
    CHECK(std::is_sorted(sp.test.sample_ids.begin(), sp.test.sample_ids.end()));

    const auto again = validate_and_split(s, SplitSpec{});
    CHECK(again.train.sample_ids == sp.train.sample_ids);
    const auto other = validate_and_split(s, SplitSpec{144, 144, 4});
    CHECK(other.train.sample_ids != sp.train.sample_ids);

    CHECK_THROWS(validate_and_split(labeled({10, 20}), SplitSpec{}));
    CHECK_THROWS(validate_and_split(s, SplitSpec{150, 144, 3}));

    const auto js = split_from_json(split_to_json(SplitSpec{5, 9, 11}));
    CHECK(js.train_per_label == 5);
    CHECK(js.min_per_label == 9);
    CHECK(js.split_seed == 11);
}

TEST_CASE("accuracy")
{
    CHECK(accuracy(std::vector<int>{1, 2, 3, 4}, std::vector<int>{1, 2, 0, 4}) == 0.75);
    CHECK(accuracy(std::vector<int>{5}, std::vector<int>{5}) == 1.0);
    CHECK_THROWS(accuracy(std::vector<int>{1, 2}, std::vector<int>{1}));
    CHECK_THROWS(accuracy(std::vector<int>{}, std::vector<int>{}));
}

TEST_CASE("gain loss")
{
    RMatrix p(3, 3);
    p << 4.0, 1.0, 0.0, 2.0, 2.0, 1.0, 1.0, 8.0, 0.5;
    const auto loss = gain_loss_db(p, std::vector<int>{0, 1, 1}, std::vector<int>{1, 0, 1});
    CHECK(loss[0] == doctest::Approx(10.0 * std::log10(4.0)));
    CHECK(loss[0] == doctest::Approx(6.0206).epsilon(1e-4));
    CHECK(loss[1] == 0.0);
    CHECK(loss[2] == 0.0);
    const auto inf = gain_loss_db(p.topRows(1), std::vector<int>{0}, std::vector<int>{2});
    CHECK(std::isinf(inf[0]));
    CHECK(inf[0] > 0.0);
    CHECK_THROWS(gain_loss_db(p.topRows(1), std::vector<int>{0}, std::vector<int>{3}));
    CHECK_THROWS(gain_loss_db(p, std::vector<int>{0}, std::vector<int>{1}));
}

TEST_CASE("percentile agrees with a sorted-rank computation")
{
    Rng rng(3);
    for (int n : {1, 2, 5, 17, 100})
    {
        std::vector<double> v(n);
        for (auto &x : v)
            x = uniform_real(rng, -5.0, 5.0);
        std::vector<double> s = v;
        std::sort(s.begin(), s.end());
        for (double p : {0.0, 10.0, 50.0, 90.0, 99.0, 100.0})
        {
            const double rank = p / 100.0 * (n - 1);
            const int lo = static_cast<int>(rank);
            const int hi = std::min(lo + 1, n - 1);
            const double want = s[lo] + (rank - lo) * (s[hi] - s[lo]);
            CHECK(percentile(v, p) == doctest::Approx(want).epsilon(1e-12));
        }
    }
    CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 50.0) == 2.5);
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(percentile({0.0, 1.0, inf}, 90.0) == inf);
    CHECK(percentile({0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, inf}, 50.0) == 5.0);
    CHECK_THROWS(percentile({}, 50.0));
    CHECK_THROWS(percentile({1.0}, 101.0));
}

TEST_CASE("required measurements")
{
    CHECK(required_measurements({{4, 5.0}, {8, 2.0}}, 3.0) == 8);
    CHECK(required_measurements({{4, 5.0}, {8, 2.0}}, 1.0) == std::nullopt);
    CHECK(required_measurements({{4, 5.0}, {8, 2.0}}, 5.0) == 4);
    // first crossing, even if a larger M is worse again
    CHECK(required_measurements({{2, 9.0}, {4, 2.0}, {6, 4.0}}, 3.0) == 4);
    CHECK_THROWS(required_measurements({}, 3.0));

    // monotone in the threshold
    const std::map<int, double> curve{{2, 20.0}, {4, 12.0}, {8, 6.0}, {16, 2.5}, {32, 0.5}};
    int last = 1000;
    for (double thr = 0.0; thr <= 25.0; thr += 0.5)
    {
        const auto m = required_measurements(curve, thr);
        const int v = m ? *m : 1000;
        CHECK(v <= last);
        last = v;
    }
}

TEST_CASE("sweep summary, any rows and serialization")
{
    std::vector<SweepPoint> pts{
        {"mlp", "pn", 4, 0.2, 90, 5.0},   {"mlp", "pn", 8, 0.2, 90, 2.0},    {"mlp", "1pn+sa", 4, 0.2, 90, 2.9},
        {"mlp", "1pn+sa", 6, 0.2, 90, 1.0}, {"mp", "pn", 16, 0.2, 90, 3.5},  {"mp", "pn", 70, 0.2, 90, 1.0},
        {"mlp", "pn", 2, 0.5, 90, 0.0}};
    const auto s = summarize_sweep(pts, 0.2, 3.0, 90.0, 64);
    auto find = [&](const std::string &a, const std::string &c) {
        for (const auto &r : s.required)
            if (r.algorithm == a && r.codebook == c)
                return r.m;
        FAIL("missing row");
        return std::optional<int>{};
    };
    CHECK(find("mlp", "pn") == 8);
    CHECK(find("mlp", "1pn+sa") == 4);
    CHECK(find("mlp", "any") == 4);
    CHECK(find("mp", "pn") == std::nullopt); // 70 > K
    CHECK(find("mp", "any") == std::nullopt);

    const auto back = sweep_from_json(nlohmann::json::parse(sweep_to_json(s).dump()));
    CHECK(back.required.size() == s.required.size());
    CHECK(back.points.size() == s.points.size());
    CHECK(back.max_measurements == 64);

    std::ostringstream out;
    write_sweep_csv(out, pts);
    CHECK(out.str().rfind("algorithm,codebook,M,alpha,percentile,loss_db\n", 0) == 0);
    std::istringstream in(out.str());
    const auto read = read_sweep_csv(in);
    REQUIRE(read.size() == pts.size());
    CHECK(read[2].codebook == "1pn+sa");
    CHECK(read[2].loss_db == 2.9);
}

TEST_CASE("reports")
{
    std::vector<SampleRecord> rec{{0, 1, 1, 0.0}, {1, 2, 3, 4.0}, {2, 2, 2, 0.0},
                                  {3, 0, 5, std::numeric_limits<double>::infinity()}};
    const double pcts[] = {50.0, 90.0};
    const auto r = make_report("mlp", "pn", 6, 0.2, 10, rec, pcts);
    CHECK(r.accuracy == 0.5);
    CHECK(r.n_test == 4);
    CHECK(r.n_infinite == 1);
    CHECK(r.loss_percentiles_db.at(50.0) == 2.0);
    const auto j = report_to_json(r, true);
    CHECK(j.at("records").at("rows").size() == 4);
    CHECK_FALSE(report_to_json(r).contains("records"));
}

TEST_CASE("sensing mixes")
{
    const auto pool = small_pool();
    CHECK(pool.codebook.n_beams() == 14);
    CHECK(pool.pn.size() == 6);
    CHECK(pool.sa.size() == 4);

    const auto mix = parse_mix("1pn+sa");
    CHECK(mix.n_pn == 1);
    CHECK(mix.family == "sa");
    CHECK(mix.name() == "1pn+sa");
    CHECK(parse_mix("qpd").n_pn == 0);
    CHECK(parse_mix("12pn+qpd").n_pn == 12);
    for (const char *bad : {"", "pn+sa", "0pn+sa", "1pn+pn", "xpn+sa", "1pn+", "sa+1pn", "foo"})
        CHECK_THROWS_AS(parse_mix(bad), ConfigError);

    CHECK(max_measurements(pool, mix) == 5);
    CHECK(max_measurements(pool, parse_mix("pn")) == 6);

    // 1 PN + 3 SA: the first PN beam then the SA centers nearest broadside
    const auto cols = mix_columns(pool, mix, 4);
    REQUIRE(cols.size() == 4);
    CHECK(cols[0] == pool.pn[0]);
    const auto &sa_meta = pool.codebook.meta(cols[1]);
    CHECK(sa_meta.kind == BeamKind::SA);
    CHECK(std::abs(sa_meta.center_deg) == doctest::Approx(4.5));
    CHECK(sa_meta.center_deg < 0.0);
    CHECK(pool.codebook.meta(cols[2]).center_deg == doctest::Approx(4.5));

    // nested in M
    for (int m = 1; m < 5; ++m)
    {
        const auto a = mix_columns(pool, mix, m);
        const auto b = mix_columns(pool, mix, m + 1);
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    CHECK_THROWS(mix_columns(pool, mix, 6));
    CHECK_THROWS(mix_columns(pool, mix, 0));

    // the full PN mix is the PN family in index order
    const auto all = mix_columns(pool, parse_mix("pn"), 6);
    CHECK(all == pool.pn);

    const std::vector<int> ms{2, 3};
    const auto books = subset_codebook_sweep(pool, ms, parse_mix("1pn+qpd"));
    REQUIRE(books.size() == 2);
    CHECK(books[1].n_beams() == 3);
    CHECK(books[1].meta(0).kind == BeamKind::PN);
    CHECK(books[1].meta(1).kind == BeamKind::QPD);
}
