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

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace phaseless
{
    nlohmann::json split_to_json(const SplitSpec &s)
    {
        return {{"train_per_label", s.train_per_label}, {"min_per_label", s.min_per_label}, {"split_seed", s.split_seed}};
    }

    SplitSpec split_from_json(const nlohmann::json &j)
    {
        require_known_keys(j, {"train_per_label", "min_per_label", "split_seed"}, "split");
        SplitSpec s;
        s.train_per_label = j.value("train_per_label", s.train_per_label);
        s.min_per_label = j.value("min_per_label", s.train_per_label);
        s.split_seed = j.value("split_seed", s.split_seed);
        if (s.train_per_label < 1)
            throw ConfigError("split.train_per_label must be >= 1");
        if (s.min_per_label < s.train_per_label)
            throw ConfigError("split.min_per_label must be >= split.train_per_label");
        return s;
    }

    Split validate_and_split(const SampleSet &samples, const SplitSpec &spec)
    {
        if (spec.train_per_label < 1 || spec.min_per_label < spec.train_per_label)
            throw std::invalid_argument("split needs 1 <= train_per_label <= min_per_label");
        std::map<int, std::vector<int>> rows_by_label;
        for (int i = 0; i < samples.size(); ++i)
            rows_by_label[samples.labels[i]].push_back(i);

        Split out;
        std::vector<int> dense(samples.meta.n_directional > 0 ? samples.meta.n_directional : 0, -1);
        std::vector<char> is_train(static_cast<std::size_t>(samples.size()), 0);
        std::vector<char> is_kept(static_cast<std::size_t>(samples.size()), 0);
        for (auto &[label, rows] : rows_by_label)
        {
            if (static_cast<int>(rows.size()) < spec.min_per_label)
                continue;
            if (label >= static_cast<int>(dense.size()))
                dense.resize(static_cast<std::size_t>(label) + 1, -1);
            dense[label] = out.n_kept();
            out.kept_labels.push_back(label);
            Rng rng(derive_seed(spec.split_seed, static_cast<std::uint64_t>(label)));
            std::vector<int> pick = rows;
            for (int i = 0; i < spec.train_per_label; ++i)
            {
                const auto span = static_cast<std::uint64_t>(pick.size() - i);
                std::swap(pick[i], pick[i + static_cast<int>(rng() % span)]);
                is_train[pick[i]] = 1;
            }
            for (int r : rows)
                is_kept[r] = 1;
        }
        if (out.kept_labels.empty())
            throw std::invalid_argument("every label has fewer than " + std::to_string(spec.min_per_label) +
                                        " samples; nothing left to split");

        std::vector<int> train_rows, test_rows;
        for (int i = 0; i < samples.size(); ++i)
        {
            if (!is_kept[i])
                continue;
            (is_train[i] ? train_rows : test_rows).push_back(i);
        }
        out.train = samples.subset(train_rows);
        out.test = samples.subset(test_rows);
        for (auto *set : {&out.train, &out.test})
        {
            for (auto &l : set->labels)
                l = dense[l];
            set->meta.n_directional = out.n_kept();
        }
        return out;
    }

    double accuracy(std::span<const int> truth, std::span<const int> predicted)
    {
        if (truth.size() != predicted.size() || truth.empty())
            throw std::invalid_argument("accuracy needs two label vectors of equal, nonzero length");
        std::size_t hits = 0;
        for (std::size_t i = 0; i < truth.size(); ++i)
            hits += truth[i] == predicted[i];
        return static_cast<double>(hits) / static_cast<double>(truth.size());
    }

    std::vector<double> gain_loss_db(const RMatrix &powers, std::span<const int> truth, std::span<const int> predicted)
    {
        if (truth.size() != predicted.size() || static_cast<Eigen::Index>(truth.size()) != powers.rows())
            throw std::invalid_argument("gain loss needs one truth and one prediction per power row");
        std::vector<double> out(truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i)
        {
            const auto r = static_cast<Eigen::Index>(i);
            if (truth[i] < 0 || truth[i] >= powers.cols() || predicted[i] < 0 || predicted[i] >= powers.cols())
                throw std::out_of_range("beam index outside the directional codebook");
            if (truth[i] == predicted[i])
            {
                out[i] = 0.0;
                continue;
            }
            const double sel = powers(r, predicted[i]);
            out[i] = sel > 0.0 ? 10.0 * std::log10(powers(r, truth[i]) / sel) : std::numeric_limits<double>::infinity();
        }
        return out;
    }

    double percentile(std::vector<double> values, double p)
    {
        if (values.empty())
            throw std::invalid_argument("percentile of an empty sample");
        if (!(p >= 0.0 && p <= 100.0))
            throw std::invalid_argument("percentile must lie in [0, 100]");
        std::sort(values.begin(), values.end());
        const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(lo);
        if (frac == 0.0 || lo + 1 >= values.size())
            return values[lo];
        const double a = values[lo];
        const double b = values[lo + 1];
        if (std::isinf(b))
            return b;
        return a + frac * (b - a);
    }

    EvalReport make_report(std::string algorithm, std::string codebook, int n_measurements, double alpha,
                           int kept_labels, std::vector<SampleRecord> records, std::span<const double> percentiles)
    {
        if (records.empty())
            throw std::invalid_argument("evaluation report needs at least one sample");
        EvalReport r;
        r.algorithm = std::move(algorithm);
        r.codebook = std::move(codebook);
        r.n_measurements = n_measurements;
        r.alpha = alpha;
        r.kept_labels = kept_labels;
        r.n_test = static_cast<int>(records.size());
        std::vector<double> losses;
        std::size_t hits = 0;
        for (const auto &s : records)
        {
            losses.push_back(s.loss_db);
            hits += s.truth == s.predicted;
            r.n_infinite += std::isinf(s.loss_db);
        }
        r.accuracy = static_cast<double>(hits) / static_cast<double>(records.size());
        for (double p : percentiles)
            r.loss_percentiles_db[p] = percentile(losses, p);
        r.records = std::move(records);
        return r;
    }

    nlohmann::json report_to_json(const EvalReport &r, bool with_records)
    {
        nlohmann::json pct = nlohmann::json::array();
        for (const auto &[p, v] : r.loss_percentiles_db)
            pct.push_back({{"percentile", p}, {"loss_db", finite_or_null(v)}});
        nlohmann::json j{{"algorithm", r.algorithm},
                         {"codebook", r.codebook},
                         {"M", r.n_measurements},
                         {"alpha", r.alpha},
                         {"accuracy", r.accuracy},
                         {"loss_percentiles_db", pct},
                         {"n_test", r.n_test},
                         {"kept_labels", r.kept_labels},
                         {"n_infinite", r.n_infinite}};
        if (with_records)
        {
            nlohmann::json rec = nlohmann::json::array();
            for (const auto &s : r.records)
                rec.push_back({s.sample_id, s.truth, s.predicted, finite_or_null(s.loss_db)});
            j["records"] = {{"columns", {"sample_id", "truth", "predicted", "loss_db"}}, {"rows", rec}};
        }
        return j;
    }

    // ---------------------------------------------------------------- required measurements

    std::optional<int> required_measurements(const std::map<int, double> &loss_by_m, double threshold_db)
    {
        if (loss_by_m.empty())
            throw std::invalid_argument("required measurements needs a non-empty M grid");
        for (const auto &[m, loss] : loss_by_m)
            if (loss <= threshold_db)
                return m;
        return std::nullopt;
    }

    SweepResult summarize_sweep(std::vector<SweepPoint> points, double alpha, double threshold_db, double pct,
                                int max_measurements)
    {
        SweepResult s;
        s.threshold_db = threshold_db;
        s.percentile = pct;
        s.alpha = alpha;
        s.max_measurements = max_measurements;
        std::map<std::pair<std::string, std::string>, std::map<int, double>> curves;
        std::vector<std::pair<std::string, std::string>> order;
        for (const auto &p : points)
        {
            if (p.alpha != alpha || p.percentile != pct)
                continue;
            const auto key = std::make_pair(p.algorithm, p.codebook);
            if (!curves.contains(key))
                order.push_back(key);
            curves[key][p.n_measurements] = p.loss_db;
        }
        if (curves.empty())
            throw std::invalid_argument("no sweep points at alpha " + format_double(alpha) + " and percentile " +
                                        format_double(pct));
        std::map<std::string, std::optional<int>> best;
        std::vector<std::string> algorithms;
        for (const auto &key : order)
        {
            auto m = required_measurements(curves[key], threshold_db);
            if (m && *m > max_measurements)
                m.reset();
            s.required.push_back({key.first, key.second, m});
            if (!best.contains(key.first))
                algorithms.push_back(key.first);
            auto &b = best[key.first];
            if (m && (!b || *m < *b))
                b = m;
        }
        // per algorithm, the best of its sensing codebooks
        for (const auto &a : algorithms)
            s.required.push_back({a, "any", best[a]});
        s.points = std::move(points);
        return s;
    }

    nlohmann::json sweep_to_json(const SweepResult &s)
    {
        nlohmann::json req = nlohmann::json::array();
        for (const auto &r : s.required)
            req.push_back({{"algorithm", r.algorithm},
                           {"codebook", r.codebook},
                           {"required_M", r.m ? nlohmann::json(*r.m) : nlohmann::json("unmet")}});
        nlohmann::json pts = nlohmann::json::array();
        for (const auto &p : s.points)
            pts.push_back({{"algorithm", p.algorithm},
                           {"codebook", p.codebook},
                           {"M", p.n_measurements},
                           {"alpha", p.alpha},
                           {"percentile", p.percentile},
                           {"loss_db", finite_or_null(p.loss_db)}});
        return {{"threshold_db", s.threshold_db},
                {"percentile", s.percentile},
                {"alpha", s.alpha},
                {"max_measurements", s.max_measurements},
                {"required", req},
                {"points", pts}};
    }

    SweepResult sweep_from_json(const nlohmann::json &j)
    {
        SweepResult s;
        s.threshold_db = j.at("threshold_db").get<double>();
        s.percentile = j.at("percentile").get<double>();
        s.alpha = j.at("alpha").get<double>();
        s.max_measurements = j.at("max_measurements").get<int>();
        for (const auto &r : j.at("required"))
        {
            RequiredMeasurements rm{r.at("algorithm").get<std::string>(), r.at("codebook").get<std::string>(), {}};
            if (r.at("required_M").is_number_integer())
                rm.m = r.at("required_M").get<int>();
            s.required.push_back(std::move(rm));
        }
        for (const auto &p : j.at("points"))
            s.points.push_back({p.at("algorithm").get<std::string>(), p.at("codebook").get<std::string>(),
                                p.at("M").get<int>(), p.at("alpha").get<double>(), p.at("percentile").get<double>(),
                                number_or_inf(p.at("loss_db"))});
        return s;
    }

    void write_sweep_csv(std::ostream &out, std::span<const SweepPoint> points)
    {
        out << "algorithm,codebook,M,alpha,percentile,loss_db\n";
        for (const auto &p : points)
            out << p.algorithm << ',' << p.codebook << ',' << p.n_measurements << ',' << format_double(p.alpha) << ','
                << format_double(p.percentile) << ',' << format_double(p.loss_db) << '\n';
    }

    std::vector<SweepPoint> read_sweep_csv(std::istream &in)
    {
        std::string line;
        if (!std::getline(in, line) || line != "algorithm,codebook,M,alpha,percentile,loss_db")
            throw ConfigError("metrics CSV has an unexpected header");
        std::vector<SweepPoint> out;
        while (std::getline(in, line))
        {
            if (line.empty())
                continue;
            std::vector<std::string> f;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ','))
                f.push_back(cell);
            if (f.size() != 6)
                throw ConfigError("metrics CSV row has " + std::to_string(f.size()) + " fields");
            out.push_back({f[0], f[1], static_cast<int>(parse_double(f[2])), parse_double(f[3]), parse_double(f[4]),
                           parse_double(f[5])});
        }
        return out;
    }

    // ---------------------------------------------------------------- sensing subsets

    SensingPool make_sensing_pool(const std::vector<Codebook> &families)
    {
        if (families.empty())
            throw std::invalid_argument("sensing pool needs at least one codebook");
        Codebook all = concat(families);
        SensingPool pool{all, {}, {}, {}};
        std::vector<std::pair<double, int>> sa, qpd;
        for (int c = 0; c < all.n_beams(); ++c)
        {
            const auto &m = all.meta(c);
            switch (m.kind)
            {
            case BeamKind::PN:
                pool.pn.push_back(c);
                break;
            case BeamKind::SA:
                sa.emplace_back(m.center_deg, c);
                break;
            case BeamKind::QPD:
                qpd.emplace_back(m.center_deg, c);
                break;
            default:
                break;
            }
        }
        auto center_out = [](std::vector<std::pair<double, int>> &v, std::vector<int> &dst) {
            std::stable_sort(v.begin(), v.end(), [](const auto &a, const auto &b) {
                if (std::abs(a.first) != std::abs(b.first))
                    return std::abs(a.first) < std::abs(b.first);
                return a.first < b.first;
            });
            for (const auto &e : v)
                dst.push_back(e.second);
        };
        center_out(sa, pool.sa);
        center_out(qpd, pool.qpd);
        return pool;
    }

    std::string MixSpec::name() const
    {
        if (n_pn == 0 || family == "pn")
            return family;
        return std::to_string(n_pn) + "pn+" + family;
    }

    MixSpec parse_mix(const std::string &text)
    {
        auto bad = [&] { return ConfigError("unknown sensing mix '" + text + "' (expected pn, sa, qpd or <k>pn+sa|qpd)"); };
        if (text == "pn" || text == "sa" || text == "qpd")
            return {0, text};
        const auto plus = text.find('+');
        if (plus == std::string::npos || plus < 3 || text.substr(plus - 2, 2) != "pn")
            throw bad();
        const std::string count = text.substr(0, plus - 2);
        const std::string family = text.substr(plus + 1);
        if (count.empty() || !std::all_of(count.begin(), count.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
            (family != "sa" && family != "qpd"))
            throw bad();
        const int k = std::stoi(count);
        if (k < 1)
            throw bad();
        return {k, family};
    }

    namespace
    {
        const std::vector<int> &family_columns(const SensingPool &pool, const std::string &family)
        {
            if (family == "pn")
                return pool.pn;
            if (family == "sa")
                return pool.sa;
            if (family == "qpd")
                return pool.qpd;
            throw ConfigError("unknown beam family '" + family + "'");
        }
    } // namespace

    int max_measurements(const SensingPool &pool, const MixSpec &mix)
    {
        const int rest = static_cast<int>(family_columns(pool, mix.family).size());
        if (mix.family == "pn")
            return rest;
        return std::min(mix.n_pn, static_cast<int>(pool.pn.size())) + rest;
    }

    std::vector<int> mix_columns(const SensingPool &pool, const MixSpec &mix, int m)
    {
        if (m < 1)
            throw std::invalid_argument("a sensing codebook needs at least one beam");
        if (mix.n_pn > static_cast<int>(pool.pn.size()))
            throw std::invalid_argument("mix " + mix.name() + " needs more PN beams than the pool holds");
        if (m > max_measurements(pool, mix))
            throw std::invalid_argument("M=" + std::to_string(m) + " exceeds the " +
                                        std::to_string(max_measurements(pool, mix)) + " beams available to mix " +
                                        mix.name());
        const auto &rest = family_columns(pool, mix.family);
        if (mix.family == "pn")
            return {rest.begin(), rest.begin() + m};
        const int n_pn = std::min(mix.n_pn, m);
        std::vector<int> cols(pool.pn.begin(), pool.pn.begin() + n_pn);
        cols.insert(cols.end(), rest.begin(), rest.begin() + (m - n_pn));
        return cols;
    }

    std::vector<Codebook> subset_codebook_sweep(const SensingPool &pool, std::span<const int> m_values,
                                                const MixSpec &mix)
    {
        std::vector<Codebook> out;
        for (int m : m_values)
            out.push_back(pool.codebook.select(mix_columns(pool, mix, m)));
        return out;
    }

} // namespace phaseless
