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

#include "phaseless/channel_sim.hpp"
#include "phaseless/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace phaseless
{
    double ChannelParams::path_gain(int l) const
    {
        return std::exp(-alpha * l);
    }

    void validate(const ChannelParams &params, double min_separation_deg)
    {
        if (params.n_paths() < 1)
            throw std::invalid_argument("channel needs at least one path");
        if (!(params.alpha >= 0.0) || !std::isfinite(params.alpha))
            throw std::invalid_argument("alpha must be a finite nonnegative number");
        for (double a : params.aoa_deg)
            if (!(std::abs(a) < 90.0))
                throw std::invalid_argument("AoA " + format_double(a) + " outside (-90, 90)");
        for (int i = 0; i < params.n_paths(); ++i)
            for (int j = i + 1; j < params.n_paths(); ++j)
                if (std::abs(params.aoa_deg[i] - params.aoa_deg[j]) < min_separation_deg)
                    throw std::invalid_argument("paths " + std::to_string(i + 1) + " and " + std::to_string(j + 1) +
                                                " are closer than " + format_double(min_separation_deg) + " deg");
    }

    CVector channel_vector(const ArrayGeometry &geom, const ChannelParams &params)
    {
        CVector h = CVector::Zero(geom.n_elements());
        for (int l = 1; l <= params.n_paths(); ++l)
            h += params.path_gain(l) * array_response(geom, params.aoa_deg[l - 1]);
        return h;
    }

    ChannelRealization realize_channel(const ArrayGeometry &geom, const ChannelParams &params,
                                       double min_separation_deg)
    {
        validate(params, min_separation_deg);
        return {params, channel_vector(geom, params)};
    }

    double noise_variance(const ChannelParams &params, double snr_db)
    {
        if (std::isinf(snr_db) && snr_db > 0)
            return 0.0;
        return std::exp(-2.0 * params.alpha) * std::norm(params.pilot) / std::pow(10.0, snr_db / 10.0);
    }

    CVector complex_noise(int n, double variance, Rng &rng)
    {
        CVector out = CVector::Zero(n);
        if (variance == 0.0)
            return out;
        const double s = std::sqrt(variance / 2.0);
        for (int i = 0; i < n; ++i)
        {
            const double re = standard_normal(rng);
            const double im = standard_normal(rng);
            out(i) = Complex(s * re, s * im);
        }
        return out;
    }

    RVector measure_rss(const Codebook &codebook, const CVector &h, const CVector &noise, Complex pilot)
    {
        if (codebook.n_elements() != h.size() || noise.size() != h.size())
            throw std::invalid_argument("codebook rows, channel and noise lengths differ");
        return (codebook.weights().adjoint() * (h * pilot + noise)).cwiseAbs();
    }

    RVector measure_rss(const Codebook &codebook, const ChannelRealization &channel, const MeasurementConfig &cfg)
    {
        Rng rng(derive_seed(cfg.noise_seed, 0));
        const CVector n = complex_noise(static_cast<int>(channel.h.size()),
                                        noise_variance(channel.params, cfg.snr_db), rng);
        return measure_rss(codebook, channel.h, n, channel.params.pilot);
    }

    RVector beam_powers(const Codebook &codebook, const CVector &h, Complex pilot)
    {
        if (codebook.n_elements() != h.size())
            throw std::invalid_argument("codebook rows and channel length differ");
        return (codebook.weights().adjoint() * (h * pilot)).cwiseAbs2();
    }

    int best_beam_label(const Codebook &directional, const ChannelRealization &channel, const MeasurementConfig &cfg)
    {
        RVector p = measure_rss(directional, channel, cfg).cwiseAbs2();
        if (!(p.maxCoeff() > 0.0))
            throw std::invalid_argument("no signal on any directional beam");
        return static_cast<int>(argmax_first({p.data(), static_cast<std::size_t>(p.size())}));
    }

    // ---------------------------------------------------------------- protocol

    nlohmann::json protocol_to_json(const SimProtocol &p)
    {
        return {{"alphas", p.alphas},
                {"n_paths", p.n_paths},
                {"n_separations", p.n_separations},
                {"n_noise", p.n_noise},
                {"aoa_limit_deg", p.aoa_limit_deg},
                {"max_offset_deg", p.max_offset_deg},
                {"min_separation_deg", p.min_separation_deg},
                {"snr_db", finite_or_null(p.snr_db)},
                {"channel_seed", p.channel_seed},
                {"noise_seed", p.noise_seed},
                {"max_retries", p.max_retries}};
    }

    SimProtocol protocol_from_json(const nlohmann::json &j)
    {
        require_known_keys(j,
                           {"alphas", "n_paths", "n_separations", "n_noise", "aoa_limit_deg", "max_offset_deg",
                            "min_separation_deg", "snr_db", "channel_seed", "noise_seed", "max_retries"},
                           "protocol");
        SimProtocol p;
        p.alphas = j.value("alphas", p.alphas);
        p.n_paths = j.value("n_paths", p.n_paths);
        p.n_separations = j.value("n_separations", p.n_separations);
        p.n_noise = j.value("n_noise", p.n_noise);
        p.aoa_limit_deg = j.value("aoa_limit_deg", p.aoa_limit_deg);
        p.max_offset_deg = j.value("max_offset_deg", p.max_offset_deg);
        p.min_separation_deg = j.value("min_separation_deg", p.min_separation_deg);
        if (j.contains("snr_db"))
            p.snr_db = number_or_inf(j.at("snr_db"));
        p.channel_seed = j.value("channel_seed", p.channel_seed);
        p.noise_seed = j.value("noise_seed", p.noise_seed);
        p.max_retries = j.value("max_retries", p.max_retries);

        if (p.alphas.empty())
            throw ConfigError("protocol.alphas must not be empty");
        for (double a : p.alphas)
            if (!(a >= 0.0))
                throw ConfigError("protocol.alphas must be nonnegative");
        if (p.n_paths < 1 || p.n_separations < 1 || p.n_noise < 1 || p.max_retries < 1)
            throw ConfigError("protocol counts must be positive");
        if (!(p.aoa_limit_deg > 0.0 && p.aoa_limit_deg < 90.0))
            throw ConfigError("protocol.aoa_limit_deg must lie in (0, 90)");
        if (!(p.min_separation_deg >= 0.0) || !(p.max_offset_deg >= p.min_separation_deg))
            throw ConfigError("protocol needs 0 <= min_separation_deg <= max_offset_deg");
        return p;
    }

    std::vector<double> draw_aoas(const SimProtocol &protocol, Rng &rng)
    {
        const double lim = protocol.aoa_limit_deg;
        std::vector<double> aoa(protocol.n_paths);
        for (int attempt = 0; attempt < protocol.max_retries; ++attempt)
        {
            aoa[0] = uniform_real(rng, -lim, lim);
            for (int l = 1; l < protocol.n_paths; ++l)
            {
                const double mag = uniform_real(rng, protocol.min_separation_deg, protocol.max_offset_deg);
                const double sign = (rng() >> 63) ? 1.0 : -1.0;
                aoa[l] = aoa[0] + sign * mag;
            }
            bool ok = true;
            for (int i = 0; i < protocol.n_paths && ok; ++i)
            {
                ok = std::abs(aoa[i]) <= lim;
                for (int j = i + 1; j < protocol.n_paths && ok; ++j)
                    ok = std::abs(aoa[i] - aoa[j]) >= protocol.min_separation_deg;
            }
            if (ok)
                return aoa;
        }
        throw NumericalError("could not draw valid AoAs within " + std::to_string(protocol.max_retries) +
                             " attempts");
    }

    // ---------------------------------------------------------------- datasets

    SampleSet SampleSet::subset(std::span<const int> rows) const
    {
        SampleSet out;
        out.meta = meta;
        out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
        {
            const int r = rows[i];
            if (r < 0 || r >= size())
                throw std::out_of_range("sample row out of range");
            out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
            out.labels.push_back(labels[r]);
            out.channels.push_back(channels[r]);
            out.sample_ids.push_back(sample_ids[r]);
        }
        return out;
    }

    SampleSet SampleSet::with_columns(std::span<const int> columns) const
    {
        SampleSet out = *this;
        out.features.resize(features.rows(), static_cast<Eigen::Index>(columns.size()));
        for (std::size_t c = 0; c < columns.size(); ++c)
        {
            if (columns[c] < 0 || columns[c] >= features.cols())
                throw std::out_of_range("feature column out of range");
            out.features.col(static_cast<Eigen::Index>(c)) = features.col(columns[c]);
        }
        out.meta.n_sensing = static_cast<int>(columns.size());
        return out;
    }

    CVector sample_noise(const ArrayGeometry &geom, const SimProtocol &protocol, const ChannelParams &channel,
                         int sample_id)
    {
        Rng rng(derive_seed(protocol.noise_seed, static_cast<std::uint64_t>(sample_id)));
        return complex_noise(geom.n_elements(), noise_variance(channel, protocol.snr_db), rng);
    }

    SampleSet generate_sim_dataset(const ArrayGeometry &geom, const Codebook &sensing, const Codebook &directional,
                                   const SimProtocol &protocol, int threads)
    {
        if (sensing.n_elements() != geom.n_elements() || directional.n_elements() != geom.n_elements())
            throw std::invalid_argument("codebooks do not match the array geometry");
        const int n_draws = static_cast<int>(protocol.alphas.size()) * protocol.n_separations;
        const int n = protocol.n_samples();

        SampleSet out;
        out.features.resize(n, sensing.n_beams());
        out.labels.assign(n, 0);
        out.channels.assign(n, {});
        out.sample_ids.assign(n, 0);
        out.meta = {geom.n_elements(), geom.spacing(), sensing.hash(), directional.hash(),
                    directional.n_beams(),  sensing.n_beams(), protocol};

        auto work = [&](int draw) {
            const int a = draw / protocol.n_separations;
            Rng rng(derive_seed(protocol.channel_seed, static_cast<std::uint64_t>(draw)));
            ChannelParams params;
            params.alpha = protocol.alphas[a];
            params.aoa_deg = draw_aoas(protocol, rng);
            const auto channel = realize_channel(geom, params, protocol.min_separation_deg);
            const int label = best_beam_label(directional, channel);
            for (int k = 0; k < protocol.n_noise; ++k)
            {
                const int id = draw * protocol.n_noise + k;
                const CVector noise = sample_noise(geom, protocol, params, id);
                out.features.row(id) = measure_rss(sensing, channel.h, noise, params.pilot).transpose();
                out.labels[id] = label;
                out.channels[id] = params;
                out.sample_ids[id] = id;
            }
        };

        threads = std::clamp(threads, 1, std::max(1, n_draws));
        if (threads == 1)
        {
            for (int d = 0; d < n_draws; ++d)
                work(d);
            return out;
        }
        std::vector<std::thread> pool;
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                try
                {
                    for (int d = t; d < n_draws; d += threads)
                        work(d);
                }
                catch (...)
                {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            });
        for (auto &th : pool)
            th.join();
        if (failure)
            std::rethrow_exception(failure);
        return out;
    }

    std::vector<int> label_histogram(const SampleSet &samples)
    {
        std::vector<int> hist(samples.meta.n_directional, 0);
        for (int l : samples.labels)
        {
            if (l < 0 || l >= samples.meta.n_directional)
                throw std::out_of_range("label outside the directional codebook");
            ++hist[l];
        }
        return hist;
    }

    CorrelationResult feature_correlation(const SampleSet &samples)
    {
        return feature_correlation(samples.features);
    }

    RMatrix directional_powers(const ArrayGeometry &geom, const Codebook &directional,
                               const std::vector<ChannelParams> &channels)
    {
        RMatrix out(static_cast<Eigen::Index>(channels.size()), directional.n_beams());
        for (std::size_t i = 0; i < channels.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) =
                beam_powers(directional, channel_vector(geom, channels[i]), channels[i].pilot).transpose();
        return out;
    }

    // ---------------------------------------------------------------- persistence

    void write_dataset_csv(std::ostream &out, const SampleSet &samples)
    {
        int l_max = 0;
        for (const auto &c : samples.channels)
            l_max = std::max(l_max, c.n_paths());
        out << "sample_id,alpha,L";
        for (int l = 1; l <= l_max; ++l)
            out << ",phi_" << l;
        out << ",label";
        for (int m = 1; m <= samples.features.cols(); ++m)
            out << ",m_" << m;
        out << '\n';
        for (int i = 0; i < samples.size(); ++i)
        {
            const auto &c = samples.channels[i];
            out << samples.sample_ids[i] << ',' << format_double(c.alpha) << ',' << c.n_paths();
            for (int l = 0; l < l_max; ++l)
            {
                out << ',';
                if (l < c.n_paths())
                    out << format_double(c.aoa_deg[l]);
            }
            out << ',' << samples.labels[i];
            for (Eigen::Index m = 0; m < samples.features.cols(); ++m)
                out << ',' << format_double(samples.features(i, m));
            out << '\n';
        }
    }

    nlohmann::json dataset_sidecar(const SampleSet &samples)
    {
        return {{"format_version", 1},
                {"n_samples", samples.size()},
                {"geometry", {{"n_elements", samples.meta.n_elements}, {"spacing", samples.meta.spacing}}},
                {"codebooks",
                 {{"sensing_hash", samples.meta.sensing_hash},
                  {"directional_hash", samples.meta.directional_hash},
                  {"n_sensing", samples.meta.n_sensing},
                  {"n_directional", samples.meta.n_directional}}},
                {"seeds", {{"channel_seed", samples.meta.protocol.channel_seed},
                           {"noise_seed", samples.meta.protocol.noise_seed}}},
                {"snr_db", finite_or_null(samples.meta.protocol.snr_db)},
                {"protocol", protocol_to_json(samples.meta.protocol)},
                {"label_histogram", label_histogram(samples)}};
    }

    namespace
    {
        std::vector<std::string_view> split_csv(std::string_view line)
        {
            std::vector<std::string_view> out;
            std::size_t start = 0;
            while (true)
            {
                const auto pos = line.find(',', start);
                out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
                if (pos == std::string_view::npos)
                    break;
                start = pos + 1;
            }
            return out;
        }
    } // namespace

    SampleSet read_dataset(std::istream &csv, const nlohmann::json &sidecar)
    {
        SampleSet out;
        out.meta.n_elements = sidecar.at("geometry").at("n_elements").get<int>();
        out.meta.spacing = sidecar.at("geometry").at("spacing").get<double>();
        const auto &cb = sidecar.at("codebooks");
        out.meta.sensing_hash = cb.at("sensing_hash").get<std::string>();
        out.meta.directional_hash = cb.at("directional_hash").get<std::string>();
        out.meta.n_sensing = cb.at("n_sensing").get<int>();
        out.meta.n_directional = cb.at("n_directional").get<int>();
        out.meta.protocol = protocol_from_json(sidecar.at("protocol"));
        const int n = sidecar.at("n_samples").get<int>();

        std::string line;
        if (!std::getline(csv, line))
            throw ConfigError("dataset CSV is empty");
        const auto header = split_csv(line);
        int l_max = 0;
        for (auto h : header)
            if (h.starts_with("phi_"))
                ++l_max;
        const int m = out.meta.n_sensing;
        if (static_cast<int>(header.size()) != 4 + l_max + m)
            throw ConfigError("dataset CSV header does not match the sidecar feature count");

        out.features.resize(n, m);
        int row = 0;
        while (std::getline(csv, line))
        {
            if (line.empty())
                continue;
            if (row >= n)
                throw ConfigError("dataset CSV has more rows than the sidecar declares");
            const auto f = split_csv(line);
            if (f.size() != header.size())
                throw ConfigError("dataset CSV row " + std::to_string(row) + " has the wrong field count");
            ChannelParams c;
            out.sample_ids.push_back(static_cast<int>(parse_double(f[0])));
            c.alpha = parse_double(f[1]);
            const int L = static_cast<int>(parse_double(f[2]));
            for (int l = 0; l < L; ++l)
                c.aoa_deg.push_back(parse_double(f[3 + l]));
            out.channels.push_back(std::move(c));
            out.labels.push_back(static_cast<int>(parse_double(f[3 + l_max])));
            for (int k = 0; k < m; ++k)
                out.features(row, k) = parse_double(f[4 + l_max + k]);
            ++row;
        }
        if (row != n)
            throw ConfigError("dataset CSV has " + std::to_string(row) + " rows, sidecar declares " +
                              std::to_string(n));
        return out;
    }

} // namespace phaseless
