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

#ifndef PHASELESS_CHANNEL_SIM_HPP
#define PHASELESS_CHANNEL_SIM_HPP

#include "phaseless/array_codebook.hpp"

#include <json.hpp>

#include <istream>
#include <limits>
#include <ostream>
#include <vector>

namespace phaseless
{
    // Geometric-decay multipath: path l (1-based) arrives from aoa_deg[l-1] with gain exp(-alpha l).
    struct ChannelParams
    {
        double alpha = 0.0;
        std::vector<double> aoa_deg;
        Complex pilot{1.0, 0.0};

        int n_paths() const { return static_cast<int>(aoa_deg.size()); }
        double path_gain(int l) const; // l is 1-based

        bool operator==(const ChannelParams &) const = default;
    };

    // Throws std::invalid_argument when a path count, alpha or AoA separation rule is broken.
    void validate(const ChannelParams &params, double min_separation_deg = 2.0);

    struct ChannelRealization
    {
        ChannelParams params;
        CVector h;
    };

    // h = sum_l exp(-alpha l) a(phi_l).
    CVector channel_vector(const ArrayGeometry &geom, const ChannelParams &params);
    ChannelRealization realize_channel(const ArrayGeometry &geom, const ChannelParams &params,
                                       double min_separation_deg = 2.0);

    struct MeasurementConfig
    {
        double snr_db = std::numeric_limits<double>::infinity(); // +inf disables noise
        std::uint64_t noise_seed = 0;
        double rss_floor_db = -60.0;
    };

    // Per-element noise variance: exp(-2 alpha) |s|^2 / 10^(snr_db / 10), zero for infinite SNR.
    double noise_variance(const ChannelParams &params, double snr_db);

    // Circularly-symmetric complex Gaussian vector with E|n_i|^2 = variance.
    CVector complex_noise(int n, double variance, Rng &rng);

    // y = |W^H (h s + n)|.
    RVector measure_rss(const Codebook &codebook, const CVector &h, const CVector &noise, Complex pilot);
    RVector measure_rss(const Codebook &codebook, const ChannelRealization &channel, const MeasurementConfig &cfg);

    // Noise-free beam powers |W^H h s|^2, one per column.
    RVector beam_powers(const Codebook &codebook, const CVector &h, Complex pilot = {1.0, 0.0});

    // argmax_i y_i^2 over the directional codebook; ties go to the lowest index.
    // Noise-free unless cfg carries a finite SNR. Throws std::invalid_argument when no beam sees signal.
    int best_beam_label(const Codebook &directional, const ChannelRealization &channel,
                        const MeasurementConfig &cfg = {});

    // Simulation protocol for labeled datasets. For each alpha, n_separations channel draws are each
    // measured under n_noise independent noise realizations.
    struct SimProtocol
    {
        std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
        int n_paths = 3;
        int n_separations = 400;
        int n_noise = 10;
        double aoa_limit_deg = 45.0;     // every path lies in [-limit, limit]
        double max_offset_deg = 30.0;    // secondary paths sit within this offset of the first
        double min_separation_deg = 2.0; // pairwise AoA separation
        double snr_db = 10.0;
        std::uint64_t channel_seed = 1;
        std::uint64_t noise_seed = 2;
        int max_retries = 10000;

        int n_samples() const { return static_cast<int>(alphas.size()) * n_separations * n_noise; }
    };

    nlohmann::json protocol_to_json(const SimProtocol &p);
    SimProtocol protocol_from_json(const nlohmann::json &j); // rejects unknown keys

    // Draws the AoAs of one channel: first path uniform on [-limit, limit], each further path offset
    // by a uniform magnitude in [min_separation, max_offset] with random sign. Out-of-range draws
    // are rejected; after max_retries attempts a NumericalError is thrown.
    std::vector<double> draw_aoas(const SimProtocol &protocol, Rng &rng);

    struct SampleSetMeta
    {
        int n_elements = 0;
        double spacing = 0.5;
        std::string sensing_hash;
        std::string directional_hash;
        int n_directional = 0; // K
        int n_sensing = 0;     // M
        SimProtocol protocol;
    };

    // Labeled RSS dataset: one row of sensing magnitudes per sample, labeled with the best pencil beam.
    struct SampleSet
    {
        RMatrix features;                    // N x M linear RSS
        std::vector<int> labels;             // best directional beam per sample
        std::vector<ChannelParams> channels; // channel behind each sample
        std::vector<int> sample_ids;         // stable id, also the noise stream index
        SampleSetMeta meta;

        int size() const { return static_cast<int>(labels.size()); }
        SampleSet subset(std::span<const int> rows) const;
        SampleSet with_columns(std::span<const int> columns) const;
    };

    // Runs the protocol. Each channel draw uses stream (channel_seed, draw index) and each sample's
    // noise uses stream (noise_seed, sample id), so output does not depend on the thread count.
    SampleSet generate_sim_dataset(const ArrayGeometry &geom, const Codebook &sensing, const Codebook &directional,
                                   const SimProtocol &protocol, int threads = 1);

    // Regenerates the noise vector that generate_sim_dataset used for a sample.
    CVector sample_noise(const ArrayGeometry &geom, const SimProtocol &protocol, const ChannelParams &channel,
                         int sample_id);

    // Label counts indexed by beam (size K).
    std::vector<int> label_histogram(const SampleSet &samples);

    // Pearson correlation of the features of a sample set.
    CorrelationResult feature_correlation(const SampleSet &samples);

    // Noise-free directional beam powers per sample (N x K) for gain-loss evaluation.
    RMatrix directional_powers(const ArrayGeometry &geom, const Codebook &directional,
                               const std::vector<ChannelParams> &channels);

    // CSV: sample_id,alpha,L,phi_1..phi_Lmax,label,m_1..m_M with absent paths left blank.
    void write_dataset_csv(std::ostream &out, const SampleSet &samples);
    nlohmann::json dataset_sidecar(const SampleSet &samples);
    SampleSet read_dataset(std::istream &csv, const nlohmann::json &sidecar);

} // namespace phaseless

#endif
