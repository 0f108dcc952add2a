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

#ifndef PHASELESS_EVAL_METRICS_HPP
#define PHASELESS_EVAL_METRICS_HPP

#include "phaseless/channel_sim.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace phaseless
{
    struct SplitSpec
    {
        int train_per_label = 144;
        int min_per_label = 144;
        std::uint64_t split_seed = 3;
    };

    nlohmann::json split_to_json(const SplitSpec &s);
    SplitSpec split_from_json(const nlohmann::json &j);

    // Train/test partition with labels re-indexed densely over the kept beams.
    struct Split
    {
        SampleSet train;
        SampleSet test;
        std::vector<int> kept_labels; // dense index -> original beam index

        int n_kept() const { return static_cast<int>(kept_labels.size()); }
    };

    /**
     * Drops every label with fewer than min_per_label samples, then draws train_per_label training rows
     * per kept label (stream derived from split_seed and the label) and sends the rest to test.
     * Rows keep their dataset order. Throws std::invalid_argument if no label survives.
     */
    Split validate_and_split(const SampleSet &samples, const SplitSpec &spec);

    double accuracy(std::span<const int> truth, std::span<const int> predicted);

    // Per-sample 10 log10(P[truth] / P[predicted]) over noise-free directional powers.
    // A predicted beam with zero power yields +inf.
    std::vector<double> gain_loss_db(const RMatrix &directional_powers, std::span<const int> truth,
                                     std::span<const int> predicted);

    // Percentile p in [0, 100] with linear interpolation between order statistics.
    double percentile(std::vector<double> values, double p);

    struct SampleRecord
    {
        int sample_id = 0;
        int truth = 0;     // original beam index
        int predicted = 0; // original beam index
        double loss_db = 0.0;
    };

    struct EvalReport
    {
        std::string algorithm;
        std::string codebook; // sensing mix, e.g. "1pn+sa"
        int n_measurements = 0;
        double alpha = 0.0;
        double accuracy = 0.0;
        std::map<double, double> loss_percentiles_db; // percentile -> dB
        int n_test = 0;
        int kept_labels = 0;
        int n_infinite = 0; // samples whose selected beam saw no power
        std::vector<SampleRecord> records;
    };

    EvalReport make_report(std::string algorithm, std::string codebook, int n_measurements, double alpha,
                           int kept_labels, std::vector<SampleRecord> records, std::span<const double> percentiles);

    nlohmann::json report_to_json(const EvalReport &r, bool with_records = false);

    // Loss of one (algorithm, codebook, M, alpha) cell at a given percentile.
    struct SweepPoint
    {
        std::string algorithm;
        std::string codebook;
        int n_measurements = 0;
        double alpha = 0.0;
        double percentile = 90.0;
        double loss_db = 0.0;
    };

    struct RequiredMeasurements
    {
        std::string algorithm;
        std::string codebook;
        std::optional<int> m; // empty when unmet
    };

    struct SweepResult
    {
        std::vector<SweepPoint> points;
        std::vector<RequiredMeasurements> required;
        double threshold_db = 3.0;
        double percentile = 90.0;
        double alpha = 0.0;
        int max_measurements = 0; // K; a requirement above it counts as unmet
    };

    // Smallest M whose loss is at most threshold_db, or empty. Throws std::invalid_argument on an empty curve.
    std::optional<int> required_measurements(const std::map<int, double> &loss_by_m, double threshold_db);

    // Groups points at the given alpha by (algorithm, codebook) and applies required_measurements;
    // results above max_measurements are reported unmet. One extra row per algorithm, with codebook
    // "any", holds the smallest requirement over its codebooks.
    SweepResult summarize_sweep(std::vector<SweepPoint> points, double alpha, double threshold_db, double percentile,
                                int max_measurements);

    nlohmann::json sweep_to_json(const SweepResult &s);
    SweepResult sweep_from_json(const nlohmann::json &j);

    // Flat CSV: algorithm,codebook,M,alpha,percentile,loss_db
    void write_sweep_csv(std::ostream &out, std::span<const SweepPoint> points);
    std::vector<SweepPoint> read_sweep_csv(std::istream &in);

    // Candidate sensing beams with the order in which each family is consumed by M-sweeps:
    // PN by index, SA and QPD center-out (ties toward the negative side).
    struct SensingPool
    {
        Codebook codebook;
        std::vector<int> pn;
        std::vector<int> sa;
        std::vector<int> qpd;
    };

    SensingPool make_sensing_pool(const std::vector<Codebook> &families);

    // Sensing mix such as "pn", "sa", "qpd", "1pn+sa" or "2pn+qpd": n_pn leading PN beams, rest from family.
    struct MixSpec
    {
        int n_pn = 0;
        std::string family; // "pn", "sa" or "qpd"

        std::string name() const;
    };

    MixSpec parse_mix(const std::string &text);

    // Largest M the pool supports for a mix.
    int max_measurements(const SensingPool &pool, const MixSpec &mix);

    // Pool columns forming the M-beam codebook of a mix; nested in M. Throws if M exceeds the pool.
    std::vector<int> mix_columns(const SensingPool &pool, const MixSpec &mix, int m);

    std::vector<Codebook> subset_codebook_sweep(const SensingPool &pool, std::span<const int> m_values,
                                                const MixSpec &mix);

} // namespace phaseless

#endif
