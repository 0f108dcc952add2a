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

#ifndef PHASELESS_ARRAY_CODEBOOK_HPP
#define PHASELESS_ARRAY_CODEBOOK_HPP

#include "phaseless/common.hpp"

#include <json.hpp>

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace phaseless
{
    // Uniform linear receive array.
    // - Element n (0-based) sits at n * spacing wavelengths from element 0.
    // - The impairment vector holds one complex mismatch coefficient per element; all ones is ideal.
    class ArrayGeometry
    {
    public:
        ArrayGeometry(int n_elements, double spacing, CVector impairment);

        static ArrayGeometry ideal(int n_elements, double spacing = 0.5);

        int n_elements() const { return n_elements_; }
        double spacing() const { return spacing_; }
        const CVector &impairment() const { return impairment_; }
        bool is_ideal() const;

        // Same element count and spacing with the impairment reset to all ones.
        ArrayGeometry without_impairment() const { return ideal(n_elements_, spacing_); }

    private:
        int n_elements_;
        double spacing_;
        CVector impairment_;
    };

    // Receive array response at azimuth angle_deg, [a(phi)]_n = a_n exp(j 2 pi n sin(phi) d).
    // Throws std::domain_error for |angle_deg| >= 90.
    CVector array_response(const ArrayGeometry &geom, double angle_deg);

    enum class BeamKind
    {
        Pencil,
        PN,
        SA,
        QPD,
        Mixed
    };

    std::string to_string(BeamKind kind);
    BeamKind beam_kind_from_string(const std::string &name);

    // Provenance of one codebook column.
    struct BeamMeta
    {
        BeamKind kind = BeamKind::Pencil;
        double center_deg = 0.0;           // steering angle (pencil, QPD) or finger-group center (SA); unused for PN
        std::vector<double> finger_deg;    // SA only: steering angle of each sub-array
        double phi_max = 0.0;              // QPD only
        int n_subarrays = 0;               // SA only
        double finger_separation_deg = 0.; // SA only
        std::uint64_t seed = 0;            // PN only
        int seed_index = 0;                // PN only: column index within the generated PN codebook

        bool operator==(const BeamMeta &) const = default;
    };

    // Phase-only beamforming codebook: one unit-modulus AWV per column.
    // Element phases (radians) are stored and the weights derived from them, so
    // quarter-turn phases give exactly {1, j, -1, -j}.
    class Codebook
    {
    public:
        Codebook(BeamKind kind, double spacing, Eigen::MatrixXd phases, std::vector<BeamMeta> meta);

        BeamKind kind() const { return kind_; }
        double spacing() const { return spacing_; }
        int n_elements() const { return static_cast<int>(weights_.rows()); }
        int n_beams() const { return static_cast<int>(weights_.cols()); }
        const CMatrix &weights() const { return weights_; }
        const Eigen::MatrixXd &phases() const { return phases_; }
        const std::vector<BeamMeta> &meta() const { return meta_; }
        const BeamMeta &meta(int beam) const { return meta_.at(beam); }

        // Codebook built from a subset of columns, in the given order.
        Codebook select(std::span<const int> columns) const;

        // Stable digest of the JSON serialization.
        std::string hash() const;

    private:
        BeamKind kind_;
        double spacing_;
        Eigen::MatrixXd phases_;
        CMatrix weights_;
        std::vector<BeamMeta> meta_;
    };

    // Column concatenation; the result is Mixed unless all inputs share one kind.
    Codebook concat(const std::vector<Codebook> &parts);

    struct QpdParams
    {
        double phi_max = kPi;
        double steer_angle_deg = 0.0;
    };

    struct SaParams
    {
        int n_subarrays = 3;
        double finger_separation_deg = 25.0;
    };

    // n_beams angles evenly spaced over [lo_deg, hi_deg], endpoints included.
    std::vector<double> linspace(double lo_deg, double hi_deg, int n);

    // count angles separated by spacing_deg and centered on 0.
    std::vector<double> centered_grid(int count, double spacing_deg);

    Codebook pencil_codebook(const ArrayGeometry &geom, std::span<const double> angles_deg);
    Codebook pn_codebook(const ArrayGeometry &geom, int n_beams, std::uint64_t seed);
    Codebook sa_codebook(const ArrayGeometry &geom, const SaParams &params, std::span<const double> centers_deg);
    Codebook qpd_codebook(const ArrayGeometry &geom, std::span<const QpdParams> beams);

    // Quadratic widening phase of element n (1-based) in an N-element array.
    double qpd_phase(int n, int n_elements, double phi_max);

    // Gain in dB, 20 log10 |w^H a(phi)|, of one beam over an angle grid.
    // The ideal array is assumed unless an impairment vector is supplied.
    RVector beam_pattern(const Codebook &codebook, int beam, std::span<const double> grid_deg,
                         const std::optional<CVector> &impairment = std::nullopt);

    struct CorrelationResult
    {
        RMatrix corr;            // M x M Pearson correlation
        int undefined_count = 0; // entries involving a constant feature, reported as 0
    };

    // Pearson correlation between the columns of an N x M feature matrix (N >= 2).
    CorrelationResult feature_correlation(const RMatrix &features);

    nlohmann::json codebook_to_json(const Codebook &codebook);
    Codebook codebook_from_json(const nlohmann::json &j);

    void write_pattern_csv(std::ostream &out, std::span<const double> grid_deg, const RVector &gain_db);

} // namespace phaseless

#endif
