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

#include "phaseless/array_codebook.hpp"

#include <cmath>

namespace phaseless
{
    namespace
    {
        constexpr double kUnitTol = 1e-12;

        void check_angle(double angle_deg)
        {
            if (!(std::abs(angle_deg) < 90.0))
                throw std::domain_error("angle must lie strictly inside (-90, 90) degrees, got " +
                                        format_double(angle_deg));
        }

        // Phase of each element for a beam steered to angle_deg, wrapped to [0, 2pi).
        std::vector<double> steering_phases(int n_elements, double spacing, double angle_deg)
        {
            check_angle(angle_deg);
            const double k = 2.0 * kPi * std::sin(deg_to_rad(angle_deg)) * spacing;
            std::vector<double> out(n_elements);
            for (int n = 0; n < n_elements; ++n)
            {
                double p = std::fmod(k * n, 2.0 * kPi);
                if (p < 0.0)
                    p += 2.0 * kPi;
                out[n] = p;
            }
            return out;
        }

        // Unit phasor; exact for quarter turns so 2-bit phases map onto {1, j, -1, -j}.
        Complex phasor(double phase)
        {
            static const Complex quarter[4] = {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}};
            const double q = std::round(phase / (kPi / 2.0));
            if (q * (kPi / 2.0) == phase)
            {
                long qi = static_cast<long>(q) % 4;
                if (qi < 0)
                    qi += 4;
                return quarter[qi];
            }
            return std::polar(1.0, phase);
        }

        Codebook from_phases(BeamKind kind, double spacing, int n_elements,
                             const std::vector<std::vector<double>> &phases, std::vector<BeamMeta> meta)
        {
            Eigen::MatrixXd p(n_elements, static_cast<Eigen::Index>(phases.size()));
            for (std::size_t b = 0; b < phases.size(); ++b)
            {
                if (static_cast<int>(phases[b].size()) != n_elements)
                    throw std::invalid_argument("beam phase vector length does not match element count");
                for (int n = 0; n < n_elements; ++n)
                    p(n, static_cast<Eigen::Index>(b)) = phases[b][n];
            }
            return Codebook(kind, spacing, std::move(p), std::move(meta));
        }
    } // namespace

    // ---------------------------------------------------------------- geometry

    ArrayGeometry::ArrayGeometry(int n_elements, double spacing, CVector impairment)
        : n_elements_(n_elements), spacing_(spacing), impairment_(std::move(impairment))
    {
        if (n_elements_ < 2)
            throw std::invalid_argument("array needs at least 2 elements");
        if (!(spacing_ > 0.0) || !std::isfinite(spacing_))
            throw std::invalid_argument("element spacing must be positive");
        if (impairment_.size() != n_elements_)
            throw std::invalid_argument("impairment vector must have one entry per element");
    }

    ArrayGeometry ArrayGeometry::ideal(int n_elements, double spacing)
    {
        return ArrayGeometry(n_elements, spacing, CVector::Ones(std::max(n_elements, 0)));
    }

    bool ArrayGeometry::is_ideal() const
    {
        return (impairment_.array() == Complex(1.0, 0.0)).all();
    }

    CVector array_response(const ArrayGeometry &geom, double angle_deg)
    {
        check_angle(angle_deg);
        const double k = 2.0 * kPi * std::sin(deg_to_rad(angle_deg)) * geom.spacing();
        CVector a(geom.n_elements());
        for (int n = 0; n < geom.n_elements(); ++n)
            a(n) = geom.impairment()(n) * std::polar(1.0, k * n);
        return a;
    }

    // ---------------------------------------------------------------- kinds

    std::string to_string(BeamKind kind)
    {
        switch (kind)
        {
        case BeamKind::Pencil:
            return "pencil";
        case BeamKind::PN:
            return "pn";
        case BeamKind::SA:
            return "sa";
        case BeamKind::QPD:
            return "qpd";
        case BeamKind::Mixed:
            return "mixed";
        }
        return "unknown";
    }

    BeamKind beam_kind_from_string(const std::string &name)
    {
        for (auto k : {BeamKind::Pencil, BeamKind::PN, BeamKind::SA, BeamKind::QPD, BeamKind::Mixed})
            if (to_string(k) == name)
                return k;
        throw std::invalid_argument("unknown beam kind '" + name + "'");
    }

    // ---------------------------------------------------------------- codebook

    Codebook::Codebook(BeamKind kind, double spacing, Eigen::MatrixXd phases, std::vector<BeamMeta> meta)
        : kind_(kind), spacing_(spacing), phases_(std::move(phases)), meta_(std::move(meta))
    {
        if (!phases_.allFinite())
            throw std::invalid_argument("codebook phases must be finite");
        weights_.resize(phases_.rows(), phases_.cols());
        for (Eigen::Index b = 0; b < phases_.cols(); ++b)
            for (Eigen::Index n = 0; n < phases_.rows(); ++n)
                weights_(n, b) = phasor(phases_(n, b));
        if (weights_.cols() < 1)
            throw std::invalid_argument("codebook needs at least one beam");
        if (static_cast<Eigen::Index>(meta_.size()) != weights_.cols())
            throw std::invalid_argument("codebook needs one metadata record per beam");
        if (((weights_.array().abs() - 1.0).abs() > kUnitTol).any())
            throw std::invalid_argument("codebook weights must be unit modulus");
    }

    Codebook Codebook::select(std::span<const int> columns) const
    {
        Eigen::MatrixXd p(phases_.rows(), static_cast<Eigen::Index>(columns.size()));
        std::vector<BeamMeta> meta;
        meta.reserve(columns.size());
        for (std::size_t i = 0; i < columns.size(); ++i)
        {
            const int c = columns[i];
            if (c < 0 || c >= n_beams())
                throw std::out_of_range("codebook column " + std::to_string(c) + " out of range");
            p.col(static_cast<Eigen::Index>(i)) = phases_.col(c);
            meta.push_back(meta_[c]);
        }
        BeamKind kind = meta.empty() ? kind_ : meta.front().kind;
        for (const auto &m : meta)
            if (m.kind != kind)
                kind = BeamKind::Mixed;
        return Codebook(kind, spacing_, std::move(p), std::move(meta));
    }

    std::string Codebook::hash() const
    {
        return fnv1a_hex(codebook_to_json(*this).dump());
    }

    Codebook concat(const std::vector<Codebook> &parts)
    {
        if (parts.empty())
            throw std::invalid_argument("nothing to concatenate");
        const auto rows = parts.front().n_elements();
        Eigen::Index cols = 0;
        for (const auto &p : parts)
        {
            if (p.n_elements() != rows || p.spacing() != parts.front().spacing())
                throw std::invalid_argument("concatenated codebooks must share the array geometry");
            cols += p.n_beams();
        }
        Eigen::MatrixXd w(rows, cols);
        std::vector<BeamMeta> meta;
        BeamKind kind = parts.front().kind();
        Eigen::Index at = 0;
        for (const auto &p : parts)
        {
            w.middleCols(at, p.n_beams()) = p.phases();
            at += p.n_beams();
            meta.insert(meta.end(), p.meta().begin(), p.meta().end());
            if (p.kind() != kind)
                kind = BeamKind::Mixed;
        }
        return Codebook(kind, parts.front().spacing(), std::move(w), std::move(meta));
    }

    // ---------------------------------------------------------------- generators

    std::vector<double> linspace(double lo_deg, double hi_deg, int n)
    {
        if (n < 1)
            throw std::invalid_argument("linspace needs n >= 1");
        std::vector<double> out(n);
        if (n == 1)
        {
            out[0] = lo_deg;
            return out;
        }
        const double step = (hi_deg - lo_deg) / (n - 1);
        for (int i = 0; i < n; ++i)
            out[i] = lo_deg + step * i;
        out[n - 1] = hi_deg;
        return out;
    }

    std::vector<double> centered_grid(int count, double spacing_deg)
    {
        if (count < 1)
            throw std::invalid_argument("grid needs at least one point");
        std::vector<double> out(count);
        for (int i = 0; i < count; ++i)
            out[i] = (i - (count - 1) / 2.0) * spacing_deg;
        return out;
    }

    Codebook pencil_codebook(const ArrayGeometry &geom, std::span<const double> angles_deg)
    {
        if (angles_deg.empty())
            throw std::invalid_argument("pencil codebook needs at least one angle");
        std::vector<std::vector<double>> phases;
        std::vector<BeamMeta> meta;
        for (double a : angles_deg)
        {
            phases.push_back(steering_phases(geom.n_elements(), geom.spacing(), a));
            BeamMeta m;
            m.kind = BeamKind::Pencil;
            m.center_deg = a;
            meta.push_back(m);
        }
        return from_phases(BeamKind::Pencil, geom.spacing(), geom.n_elements(), phases, std::move(meta));
    }

    Codebook pn_codebook(const ArrayGeometry &geom, int n_beams, std::uint64_t seed)
    {
        if (n_beams < 1)
            throw std::invalid_argument("PN codebook needs at least one beam");
        Rng rng(seed);
        std::vector<std::vector<double>> phases(n_beams, std::vector<double>(geom.n_elements()));
        std::vector<BeamMeta> meta;
        // column-major draw order: beam b is a prefix-stable function of the seed
        for (int b = 0; b < n_beams; ++b)
        {
            for (int n = 0; n < geom.n_elements(); ++n)
                phases[b][n] = static_cast<double>(rng() >> 62) * (kPi / 2.0);
            BeamMeta m;
            m.kind = BeamKind::PN;
            m.seed = seed;
            m.seed_index = b;
            meta.push_back(m);
        }
        return from_phases(BeamKind::PN, geom.spacing(), geom.n_elements(), phases, std::move(meta));
    }

    Codebook sa_codebook(const ArrayGeometry &geom, const SaParams &params, std::span<const double> centers_deg)
    {
        if (centers_deg.empty())
            throw std::invalid_argument("SA codebook needs at least one center angle");
        if (params.n_subarrays < 1 || geom.n_elements() % params.n_subarrays != 0)
            throw std::invalid_argument("sub-array count must divide the element count");
        const int sub = geom.n_elements() / params.n_subarrays;
        std::vector<std::vector<double>> phases;
        std::vector<BeamMeta> meta;
        for (double c : centers_deg)
        {
            BeamMeta m;
            m.kind = BeamKind::SA;
            m.center_deg = c;
            m.n_subarrays = params.n_subarrays;
            m.finger_separation_deg = params.finger_separation_deg;
            std::vector<double> beam;
            beam.reserve(geom.n_elements());
            for (int i = 0; i < params.n_subarrays; ++i)
            {
                const double theta = c + (i - (params.n_subarrays - 1) / 2.0) * params.finger_separation_deg;
                m.finger_deg.push_back(theta);
                auto block = steering_phases(sub, geom.spacing(), theta);
                beam.insert(beam.end(), block.begin(), block.end());
            }
            phases.push_back(std::move(beam));
            meta.push_back(std::move(m));
        }
        return from_phases(BeamKind::SA, geom.spacing(), geom.n_elements(), phases, std::move(meta));
    }

    double qpd_phase(int n, int n_elements, double phi_max)
    {
        const double num = static_cast<double>(2 * n - (n_elements + 1));
        const double r = num / (2.0 * (n_elements + 1));
        return 4.0 * phi_max * r * r;
    }

    Codebook qpd_codebook(const ArrayGeometry &geom, std::span<const QpdParams> beams)
    {
        if (beams.empty())
            throw std::invalid_argument("QPD codebook needs at least one beam");
        const int n_el = geom.n_elements();
        std::vector<std::vector<double>> phases;
        std::vector<BeamMeta> meta;
        for (const auto &q : beams)
        {
            if (!(q.phi_max > 0.0))
                throw std::invalid_argument("QPD phi_max must be positive");
            auto p = steering_phases(n_el, geom.spacing(), q.steer_angle_deg);
            for (int n = 0; n < n_el; ++n)
                p[n] += qpd_phase(n + 1, n_el, q.phi_max);
            phases.push_back(std::move(p));
            BeamMeta m;
            m.kind = BeamKind::QPD;
            m.center_deg = q.steer_angle_deg;
            m.phi_max = q.phi_max;
            meta.push_back(m);
        }
        return from_phases(BeamKind::QPD, geom.spacing(), n_el, phases, std::move(meta));
    }

    // ---------------------------------------------------------------- analysis

    RVector beam_pattern(const Codebook &codebook, int beam, std::span<const double> grid_deg,
                         const std::optional<CVector> &impairment)
    {
        if (beam < 0 || beam >= codebook.n_beams())
            throw std::out_of_range("beam index " + std::to_string(beam) + " out of range");
        const ArrayGeometry geom = impairment ? ArrayGeometry(codebook.n_elements(), codebook.spacing(), *impairment)
                                              : ArrayGeometry::ideal(codebook.n_elements(), codebook.spacing());
        const auto w = codebook.weights().col(beam);
        RVector out(static_cast<Eigen::Index>(grid_deg.size()));
        for (std::size_t i = 0; i < grid_deg.size(); ++i)
        {
            const Complex g = w.dot(array_response(geom, grid_deg[i])); // Eigen's dot conjugates the left operand
            out(static_cast<Eigen::Index>(i)) = 20.0 * std::log10(std::abs(g));
        }
        return out;
    }

    CorrelationResult feature_correlation(const RMatrix &features)
    {
        const auto n = features.rows();
        const auto m = features.cols();
        if (n < 2)
            throw std::invalid_argument("correlation needs at least two samples");
        RMatrix centered = features.rowwise() - features.colwise().mean();
        RVector norms = centered.colwise().norm().transpose();
        CorrelationResult res;
        res.corr = RMatrix::Identity(m, m);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = i + 1; j < m; ++j)
            {
                double r = 0.0;
                if (norms(i) == 0.0 || norms(j) == 0.0)
                    ++res.undefined_count;
                else
                    r = std::clamp(centered.col(i).dot(centered.col(j)) / (norms(i) * norms(j)), -1.0, 1.0);
                res.corr(i, j) = r;
                res.corr(j, i) = r;
            }
        return res;
    }

    // ---------------------------------------------------------------- I/O

    nlohmann::json codebook_to_json(const Codebook &codebook)
    {
        using nlohmann::json;
        json beams = json::array();
        for (int b = 0; b < codebook.n_beams(); ++b)
        {
            const auto &m = codebook.meta(b);
            json jb;
            jb["kind"] = to_string(m.kind);
            switch (m.kind)
            {
            case BeamKind::PN:
                jb["seed"] = m.seed;
                jb["seed_index"] = m.seed_index;
                break;
            case BeamKind::SA:
                jb["center_deg"] = m.center_deg;
                jb["finger_deg"] = m.finger_deg;
                jb["n_subarrays"] = m.n_subarrays;
                jb["finger_separation_deg"] = m.finger_separation_deg;
                break;
            case BeamKind::QPD:
                jb["center_deg"] = m.center_deg;
                jb["phi_max"] = m.phi_max;
                break;
            default:
                jb["center_deg"] = m.center_deg;
            }
            json ph = json::array();
            for (int n = 0; n < codebook.n_elements(); ++n)
                ph.push_back(codebook.phases()(n, b));
            jb["phases"] = std::move(ph);
            beams.push_back(std::move(jb));
        }
        return json{{"n_elements", codebook.n_elements()},
                    {"spacing", codebook.spacing()},
                    {"kind", to_string(codebook.kind())},
                    {"beams", std::move(beams)}};
    }

    Codebook codebook_from_json(const nlohmann::json &j)
    {
        const int n_el = j.at("n_elements").get<int>();
        const double spacing = j.at("spacing").get<double>();
        const BeamKind kind = beam_kind_from_string(j.at("kind").get<std::string>());
        std::vector<std::vector<double>> phases;
        std::vector<BeamMeta> meta;
        for (const auto &jb : j.at("beams"))
        {
            BeamMeta m;
            m.kind = beam_kind_from_string(jb.at("kind").get<std::string>());
            m.center_deg = jb.value("center_deg", 0.0);
            m.finger_deg = jb.value("finger_deg", std::vector<double>{});
            m.phi_max = jb.value("phi_max", 0.0);
            m.n_subarrays = jb.value("n_subarrays", 0);
            m.finger_separation_deg = jb.value("finger_separation_deg", 0.0);
            m.seed = jb.value("seed", std::uint64_t{0});
            m.seed_index = jb.value("seed_index", 0);
            phases.push_back(jb.at("phases").get<std::vector<double>>());
            meta.push_back(std::move(m));
        }
        return from_phases(kind, spacing, n_el, phases, std::move(meta));
    }

    void write_pattern_csv(std::ostream &out, std::span<const double> grid_deg, const RVector &gain_db)
    {
        if (static_cast<Eigen::Index>(grid_deg.size()) != gain_db.size())
            throw std::invalid_argument("pattern grid and gains differ in length");
        out << "angle_deg,gain_db\n";
        for (std::size_t i = 0; i < grid_deg.size(); ++i)
            out << format_double(grid_deg[i]) << ',' << format_double(gain_db(static_cast<Eigen::Index>(i))) << '\n';
    }

} // namespace phaseless
