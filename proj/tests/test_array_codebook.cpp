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

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace phaseless;

namespace
{
    // Independent per-element response, written without the library's helpers.
    Complex response_oracle(int n, double angle_deg, double spacing)
    {
        const double s = std::sin(angle_deg * 3.14159265358979323846 / 180.0);
        return {std::cos(2.0 * 3.14159265358979323846 * n * s * spacing),
                std::sin(2.0 * 3.14159265358979323846 * n * s * spacing)};
    }

    double pattern_gain(const CVector &w, const ArrayGeometry &g, double angle)
    {
        return std::abs(w.dot(array_response(g, angle)));
    }
} // namespace

TEST_CASE("array response at broadside is all ones")
{
    const auto a = array_response(ArrayGeometry::ideal(4), 0.0);
    for (int n = 0; n < 4; ++n)
        CHECK(a(n) == Complex(1.0, 0.0));
}

TEST_CASE("array response of a two element array at 30 degrees")
{
    const auto a = array_response(ArrayGeometry::ideal(2), 30.0);
    CHECK(std::abs(a(1) - Complex(0.0, 1.0)) < 1e-12);
}

TEST_CASE("array response matches an element loop")
{
    const auto g = ArrayGeometry::ideal(36);
    const auto a = array_response(g, 10.0);
    for (int n = 0; n < 36; ++n)
        CHECK(std::abs(a(n) - response_oracle(n, 10.0, 0.5)) < 1e-12);
}

TEST_CASE("array response carries the impairment and rejects endfire")
{
    CVector imp(3);
    imp << Complex(0.5, 0.0), Complex(0.0, 2.0), Complex(1.0, 1.0);
    const ArrayGeometry g(3, 0.5, imp);
    const auto a = array_response(g, 17.0);
    for (int n = 0; n < 3; ++n)
        CHECK(std::abs(std::abs(a(n)) - std::abs(imp(n))) < 1e-12);
    CHECK_THROWS_AS(array_response(g, 90.0), std::domain_error);
    CHECK_THROWS_AS(array_response(g, -95.0), std::domain_error);
    CHECK_THROWS(ArrayGeometry(1, 0.5, CVector::Ones(1)));
    CHECK_THROWS(ArrayGeometry(3, 0.0, CVector::Ones(3)));
    CHECK_THROWS(ArrayGeometry(3, 0.5, CVector::Ones(2)));
}

TEST_CASE("pencil codebook shape, broadside beam and matched gain")
{
    const auto g = ArrayGeometry::ideal(36);
    const auto angles = linspace(-45.0, 45.0, 64);
    const auto cb = pencil_codebook(g, angles);
    CHECK(cb.n_elements() == 36);
    CHECK(cb.n_beams() == 64);
    CHECK(angles.front() == -45.0);
    CHECK(angles.back() == 45.0);
    for (int b = 0; b < 64; ++b)
        CHECK(std::abs(pattern_gain(cb.weights().col(b), g, angles[b]) - 36.0) < 1e-9);

    const std::vector<double> zero{0.0};
    const auto one = pencil_codebook(g, zero);
    CHECK((one.weights().array() == Complex(1.0, 0.0)).all());
    CHECK_THROWS(pencil_codebook(g, std::vector<double>{}));
    CHECK_THROWS(pencil_codebook(g, std::vector<double>{90.0}));
}

TEST_CASE("pencil pattern peaks at its steering angle")
{
    const auto g = ArrayGeometry::ideal(36);
    std::vector<double> grid;
    for (int i = -1799; i <= 1799; ++i)
        grid.push_back(i * 0.05);
    for (double steer : {-40.0, -12.3, 0.0, 7.7, 33.0})
    {
        const auto cb = pencil_codebook(g, std::vector<double>{steer});
        const RVector gain = beam_pattern(cb, 0, grid);
        Eigen::Index best = 0;
        gain.maxCoeff(&best);
        CHECK(std::abs(grid[best] - steer) <= 0.05 + 1e-9);
        CHECK(std::abs(gain(best) - 20.0 * std::log10(36.0)) < 0.01);
    }
}

TEST_CASE("PN codebook is 2-bit, deterministic and roughly uniform")
{
    const auto g = ArrayGeometry::ideal(36);
    const auto a = pn_codebook(g, 36, 7);
    const auto b = pn_codebook(g, 36, 7);
    CHECK(a.weights() == b.weights());
    CHECK(a.n_beams() == 36);
    for (Eigen::Index i = 0; i < a.weights().size(); ++i)
    {
        const Complex w = a.weights()(i);
        const bool quarter = w == Complex(1, 0) || w == Complex(0, 1) || w == Complex(-1, 0) || w == Complex(0, -1);
        CHECK(quarter);
        const double p = a.phases()(i);
        CHECK((p == 0.0 || p == kPi / 2 || p == kPi || p == 3 * kPi / 2));
    }
    CHECK(pn_codebook(g, 36, 8).weights() != a.weights());
    CHECK_THROWS(pn_codebook(g, 0, 7));

    // chi-square over 10^4 entries, 3 degrees of freedom; 11.34 is the p = 0.01 critical value
    const auto big = pn_codebook(ArrayGeometry::ideal(100), 100, 12345);
    int counts[4] = {0, 0, 0, 0};
    for (Eigen::Index i = 0; i < big.phases().size(); ++i)
        ++counts[static_cast<int>(std::lround(big.phases()(i) / (kPi / 2)))];
    double chi2 = 0.0;
    for (int c : counts)
        chi2 += (c - 2500.0) * (c - 2500.0) / 2500.0;
    CHECK(chi2 < 11.34);
}

TEST_CASE("SA beams are concatenated sub-array pencils")
{
    const auto g = ArrayGeometry::ideal(36);
    const auto centers = centered_grid(10, 9.0);
    REQUIRE(centers.size() == 10);
    CHECK(centers.front() == doctest::Approx(-40.5));
    CHECK(centers.back() == doctest::Approx(40.5));
    const auto cb = sa_codebook(g, SaParams{3, 25.0}, centers);
    CHECK(cb.n_elements() == 36);
    CHECK(cb.n_beams() == 10);
    const auto sub = ArrayGeometry::ideal(12);
    for (int b = 0; b < 10; ++b)
    {
        const auto &fingers = cb.meta(b).finger_deg;
        REQUIRE(fingers.size() == 3);
        CHECK(fingers[0] == doctest::Approx(centers[b] - 25.0));
        CHECK(fingers[2] == doctest::Approx(centers[b] + 25.0));
        for (int i = 0; i < 3; ++i)
        {
            const auto pencil = pencil_codebook(sub, std::vector<double>{fingers[i]});
            CHECK(cb.weights().col(b).segment(12 * i, 12) == pencil.weights().col(0));
        }
    }
    CHECK_THROWS(sa_codebook(g, SaParams{5, 25.0}, centers));
}

TEST_CASE("one sub-array SA beam equals the pencil beam")
{
    const auto g = ArrayGeometry::ideal(36);
    const std::vector<double> c{12.0};
    CHECK(sa_codebook(g, SaParams{1, 25.0}, c).weights() == pencil_codebook(g, c).weights());
}

TEST_CASE("SA pattern has a local maximum near each finger")
{
    const auto g = ArrayGeometry::ideal(36);
    const auto cb = sa_codebook(g, SaParams{3, 25.0}, std::vector<double>{4.5});
    std::vector<double> grid;
    for (int i = -899; i <= 899; ++i)
        grid.push_back(i * 0.1);
    const RVector gain = beam_pattern(cb, 0, grid);
    for (double finger : cb.meta(0).finger_deg)
    {
        // strongest point within 3 degrees of the finger is a local maximum of the pattern
        Eigen::Index best = -1;
        for (Eigen::Index i = 1; i + 1 < gain.size(); ++i)
            if (std::abs(grid[i] - finger) <= 3.0 && (best < 0 || gain(i) > gain(best)))
                best = i;
        REQUIRE(best > 0);
        CHECK(gain(best) >= gain(best - 1));
        CHECK(gain(best) >= gain(best + 1));
        CHECK(std::abs(grid[best] - finger) < 2.5);
        CHECK(gain(best) > 20.0 * std::log10(12.0) - 3.0);
    }
}

TEST_CASE("QPD quadratic phase values and symmetry")
{
    CHECK(qpd_phase(1, 36, kPi) == doctest::Approx(4.0 * kPi * (35.0 / 74.0) * (35.0 / 74.0)).epsilon(1e-14));
    CHECK(qpd_phase(1, 36, kPi) == doctest::Approx(2.8110).epsilon(1e-4));
    CHECK(qpd_phase(18, 35, kPi) == 0.0);
    for (int n = 1; n <= 36; ++n)
        CHECK(qpd_phase(n, 36, 2.0) == qpd_phase(37 - n, 36, 2.0));
}

TEST_CASE("QPD beams are wider and lower than the pencil")
{
    const auto g = ArrayGeometry::ideal(36);
    const std::vector<QpdParams> q{{kPi, 10.0}};
    const auto qpd = qpd_codebook(g, q);
    const auto pencil = pencil_codebook(g, std::vector<double>{10.0});
    std::vector<double> grid;
    for (int i = -899; i <= 899; ++i)
        grid.push_back(i * 0.1);
    auto width_3db = [&](const RVector &gdb) {
        const double peak = gdb.maxCoeff();
        int n = 0;
        for (Eigen::Index i = 0; i < gdb.size(); ++i)
            n += gdb(i) >= peak - 3.0;
        return n * 0.1;
    };
    const RVector gq = beam_pattern(qpd, 0, grid);
    const RVector gp = beam_pattern(pencil, 0, grid);
    CHECK(width_3db(gq) > width_3db(gp));
    CHECK(gq.maxCoeff() < gp.maxCoeff());
    CHECK_THROWS(qpd_codebook(g, std::vector<QpdParams>{{0.0, 0.0}}));
}

TEST_CASE("every generated weight is unit modulus")
{
    const auto g = ArrayGeometry::ideal(36);
    const auto centers = centered_grid(10, 9.0);
    std::vector<QpdParams> q;
    for (double c : centers)
        q.push_back({kPi, c});
    for (const auto &cb : {pencil_codebook(g, linspace(-45, 45, 64)), pn_codebook(g, 36, 7),
                           sa_codebook(g, SaParams{}, centers), qpd_codebook(g, q)})
        CHECK(((cb.weights().array().abs() - 1.0).abs() <= 1e-12).all());
}

TEST_CASE("PN pattern dynamic range is smaller than the pencil's")
{
    const auto g = ArrayGeometry::ideal(36);
    std::vector<double> grid;
    for (int i = -450; i <= 450; ++i)
        grid.push_back(i * 0.1);
    const RVector pn = beam_pattern(pn_codebook(g, 1, 3), 0, grid);
    const RVector pencil = beam_pattern(pencil_codebook(g, std::vector<double>{0.0}), 0, grid);
    auto range = [](const RVector &v) {
        // ignore exact nulls, which are -inf dB
        double lo = 1e300;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (std::isfinite(v(i)))
                lo = std::min(lo, v(i));
        return v.maxCoeff() - lo;
    };
    CHECK(range(pn) < range(pencil));
    CHECK(beam_pattern(pencil_codebook(g, std::vector<double>{0.0}), 0, std::vector<double>{0.0})(0) ==
          doctest::Approx(20.0 * std::log10(36.0)));
    CHECK_THROWS(beam_pattern(pn_codebook(g, 1, 3), 1, grid));
}

TEST_CASE("codebook JSON round trip is exact")
{
    const auto g = ArrayGeometry::ideal(36);
    const auto cb = concat({pn_codebook(g, 4, 7), sa_codebook(g, SaParams{}, centered_grid(2, 9.0)),
                            qpd_codebook(g, std::vector<QpdParams>{{kPi, 3.0}})});
    CHECK(cb.kind() == BeamKind::Mixed);
    const auto back = codebook_from_json(nlohmann::json::parse(codebook_to_json(cb).dump()));
    CHECK(back.phases() == cb.phases());
    CHECK(back.weights() == cb.weights());
    CHECK(back.meta() == cb.meta());
    CHECK(back.hash() == cb.hash());

    std::ostringstream csv;
    const std::vector<double> grid{-1.0, 0.0, 1.0};
    write_pattern_csv(csv, grid, beam_pattern(cb, 0, grid));
    CHECK(csv.str().rfind("angle_deg,gain_db\n", 0) == 0);
}

TEST_CASE("feature correlation of duplicated, constant and independent columns")
{
    RMatrix dup(5, 2);
    dup << 1, 1, 2, 2, 5, 5, 3, 3, 0, 0;
    const auto c = feature_correlation(dup);
    CHECK(c.corr(0, 1) == doctest::Approx(1.0));
    CHECK(c.corr(0, 0) == 1.0);
    CHECK(c.undefined_count == 0);

    RMatrix konst(4, 3);
    konst << 1, 7, 2, 2, 7, 1, 3, 7, 5, 4, 7, 0;
    const auto k = feature_correlation(konst);
    CHECK(k.corr(0, 1) == 0.0);
    CHECK(k.corr(1, 2) == 0.0);
    CHECK(k.undefined_count == 2);
    CHECK_THROWS(feature_correlation(RMatrix::Ones(1, 3)));

    Rng rng(99);
    RMatrix ind(10000, 4);
    for (Eigen::Index i = 0; i < ind.rows(); ++i)
        for (Eigen::Index j = 0; j < 4; ++j)
            ind(i, j) = standard_normal(rng);
    const auto r = feature_correlation(ind);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
        {
            CHECK(r.corr(i, j) == doctest::Approx(r.corr(j, i)));
            if (i != j)
                CHECK(std::abs(r.corr(i, j)) < 0.05);
        }
}
