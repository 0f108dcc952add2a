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

#ifndef PHASELESS_COMMON_HPP
#define PHASELESS_COMMON_HPP

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace phaseless
{
    using Complex = std::complex<double>;
    using CVector = Eigen::VectorXcd;
    using CMatrix = Eigen::MatrixXcd;
    using RVector = Eigen::VectorXd;
    using RMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    // All stochastic stages draw from this engine; seeds come from derive_seed().
    using Rng = std::mt19937_64;

    inline constexpr double kPi = std::numbers::pi;

    inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
    inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

    // Base class for failures of a numerical procedure (non-convergence, divergence).
    class NumericalError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    // Independent stream seed for (master, stream) via the splitmix64 finalizer.
    std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

    // Uniform draw in [lo, hi) built from 53 random bits; identical on every standard library.
    double uniform_real(Rng &rng, double lo, double hi);

    // Standard normal draw (Box-Muller), portable across standard libraries.
    double standard_normal(Rng &rng);

    // Index of the largest entry; ties resolve to the lowest index. Empty input throws.
    std::size_t argmax_first(std::span<const double> values);

    // 64-bit FNV-1a digest rendered as 16 lowercase hex digits.
    std::string fnv1a_hex(std::string_view bytes);

    // Shortest decimal text that parses back to exactly the same double.
    std::string format_double(double value);

    // Parses text produced by format_double (or any decimal float); throws on garbage.
    double parse_double(std::string_view text);

} // namespace phaseless

#endif
