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

#include "phaseless/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace phaseless
{
    std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream)
    {
        std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double uniform_real(Rng &rng, double lo, double hi)
    {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

    double standard_normal(Rng &rng)
    {
        // u1 in (0, 1] keeps the log finite
        const double u1 = 1.0 - uniform_real(rng, 0.0, 1.0);
        const double u2 = uniform_real(rng, 0.0, 1.0);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    std::size_t argmax_first(std::span<const double> values)
    {
        if (values.empty())
            throw std::invalid_argument("argmax of an empty vector");
        std::size_t best = 0;
        for (std::size_t i = 1; i < values.size(); ++i)
            if (values[i] > values[best])
                best = i;
        return best;
    }

    std::string fnv1a_hex(std::string_view bytes)
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : bytes)
        {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    std::string format_double(double value)
    {
        if (std::isnan(value))
            return "nan";
        if (std::isinf(value))
            return value > 0 ? "inf" : "-inf";
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof(buf), value);
        return std::string(buf, res.ptr);
    }

    double parse_double(std::string_view text)
    {
        if (text == "nan")
            return std::nan("");
        if (text == "inf")
            return INFINITY;
        if (text == "-inf")
            return -INFINITY;
        double out = 0.0;
        const char *first = text.data();
        const char *last = text.data() + text.size();
        auto res = std::from_chars(first, last, out);
        if (res.ec != std::errc() || res.ptr != last)
            throw std::invalid_argument("not a number: '" + std::string(text) + "'");
        return out;
    }

} // namespace phaseless
