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

#ifndef PHASELESS_JSON_UTIL_HPP
#define PHASELESS_JSON_UTIL_HPP

#include <json.hpp>

#include <cmath>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace phaseless
{
    // Malformed or inconsistent configuration / metadata.
    class ConfigError : public std::invalid_argument
    {
    public:
        using std::invalid_argument::invalid_argument;
    };

    inline void require_known_keys(const nlohmann::json &j, std::initializer_list<std::string_view> keys,
                                   std::string_view where)
    {
        if (!j.is_object())
            throw ConfigError(std::string(where) + ": expected an object");
        std::string unknown;
        for (const auto &item : j.items())
        {
            bool found = false;
            for (auto k : keys)
                found = found || item.key() == k;
            if (!found)
                unknown += (unknown.empty() ? "" : ", ") + std::string(where) + "." + item.key();
        }
        if (!unknown.empty())
            throw ConfigError("unknown field(s): " + unknown);
    }

    // JSON has no infinity; null stands for +inf.
    inline nlohmann::json finite_or_null(double v)
    {
        return std::isinf(v) && v > 0 ? nlohmann::json(nullptr) : nlohmann::json(v);
    }

    inline double number_or_inf(const nlohmann::json &j)
    {
        return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
    }

} // namespace phaseless

#endif
