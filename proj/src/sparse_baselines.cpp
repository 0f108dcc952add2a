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

#include "phaseless/sparse_baselines.hpp"
#include "phaseless/channel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace phaseless
{
    int exhaustive_predict(std::span<const double> y)
    {
        if (y.empty())
            throw std::invalid_argument("exhaustive search needs at least one measurement");
        std::vector<double> power(y.size());
        for (std::size_t i = 0; i < y.size(); ++i)
            power[i] = y[i] * y[i];
        const auto best = argmax_first(power);
        if (!(power[best] > 0.0))
            throw std::invalid_argument("exhaustive search on an all-zero measurement");
        return static_cast<int>(best);
    }

    RssDictionary build_rss_dictionary(const Codebook &sensing, const Codebook &directional, NormMode mode)
    {
        if (sensing.n_elements() != directional.n_elements())
            throw std::invalid_argument("sensing and directional codebooks differ in element count");
        RssDictionary d;
        d.mode = mode;
        d.atoms = (sensing.weights().adjoint() * directional.weights()).cwiseAbs();
        if (mode == NormMode::Power)
            d.atoms = d.atoms.cwiseAbs2();
        return d;
    }

    namespace
    {
        RVector to_dictionary_domain(const RssDictionary &dict, std::span<const double> y)
        {
            if (static_cast<int>(y.size()) != dict.n_measurements())
                throw std::invalid_argument("measurement length does not match the dictionary");
            RVector r(static_cast<Eigen::Index>(y.size()));
            for (std::size_t i = 0; i < y.size(); ++i)
            {
                if (!(y[i] >= 0.0))
                    throw std::invalid_argument("RSS measurements must be nonnegative");
                r(static_cast<Eigen::Index>(i)) = dict.mode == NormMode::Power ? y[i] * y[i] : y[i];
            }
            return r;
        }
    } // namespace

    std::vector<int> rss_mp_support(const RssDictionary &dict, std::span<const double> y, int n_iters)
    {
        if (n_iters < 1)
            throw std::invalid_argument("matching pursuit needs at least one iteration");
        RVector r = to_dictionary_domain(dict, y);
        if (!(r.maxCoeff() > 0.0))
            throw std::invalid_argument("matching pursuit on an all-zero measurement");

        const RVector norms = dict.atoms.colwise().norm().transpose();
        std::vector<bool> used(dict.n_atoms(), false);
        std::vector<int> support;
        for (int it = 0; it < n_iters; ++it)
        {
            const RVector corr = dict.atoms.transpose() * r;
            int best = -1;
            double best_score = 0.0;
            for (int k = 0; k < dict.n_atoms(); ++k)
            {
                if (used[k] || norms(k) == 0.0)
                    continue;
                const double score = corr(k) / norms(k);
                if (score > best_score)
                {
                    best_score = score;
                    best = k;
                }
            }
            if (best < 0)
                break;
            used[best] = true;
            support.push_back(best);
            const double coef = corr(best) / (norms(best) * norms(best));
            r = (r - coef * dict.atoms.col(best)).cwiseMax(0.0);
        }
        return support;
    }

    int rss_mp_predict(const RssDictionary &dict, std::span<const double> y, int n_iters)
    {
        return rss_mp_support(dict, y, n_iters).front();
    }

    double phaseless_l1_objective(const RMatrix &atoms, const RVector &y_normalized, const RVector &x, double gamma)
    {
        return gamma * x.sum() + (atoms * x - y_normalized).squaredNorm() / y_normalized.squaredNorm();
    }

    SparseSolution solve_phaseless_l1(const RssDictionary &dict, std::span<const double> y, const L1Config &cfg,
                                      bool record_trace)
    {
        if (!(cfg.gamma > 0.0))
            throw std::invalid_argument("gamma must be positive");
        if (static_cast<int>(y.size()) != dict.n_measurements())
            throw std::invalid_argument("measurement length does not match the dictionary");
        RVector yt(static_cast<Eigen::Index>(y.size()));
        for (std::size_t i = 0; i < y.size(); ++i)
            yt(static_cast<Eigen::Index>(i)) = std::abs(y[i]);
        const double y_max = yt.maxCoeff();
        if (!(y_max > 0.0))
            throw std::invalid_argument("phase-less L1 needs a measurement with a positive maximum");
        yt /= y_max;

        const RMatrix &A = dict.atoms;
        const double inv_norm = 1.0 / yt.squaredNorm();
        const auto smooth = [&](const RVector &x) { return (A * x - yt).squaredNorm() * inv_norm; };
        const auto gradient = [&](const RVector &x) -> RVector { return 2.0 * inv_norm * (A.transpose() * (A * x - yt)); };
        const auto objective = [&](const RVector &x, double f) { return cfg.gamma * x.sum() + f; };

        // power iteration for ||A||_2^2; backtracking covers any underestimate
        RVector v = RVector::Ones(A.cols());
        double sigma2 = 0.0;
        for (int i = 0; i < 30 && v.norm() > 0.0; ++i)
        {
            v.normalize();
            RVector w = A.transpose() * (A * v);
            sigma2 = v.dot(w);
            v = w;
        }
        double lip = std::max(2.0 * inv_norm * sigma2, 1e-12);

        const Eigen::Index k = A.cols();
        RVector x = RVector::Zero(k);
        RVector x_prev = x;
        RVector z_pt = x;
        double f_x = smooth(x);
        double obj_x = objective(x, f_x);
        double t = 1.0;

        SparseSolution sol;
        if (record_trace)
            sol.objective_trace.push_back(obj_x);

        bool converged = false;
        int it = 0;
        for (; it < cfg.max_iters && !converged; ++it)
        {
            const double f_y = smooth(z_pt);
            const RVector g = gradient(z_pt);
            RVector z;
            double f_z = 0.0;
            while (true)
            {
                z = (z_pt - (g.array() + cfg.gamma).matrix() / lip).cwiseMax(0.0);
                f_z = smooth(z);
                const RVector d = z - z_pt;
                if (f_z <= f_y + g.dot(d) + 0.5 * lip * d.squaredNorm() * (1.0 + 1e-12))
                    break;
                lip *= 2.0;
            }
            const double obj_z = objective(z, f_z);
            const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            x_prev = x;
            const bool accept = obj_z <= obj_x;
            if (accept)
            {
                converged = (obj_x - obj_z) <= cfg.tol * std::max(obj_z, 1e-300);
                x = z;
                f_x = f_z;
                obj_x = obj_z;
            }
            z_pt = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev);
            t = t_next;
            if (record_trace)
                sol.objective_trace.push_back(obj_x);
        }

        sol.x = x;
        sol.epsilon = f_x;
        sol.objective = obj_x;
        sol.iterations = it;
        sol.selected = static_cast<int>(argmax_first({x.data(), static_cast<std::size_t>(x.size())}));
        if (!converged)
            throw NonConvergenceError("phase-less L1 did not converge in " + std::to_string(cfg.max_iters) +
                                          " iterations (eps=" + format_double(sol.epsilon) + ")",
                                      sol);
        return sol;
    }

    // ---------------------------------------------------------------- sparsity study

    std::vector<double> sine_grid(int count)
    {
        if (count < 1)
            throw std::invalid_argument("grid needs at least one angle");
        std::vector<double> out(count);
        for (int k = 0; k < count; ++k)
            out[k] = rad_to_deg(std::asin(-1.0 + (2.0 * k + 1.0) / count));
        return out;
    }

    std::vector<SparsityStudyRow> run_sparsity_study(const SparsityStudyConfig &cfg, int threads)
    {
        const auto geom = ArrayGeometry::ideal(cfg.n_elements);
        const auto grid = sine_grid(cfg.n_grid);
        const Codebook directional = pencil_codebook(geom, grid);

        std::vector<QpdParams> qpd;
        for (double c : sine_grid(cfg.n_measurements))
            qpd.push_back({cfg.phi_max, c});
        const std::vector<std::pair<std::string, Codebook>> books{
            {"pn", pn_codebook(geom, cfg.n_measurements, cfg.pn_seed)}, {"sparse", qpd_codebook(geom, qpd)}};
        std::vector<RssDictionary> dicts;
        for (const auto &b : books)
            dicts.push_back(build_rss_dictionary(b.second, directional, NormMode::Magnitude));

        std::vector<SparsityStudyRow> rows;
        for (std::size_t pi = 0; pi < cfg.path_counts.size(); ++pi)
        {
            const int n_paths = cfg.path_counts[pi];
            if (n_paths < 1 || n_paths > cfg.n_grid)
                throw std::invalid_argument("path count must lie in [1, K]");
            const std::size_t nb = books.size();
            std::vector<int> hits(nb * cfg.trials, 0), failed(nb * cfg.trials, 0);
            std::vector<double> eps(nb * cfg.trials, 0.0);

            auto trial = [&](int t) {
                Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(pi) * 1000003ULL + t));
                std::vector<int> idx(cfg.n_grid);
                for (int i = 0; i < cfg.n_grid; ++i)
                    idx[i] = i;
                // partial Fisher-Yates: the first n_paths entries are a uniform draw without replacement
                for (int i = 0; i < n_paths; ++i)
                {
                    const int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.n_grid - i));
                    std::swap(idx[i], idx[j]);
                }
                CVector h = CVector::Zero(cfg.n_elements);
                for (int l = 0; l < n_paths; ++l)
                {
                    const double phase = uniform_real(rng, 0.0, 2.0 * kPi);
                    h += std::polar(std::exp(-cfg.alpha * (l + 1)), phase) * array_response(geom, grid[idx[l]]);
                }
                const RVector p = beam_powers(directional, h);
                const int truth = static_cast<int>(argmax_first({p.data(), static_cast<std::size_t>(p.size())}));
                for (std::size_t b = 0; b < nb; ++b)
                {
                    const RVector y = (books[b].second.weights().adjoint() * h).cwiseAbs();
                    const std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
                    SparseSolution s;
                    try
                    {
                        s = solve_phaseless_l1(dicts[b], ys, cfg.solver);
                    }
                    catch (const NonConvergenceError &e)
                    {
                        s = e.last_iterate();
                        failed[b * cfg.trials + t] = 1;
                    }
                    hits[b * cfg.trials + t] = s.selected == truth;
                    eps[b * cfg.trials + t] = s.epsilon;
                }
            };

            const int nt = std::clamp(threads, 1, std::max(1, cfg.trials));
            std::vector<std::thread> pool;
            std::exception_ptr failure;
            std::mutex m;
            for (int w = 0; w < nt; ++w)
                pool.emplace_back([&, w] {
                    try
                    {
                        for (int t = w; t < cfg.trials; t += nt)
                            trial(t);
                    }
                    catch (...)
                    {
                        std::lock_guard lock(m);
                        if (!failure)
                            failure = std::current_exception();
                    }
                });
            for (auto &th : pool)
                th.join();
            if (failure)
                std::rethrow_exception(failure);

            for (std::size_t b = 0; b < nb; ++b)
            {
                SparsityStudyRow row;
                row.n_paths = n_paths;
                row.codebook = books[b].first;
                row.trials = cfg.trials;
                std::vector<double> e(eps.begin() + b * cfg.trials, eps.begin() + (b + 1) * cfg.trials);
                int hit = 0;
                for (int t = 0; t < cfg.trials; ++t)
                {
                    hit += hits[b * cfg.trials + t];
                    row.solver_failures += failed[b * cfg.trials + t];
                }
                row.accuracy = static_cast<double>(hit) / cfg.trials;
                std::sort(e.begin(), e.end());
                const std::size_t n = e.size();
                row.median_epsilon = n % 2 ? e[n / 2] : 0.5 * (e[n / 2 - 1] + e[n / 2]);
                rows.push_back(std::move(row));
            }
        }
        return rows;
    }

} // namespace phaseless
