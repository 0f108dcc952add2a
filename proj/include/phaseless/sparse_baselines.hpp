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

#ifndef PHASELESS_SPARSE_BASELINES_HPP
#define PHASELESS_SPARSE_BASELINES_HPP

#include "phaseless/array_codebook.hpp"

#include <string>
#include <vector>

namespace phaseless
{
    // Exhaustive search: argmax_i y_i^2, lowest index on ties. Throws on empty or all-zero input.
    int exhaustive_predict(std::span<const double> y);

    enum class NormMode
    {
        Magnitude, // |W_s^H W_d|
        Power      // |W_s^H W_d|^2
    };

    // Phase-less dictionary: column k is the RSS signature of a unit path at directional beam k.
    struct RssDictionary
    {
        RMatrix atoms; // M x K, nonnegative
        NormMode mode = NormMode::Magnitude;

        int n_measurements() const { return static_cast<int>(atoms.rows()); }
        int n_atoms() const { return static_cast<int>(atoms.cols()); }
    };

    RssDictionary build_rss_dictionary(const Codebook &sensing, const Codebook &directional, NormMode mode);

    /**
     * Matching pursuit on RSS measurements.
     *
     * The measurement is mapped into the dictionary domain (squared for Power atoms). Each iteration
     * picks the unused atom with the largest normalized correlation <d_k, r> / ||d_k||, removes its
     * least-squares projection from the residual and clips the residual at zero. Returns the atoms in
     * selection order; fewer than n_iters when the residual has no positive correlation left.
     */
    std::vector<int> rss_mp_support(const RssDictionary &dict, std::span<const double> y, int n_iters);

    // First atom chosen by rss_mp_support, i.e. the predicted best beam.
    int rss_mp_predict(const RssDictionary &dict, std::span<const double> y, int n_iters);

    struct L1Config
    {
        double gamma = 0.01; // sparsity weight
        int max_iters = 5000;
        double tol = 1e-8; // relative objective change
    };

    struct SparseSolution
    {
        RVector x;              // nonnegative estimate of the path magnitudes on the grid
        double epsilon = 0.0;   // ||A x - y~||^2 / ||y~||^2 with y~ = y / max(y)
        double objective = 0.0; // gamma ||x||_1 + epsilon
        int selected = 0;       // argmax x, lowest index on ties
        int iterations = 0;
        std::vector<double> objective_trace; // objective of every iterate, filled on request
    };

    class NonConvergenceError : public NumericalError
    {
    public:
        NonConvergenceError(const std::string &what, SparseSolution last)
            : NumericalError(what), last_(std::move(last))
        {
        }
        const SparseSolution &last_iterate() const { return last_; }

    private:
        SparseSolution last_;
    };

    // gamma ||x||_1 + ||A x - y~||^2 / ||y~||^2 for an already max-normalized y~.
    double phaseless_l1_objective(const RMatrix &atoms, const RVector &y_normalized, const RVector &x, double gamma);

    /**
     * Phase-less nonnegative L1 recovery.
     *
     * Minimizes gamma ||x||_1 + eps over x >= 0 subject to ||A x - y~||^2 <= eps ||y~||^2. The constraint
     * is tight at the optimum, so eps is eliminated and the problem becomes a nonnegative LASSO, solved
     * with monotone accelerated proximal gradient (nonnegative soft-thresholding) and backtracking
     * from a power-iteration estimate of the Lipschitz constant.
     *
     * Throws std::invalid_argument if y has no positive entry or the shapes disagree, and
     * NonConvergenceError (carrying the last iterate) after cfg.max_iters iterations.
     */
    SparseSolution solve_phaseless_l1(const RssDictionary &dict, std::span<const double> y, const L1Config &cfg,
                                      bool record_trace = false);

    // Recovery accuracy vs. number of paths for a PN and a sparse-beam (QPD) dictionary on an on-grid channel.
    struct SparsityStudyConfig
    {
        int n_elements = 72;
        int n_grid = 72;         // K on-grid angles, uniformly spaced in sin(theta)
        int n_measurements = 24; // M sensing beams per codebook
        std::vector<int> path_counts{1, 2, 3, 4};
        int trials = 500;
        double alpha = 0.2;     // path l has magnitude exp(-alpha l) and a uniform random phase
        double phi_max = kPi;   // QPD widening of the sparse-beam codebook
        std::uint64_t pn_seed = 7;
        std::uint64_t seed = 1;
        L1Config solver;
    };

    struct SparsityStudyRow
    {
        int n_paths = 0;
        std::string codebook; // "pn" or "sparse"
        double accuracy = 0.0;
        double median_epsilon = 0.0;
        int trials = 0;
        int solver_failures = 0; // trials that hit max_iters (their last iterate is still scored)
    };

    // Angles whose sines are -1 + (2k + 1) / count for k = 0..count-1.
    std::vector<double> sine_grid(int count);

    std::vector<SparsityStudyRow> run_sparsity_study(const SparsityStudyConfig &cfg, int threads = 1);

} // namespace phaseless

#endif
