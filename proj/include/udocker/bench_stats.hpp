/*
 * udocker-cpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef UDOCKER_BENCH_STATS_HPP
#define UDOCKER_BENCH_STATS_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace udocker::bench {

/// Wall-clock samples for one execution environment, with an outlier
/// mask (true = kept).
struct RunSample {
    std::string tag;
    std::vector<double> samples;
    std::vector<bool> mask;

    size_t kept() const;
};

/// Outlier rule: keep x iff |x - median| <= 3 * scaled MAD
/// (MAD scaled by 1.4826 to be consistent with a normal sigma).
/// Deterministic and order-independent. Requires >= 5 samples and
/// at least 3 survivors.
std::vector<bool> mask_outliers(const std::vector<double>& samples);

struct SampleStats {
    size_t n_total = 0;
    size_t n_kept = 0;
    double mean = 0.0;
    double std_n = 0.0;    // population form (divide by n)
    double std_n1 = 0.0;   // sample form (divide by n-1)
};

/// Mean and deviations over the masked (kept) points only.
SampleStats masked_stats(const RunSample& s);

/// Runtime ratio R = t_env / t_base with propagated error
///   dR = R * sqrt((dt_env/t_env)^2 + (dt_base/t_base)^2)
/// where t is the masked mean and dt the masked sample (n-1) standard
/// deviation of each environment.
struct RatioResult {
    double env_mean = 0.0;
    double env_std = 0.0;
    double base_mean = 0.0;
    double base_std = 0.0;
    double ratio = 0.0;
    double ratio_err = 0.0;
};

RatioResult ratio(const RunSample& env, const RunSample& base);

/// Same propagation from already-computed moments.
RatioResult ratio_from_moments(double t_env, double dt_env, double t_base, double dt_base);

/// One timed execution of the workload under some environment tag.
struct WorkloadRun {
    double seconds = 0.0;
    long long stops = 0;  // tracer stop count, 0 for untraced environments
    int exit_code = 0;
};

using RunFn = std::function<WorkloadRun(const std::string& tag, int iteration)>;

struct MatrixRow {
    RunSample sample;
    SampleStats stats;
    RatioResult vs_base;
    long long stops = 0;       // max stop count observed across runs
    bool flagged = false;      // any run exited nonzero
};

/// Executes the workload `repetitions` times per tag (sequentially, in
/// the given order, baseline first) and computes per-tag statistics and
/// ratios against the baseline tag.
std::vector<MatrixRow> run_matrix(const std::vector<std::string>& tags,
                                  const std::string& baseline_tag,
                                  int repetitions,
                                  const RunFn& fn);

/// CSV schema v1; one row per environment. Flagged rows carry flagged=1
/// and are excluded from the chart.
void write_csv(const std::vector<MatrixRow>& rows, const std::filesystem::path& out);

/// Normalized bar chart (SVG) with error bars; baseline bar is 1.0.
void write_svg_chart(const std::vector<MatrixRow>& rows, const std::filesystem::path& out);

}  // namespace udocker::bench

#endif
