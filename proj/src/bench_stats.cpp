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

#include "udocker/bench_stats.hpp"
#include "udocker/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace udocker::bench {

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

constexpr double kMadScale = 1.4826;  // normal-consistency factor

}  // namespace

size_t RunSample::kept() const {
    size_t k = 0;
    for (bool b : mask)
        if (b) k++;
    return k;
}

std::vector<bool> mask_outliers(const std::vector<double>& samples) {
    if (samples.size() < 5)
        throw format_error("outlier masking needs at least 5 samples, got " +
                           std::to_string(samples.size()));
    double med = median_of(samples);
    std::vector<double> absdev;
    absdev.reserve(samples.size());
    for (double x : samples) absdev.push_back(std::fabs(x - med));
    double mad = kMadScale * median_of(absdev);

    std::vector<bool> mask(samples.size());
    size_t survivors = 0;
    for (size_t i = 0; i < samples.size(); i++) {
        mask[i] = std::fabs(samples[i] - med) <= 3.0 * mad;
        if (mask[i]) survivors++;
    }
    if (survivors < 3)
        throw format_error("degenerate sample: only " + std::to_string(survivors) +
                           " points survive outlier masking");
    return mask;
}

SampleStats masked_stats(const RunSample& s) {
    if (s.mask.size() != s.samples.size())
        throw format_error("mask length does not match sample length");
    SampleStats st;
    st.n_total = s.samples.size();
    double sum = 0.0;
    for (size_t i = 0; i < s.samples.size(); i++) {
        if (!s.mask[i]) continue;
        st.n_kept++;
        sum += s.samples[i];
    }
    if (st.n_kept == 0) return st;
    st.mean = sum / static_cast<double>(st.n_kept);
    double ss = 0.0;
    for (size_t i = 0; i < s.samples.size(); i++) {
        if (!s.mask[i]) continue;
        double d = s.samples[i] - st.mean;
        ss += d * d;
    }
    st.std_n = std::sqrt(ss / static_cast<double>(st.n_kept));
    st.std_n1 = st.n_kept > 1 ? std::sqrt(ss / static_cast<double>(st.n_kept - 1)) : 0.0;
    return st;
}

RatioResult ratio_from_moments(double t_env, double dt_env, double t_base, double dt_base) {
    if (t_base == 0.0) throw format_error("undefined ratio: baseline mean is zero");
    RatioResult r;
    r.env_mean = t_env;
    r.env_std = dt_env;
    r.base_mean = t_base;
    r.base_std = dt_base;
    r.ratio = t_env / t_base;
    double rel_env = t_env != 0.0 ? dt_env / t_env : 0.0;
    double rel_base = dt_base / t_base;
    r.ratio_err = r.ratio * std::sqrt(rel_env * rel_env + rel_base * rel_base);
    return r;
}

RatioResult ratio(const RunSample& env, const RunSample& base) {
    SampleStats se = masked_stats(env);
    SampleStats sb = masked_stats(base);
    if (se.n_kept < 3 || sb.n_kept < 3)
        throw format_error("ratio needs at least 3 surviving points per sample");
    return ratio_from_moments(se.mean, se.std_n1, sb.mean, sb.std_n1);
}

std::vector<MatrixRow> run_matrix(const std::vector<std::string>& tags,
                                  const std::string& baseline_tag,
                                  int repetitions,
                                  const RunFn& fn) {
    if (repetitions < 5) throw usage_error("need at least 5 repetitions");

    // Baseline runs first, then the other tags in the given order.
    std::vector<std::string> order;
    order.push_back(baseline_tag);
    for (auto& t : tags)
        if (t != baseline_tag) order.push_back(t);

    std::vector<MatrixRow> rows;
    const RunSample* base = nullptr;
    for (auto& tag : order) {
        MatrixRow row;
        row.sample.tag = tag;
        for (int i = 0; i < repetitions; i++) {
            WorkloadRun wr = fn(tag, i);
            row.sample.samples.push_back(wr.seconds);
            row.stops = std::max(row.stops, wr.stops);
            if (wr.exit_code != 0) row.flagged = true;
        }
        row.sample.mask = mask_outliers(row.sample.samples);
        row.stats = masked_stats(row.sample);
        rows.push_back(std::move(row));
    }
    base = &rows.front().sample;
    for (auto& row : rows) {
        if (!row.flagged) row.vs_base = ratio(row.sample, *base);
    }
    return rows;
}

void write_csv(const std::vector<MatrixRow>& rows, const std::filesystem::path& out) {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw io_error("cannot write " + out.string());
    f << "# udocker-bench csv v1\n";
    f << "environment,n_total,n_kept,mean_s,std_n_s,std_n1_s,ratio,ratio_err,stops,flagged\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%lld,%d\n",
                      r.sample.tag.c_str(), r.stats.n_total, r.stats.n_kept, r.stats.mean,
                      r.stats.std_n, r.stats.std_n1, r.vs_base.ratio, r.vs_base.ratio_err,
                      r.stops, r.flagged ? 1 : 0);
        f << buf;
    }
}

void write_svg_chart(const std::vector<MatrixRow>& rows, const std::filesystem::path& out) {
    std::vector<const MatrixRow*> plotted;
    for (const auto& r : rows)
        if (!r.flagged) plotted.push_back(&r);

    const double bar_w = 60, gap = 30, left = 70, bottom = 40, top = 20;
    const double plot_h = 260;
    double max_r = 1.0;
    for (auto* r : plotted) max_r = std::max(max_r, r->vs_base.ratio + r->vs_base.ratio_err);
    max_r *= 1.1;
    double width = left + plotted.size() * (bar_w + gap) + gap;
    double height = top + plot_h + bottom;
    auto y_of = [&](double v) { return top + plot_h - (v / max_r) * plot_h; };

    std::ostringstream s;
    s.precision(17);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
    s << "<style>text{font-family:sans-serif;font-size:12px;}</style>\n";
    // axis and the 1.0 reference line
    s << "<line x1=\"" << left - 10 << "\" y1=\"" << y_of(0) << "\" x2=\"" << width - 10
      << "\" y2=\"" << y_of(0) << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left - 10 << "\" y1=\"" << y_of(1.0) << "\" x2=\"" << width - 10
      << "\" y2=\"" << y_of(1.0) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    s << "<text x=\"8\" y=\"" << y_of(1.0) + 4 << "\">1.0</text>\n";

    double x = left + gap;
    for (auto* r : plotted) {
        double v = r->vs_base.ratio, e = r->vs_base.ratio_err;
        s << "<!-- bar " << r->sample.tag << " ratio=" << v << " err=" << e << " -->\n";
        s << "<rect data-tag=\"" << r->sample.tag << "\" data-ratio=\"" << v
          << "\" data-err=\"" << e << "\" x=\"" << x << "\" y=\"" << y_of(v) << "\" width=\""
          << bar_w << "\" height=\"" << (y_of(0) - y_of(v)) << "\" fill=\"#e8883a\"/>\n";
        double cx = x + bar_w / 2;
        s << "<line x1=\"" << cx << "\" y1=\"" << y_of(v - e) << "\" x2=\"" << cx << "\" y2=\""
          << y_of(v + e) << "\" stroke=\"black\"/>\n";
        s << "<line x1=\"" << cx - 6 << "\" y1=\"" << y_of(v - e) << "\" x2=\"" << cx + 6
          << "\" y2=\"" << y_of(v - e) << "\" stroke=\"black\"/>\n";
        s << "<line x1=\"" << cx - 6 << "\" y1=\"" << y_of(v + e) << "\" x2=\"" << cx + 6
          << "\" y2=\"" << y_of(v + e) << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << x << "\" y=\"" << top + plot_h + 16 << "\">" << r->sample.tag
          << "</text>\n";
        x += bar_w + gap;
    }
    s << "</svg>\n";

    std::ofstream f(out, std::ios::trunc);
    if (!f) throw io_error("cannot write " + out.string());
    f << s.str();
}

}  // namespace udocker::bench
