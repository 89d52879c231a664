#include "anchorlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"

namespace anchorlab {

using nlohmann::json;

json TestResult::to_json() const {
    return {{"name", name}, {"test", test},         {"statistic", statistic},     {"df1", df1},
            {"df2", df2},   {"p", p},               {"p_corrected", p_corrected}, {"correction", correction}};
}

TestResult TestResult::from_json(const json& object) {
    TestResult out;
    out.name = object.at("name").get<std::string>();
    out.test = object.at("test").get<std::string>();
    out.statistic = object.at("statistic").get<double>();
    out.df1 = object.value("df1", 0.0);
    out.df2 = object.value("df2", 0.0);
    out.p = object.at("p").get<double>();
    out.p_corrected = object.value("p_corrected", out.p);
    out.correction = object.value("correction", std::string("none"));
    return out;
}

double mean(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_sd(const std::vector<double>& values) {
    if (values.size() < 2) return 0.0;
    const double m = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

namespace {

TestResult one_sample_t(const std::vector<double>& d, const std::string& name) {
    if (d.size() < 2) throw ValidationError(name + ": need at least 2 subjects");
    TestResult result;
    result.name = name;
    result.test = "paired_t";
    result.df1 = static_cast<double>(d.size() - 1);
    const double m = mean(d);
    const double sd = sample_sd(d);
    if (sd == 0.0) {
        result.statistic = m == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), m);
        result.p = m == 0.0 ? 1.0 : 0.0;
    } else {
        result.statistic = m / (sd / std::sqrt(static_cast<double>(d.size())));
        const boost::math::students_t dist(result.df1);
        result.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(result.statistic))));
    }
    result.p_corrected = result.p;
    return result;
}

} // namespace

TestResult paired_t_test(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ValidationError("paired t-test: samples differ in length");
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
    return one_sample_t(d, "paired_t");
}

TestResult rm_anova(const std::vector<std::vector<double>>& data) {
    const std::size_t n = data.size();
    if (n < 2) throw ValidationError("repeated-measures ANOVA: need at least 2 subjects");
    const std::size_t k = data.front().size();
    if (k < 2) throw ValidationError("repeated-measures ANOVA: need at least 2 conditions");
    for (const auto& row : data) {
        if (row.size() != k) throw ValidationError("repeated-measures ANOVA: missing cells");
    }
    double grand = 0.0;
    std::vector<double> cond_mean(k, 0.0);
    std::vector<double> subj_mean(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            grand += data[i][j];
            cond_mean[j] += data[i][j] / static_cast<double>(n);
            subj_mean[i] += data[i][j] / static_cast<double>(k);
        }
    }
    grand /= static_cast<double>(n * k);
    double ss_total = 0.0;
    double ss_cond = 0.0;
    double ss_subj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) ss_total += (data[i][j] - grand) * (data[i][j] - grand);
        ss_subj += static_cast<double>(k) * (subj_mean[i] - grand) * (subj_mean[i] - grand);
    }
    for (std::size_t j = 0; j < k; ++j) ss_cond += static_cast<double>(n) * (cond_mean[j] - grand) * (cond_mean[j] - grand);
    const double ss_error = std::max(0.0, ss_total - ss_cond - ss_subj);

    TestResult result;
    result.name = "rm_anova";
    result.test = "rm_anova";
    result.df1 = static_cast<double>(k - 1);
    result.df2 = static_cast<double>((k - 1) * (n - 1));
    const double ms_cond = ss_cond / result.df1;
    const double ms_error = ss_error / result.df2;
    const double tiny = 1e-12 * std::max(1.0, ss_total);
    if (ss_error <= tiny) {
        result.statistic = ss_cond <= tiny ? 0.0 : std::numeric_limits<double>::infinity();
        result.p = ss_cond <= tiny ? 1.0 : 0.0;
    } else {
        result.statistic = ms_cond / ms_error;
        const boost::math::fisher_f dist(result.df1, result.df2);
        result.p = boost::math::cdf(boost::math::complement(dist, result.statistic));
    }
    result.p_corrected = result.p;
    return result;
}

TwoByTwoResult two_by_two(const std::vector<std::vector<double>>& cells, const std::string& factor_a,
                          const std::string& factor_b) {
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> ab;
    for (const auto& c : cells) {
        if (c.size() != 4) throw ValidationError("2x2 design needs 4 cells per subject");
        a.push_back((c[2] + c[3]) / 2.0 - (c[0] + c[1]) / 2.0);
        b.push_back((c[1] + c[3]) / 2.0 - (c[0] + c[2]) / 2.0);
        ab.push_back((c[3] - c[2]) - (c[1] - c[0]));
    }
    auto as_f = [](TestResult t) {
        t.test = "contrast_F";
        t.statistic = t.statistic * t.statistic;
        t.df2 = t.df1;
        t.df1 = 1.0;
        return t;
    };
    return {as_f(one_sample_t(a, factor_a)), as_f(one_sample_t(b, factor_b)),
            as_f(one_sample_t(ab, factor_a + " x " + factor_b))};
}

double bonferroni(double p, std::size_t comparisons) {
    return std::min(1.0, p * static_cast<double>(std::max<std::size_t>(comparisons, 1)));
}

void apply_bonferroni(std::vector<TestResult>& family) {
    for (auto& result : family) {
        result.p_corrected = bonferroni(result.p, family.size());
        result.correction = "bonferroni(" + std::to_string(family.size()) + ")";
    }
}

json PermutationResult::to_json(bool include_null) const {
    json out = {{"observed", observed}, {"p", p}, {"n_perm", n_perm}, {"seed", seed}};
    if (!null_distribution.empty()) {
        out["null_mean"] = mean(null_distribution);
        out["null_max"] = *std::max_element(null_distribution.begin(), null_distribution.end());
    }
    if (include_null) out["null"] = null_distribution;
    return out;
}

PermutationResult permutation_test(const HitMatrix& hits, std::size_t n_perm, std::uint64_t seed) {
    const std::size_t n = hits.size();
    if (n < 5) throw ConfigError("permutation test needs at least 5 sentences, got " + std::to_string(n));
    if (n_perm < 100) throw ConfigError("permutation test needs n_perm >= 100");
    for (const auto& row : hits) {
        if (row.size() != n) throw ValidationError("hit matrix must be square");
    }
    auto accuracy = [&](const std::vector<std::size_t>& assignment) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < n; ++i) total += hits[i][assignment[i]];
        return static_cast<double>(total) / static_cast<double>(n);
    };
    std::vector<std::size_t> assignment(n);
    std::iota(assignment.begin(), assignment.end(), 0);
    PermutationResult result;
    result.n_perm = n_perm;
    result.seed = seed;
    result.observed = accuracy(assignment);
    Rng rng(seed);
    std::size_t at_least = 0;
    for (std::size_t b = 0; b < n_perm; ++b) {
        rng.shuffle(assignment);
        const double value = accuracy(assignment);
        result.null_distribution.push_back(value);
        at_least += value >= result.observed;
    }
    result.p = static_cast<double>(1 + at_least) / static_cast<double>(n_perm + 1);
    return result;
}

} // namespace anchorlab
