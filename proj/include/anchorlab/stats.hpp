#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace anchorlab {

struct TestResult {
    std::string name;
    std::string test;
    double statistic = 0.0;
    double df1 = 0.0;
    /// 0 when the test has a single df.
    double df2 = 0.0;
    double p = 1.0;
    double p_corrected = 1.0;
    std::string correction = "none";

    nlohmann::json to_json() const;
    static TestResult from_json(const nlohmann::json& object);
};

/// Two-tailed paired t-test on x - y. Throws ValidationError for fewer than 2 pairs or
/// unequal lengths.
TestResult paired_t_test(const std::vector<double>& x, const std::vector<double>& y);

/// One-way repeated-measures ANOVA; `data[subject][condition]`.
TestResult rm_anova(const std::vector<std::vector<double>>& data);

struct TwoByTwoResult {
    TestResult factor_a;
    TestResult factor_b;
    TestResult interaction;
};

/// 2x2 within-subject design via paired contrasts (F = t^2, df = (1, n-1)).
/// `cells[subject]` = {a0b0, a0b1, a1b0, a1b1}.
TwoByTwoResult two_by_two(const std::vector<std::vector<double>>& cells, const std::string& factor_a,
                          const std::string& factor_b);

double bonferroni(double p, std::size_t comparisons);
/// Sets p_corrected on every result using the family size.
void apply_bonferroni(std::vector<TestResult>& family);

/// `hits[i][j]` is true when reconstruction i ranks ground-truth sentence j within top-k.
using HitMatrix = std::vector<std::vector<std::uint8_t>>;

struct PermutationResult {
    double observed = 0.0;
    std::vector<double> null_distribution;
    double p = 1.0;
    std::size_t n_perm = 0;
    std::uint64_t seed = 0;

    nlohmann::json to_json(bool include_null = false) const;
};

/// Observed accuracy is the mean diagonal; each permutation shuffles which sentence each
/// reconstruction is scored against. p = (1 + #{null >= observed}) / (n_perm + 1).
/// Throws ConfigError when n < 5 or n_perm < 100.
PermutationResult permutation_test(const HitMatrix& hits, std::size_t n_perm, std::uint64_t seed);

double mean(const std::vector<double>& values);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_sd(const std::vector<double>& values);

} // namespace anchorlab
