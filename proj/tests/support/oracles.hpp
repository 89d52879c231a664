#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "anchorlab/common.hpp"
#include "anchorlab/encoder.hpp"

namespace oracle {

struct GroupError {
    std::string name;
    double relative_error = 0.0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
};

/// Below this norm a gradient group is numerically zero; both sides must then be zero.
inline constexpr double kZeroGradientNorm = 1e-8;

/// Central-difference check of TransformerEncoder::backward on the probe sum(output .* weights).
inline std::vector<GroupError> encoder_gradient_errors(anchorlab::TransformerEncoder& encoder,
                                                       const anchorlab::Matrix& input,
                                                       const anchorlab::Matrix& weights, double h = 1e-5) {
    using anchorlab::Matrix;
    anchorlab::TransformerEncoder::Cache cache;
    encoder.forward(input, &cache);
    auto grads = encoder.parameters().zeros_like();
    encoder.backward(cache, weights, grads);

    auto probe = [&]() { return encoder.forward(input).cwiseProduct(weights).sum(); };
    std::vector<GroupError> errors;
    for (std::size_t t = 0; t < encoder.parameters().tensors().size(); ++t) {
        auto& tensor = encoder.parameters().tensors()[t];
        const Matrix& analytic = grads.tensors()[t].value;
        Matrix numeric(tensor.value.rows(), tensor.value.cols());
        for (Eigen::Index i = 0; i < tensor.value.size(); ++i) {
            const double saved = tensor.value.data()[i];
            tensor.value.data()[i] = saved + h;
            const double up = probe();
            tensor.value.data()[i] = saved - h;
            const double down = probe();
            tensor.value.data()[i] = saved;
            numeric.data()[i] = (up - down) / (2.0 * h);
        }
        const double a = analytic.norm();
        const double n = numeric.norm();
        // Key biases shift every score of a query equally, so softmax makes their true
        // gradient exactly zero; compare such groups absolutely instead of relatively.
        const double error = std::max(a, n) < kZeroGradientNorm ? 0.0 : (analytic - numeric).norm() / std::max(a, n);
        errors.push_back({tensor.name, error, a, n});
    }
    return errors;
}

/// Greedy farthest-point selection written directly from its definition: each step scans
/// every unchosen point, computes its distance to every chosen point, and keeps the
/// maximiser (ties: higher frequency, then smaller lemma). The first pick is the most
/// frequent lemma.
inline std::vector<std::string> brute_force_fps(const std::map<std::string, std::vector<double>>& vectors,
                                                const std::map<std::string, std::size_t>& frequency, std::size_t k) {
    std::vector<std::string> chosen;
    std::vector<std::string> names;
    for (const auto& [name, vec] : vectors) names.push_back(name);
    auto distance = [&](const std::string& a, const std::string& b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < vectors.at(a).size(); ++i) dot += vectors.at(a)[i] * vectors.at(b)[i];
        return 1.0 - dot;
    };
    while (chosen.size() < k) {
        std::string best;
        double best_score = -1.0;
        for (const auto& name : names) {
            if (std::find(chosen.begin(), chosen.end(), name) != chosen.end()) continue;
            double score = std::numeric_limits<double>::infinity();
            for (const auto& c : chosen) score = std::min(score, distance(name, c));
            bool better = best.empty() || score > best_score;
            if (!better && score == best_score) {
                const auto fa = frequency.at(name);
                const auto fb = frequency.at(best);
                better = fa > fb || (fa == fb && name < best);
            }
            if (better) {
                best = name;
                best_score = score;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

/// Two-sided Student-t tail probability by Simpson integration of the density.
inline double student_t_two_sided_p(double t, double df) {
    const double log_norm = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) - 0.5 * std::log(df * M_PI);
    auto pdf = [&](double x) { return std::exp(log_norm - (df + 1.0) / 2.0 * std::log1p(x * x / df)); };
    const double upper = std::fabs(t);
    const int steps = 20000;
    const double h = upper / steps;
    double sum = pdf(0.0) + pdf(upper);
    for (int i = 1; i < steps; ++i) sum += (i % 2 == 1 ? 4.0 : 2.0) * pdf(i * h);
    return 1.0 - 2.0 * (sum * h / 3.0);
}

/// P(X <= k) for X ~ Binomial(n, p), summed term by term.
inline double binomial_cdf(std::size_t k, std::size_t n, double p) {
    if (p <= 0.0) return 1.0;
    if (p >= 1.0) return k >= n ? 1.0 : 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i <= k && i <= n; ++i) {
        const double log_term = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                                i * std::log(p) + (n - i) * std::log1p(-p);
        total += std::exp(log_term);
    }
    return std::min(1.0, total);
}

/// Exact (Clopper-Pearson) two-sided interval for x successes in n trials, by bisection.
inline std::pair<double, double> clopper_pearson(std::size_t x, std::size_t n, double alpha = 0.05) {
    auto solve = [](auto&& f) {
        double lo = 0.0, hi = 1.0;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            (f(mid) ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    };
    // Lower bound: P(X >= x | p) = alpha/2; upper bound: P(X <= x | p) = alpha/2.
    const double lower = x == 0 ? 0.0 : solve([&](double p) { return 1.0 - binomial_cdf(x - 1, n, p) < alpha / 2.0; });
    const double upper = x == n ? 1.0 : solve([&](double p) { return binomial_cdf(x, n, p) > alpha / 2.0; });
    return {lower, upper};
}

/// 1-based rank of `target` when rows are sorted by cosine to `query`; ties favour earlier rows.
inline std::size_t brute_force_rank(const std::vector<std::vector<double>>& rows, const std::vector<double>& query,
                                    std::size_t target) {
    auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        return (na == 0.0 || nb == 0.0) ? 0.0 : dot / std::sqrt(na * nb);
    };
    const double mine = cos(rows[target], query);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < rows.size(); ++j) {
        const double other = cos(rows[j], query);
        if (other > mine || (other == mine && j < target)) ++rank;
    }
    return rank;
}

} // namespace oracle
