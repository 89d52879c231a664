#include "anchorlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "anchorlab/common.hpp"

namespace anchorlab {

std::vector<std::string> metric_tokens(const std::string& text) { return simple_tokenize(text); }

AnchorMetrics anchor_metrics(const std::vector<std::string>& anchors, const AnnotatedSentence& sentence) {
    if (anchors.empty()) return {};
    std::set<std::string> lemmas;
    for (const auto& token : sentence.tokens) lemmas.insert(token.lemma);
    std::size_t hits = 0;
    for (const auto& anchor : anchors) hits += lemmas.count(to_lower(anchor));
    AnchorMetrics out;
    out.hit_fraction = static_cast<double>(hits) / static_cast<double>(anchors.size());
    out.all_grounded = hits == anchors.size();
    return out;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++out[std::vector<std::string>(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i + n))];
    }
    return out;
}

std::map<std::string, std::size_t> unigram_counts(const std::vector<std::string>& tokens) {
    std::map<std::string, std::size_t> out;
    for (const auto& token : tokens) ++out[token];
    return out;
}

} // namespace

std::vector<double> bleu(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference,
                         std::size_t max_n, double epsilon) {
    if (reference.empty()) throw ValidationError("BLEU needs a non-empty reference");
    if (max_n == 0) throw ConfigError("BLEU order must be at least 1");
    std::vector<double> scores(max_n, 0.0);
    if (hypothesis.empty()) return scores;

    const double c = static_cast<double>(hypothesis.size());
    const double r = static_cast<double>(reference.size());
    const double brevity = c < r ? std::exp(1.0 - r / c) : 1.0;
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 1; n <= max_n; ++n) {
        const auto hyp = ngram_counts(hypothesis, n);
        const auto ref = ngram_counts(reference, n);
        std::size_t total = 0;
        std::size_t matched = 0;
        for (const auto& [gram, count] : hyp) {
            total += count;
            auto it = ref.find(gram);
            if (it != ref.end()) matched += std::min(count, it->second);
        }
        double precision = 0.0;
        if (total > 0 && matched > 0) {
            precision = static_cast<double>(matched) / static_cast<double>(total);
        } else if (epsilon > 0.0 && total > 0) {
            precision = epsilon / static_cast<double>(total);
        }
        if (precision == 0.0) zero = true;
        if (!zero) log_sum += std::log(precision);
        scores[n - 1] = zero ? 0.0 : brevity * std::exp(log_sum / static_cast<double>(n));
    }
    return scores;
}

double rouge1_f1(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference) {
    if (hypothesis.empty() || reference.empty()) return 0.0;
    const auto hyp = unigram_counts(hypothesis);
    const auto ref = unigram_counts(reference);
    std::size_t overlap = 0;
    for (const auto& [token, count] : hyp) {
        auto it = ref.find(token);
        if (it != ref.end()) overlap += std::min(count, it->second);
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(hypothesis.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(reference.size());
    return 2.0 * precision * recall / (precision + recall);
}

GreedyMatch embedding_greedy_f1(const std::vector<std::string>& hypothesis,
                                const std::vector<std::string>& reference, const EmbeddingBank& word_bank) {
    GreedyMatch out;
    auto lookup = [&](const std::vector<std::string>& tokens, std::size_t& skipped) {
        std::vector<std::vector<double>> vectors;
        for (const auto& token : tokens) {
            if (auto index = word_bank.index_of(token)) {
                vectors.push_back(word_bank.vector(*index, true));
            } else {
                ++skipped;
            }
        }
        return vectors;
    };
    const auto hyp = lookup(hypothesis, out.hypothesis_skipped);
    const auto ref = lookup(reference, out.reference_skipped);
    if (hyp.empty() || ref.empty()) return out;

    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
        return sum;
    };
    auto greedy = [&](const auto& from, const auto& to) {
        double total = 0.0;
        for (const auto& a : from) {
            double best = -1.0;
            for (const auto& b : to) best = std::max(best, dot(a, b));
            total += best;
        }
        return total / static_cast<double>(from.size());
    };
    const double precision = greedy(hyp, ref);
    const double recall = greedy(ref, hyp);
    out.precision = precision;
    out.recall = recall;
    out.f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    return out;
}

} // namespace anchorlab
