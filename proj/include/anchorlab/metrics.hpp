#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/corpus.hpp"
#include "anchorlab/embedding_bank.hpp"

namespace anchorlab {

/// Tokenisation shared by the text metrics: lowercase, punctuation stripped, whitespace split.
std::vector<std::string> metric_tokens(const std::string& text);

struct AnchorMetrics {
    double hit_fraction = 0.0;
    bool all_grounded = false;
};

/// Fraction of anchors whose lemma occurs among the sentence lemmas.
AnchorMetrics anchor_metrics(const std::vector<std::string>& anchors, const AnnotatedSentence& sentence);

/// BLEU-1..max_n (entry n-1 is BLEU-n). Clipped n-gram precision, geometric mean, brevity
/// penalty exp(1 - r/c) when c < r. With `epsilon` = 0 a zero precision at any order makes
/// that score 0; otherwise zero match counts are replaced by epsilon.
/// Throws ValidationError on an empty reference.
std::vector<double> bleu(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference,
                         std::size_t max_n = 3, double epsilon = 0.0);

double rouge1_f1(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference);

/// Greedy max-cosine matching over static word vectors. An approximation, not BERTScore.
struct GreedyMatch {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::size_t hypothesis_skipped = 0;
    std::size_t reference_skipped = 0;
};

GreedyMatch embedding_greedy_f1(const std::vector<std::string>& hypothesis,
                                const std::vector<std::string>& reference, const EmbeddingBank& word_bank);

} // namespace anchorlab
