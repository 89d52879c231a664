#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "anchorlab/corpus.hpp"

namespace anchorlab {

using SparseVector = std::map<std::string, double>;

struct IndexOptions {
    /// 1 + ln(tf) instead of raw counts.
    bool sublinear_tf = false;
};

/// TF-IDF vectors over content lemmas of one task's sentence pool.
struct RetrievalIndex {
    std::vector<std::string> ids;
    std::vector<std::string> texts;
    std::vector<SparseVector> vectors;
    std::map<std::string, double> idf;
    IndexOptions options;

    std::size_t size() const { return ids.size(); }
    std::optional<std::size_t> index_of(const std::string& id) const;
    /// idf of a lemma; lemmas absent from the pool get ln(1 + N) + 1.
    double idf_of(const std::string& lemma) const;
};

/// NOUN/PROPN/VERB/ADJ lemmas not in `stopwords`, in reading order, repeats kept.
std::vector<std::string> content_lemmas(const AnnotatedSentence& sentence, const std::set<std::string>& stopwords);

/// idf = ln((1 + N) / (1 + df)) + 1, tf = raw count. Throws ValidationError on an empty pool
/// or repeated sentence ids.
RetrievalIndex build_index(const std::vector<const AnnotatedSentence*>& pool, const std::set<std::string>& stopwords,
                           const IndexOptions& options = {});

SparseVector tfidf_vector(const RetrievalIndex& index, const std::vector<std::string>& lemmas);
double cosine(const SparseVector& a, const SparseVector& b);

struct RetrievalHit {
    std::size_t index = 0;
    double score = 0.0;
};

/// Top-k pool sentences by cosine to the anchor bag; ties keep pool order.
std::vector<RetrievalHit> retrieve(const RetrievalIndex& index, const std::vector<std::string>& anchors,
                                   std::size_t k);

} // namespace anchorlab
