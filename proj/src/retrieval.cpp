#include "anchorlab/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anchorlab/common.hpp"

namespace anchorlab {

std::optional<std::size_t> RetrievalIndex::index_of(const std::string& id) const {
    auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) return std::nullopt;
    return static_cast<std::size_t>(it - ids.begin());
}

double RetrievalIndex::idf_of(const std::string& lemma) const {
    auto it = idf.find(lemma);
    if (it != idf.end()) return it->second;
    return std::log(1.0 + static_cast<double>(size())) + 1.0;
}

std::vector<std::string> content_lemmas(const AnnotatedSentence& sentence, const std::set<std::string>& stopwords) {
    std::vector<std::string> out;
    for (const auto& token : sentence.tokens) {
        if (is_content_pos(token.pos) && stopwords.count(token.lemma) == 0) out.push_back(token.lemma);
    }
    return out;
}

namespace {

std::map<std::string, std::size_t> counts(const std::vector<std::string>& lemmas) {
    std::map<std::string, std::size_t> out;
    for (const auto& lemma : lemmas) ++out[lemma];
    return out;
}

double tf_weight(std::size_t count, const IndexOptions& options) {
    const auto c = static_cast<double>(count);
    return options.sublinear_tf ? 1.0 + std::log(c) : c;
}

} // namespace

RetrievalIndex build_index(const std::vector<const AnnotatedSentence*>& pool, const std::set<std::string>& stopwords,
                           const IndexOptions& options) {
    if (pool.empty()) throw ValidationError("retrieval pool is empty");
    RetrievalIndex index;
    index.options = options;
    std::set<std::string> seen;
    std::vector<std::map<std::string, std::size_t>> term_counts;
    std::map<std::string, std::size_t> df;
    for (const auto* sentence : pool) {
        if (!seen.insert(sentence->sentence_id).second) {
            throw ValidationError("retrieval pool repeats sentence " + sentence->sentence_id);
        }
        index.ids.push_back(sentence->sentence_id);
        index.texts.push_back(sentence->text);
        term_counts.push_back(counts(content_lemmas(*sentence, stopwords)));
        for (const auto& [lemma, count] : term_counts.back()) ++df[lemma];
    }
    const auto n = static_cast<double>(pool.size());
    for (const auto& [lemma, d] : df) {
        index.idf[lemma] = std::log((1.0 + n) / (1.0 + static_cast<double>(d))) + 1.0;
    }
    for (const auto& tc : term_counts) {
        SparseVector vector;
        for (const auto& [lemma, count] : tc) vector[lemma] = tf_weight(count, options) * index.idf.at(lemma);
        index.vectors.push_back(std::move(vector));
    }
    return index;
}

SparseVector tfidf_vector(const RetrievalIndex& index, const std::vector<std::string>& lemmas) {
    SparseVector vector;
    for (const auto& [lemma, count] : counts(lemmas)) {
        vector[lemma] = tf_weight(count, index.options) * index.idf_of(lemma);
    }
    return vector;
}

double cosine(const SparseVector& a, const SparseVector& b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (const auto& [term, value] : a) {
        na += value * value;
        auto it = b.find(term);
        if (it != b.end()) dot += value * it->second;
    }
    for (const auto& [term, value] : b) nb += value * value;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<RetrievalHit> retrieve(const RetrievalIndex& index, const std::vector<std::string>& anchors,
                                   std::size_t k) {
    if (k == 0) return {};
    const SparseVector query = tfidf_vector(index, anchors);
    std::vector<RetrievalHit> hits(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) hits[i] = {i, cosine(query, index.vectors[i])};
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    hits.resize(std::min(k, hits.size()));
    return hits;
}

} // namespace anchorlab
