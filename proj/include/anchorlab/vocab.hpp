#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "anchorlab/corpus.hpp"
#include "anchorlab/embedding_bank.hpp"

namespace anchorlab {

/// Word lists and switches that keep function-like words out of the keyword pool.
struct ExclusionRules {
    std::set<std::string> stopwords;
    std::set<std::string> months;
    std::set<std::string> temporal;
    std::set<std::string> numerals_written;
    std::set<std::string> ordinals;
    std::set<std::string> quantificational;
    std::set<std::string> generational_suffixes;
    /// Proper-noun lemmas shorter than this are treated as abbreviations.
    std::size_t min_token_len = 3;
    bool exclude_person_entities = true;

    /// Reads `<dir>/{stopwords,months,temporal,numerals,ordinals,quantifiers,generational}.txt`.
    static ExclusionRules load(const std::filesystem::path& dir);
    /// The lists shipped under data/exclusions.
    static ExclusionRules defaults();

    /// True when the token can never be a keyword (content POS is checked separately).
    bool excludes(const AnnotatedToken& token) const;
};

/// Reads a one-lemma-per-line list; blank lines and `#` comments skipped, entries lowercased.
std::set<std::string> read_word_list(const std::filesystem::path& path);

bool contains_digit(std::string_view text);
/// Pure Roman numeral ("xiv", "MCM"); single "i" is not treated as one.
bool is_roman_numeral(std::string_view text);

/// Content lemmas of a sentence that survive the exclusion rules, in reading order, deduplicated.
std::vector<std::string> eligible_lemmas(const AnnotatedSentence& sentence, const ExclusionRules& rules);

/// lemma -> number of sentences containing it.
using FrequencyMap = std::map<std::string, std::size_t>;

FrequencyMap build_candidate_pool(const std::vector<AnnotatedSentence>& sentences,
                                  const ExclusionRules& rules);

struct FpsCandidate {
    std::string lemma;
    std::vector<double> vector; ///< unit length
    std::size_t frequency = 0;
};

enum class StartRule { MaxFrequency, FirstCandidate };
std::string to_string(StartRule rule);

/// Greedy farthest-point sampling under cosine distance.
///
/// Starts from `start_rule` (max frequency, ties by lemma), then repeatedly picks the
/// candidate whose minimum distance to the selected set is largest. Equal distances fall
/// back to higher frequency, then lexicographically smaller lemma.
std::vector<std::string> farthest_point_sample(std::span<const FpsCandidate> candidates, std::size_t k,
                                               StartRule start_rule = StartRule::MaxFrequency);

/// Continues an existing selection (which may include lemmas outside `candidates`, passed
/// through `selected_vectors`) until `count` more picks have been made or candidates run out.
std::vector<std::string> farthest_point_extend(std::span<const FpsCandidate> candidates,
                                               const std::vector<std::vector<double>>& selected_vectors,
                                               const std::set<std::string>& excluded, std::size_t count);

double cosine_distance(std::span<const double> a, std::span<const double> b);

enum class KeywordOrigin { Core, Refinement };
std::string to_string(KeywordOrigin origin);

struct KeywordEntry {
    std::string lemma;
    std::size_t frequency = 0;
    KeywordOrigin origin = KeywordOrigin::Core;
    /// 0-based position in the order the builder added it (before pruning).
    std::size_t step = 0;
};

struct SentenceCoverage {
    std::string sentence_id;
    std::size_t eligible = 0;
    std::size_t covered = 0;
};

struct KeywordVocabulary {
    std::size_t size_target = 0;
    std::uint64_t seed = 0;
    std::size_t min_freq = 5;
    std::size_t reserve = 0;
    StartRule start_rule = StartRule::MaxFrequency;
    std::vector<KeywordEntry> keywords;
    std::vector<SentenceCoverage> audit;
    std::vector<std::string> pruned;
    std::vector<std::string> dropped_no_embedding;
    /// Entries added after refinement to reach the budget.
    std::size_t fill_count = 0;
    bool overflow = false;

    std::vector<std::string> lemmas() const;
    bool contains(const std::string& lemma) const;
};

struct RefineContext {
    const FrequencyMap* frequency = nullptr;
    const EmbeddingBank* word_bank = nullptr;
    const ExclusionRules* rules = nullptr;
};

/// Coverage audit, refinement queue and budget-respecting pruning.
KeywordVocabulary audit_and_refine(const std::vector<std::string>& core,
                                   const std::vector<AnnotatedSentence>& sentences, std::size_t budget,
                                   const RefineContext& context);

/// Recomputes per-sentence (eligible, covered) against `keywords`.
std::vector<SentenceCoverage> audit_coverage(const std::vector<AnnotatedSentence>& sentences,
                                             const std::set<std::string>& keywords,
                                             const ExclusionRules& rules);

/// True when every sentence has at least min(2, eligible) covered keywords.
bool coverage_satisfied(const std::vector<SentenceCoverage>& audit);

struct VocabOptions {
    std::size_t min_freq = 5;
    double reserve_fraction = 0.2;
    std::uint64_t seed = 0;
    StartRule start_rule = StartRule::MaxFrequency;
    /// Optional lemma -> root map; at most one lemma per root enters the core.
    std::map<std::string, std::string> root_map;
    /// Minimum fraction of thresholded candidates that must have a word vector.
    double min_bank_coverage = 0.9;
};

KeywordVocabulary build_vocabulary(const std::vector<AnnotatedSentence>& sentences,
                                   const EmbeddingBank& word_bank, std::size_t size_target,
                                   const ExclusionRules& rules, const VocabOptions& options = {});

std::string vocabulary_text(const KeywordVocabulary& vocabulary);
nlohmann::json vocabulary_audit_json(const KeywordVocabulary& vocabulary);
/// Writes `<stem>.txt` and `<stem>.audit.json`-style pair: text at `path`, audit at `audit_path`.
void write_vocabulary(const std::filesystem::path& path, const std::filesystem::path& audit_path,
                      const KeywordVocabulary& vocabulary);
/// Keyword lemmas in file order.
std::vector<std::string> read_vocabulary(const std::filesystem::path& path);
/// Two-column "lemma root" file.
std::map<std::string, std::string> read_root_map(const std::filesystem::path& path);

/// Stable hash of the keyword list, stored in checkpoints.
std::string vocabulary_hash(const std::vector<std::string>& keywords);

} // namespace anchorlab
