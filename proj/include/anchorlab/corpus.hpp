#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace anchorlab {

inline constexpr std::size_t kPaperFeatureDim = 840;

enum class PosTag { Noun, ProperNoun, Verb, Adjective, Other };
enum class EntityTag { Person, NonPersonEntity, None };
enum class Task { SR1, NR1, NR2, TSR1 };

std::string to_string(PosTag pos);
std::string to_string(EntityTag entity);
std::string to_string(Task task);
PosTag parse_pos(const std::string& text);
EntityTag parse_entity(const std::string& text);
Task parse_task(const std::string& text);

/// NOUN, PROPN, VERB or ADJ.
bool is_content_pos(PosTag pos);

struct AnnotatedToken {
    std::string surface;
    std::string lemma;
    PosTag pos = PosTag::Other;
    EntityTag entity = EntityTag::None;
    std::size_t position = 0;

    bool operator==(const AnnotatedToken&) const = default;
};

struct AnnotatedSentence {
    std::string sentence_id;
    Task task = Task::SR1;
    std::string text;
    std::vector<AnnotatedToken> tokens;

    /// Throws ValidationError when lemmas or positions break the invariants.
    void validate() const;
    bool operator==(const AnnotatedSentence&) const = default;
};

struct Segment {
    std::size_t position = 0;
    std::vector<double> features;

    bool operator==(const Segment&) const = default;
};

/// One subject's reading of one sentence: word-aligned feature vectors in reading order.
struct EegWordSequence {
    std::string sentence_id;
    std::string subject_id;
    std::vector<Segment> segments;

    bool operator==(const EegWordSequence&) const = default;
};

/// Sentences keyed by id, with corpus (first appearance) order kept separately.
class SentenceMap {
  public:
    /// Inserts, or checks that an existing entry is identical.
    void add(AnnotatedSentence sentence);
    const AnnotatedSentence& at(const std::string& id) const;
    const AnnotatedSentence* find(const std::string& id) const;
    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    std::size_t size() const { return sentences_.size(); }
    bool empty() const { return sentences_.empty(); }
    const std::vector<AnnotatedSentence>& ordered() const { return sentences_; }
    /// Sentences of one task in corpus order.
    std::vector<const AnnotatedSentence*> by_task(Task task) const;

  private:
    std::vector<AnnotatedSentence> sentences_;
    std::map<std::string, std::size_t> index_;
};

struct Dataset {
    SentenceMap sentences;
    std::vector<EegWordSequence> samples;
};

struct LoadOptions {
    std::size_t feature_dim = kPaperFeatureDim;
};

/// Reads a JSONL dataset. Lines carrying `segments` are samples, others are sentence-only.
Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options = {});
/// Parses a single dataset line; `line_number` only feeds error messages.
void parse_dataset_line(const std::string& line, std::size_t line_number,
                        const LoadOptions& options, Dataset& into);
/// Samples become full lines; sentences without any sample get sentence-only lines.
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);

nlohmann::json sentence_to_json(const AnnotatedSentence& sentence);
AnnotatedSentence sentence_from_json(const nlohmann::json& object);

/// Keeps samples with at least ceil(words / 2) segments; order preserved.
std::vector<EegWordSequence> filter_samples(const std::vector<EegWordSequence>& samples,
                                            const SentenceMap& sentences);

enum class SplitMode { BySentence, LeaveOneSubjectOut };

struct SplitSpec {
    SplitMode mode = SplitMode::BySentence;
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
    std::uint64_t seed = 0;
    std::optional<std::string> held_out_subject;
    std::optional<std::string> val_subject;

    void validate() const;
};

struct Split {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    /// Indices into Dataset::samples for each part.
    std::vector<std::size_t> train_samples;
    std::vector<std::size_t> val_samples;
    std::vector<std::size_t> test_samples;
    std::optional<std::string> test_subject;
    std::optional<std::string> val_subject;
};

/// By-sentence split, or a single LOSO fold (held_out_subject required in that mode).
Split split(const Dataset& dataset, const SplitSpec& spec);
/// Every LOSO fold: subject i tests, the next subject (cyclic, sorted order) validates.
std::vector<Split> loso_folds(const Dataset& dataset, const SplitSpec& spec);

std::vector<std::string> subjects_of(const std::vector<EegWordSequence>& samples);

nlohmann::json split_manifest(const Split& split, const SplitSpec& spec);
void write_split_manifest(const std::filesystem::path& path, const Split& split,
                          const SplitSpec& spec);

std::string to_string(SplitMode mode);
SplitMode parse_split_mode(const std::string& text);

} // namespace anchorlab
