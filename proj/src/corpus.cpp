#include "anchorlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"

namespace anchorlab {

using nlohmann::json;

std::string to_string(PosTag pos) {
    switch (pos) {
    case PosTag::Noun: return "NOUN";
    case PosTag::ProperNoun: return "PROPN";
    case PosTag::Verb: return "VERB";
    case PosTag::Adjective: return "ADJ";
    case PosTag::Other: return "OTHER";
    }
    return "OTHER";
}

std::string to_string(EntityTag entity) {
    switch (entity) {
    case EntityTag::Person: return "PERSON";
    case EntityTag::NonPersonEntity: return "NONPERSON_ENTITY";
    case EntityTag::None: return "NONE";
    }
    return "NONE";
}

std::string to_string(Task task) {
    switch (task) {
    case Task::SR1: return "SR1";
    case Task::NR1: return "NR1";
    case Task::NR2: return "NR2";
    case Task::TSR1: return "TSR1";
    }
    return "SR1";
}

PosTag parse_pos(const std::string& text) {
    if (text == "NOUN") return PosTag::Noun;
    if (text == "PROPN") return PosTag::ProperNoun;
    if (text == "VERB") return PosTag::Verb;
    if (text == "ADJ") return PosTag::Adjective;
    if (text == "OTHER") return PosTag::Other;
    throw ValidationError("unknown POS tag '" + text + "'");
}

EntityTag parse_entity(const std::string& text) {
    if (text == "PERSON") return EntityTag::Person;
    if (text == "NONPERSON_ENTITY") return EntityTag::NonPersonEntity;
    if (text == "NONE") return EntityTag::None;
    throw ValidationError("unknown entity tag '" + text + "'");
}

Task parse_task(const std::string& text) {
    if (text == "SR1") return Task::SR1;
    if (text == "NR1") return Task::NR1;
    if (text == "NR2") return Task::NR2;
    if (text == "TSR1") return Task::TSR1;
    throw ValidationError("unknown task '" + text + "'");
}

bool is_content_pos(PosTag pos) { return pos != PosTag::Other; }

void AnnotatedSentence::validate() const {
    if (sentence_id.empty()) {
        throw ValidationError("sentence with empty sentence_id");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& token = tokens[i];
        if (token.position != i) {
            throw ValidationError("sentence " + sentence_id + ": token positions must be 0..n-1, got " +
                                  std::to_string(token.position) + " at index " + std::to_string(i));
        }
        if (token.lemma.empty()) {
            throw ValidationError("sentence " + sentence_id + ": empty lemma at position " +
                                  std::to_string(i));
        }
        if (to_lower(token.lemma) != token.lemma) {
            throw ValidationError("sentence " + sentence_id + ": lemma '" + token.lemma +
                                  "' is not lowercased");
        }
    }
}

void SentenceMap::add(AnnotatedSentence sentence) {
    auto it = index_.find(sentence.sentence_id);
    if (it != index_.end()) {
        if (!(sentences_[it->second] == sentence)) {
            throw ValidationError("conflicting annotations for sentence_id " + sentence.sentence_id);
        }
        return;
    }
    index_.emplace(sentence.sentence_id, sentences_.size());
    sentences_.push_back(std::move(sentence));
}

const AnnotatedSentence& SentenceMap::at(const std::string& id) const {
    const auto* found = find(id);
    if (found == nullptr) {
        throw ValidationError("unknown sentence_id " + id);
    }
    return *found;
}

const AnnotatedSentence* SentenceMap::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &sentences_[it->second];
}

std::vector<const AnnotatedSentence*> SentenceMap::by_task(Task task) const {
    std::vector<const AnnotatedSentence*> out;
    for (const auto& sentence : sentences_) {
        if (sentence.task == task) {
            out.push_back(&sentence);
        }
    }
    return out;
}

json sentence_to_json(const AnnotatedSentence& sentence) {
    json tokens = json::array();
    for (const auto& token : sentence.tokens) {
        tokens.push_back({{"surface", token.surface},
                          {"lemma", token.lemma},
                          {"pos", to_string(token.pos)},
                          {"entity", to_string(token.entity)},
                          {"position", token.position}});
    }
    return {{"sentence_id", sentence.sentence_id},
            {"task", to_string(sentence.task)},
            {"text", sentence.text},
            {"tokens", std::move(tokens)}};
}

AnnotatedSentence sentence_from_json(const json& object) {
    AnnotatedSentence sentence;
    sentence.sentence_id = object.at("sentence_id").get<std::string>();
    sentence.task = parse_task(object.at("task").get<std::string>());
    sentence.text = object.at("text").get<std::string>();
    for (const auto& token : object.at("tokens")) {
        AnnotatedToken parsed;
        parsed.surface = token.at("surface").get<std::string>();
        parsed.lemma = token.at("lemma").get<std::string>();
        parsed.pos = parse_pos(token.at("pos").get<std::string>());
        parsed.entity = parse_entity(token.at("entity").get<std::string>());
        parsed.position = token.at("position").get<std::size_t>();
        sentence.tokens.push_back(std::move(parsed));
    }
    sentence.validate();
    return sentence;
}

namespace {

EegWordSequence sample_from_json(const json& object, const AnnotatedSentence& sentence,
                                 std::size_t feature_dim) {
    EegWordSequence sample;
    sample.sentence_id = sentence.sentence_id;
    sample.subject_id = object.at("subject_id").get<std::string>();
    if (sample.subject_id.empty()) {
        throw ValidationError("empty subject_id");
    }
    bool first = true;
    std::size_t previous = 0;
    for (const auto& entry : object.at("segments")) {
        Segment segment;
        segment.position = entry.at("position").get<std::size_t>();
        if (!first && segment.position <= previous) {
            throw ValidationError("segment positions must be strictly increasing");
        }
        if (segment.position >= sentence.tokens.size()) {
            throw ValidationError("segment position " + std::to_string(segment.position) +
                                  " has no token in sentence " + sentence.sentence_id);
        }
        const auto& features = entry.at("features");
        if (features.size() != feature_dim) {
            throw ValidationError("feature vector has " + std::to_string(features.size()) +
                                  " entries, expected " + std::to_string(feature_dim));
        }
        segment.features.reserve(feature_dim);
        for (const auto& value : features) {
            if (!value.is_number()) {
                throw ValidationError("non-numeric feature value");
            }
            const double v = value.get<double>();
            if (!std::isfinite(v)) {
                throw ValidationError("non-finite feature value");
            }
            segment.features.push_back(v);
        }
        previous = segment.position;
        first = false;
        sample.segments.push_back(std::move(segment));
    }
    return sample;
}

} // namespace

void parse_dataset_line(const std::string& line, std::size_t line_number,
                        const LoadOptions& options, Dataset& into) {
    try {
        const json object = json::parse(line);
        AnnotatedSentence sentence = sentence_from_json(object);
        if (object.contains("segments")) {
            into.samples.push_back(sample_from_json(object, sentence, options.feature_dim));
        }
        into.sentences.add(std::move(sentence));
    } catch (const json::exception& e) {
        throw ValidationError("line " + std::to_string(line_number) + ": malformed record: " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(line_number) + ": " + e.what());
    }
}

Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open dataset " + path.string());
    }
    Dataset dataset;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (trim(line).empty()) {
            continue;
        }
        parse_dataset_line(line, line_number, options, dataset);
    }
    return dataset;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw RuntimeFailure("cannot write dataset " + path.string());
    }
    std::set<std::string> with_samples;
    for (const auto& sample : dataset.samples) {
        with_samples.insert(sample.sentence_id);
    }
    for (const auto& sentence : dataset.sentences.ordered()) {
        if (!with_samples.count(sentence.sentence_id)) {
            out << sentence_to_json(sentence).dump() << '\n';
        }
    }
    for (const auto& sample : dataset.samples) {
        json object = sentence_to_json(dataset.sentences.at(sample.sentence_id));
        object["subject_id"] = sample.subject_id;
        json segments = json::array();
        for (const auto& segment : sample.segments) {
            segments.push_back({{"position", segment.position}, {"features", segment.features}});
        }
        object["segments"] = std::move(segments);
        out << object.dump() << '\n';
    }
}

std::vector<EegWordSequence> filter_samples(const std::vector<EegWordSequence>& samples,
                                            const SentenceMap& sentences) {
    std::vector<EegWordSequence> kept;
    for (const auto& sample : samples) {
        const auto* sentence = sentences.find(sample.sentence_id);
        if (sentence == nullptr) {
            throw ValidationError("sample references unknown sentence_id " + sample.sentence_id);
        }
        const std::size_t words = sentence->tokens.size();
        const std::size_t required = (words + 1) / 2;
        if (sample.segments.size() >= required) {
            kept.push_back(sample);
        }
    }
    return kept;
}

std::string to_string(SplitMode mode) {
    return mode == SplitMode::BySentence ? "by-sentence" : "leave-one-subject-out";
}

SplitMode parse_split_mode(const std::string& text) {
    if (text == "by-sentence") return SplitMode::BySentence;
    if (text == "leave-one-subject-out" || text == "loso") return SplitMode::LeaveOneSubjectOut;
    throw ConfigError("unknown split mode '" + text + "'");
}

void SplitSpec::validate() const {
    if (train < 0.0 || val < 0.0 || test < 0.0) {
        throw ConfigError("split ratios must be non-negative");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
}

std::vector<std::string> subjects_of(const std::vector<EegWordSequence>& samples) {
    std::set<std::string> subjects;
    for (const auto& sample : samples) {
        subjects.insert(sample.subject_id);
    }
    return {subjects.begin(), subjects.end()};
}

namespace {

std::vector<std::string> unique_ids(const std::vector<EegWordSequence>& samples,
                                    const std::vector<std::size_t>& indices) {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (std::size_t index : indices) {
        if (seen.insert(samples[index].sentence_id).second) {
            ids.push_back(samples[index].sentence_id);
        }
    }
    return ids;
}

Split loso_fold(const Dataset& dataset, const std::string& test_subject,
                const std::string& val_subject) {
    if (test_subject == val_subject) {
        throw ConfigError("validation subject must differ from held-out subject");
    }
    Split result;
    result.test_subject = test_subject;
    result.val_subject = val_subject;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& subject = dataset.samples[i].subject_id;
        if (subject == test_subject) {
            result.test_samples.push_back(i);
        } else if (subject == val_subject) {
            result.val_samples.push_back(i);
        } else {
            result.train_samples.push_back(i);
        }
    }
    result.train = unique_ids(dataset.samples, result.train_samples);
    result.val = unique_ids(dataset.samples, result.val_samples);
    result.test = unique_ids(dataset.samples, result.test_samples);
    return result;
}

} // namespace

Split split(const Dataset& dataset, const SplitSpec& spec) {
    spec.validate();
    if (spec.mode == SplitMode::LeaveOneSubjectOut) {
        const auto subjects = subjects_of(dataset.samples);
        if (subjects.size() < 3) {
            throw ConfigError("leave-one-subject-out needs at least 3 subjects, found " +
                              std::to_string(subjects.size()));
        }
        if (!spec.held_out_subject) {
            throw ConfigError("leave-one-subject-out split needs held_out_subject");
        }
        auto it = std::find(subjects.begin(), subjects.end(), *spec.held_out_subject);
        if (it == subjects.end()) {
            throw ConfigError("unknown held-out subject " + *spec.held_out_subject);
        }
        std::string val_subject;
        if (spec.val_subject) {
            if (std::find(subjects.begin(), subjects.end(), *spec.val_subject) == subjects.end()) {
                throw ConfigError("unknown validation subject " + *spec.val_subject);
            }
            val_subject = *spec.val_subject;
        } else {
            const auto next = static_cast<std::size_t>(it - subjects.begin() + 1) % subjects.size();
            val_subject = subjects[next];
        }
        return loso_fold(dataset, *spec.held_out_subject, val_subject);
    }

    // Sentence ids in corpus order: every sentence that has samples, or all sentences
    // when the dataset carries none.
    std::vector<std::string> ids;
    if (dataset.samples.empty()) {
        for (const auto& sentence : dataset.sentences.ordered()) {
            ids.push_back(sentence.sentence_id);
        }
    } else {
        std::vector<std::size_t> all(dataset.samples.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        ids = unique_ids(dataset.samples, all);
    }
    if (ids.size() < 10) {
        throw ConfigError("by-sentence split needs at least 10 sentences, found " +
                          std::to_string(ids.size()));
    }
    Rng rng(spec.seed);
    rng.shuffle(ids);
    const auto n = static_cast<double>(ids.size());
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train * n));
    const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::llround(spec.val * n)));

    Split result;
    result.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    result.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                      ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    result.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());

    const std::set<std::string> train_set(result.train.begin(), result.train.end());
    const std::set<std::string> val_set(result.val.begin(), result.val.end());
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& id = dataset.samples[i].sentence_id;
        if (train_set.count(id)) {
            result.train_samples.push_back(i);
        } else if (val_set.count(id)) {
            result.val_samples.push_back(i);
        } else {
            result.test_samples.push_back(i);
        }
    }
    return result;
}

std::vector<Split> loso_folds(const Dataset& dataset, const SplitSpec& spec) {
    const auto subjects = subjects_of(dataset.samples);
    if (subjects.size() < 3) {
        throw ConfigError("leave-one-subject-out needs at least 3 subjects, found " +
                          std::to_string(subjects.size()));
    }
    std::vector<Split> folds;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        SplitSpec fold_spec = spec;
        fold_spec.mode = SplitMode::LeaveOneSubjectOut;
        fold_spec.held_out_subject = subjects[i];
        fold_spec.val_subject = subjects[(i + 1) % subjects.size()];
        folds.push_back(split(dataset, fold_spec));
    }
    return folds;
}

json split_manifest(const Split& split, const SplitSpec& spec) {
    json manifest = {{"train", split.train},
                     {"val", split.val},
                     {"test", split.test},
                     {"spec",
                      {{"mode", to_string(spec.mode)},
                       {"ratios", {spec.train, spec.val, spec.test}},
                       {"seed", spec.seed},
                       {"prng", std::string(Rng::kName)}}}};
    if (split.test_subject) {
        manifest["spec"]["held_out_subject"] = *split.test_subject;
    }
    if (split.val_subject) {
        manifest["spec"]["val_subject"] = *split.val_subject;
    }
    return manifest;
}

void write_split_manifest(const std::filesystem::path& path, const Split& split,
                          const SplitSpec& spec) {
    std::ofstream out(path);
    if (!out) {
        throw RuntimeFailure("cannot write split manifest " + path.string());
    }
    out << split_manifest(split, spec).dump(2) << '\n';
}

} // namespace anchorlab
