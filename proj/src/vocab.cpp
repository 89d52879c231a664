#include "anchorlab/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "anchorlab/common.hpp"

namespace anchorlab {

using nlohmann::json;

std::set<std::string> read_word_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open word list " + path.string());
    }
    std::set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        const std::string word = trim(line);
        if (word.empty() || word.front() == '#') {
            continue;
        }
        words.insert(to_lower(word));
    }
    return words;
}

ExclusionRules ExclusionRules::load(const std::filesystem::path& dir) {
    ExclusionRules rules;
    rules.stopwords = read_word_list(dir / "stopwords.txt");
    rules.months = read_word_list(dir / "months.txt");
    rules.temporal = read_word_list(dir / "temporal.txt");
    rules.numerals_written = read_word_list(dir / "numerals.txt");
    rules.ordinals = read_word_list(dir / "ordinals.txt");
    rules.quantificational = read_word_list(dir / "quantifiers.txt");
    rules.generational_suffixes = read_word_list(dir / "generational.txt");
    return rules;
}

ExclusionRules ExclusionRules::defaults() { return load(data_dir() / "exclusions"); }

bool contains_digit(std::string_view text) {
    return std::any_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); });
}

bool is_roman_numeral(std::string_view text) {
    if (text.size() < 2) {
        return false;
    }
    // Canonical form M{0,4}(CM|CD|D?C{0,3})(XC|XL|L?X{0,3})(IX|IV|V?I{0,3}).
    const std::string upper = [&] {
        std::string out(text);
        for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return out;
    }();
    std::size_t i = 0;
    auto repeat = [&](char c, std::size_t max) {
        std::size_t n = 0;
        while (i < upper.size() && upper[i] == c && n < max) {
            ++i;
            ++n;
        }
    };
    auto group = [&](char one, char five, char ten) {
        if (i + 1 < upper.size() && upper[i] == one && (upper[i + 1] == ten || upper[i + 1] == five)) {
            i += 2;
            return;
        }
        if (i < upper.size() && upper[i] == five) {
            ++i;
        }
        repeat(one, 3);
    };
    repeat('M', 4);
    group('C', 'D', 'M');
    group('X', 'L', 'C');
    group('I', 'V', 'X');
    return i == upper.size();
}

bool ExclusionRules::excludes(const AnnotatedToken& token) const {
    const std::string& lemma = token.lemma;
    const std::string surface = to_lower(token.surface);
    if (contains_digit(lemma) || contains_digit(surface)) return true;
    // Ordinary words such as "mix" spell valid numerals, so only capitalised forms count.
    if (is_roman_numeral(lemma)) {
        const bool all_caps = std::none_of(token.surface.begin(), token.surface.end(),
                                           [](unsigned char c) { return std::islower(c); });
        if (token.pos == PosTag::ProperNoun || all_caps) return true;
    }
    for (const auto* list : {&stopwords, &months, &temporal, &numerals_written, &ordinals,
                             &quantificational, &generational_suffixes}) {
        if (list->count(lemma) || list->count(surface)) {
            return true;
        }
    }
    if (exclude_person_entities && token.entity == EntityTag::Person) return true;
    if (token.pos == PosTag::ProperNoun && lemma.size() < min_token_len) return true;
    return false;
}

std::vector<std::string> eligible_lemmas(const AnnotatedSentence& sentence, const ExclusionRules& rules) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& token : sentence.tokens) {
        if (!is_content_pos(token.pos) || rules.excludes(token)) {
            continue;
        }
        if (seen.insert(token.lemma).second) {
            out.push_back(token.lemma);
        }
    }
    return out;
}

FrequencyMap build_candidate_pool(const std::vector<AnnotatedSentence>& sentences,
                                  const ExclusionRules& rules) {
    if (sentences.empty()) {
        throw ValidationError("cannot build a candidate pool from an empty corpus");
    }
    FrequencyMap pool;
    for (const auto& sentence : sentences) {
        for (const auto& lemma : eligible_lemmas(sentence, rules)) {
            ++pool[lemma];
        }
    }
    return pool;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
    }
    return 1.0 - dot;
}

std::string to_string(StartRule rule) {
    return rule == StartRule::MaxFrequency ? "max-frequency" : "first-candidate";
}

namespace {

// Larger distance wins; then higher frequency; then smaller lemma.
bool better_pick(double distance, const FpsCandidate& candidate, double best_distance,
                 const FpsCandidate& best) {
    if (distance != best_distance) return distance > best_distance;
    if (candidate.frequency != best.frequency) return candidate.frequency > best.frequency;
    return candidate.lemma < best.lemma;
}

std::vector<std::string> fps_loop(std::span<const FpsCandidate> candidates, std::vector<double> min_distance,
                                  std::vector<bool> taken, std::size_t count) {
    std::vector<std::string> picks;
    while (picks.size() < count) {
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (taken[i]) continue;
            if (!best || better_pick(min_distance[i], candidates[i], min_distance[*best], candidates[*best])) {
                best = i;
            }
        }
        if (!best) break;
        taken[*best] = true;
        picks.push_back(candidates[*best].lemma);
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (!taken[i]) {
                min_distance[i] = std::min(min_distance[i],
                                           cosine_distance(candidates[i].vector, candidates[*best].vector));
            }
        }
    }
    return picks;
}

void check_candidates(std::span<const FpsCandidate> candidates) {
    std::set<std::string> seen;
    for (const auto& candidate : candidates) {
        if (!seen.insert(candidate.lemma).second) {
            throw ValidationError("duplicate FPS candidate '" + candidate.lemma + "'");
        }
        if (candidate.vector.size() != candidates.front().vector.size()) {
            throw ValidationError("FPS candidates must share one dimension");
        }
        double norm = 0.0;
        for (double v : candidate.vector) norm += v * v;
        if (std::abs(std::sqrt(norm) - 1.0) > 1e-6) {
            throw ValidationError("FPS candidate '" + candidate.lemma + "' is not unit length");
        }
    }
}

} // namespace

std::vector<std::string> farthest_point_sample(std::span<const FpsCandidate> candidates, std::size_t k,
                                               StartRule start_rule) {
    if (k > candidates.size()) {
        throw ConfigError("farthest-point sampling asked for " + std::to_string(k) + " of " +
                          std::to_string(candidates.size()) + " candidates");
    }
    check_candidates(candidates);
    if (k == 0) {
        return {};
    }
    // With an empty selection every distance is +inf, so the first pick is decided by the
    // frequency/lemma tie-break, which is exactly the max-frequency start rule.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> min_distance(candidates.size(), inf);
    std::vector<bool> taken(candidates.size(), false);
    if (start_rule == StartRule::FirstCandidate) {
        taken[0] = true;
        for (std::size_t i = 1; i < candidates.size(); ++i) {
            min_distance[i] = cosine_distance(candidates[i].vector, candidates[0].vector);
        }
        auto rest = fps_loop(candidates, std::move(min_distance), std::move(taken), k - 1);
        rest.insert(rest.begin(), candidates[0].lemma);
        return rest;
    }
    return fps_loop(candidates, std::move(min_distance), std::move(taken), k);
}

std::vector<std::string> farthest_point_extend(std::span<const FpsCandidate> candidates,
                                               const std::vector<std::vector<double>>& selected_vectors,
                                               const std::set<std::string>& excluded, std::size_t count) {
    check_candidates(candidates);
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> min_distance(candidates.size(), inf);
    std::vector<bool> taken(candidates.size(), false);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        taken[i] = excluded.count(candidates[i].lemma) != 0;
        for (const auto& selected : selected_vectors) {
            min_distance[i] = std::min(min_distance[i], cosine_distance(candidates[i].vector, selected));
        }
    }
    return fps_loop(candidates, std::move(min_distance), std::move(taken), count);
}

std::string to_string(KeywordOrigin origin) {
    return origin == KeywordOrigin::Core ? "core" : "refinement";
}

std::vector<std::string> KeywordVocabulary::lemmas() const {
    std::vector<std::string> out;
    out.reserve(keywords.size());
    for (const auto& entry : keywords) out.push_back(entry.lemma);
    return out;
}

bool KeywordVocabulary::contains(const std::string& lemma) const {
    return std::any_of(keywords.begin(), keywords.end(), [&](const auto& e) { return e.lemma == lemma; });
}

std::vector<SentenceCoverage> audit_coverage(const std::vector<AnnotatedSentence>& sentences,
                                             const std::set<std::string>& keywords,
                                             const ExclusionRules& rules) {
    std::vector<SentenceCoverage> audit;
    audit.reserve(sentences.size());
    for (const auto& sentence : sentences) {
        const auto eligible = eligible_lemmas(sentence, rules);
        SentenceCoverage row{sentence.sentence_id, eligible.size(), 0};
        for (const auto& lemma : eligible) {
            row.covered += keywords.count(lemma);
        }
        audit.push_back(row);
    }
    return audit;
}

bool coverage_satisfied(const std::vector<SentenceCoverage>& audit) {
    return std::all_of(audit.begin(), audit.end(),
                       [](const auto& row) { return row.covered >= std::min<std::size_t>(2, row.eligible); });
}

namespace {

std::optional<std::vector<double>> unit_vector(const EmbeddingBank* bank, const std::string& lemma) {
    if (bank == nullptr) return std::nullopt;
    const auto index = bank->index_of(lemma);
    if (!index) return std::nullopt;
    return bank->vector(*index, true);
}

} // namespace

KeywordVocabulary audit_and_refine(const std::vector<std::string>& core,
                                   const std::vector<AnnotatedSentence>& sentences, std::size_t budget,
                                   const RefineContext& context) {
    if (context.rules == nullptr || context.frequency == nullptr) {
        throw std::invalid_argument("audit_and_refine needs exclusion rules and frequencies");
    }
    const auto& rules = *context.rules;
    const auto& frequency = *context.frequency;
    auto frequency_of = [&](const std::string& lemma) -> std::size_t {
        auto it = frequency.find(lemma);
        return it == frequency.end() ? 0 : it->second;
    };

    KeywordVocabulary vocabulary;
    vocabulary.size_target = budget;
    std::set<std::string> in_vocab;
    std::size_t step = 0;
    for (const auto& lemma : core) {
        if (in_vocab.insert(lemma).second) {
            vocabulary.keywords.push_back({lemma, frequency_of(lemma), KeywordOrigin::Core, step++});
        }
    }

    // Audit against the core only; the queue is global and deduplicated in arrival order.
    const std::set<std::string> core_set(core.begin(), core.end());
    std::vector<std::string> queue;
    std::set<std::string> queued;
    auto enqueue = [&](const std::string& lemma) {
        if (!core_set.count(lemma) && queued.insert(lemma).second) {
            queue.push_back(lemma);
        }
    };
    for (const auto& sentence : sentences) {
        const auto eligible = eligible_lemmas(sentence, rules);
        std::size_t covered = 0;
        for (const auto& lemma : eligible) covered += core_set.count(lemma);
        if (eligible.size() < 2) {
            for (const auto& lemma : eligible) enqueue(lemma);
        } else if (covered == 0) {
            enqueue(eligible[0]);
            enqueue(eligible[1]);
        } else if (covered == 1) {
            for (const auto& lemma : eligible) {
                if (!core_set.count(lemma)) {
                    enqueue(lemma);
                    break;
                }
            }
        }
    }
    for (const auto& lemma : queue) {
        in_vocab.insert(lemma);
        vocabulary.keywords.push_back({lemma, frequency_of(lemma), KeywordOrigin::Refinement, step++});
    }

    // Prune back to budget without dropping any sentence below min(2, eligible) covered.
    std::vector<std::vector<std::string>> sentence_eligible;
    sentence_eligible.reserve(sentences.size());
    for (const auto& sentence : sentences) sentence_eligible.push_back(eligible_lemmas(sentence, rules));

    while (vocabulary.keywords.size() > budget) {
        std::map<std::string, std::size_t> blocking; // lemma -> sentences that need it
        for (const auto& eligible : sentence_eligible) {
            std::size_t covered = 0;
            for (const auto& lemma : eligible) covered += in_vocab.count(lemma);
            const std::size_t required = std::min<std::size_t>(2, eligible.size());
            if (covered <= required) {
                for (const auto& lemma : eligible) {
                    if (in_vocab.count(lemma)) ++blocking[lemma];
                }
            }
        }
        std::optional<std::size_t> victim;
        double victim_redundancy = 0.0;
        for (std::size_t i = 0; i < vocabulary.keywords.size(); ++i) {
            const auto& entry = vocabulary.keywords[i];
            if (blocking.count(entry.lemma)) continue;
            double redundancy = std::numeric_limits<double>::infinity();
            if (const auto self = unit_vector(context.word_bank, entry.lemma)) {
                for (const auto& other : vocabulary.keywords) {
                    if (other.lemma == entry.lemma) continue;
                    if (const auto vec = unit_vector(context.word_bank, other.lemma)) {
                        redundancy = std::min(redundancy, cosine_distance(*self, *vec));
                    }
                }
            }
            bool better = !victim;
            if (victim) {
                const auto& current = vocabulary.keywords[*victim];
                if (entry.frequency != current.frequency) {
                    better = entry.frequency < current.frequency;
                } else if (redundancy != victim_redundancy) {
                    better = redundancy < victim_redundancy;
                } else {
                    better = entry.lemma < current.lemma;
                }
            }
            if (better) {
                victim = i;
                victim_redundancy = redundancy;
            }
        }
        if (!victim) {
            vocabulary.overflow = true;
            spdlog::warn("keyword vocabulary overflows budget {} with {} entries: no entry can be pruned "
                         "without breaking coverage",
                         budget, vocabulary.keywords.size());
            break;
        }
        in_vocab.erase(vocabulary.keywords[*victim].lemma);
        vocabulary.pruned.push_back(vocabulary.keywords[*victim].lemma);
        vocabulary.keywords.erase(vocabulary.keywords.begin() + static_cast<std::ptrdiff_t>(*victim));
    }

    vocabulary.audit = audit_coverage(sentences, in_vocab, rules);
    return vocabulary;
}

KeywordVocabulary build_vocabulary(const std::vector<AnnotatedSentence>& sentences,
                                   const EmbeddingBank& word_bank, std::size_t size_target,
                                   const ExclusionRules& rules, const VocabOptions& options) {
    if (size_target < 2) {
        throw ConfigError("vocabulary size must be at least 2");
    }
    const FrequencyMap pool = build_candidate_pool(sentences, rules);

    std::vector<std::string> thresholded;
    for (const auto& [lemma, count] : pool) {
        if (count >= options.min_freq) thresholded.push_back(lemma);
    }
    if (thresholded.size() < size_target) {
        throw ConfigError("only " + std::to_string(thresholded.size()) + " candidate lemmas reach min_freq=" +
                          std::to_string(options.min_freq) + " but V=" + std::to_string(size_target) +
                          "; lower min_freq or V");
    }

    // Root-map dedup: keep the most frequent lemma per root (ties by lemma).
    std::map<std::string, std::string> root_winner;
    for (const auto& lemma : thresholded) {
        auto it = options.root_map.find(lemma);
        const std::string root = it == options.root_map.end() ? lemma : it->second;
        auto [slot, inserted] = root_winner.emplace(root, lemma);
        if (!inserted) {
            const auto current = pool.at(slot->second);
            const auto mine = pool.at(lemma);
            if (mine > current || (mine == current && lemma < slot->second)) slot->second = lemma;
        }
    }

    std::vector<std::string> dropped;
    std::vector<FpsCandidate> candidates;
    for (const auto& lemma : thresholded) {
        auto it = options.root_map.find(lemma);
        const std::string root = it == options.root_map.end() ? lemma : it->second;
        if (root_winner.at(root) != lemma) continue;
        const auto index = word_bank.index_of(lemma);
        if (!index) {
            dropped.push_back(lemma);
            continue;
        }
        candidates.push_back({lemma, word_bank.vector(*index, true), pool.at(lemma)});
    }
    const double bank_coverage =
        1.0 - static_cast<double>(dropped.size()) / static_cast<double>(thresholded.size());
    if (bank_coverage < options.min_bank_coverage) {
        throw ValidationError("word bank covers only " + std::to_string(bank_coverage * 100.0) +
                              "% of candidate lemmas");
    }
    if (!dropped.empty()) {
        spdlog::warn("{} candidate lemmas have no word vector and are left out of diversity selection",
                     dropped.size());
    }

    const auto reserve = static_cast<std::size_t>(std::llround(options.reserve_fraction * static_cast<double>(size_target)));
    const std::size_t core_size = std::min(candidates.size(), size_target - std::min(reserve, size_target - 1));
    const auto core = farthest_point_sample(candidates, core_size, options.start_rule);

    RefineContext context{&pool, &word_bank, &rules};
    KeywordVocabulary vocabulary = audit_and_refine(core, sentences, size_target, context);

    if (vocabulary.keywords.size() < size_target) {
        std::vector<std::vector<double>> selected;
        std::set<std::string> excluded;
        for (const auto& entry : vocabulary.keywords) {
            excluded.insert(entry.lemma);
            if (const auto vec = unit_vector(&word_bank, entry.lemma)) selected.push_back(*vec);
        }
        for (const auto& lemma : vocabulary.pruned) excluded.insert(lemma);
        const auto extra =
            farthest_point_extend(candidates, selected, excluded, size_target - vocabulary.keywords.size());
        std::size_t step = vocabulary.keywords.size() + vocabulary.pruned.size();
        std::set<std::string> final_set;
        for (const auto& lemma : extra) {
            vocabulary.keywords.push_back({lemma, pool.at(lemma), KeywordOrigin::Core, step++});
        }
        vocabulary.fill_count = extra.size();
        for (const auto& entry : vocabulary.keywords) final_set.insert(entry.lemma);
        vocabulary.audit = audit_coverage(sentences, final_set, rules);
    }

    vocabulary.seed = options.seed;
    vocabulary.min_freq = options.min_freq;
    vocabulary.reserve = size_target - core_size;
    vocabulary.start_rule = options.start_rule;
    vocabulary.dropped_no_embedding = std::move(dropped);
    return vocabulary;
}

std::string vocabulary_text(const KeywordVocabulary& vocabulary) {
    std::size_t core = 0;
    std::size_t refinement = 0;
    for (const auto& entry : vocabulary.keywords) {
        (entry.origin == KeywordOrigin::Core ? core : refinement) += 1;
    }
    std::ostringstream out;
    out << "# anchorlab keyword vocabulary v1\n";
    out << "# V=" << vocabulary.size_target << " seed=" << vocabulary.seed << " min_freq=" << vocabulary.min_freq
        << " reserve=" << vocabulary.reserve << " start_rule=" << to_string(vocabulary.start_rule) << '\n';
    out << "# counts: keywords=" << vocabulary.keywords.size() << " core=" << core << " refinement=" << refinement
        << " fill=" << vocabulary.fill_count << " pruned=" << vocabulary.pruned.size()
        << " dropped_no_embedding=" << vocabulary.dropped_no_embedding.size()
        << " overflow=" << (vocabulary.overflow ? 1 : 0) << '\n';
    for (const auto& entry : vocabulary.keywords) {
        out << entry.lemma << '\n';
    }
    return out.str();
}

json vocabulary_audit_json(const KeywordVocabulary& vocabulary) {
    json keywords = json::array();
    for (const auto& entry : vocabulary.keywords) {
        keywords.push_back({{"lemma", entry.lemma},
                            {"frequency", entry.frequency},
                            {"origin", to_string(entry.origin)},
                            {"step", entry.step}});
    }
    json sentences = json::array();
    for (const auto& row : vocabulary.audit) {
        sentences.push_back({{"sentence_id", row.sentence_id}, {"eligible", row.eligible}, {"covered", row.covered}});
    }
    return {{"V", vocabulary.size_target},
            {"seed", vocabulary.seed},
            {"min_freq", vocabulary.min_freq},
            {"reserve", vocabulary.reserve},
            {"start_rule", to_string(vocabulary.start_rule)},
            {"overflow", vocabulary.overflow},
            {"coverage_satisfied", coverage_satisfied(vocabulary.audit)},
            {"keywords", std::move(keywords)},
            {"pruned", vocabulary.pruned},
            {"fill", vocabulary.fill_count},
            {"dropped_no_embedding", vocabulary.dropped_no_embedding},
            {"sentences", std::move(sentences)}};
}

void write_vocabulary(const std::filesystem::path& path, const std::filesystem::path& audit_path,
                      const KeywordVocabulary& vocabulary) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw RuntimeFailure("cannot write vocabulary " + path.string());
        out << vocabulary_text(vocabulary);
    }
    std::ofstream audit(audit_path, std::ios::binary);
    if (!audit) throw RuntimeFailure("cannot write vocabulary audit " + audit_path.string());
    audit << vocabulary_audit_json(vocabulary).dump(2) << '\n';
}

std::vector<std::string> read_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open vocabulary " + path.string());
    }
    std::vector<std::string> keywords;
    std::set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        const std::string word = trim(line);
        if (word.empty() || word.front() == '#') continue;
        if (!seen.insert(word).second) {
            throw ValidationError("duplicate keyword '" + word + "' in " + path.string());
        }
        keywords.push_back(word);
    }
    if (keywords.empty()) {
        throw ValidationError("vocabulary " + path.string() + " is empty");
    }
    return keywords;
}

std::map<std::string, std::string> read_root_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open root map " + path.string());
    }
    std::map<std::string, std::string> roots;
    std::string line;
    while (std::getline(in, line)) {
        const std::string content = trim(line);
        if (content.empty() || content.front() == '#') continue;
        std::istringstream fields(content);
        std::string lemma;
        std::string root;
        if (!(fields >> lemma >> root)) {
            throw ValidationError("root map line needs 'lemma root': " + content);
        }
        roots[to_lower(lemma)] = to_lower(root);
    }
    return roots;
}

std::string vocabulary_hash(const std::vector<std::string>& keywords) {
    std::string joined;
    for (const auto& keyword : keywords) {
        joined += keyword;
        joined += '\n';
    }
    std::ostringstream out;
    out << std::hex << fnv1a64(joined);
    return out.str();
}

} // namespace anchorlab
