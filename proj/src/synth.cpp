#include "anchorlab/synth.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"

namespace anchorlab {

using nlohmann::json;

namespace {

json encode_db(double value) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    return value;
}

double decode_db(const json& value) {
    if (value.is_string()) {
        const auto text = value.get<std::string>();
        if (text == "inf" || text == "+inf") return std::numeric_limits<double>::infinity();
        if (text == "-inf") return -std::numeric_limits<double>::infinity();
        throw ValidationError("bad snr_db '" + text + "'");
    }
    return value.get<double>();
}

enum Stream : std::uint64_t { kWords = 1, kKeywordBank = 2, kWordBank = 3, kMixing = 4, kSentence = 5, kNoise = 6 };

std::uint64_t stream_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
    return derive_seed(derive_seed(seed, stream), index);
}

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

Vector bank_row(const EmbeddingBank& bank, std::size_t i) {
    const auto v = bank.vector(i, false);
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

void SynthSpec::validate() const {
    if (vocab_size < 2) throw ConfigError("synthetic vocabulary needs at least 2 keywords");
    if (sentences < 1) throw ConfigError("synthetic corpus needs at least 1 sentence");
    if (min_words < 1 || max_words < min_words) throw ConfigError("word range must satisfy 1 <= min <= max");
    if (!(filler_rate >= 0.0 && filler_rate < 1.0)) throw ConfigError("filler_rate must lie in [0, 1)");
    if (feature_dim < bank_dim) {
        throw ConfigError("feature_dim must be >= bank_dim for a full-column-rank mixing matrix");
    }
    if (bank_dim == 0 || word_dim == 0 || subjects == 0) throw ConfigError("dimensions and subjects must be positive");
    if (filler_rate > 0.0 && filler_vocab == 0) throw ConfigError("filler_vocab must be positive");
    if (std::isnan(snr_db)) throw ConfigError("snr_db is NaN");
}

json SynthSpec::to_json() const {
    return {{"vocab_size", vocab_size},   {"sentences", sentences},     {"min_words", min_words},
            {"max_words", max_words},     {"filler_rate", filler_rate}, {"snr_db", encode_db(snr_db)},
            {"feature_dim", feature_dim}, {"bank_dim", bank_dim},       {"word_dim", word_dim},
            {"filler_vocab", filler_vocab}, {"subjects", subjects},     {"task", to_string(task)},
            {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& object) {
    SynthSpec spec;
    spec.vocab_size = object.value("vocab_size", spec.vocab_size);
    spec.sentences = object.value("sentences", spec.sentences);
    spec.min_words = object.value("min_words", spec.min_words);
    spec.max_words = object.value("max_words", spec.max_words);
    spec.filler_rate = object.value("filler_rate", spec.filler_rate);
    if (object.contains("snr_db")) spec.snr_db = decode_db(object["snr_db"]);
    spec.feature_dim = object.value("feature_dim", spec.feature_dim);
    spec.bank_dim = object.value("bank_dim", spec.bank_dim);
    spec.word_dim = object.value("word_dim", spec.word_dim);
    spec.filler_vocab = object.value("filler_vocab", spec.filler_vocab);
    spec.subjects = object.value("subjects", spec.subjects);
    spec.task = parse_task(object.value("task", std::string("SR1")));
    spec.seed = object.value("seed", spec.seed);
    spec.validate();
    return spec;
}

SynthLexicon generate_lexicon(const SynthSpec& spec) {
    spec.validate();
    static const std::string consonants = "bdfgklmnprstvz";
    static const std::string vowels = "aeiou";
    Rng words(stream_seed(spec.seed, kWords));
    std::set<std::string> used;
    auto next_word = [&]() {
        for (;;) {
            std::string word;
            for (int s = 0; s < 3; ++s) {
                word += consonants[words.below(consonants.size())];
                word += vowels[words.below(vowels.size())];
            }
            if (used.insert(word).second) return word;
        }
    };
    SynthLexicon lexicon;
    for (std::size_t i = 0; i < spec.vocab_size; ++i) lexicon.keywords.push_back(next_word());
    const std::size_t filler_count = spec.filler_rate > 0.0 ? spec.filler_vocab : 0;
    for (std::size_t i = 0; i < filler_count; ++i) lexicon.fillers.push_back(next_word());

    lexicon.keyword_bank = EmbeddingBank(spec.bank_dim);
    Rng kb(stream_seed(spec.seed, kKeywordBank));
    for (const auto& word : lexicon.keywords) {
        const auto v = random_unit(kb, spec.bank_dim);
        lexicon.keyword_bank.add(word, std::span<const double>(v));
    }
    lexicon.word_bank = EmbeddingBank(spec.word_dim);
    Rng wb(stream_seed(spec.seed, kWordBank));
    for (const auto* list : {&lexicon.keywords, &lexicon.fillers}) {
        for (const auto& word : *list) {
            const auto v = random_unit(wb, spec.word_dim);
            lexicon.word_bank.add(word, std::span<const double>(v));
        }
    }
    return lexicon;
}

Matrix mixing_matrix(const SynthSpec& spec) {
    spec.validate();
    constexpr int kAttempts = 8;
    const auto rows = static_cast<Eigen::Index>(spec.feature_dim);
    const auto cols = static_cast<Eigen::Index>(spec.bank_dim);
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        Rng rng(stream_seed(spec.seed, kMixing, static_cast<std::uint64_t>(attempt)));
        Matrix m(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(spec.bank_dim));
        for (Eigen::Index c = 0; c < cols; ++c) {
            for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
        }
        Eigen::ColPivHouseholderQR<Matrix> qr(m);
        if (qr.rank() == cols) return m;
    }
    throw RuntimeFailure("mixing matrix stayed rank deficient after retries");
}

std::pair<double, double> noise_levels(const SynthSpec& spec, const Matrix& mixing, const EmbeddingBank& keyword_bank) {
    double power = 0.0;
    for (std::size_t i = 0; i < keyword_bank.size(); ++i) power += (mixing * bank_row(keyword_bank, i)).squaredNorm();
    power /= static_cast<double>(keyword_bank.size());
    const auto dim = static_cast<double>(spec.feature_dim);
    const double pure = std::sqrt(power / dim);
    if (std::isinf(spec.snr_db)) return {spec.snr_db > 0 ? 0.0 : pure, pure};
    return {std::sqrt(power / (dim * std::pow(10.0, spec.snr_db / 10.0))), pure};
}

Dataset generate(const SynthSpec& spec, const SynthLexicon& lexicon) {
    spec.validate();
    if (lexicon.keywords.size() != spec.vocab_size || lexicon.keyword_bank.dim() != spec.bank_dim) {
        throw ValidationError("lexicon does not match the synthetic spec");
    }
    const Matrix mixing = mixing_matrix(spec);
    const auto [sigma, pure] = noise_levels(spec, mixing, lexicon.keyword_bank);
    const bool pure_noise = std::isinf(spec.snr_db) && spec.snr_db < 0;
    Matrix signals(static_cast<Eigen::Index>(spec.feature_dim), static_cast<Eigen::Index>(spec.vocab_size));
    for (std::size_t i = 0; i < spec.vocab_size; ++i) {
        signals.col(static_cast<Eigen::Index>(i)) = mixing * bank_row(lexicon.keyword_bank, i);
    }

    Dataset dataset;
    std::vector<std::vector<long>> labels;
    for (std::size_t s = 0; s < spec.sentences; ++s) {
        Rng rng(stream_seed(spec.seed, kSentence, s));
        const std::size_t length = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
        AnnotatedSentence sentence;
        sentence.sentence_id = fmt::format("synth-{:05d}", s);
        sentence.task = spec.task;
        std::vector<long> row;
        for (std::size_t p = 0; p < length; ++p) {
            // Keyword ids are >= 0; filler j is stored as -2 - j.
            if (rng.uniform() < spec.filler_rate) {
                row.push_back(-2 - static_cast<long>(rng.below(lexicon.fillers.size())));
            } else {
                row.push_back(static_cast<long>(rng.below(spec.vocab_size)));
            }
        }
        // Every sentence keeps at least one keyword.
        bool any = false;
        for (long v : row) any = any || v >= 0;
        if (!any) row[0] = static_cast<long>(rng.below(spec.vocab_size));
        for (std::size_t p = 0; p < row.size(); ++p) {
            AnnotatedToken token;
            token.position = p;
            if (row[p] >= 0) {
                token.lemma = lexicon.keywords[static_cast<std::size_t>(row[p])];
                token.pos = PosTag::Noun;
            } else {
                token.lemma = lexicon.fillers[static_cast<std::size_t>(-row[p] - 2)];
                token.pos = PosTag::Other;
            }
            token.surface = token.lemma;
            sentence.text += (p == 0 ? "" : " ") + token.surface;
            sentence.tokens.push_back(token);
        }
        sentence.text += ".";
        sentence.text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sentence.text[0])));
        labels.push_back(row);
        dataset.sentences.add(std::move(sentence));
    }

    for (std::size_t subject = 0; subject < spec.subjects; ++subject) {
        const std::string subject_id = fmt::format("S{:02d}", subject + 1);
        for (std::size_t s = 0; s < spec.sentences; ++s) {
            const auto& sentence = dataset.sentences.ordered()[s];
            Rng rng(stream_seed(spec.seed, kNoise, subject * spec.sentences + s));
            EegWordSequence sample{sentence.sentence_id, subject_id, {}};
            for (std::size_t p = 0; p < labels[s].size(); ++p) {
                const long label = labels[s][p];
                Segment segment{p, std::vector<double>(spec.feature_dim, 0.0)};
                const bool noise_only = label < 0 || pure_noise;
                const double level = noise_only ? pure : sigma;
                for (std::size_t d = 0; d < spec.feature_dim; ++d) {
                    const double clean = noise_only ? 0.0 : signals(static_cast<Eigen::Index>(d), label);
                    segment.features[d] = clean + (level > 0.0 ? level * rng.normal() : 0.0);
                }
                sample.segments.push_back(std::move(segment));
            }
            dataset.samples.push_back(std::move(sample));
        }
    }
    return dataset;
}

SnrMeasurement snr_report(const Dataset& dataset, const SynthSpec& spec, const SynthLexicon& lexicon) {
    SnrMeasurement out;
    if (std::isinf(spec.snr_db) && spec.snr_db > 0) {
        out.snr_db = spec.snr_db;
    }
    const Matrix mixing = mixing_matrix(spec);
    std::map<std::string, std::size_t> ids;
    for (std::size_t i = 0; i < lexicon.keywords.size(); ++i) ids.emplace(lexicon.keywords[i], i);
    for (const auto& sample : dataset.samples) {
        const auto& sentence = dataset.sentences.at(sample.sentence_id);
        for (const auto& segment : sample.segments) {
            auto it = ids.find(sentence.tokens.at(segment.position).lemma);
            if (it == ids.end()) continue;
            const Vector clean = mixing * bank_row(lexicon.keyword_bank, it->second);
            const Vector observed =
                Eigen::Map<const Vector>(segment.features.data(), static_cast<Eigen::Index>(segment.features.size()));
            out.signal_power += clean.squaredNorm();
            out.noise_power += (observed - clean).squaredNorm();
            ++out.segments;
        }
    }
    if (out.segments == 0) throw ValidationError("no keyword segments to measure");
    if (out.noise_power == 0.0) {
        out.snr_db = std::numeric_limits<double>::infinity();
    } else {
        out.snr_db = 10.0 * std::log10(out.signal_power / out.noise_power);
    }
    return out;
}

void write_synth(const std::filesystem::path& dir, const SynthSpec& spec, const SynthLexicon& lexicon,
                 const Dataset& dataset) {
    std::filesystem::create_directories(dir);
    write_dataset(dir / "dataset.jsonl", dataset);
    std::ofstream vocab(dir / "vocab.txt", std::ios::binary);
    vocab << "# anchorlab synthetic vocabulary\n";
    for (const auto& word : lexicon.keywords) vocab << word << '\n';
    vocab.close();
    lexicon.keyword_bank.save(dir / "keyword_bank.embk");
    lexicon.word_bank.save(dir / "word_bank.embk");
    std::ofstream sidecar(dir / "spec.json", std::ios::binary);
    sidecar << spec.to_json().dump(2) << '\n';
}

} // namespace anchorlab
