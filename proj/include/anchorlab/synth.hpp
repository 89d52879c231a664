#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "anchorlab/corpus.hpp"
#include "anchorlab/embedding_bank.hpp"
#include "anchorlab/encoder.hpp"

namespace anchorlab {

struct SynthSpec {
    std::size_t vocab_size = 50;
    std::size_t sentences = 500;
    std::size_t min_words = 6;
    std::size_t max_words = 12;
    /// Probability that a position holds an out-of-vocabulary filler word.
    double filler_rate = 0.3;
    /// +inf for noiseless features, -inf for pure noise.
    double snr_db = std::numeric_limits<double>::infinity();
    std::size_t feature_dim = 840;
    std::size_t bank_dim = 768;
    std::size_t word_dim = 300;
    std::size_t filler_vocab = 200;
    std::size_t subjects = 1;
    Task task = Task::SR1;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static SynthSpec from_json(const nlohmann::json& object);
};

/// Made-up keywords and fillers with their banks.
struct SynthLexicon {
    std::vector<std::string> keywords;
    std::vector<std::string> fillers;
    /// bank_dim, unit rows, keyword order.
    EmbeddingBank keyword_bank;
    /// word_dim, unit rows, keywords then fillers.
    EmbeddingBank word_bank;
};

SynthLexicon generate_lexicon(const SynthSpec& spec);

/// feature_dim x bank_dim Gaussian matrix fixed by the seed; redrawn on rank deficiency.
Matrix mixing_matrix(const SynthSpec& spec);

/// Keyword positions get M t_y + sigma * noise; filler positions get noise at the
/// mean signal power. Every position is a segment.
Dataset generate(const SynthSpec& spec, const SynthLexicon& lexicon);

struct SnrMeasurement {
    double snr_db = 0.0;
    std::size_t segments = 0;
    double signal_power = 0.0;
    double noise_power = 0.0;
};

/// Signal/noise power over keyword segments, recomputing the clean signal from the spec.
SnrMeasurement snr_report(const Dataset& dataset, const SynthSpec& spec, const SynthLexicon& lexicon);

/// Noise standard deviation implied by the spec; the second value is the filler/pure-noise level.
std::pair<double, double> noise_levels(const SynthSpec& spec, const Matrix& mixing, const EmbeddingBank& keyword_bank);

/// Writes dataset.jsonl, vocab.txt, keyword_bank.embk, word_bank.embk and spec.json into `dir`.
void write_synth(const std::filesystem::path& dir, const SynthSpec& spec, const SynthLexicon& lexicon,
                 const Dataset& dataset);

} // namespace anchorlab
