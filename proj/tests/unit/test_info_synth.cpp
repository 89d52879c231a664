#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"
#include "anchorlab/info_scale.hpp"
#include "anchorlab/synth.hpp"
#include "anchorlab/vocab.hpp"
#include "test_util.hpp"

using namespace anchorlab;

namespace {

SynthSpec small_spec(double snr_db) {
    SynthSpec spec;
    spec.vocab_size = 12;
    spec.sentences = 60;
    spec.feature_dim = 48;
    spec.bank_dim = 24;
    spec.word_dim = 16;
    spec.filler_vocab = 20;
    spec.snr_db = snr_db;
    spec.seed = 5;
    return spec;
}

double mean_power(const Dataset& data, bool keywords, const std::set<std::string>& keyword_set) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& sample : data.samples) {
        const auto& sentence = data.sentences.at(sample.sentence_id);
        for (const auto& seg : sample.segments) {
            if (keyword_set.count(sentence.tokens[seg.position].lemma) != static_cast<std::size_t>(keywords)) continue;
            for (double v : seg.features) total += v * v;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

} // namespace

TEST_CASE("anchor entropy and sentence bound") {
    CHECK(anchor_entropy(100, 3) == doctest::Approx(19.93).epsilon(0.05 / 19.93));
    CHECK(anchor_entropy(100, 5) == doctest::Approx(33.22).epsilon(0.05 / 33.22));
    CHECK(anchor_entropy(100, 7) == doctest::Approx(46.51).epsilon(0.05 / 46.51));
    CHECK(sentence_lower_bound(20, 100) == doctest::Approx(132.88).epsilon(0.05 / 132.88));
    CHECK(anchor_entropy(100, 3, false) == doctest::Approx(std::log2(100.0 * 99.0 * 98.0)));
    CHECK(anchor_entropy(1, 4) == 0.0);
    CHECK_THROWS_AS(anchor_entropy(0, 1), ValidationError);
    CHECK_THROWS_AS(anchor_entropy(3, 4, false), ValidationError);

    const auto rows = scale_table(100, {3, 5, 7}, 20);
    REQUIRE(rows.size() == 4);
    CHECK(rows.back().bits == doctest::Approx(20 * std::log2(100.0)));
    const auto csv = scale_table_csv(rows);
    CHECK(csv.find("132.8") != std::string::npos);
    CHECK(scale_table_json(rows).size() == 4);
}

TEST_CASE("synthetic lexicon") {
    const auto spec = small_spec(20.0);
    const auto lexicon = generate_lexicon(spec);
    CHECK(lexicon.keywords.size() == 12);
    CHECK(lexicon.fillers.size() == 20);
    CHECK(lexicon.keyword_bank.dim() == 24);
    CHECK(lexicon.word_bank.dim() == 16);
    CHECK(lexicon.word_bank.size() == 32);
    CHECK(lexicon.keyword_bank.max_norm_deviation() < 1e-5);
    std::set<std::string> all(lexicon.keywords.begin(), lexicon.keywords.end());
    all.insert(lexicon.fillers.begin(), lexicon.fillers.end());
    CHECK(all.size() == 32);
    // The vocabulary builder must not throw fillers or keywords away as function words.
    const auto rules = ExclusionRules::defaults();
    for (const auto& word : all) {
        AnnotatedToken token;
        token.surface = word;
        token.lemma = word;
        token.pos = PosTag::Noun;
        CHECK_FALSE(rules.excludes(token));
    }
    CHECK(generate_lexicon(spec).keywords == lexicon.keywords);
}

TEST_CASE("synthetic corpus shape and determinism") {
    const auto spec = small_spec(20.0);
    const auto lexicon = generate_lexicon(spec);
    const auto data = generate(spec, lexicon);
    CHECK(data.sentences.size() == 60);
    CHECK(data.samples.size() == 60);
    const std::set<std::string> keywords(lexicon.keywords.begin(), lexicon.keywords.end());
    for (const auto& sample : data.samples) {
        const auto& sentence = data.sentences.at(sample.sentence_id);
        CHECK(sentence.tokens.size() >= spec.min_words);
        CHECK(sentence.tokens.size() <= spec.max_words);
        CHECK(sample.segments.size() == sentence.tokens.size());
        CHECK(sample.segments.front().features.size() == 48);
        std::size_t kw = 0;
        for (const auto& t : sentence.tokens) kw += keywords.count(t.lemma);
        CHECK(kw >= 1);
    }
    CHECK(generate(spec, lexicon).samples == data.samples);
    auto other = spec;
    other.seed = 6;
    CHECK(generate(other, generate_lexicon(other)).samples != data.samples);

    auto dir = testutil::scratch("synth");
    write_synth(dir, spec, lexicon, data);
    for (const char* name : {"dataset.jsonl", "vocab.txt", "keyword_bank.embk", "word_bank.embk", "spec.json"}) {
        CHECK(std::filesystem::exists(dir / name));
    }
    CHECK(load_dataset(dir / "dataset.jsonl", LoadOptions{48}).samples == data.samples);
    CHECK(read_vocabulary(dir / "vocab.txt") == lexicon.keywords);
    CHECK(SynthSpec::from_json(spec.to_json()).to_json() == spec.to_json());
}

TEST_CASE("measured SNR tracks the requested level") {
    for (double target : {20.0, 10.0, 0.0, -5.0}) {
        const auto spec = small_spec(target);
        const auto lexicon = generate_lexicon(spec);
        const auto data = generate(spec, lexicon);
        const auto measured = snr_report(data, spec, lexicon);
        CHECK(std::fabs(measured.snr_db - target) < 0.5);
        if (target == 0.0) {
            CHECK(std::fabs(measured.noise_power / measured.signal_power - 1.0) < 0.12);
        }
    }
}

TEST_CASE("noiseless and pure-noise extremes") {
    const auto clean_spec = small_spec(std::numeric_limits<double>::infinity());
    const auto lexicon = generate_lexicon(clean_spec);
    const auto clean = generate(clean_spec, lexicon);
    const auto measured = snr_report(clean, clean_spec, lexicon);
    CHECK(std::isinf(measured.snr_db));
    CHECK(measured.noise_power == doctest::Approx(0.0));

    // Fillers carry noise at the mean keyword signal power.
    const std::set<std::string> keywords(lexicon.keywords.begin(), lexicon.keywords.end());
    const double signal = mean_power(clean, true, keywords);
    const double filler = mean_power(clean, false, keywords);
    CHECK(std::fabs(filler / signal - 1.0) < 0.12);

    auto noise_spec = clean_spec;
    noise_spec.snr_db = -std::numeric_limits<double>::infinity();
    const auto noise = generate(noise_spec, lexicon);
    // Keyword segments carry no signal at all.
    const auto mixing = mixing_matrix(noise_spec);
    const auto levels = noise_levels(noise_spec, mixing, lexicon.keyword_bank);
    CHECK(levels.second > 0.0);
    CHECK(std::fabs(mean_power(noise, true, keywords) / signal - 1.0) < 0.12);
    CHECK(snr_report(noise, noise_spec, lexicon).snr_db < -1.0);
}

TEST_CASE("spec validation") {
    auto spec = small_spec(10.0);
    spec.feature_dim = 10;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = small_spec(10.0);
    spec.filler_rate = 1.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = small_spec(10.0);
    spec.min_words = 9;
    spec.max_words = 8;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = small_spec(std::nan(""));
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}
