#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "anchorlab/common.hpp"
#include "anchorlab/corpus.hpp"
#include "anchorlab/vocab.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace anchorlab;

namespace {

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<AnnotatedSentence> vocab6_sentences() {
    return load_dataset(testutil::fixture("vocab6/sentences.jsonl")).sentences.ordered();
}

std::vector<FpsCandidate> candidates_from(const std::map<std::string, std::vector<double>>& vectors,
                                          const std::map<std::string, std::size_t>& frequency) {
    std::vector<FpsCandidate> out;
    for (const auto& [name, vec] : vectors) out.push_back({name, vec, frequency.at(name)});
    return out;
}

} // namespace

TEST_CASE("six-sentence fixture reproduces the hand-audited vocabulary byte for byte") {
    const auto sentences = vocab6_sentences();
    const auto bank = EmbeddingBank::load(testutil::fixture("vocab6/word_bank.embk"));
    VocabOptions options;
    options.min_freq = 2;
    const auto vocab = build_vocabulary(sentences, bank, 5, ExclusionRules::defaults(), options);

    CHECK(vocab.lemmas() == std::vector<std::string>{"good", "film", "river", "movie", "bad"});
    CHECK(vocab.pruned == std::vector<std::string>{"music"});
    CHECK(vocab.reserve == 1);
    CHECK(vocabulary_text(vocab) == read_all(testutil::fixture("vocab6/expected_vocab.txt")));
    CHECK(coverage_satisfied(audit_coverage(sentences, {"good", "film", "river", "movie", "bad"},
                                            ExclusionRules::defaults())));

    auto dir = testutil::scratch("vocab");
    write_vocabulary(dir / "vocab.txt", dir / "vocab.audit.json", vocab);
    CHECK(read_vocabulary(dir / "vocab.txt") == vocab.lemmas());
    CHECK(std::filesystem::exists(dir / "vocab.audit.json"));
}

TEST_CASE("eligible lemmas follow the exclusion rules") {
    const auto sentences = vocab6_sentences();
    const auto rules = ExclusionRules::defaults();
    const std::vector<std::vector<std::string>> expected{{"film", "good"},           {"movie", "river", "music"},
                                                         {"good", "music", "river"}, {"movie", "bad"},
                                                         {"good", "film"},           {"good"}};
    REQUIRE(sentences.size() == expected.size());
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        CHECK(eligible_lemmas(sentences[i], rules) == expected[i]);
    }
    const auto pool = build_candidate_pool(sentences, rules);
    CHECK(pool.at("good") == 4);
    CHECK(pool.at("film") == 2);
    CHECK(pool.at("bad") == 1);
    CHECK(pool.count("obama") == 0);
    CHECK(pool.count("2005") == 0);
}

TEST_CASE("token-level exclusions") {
    const auto rules = ExclusionRules::defaults();
    auto token = [](std::string surface, std::string lemma, PosTag pos, EntityTag entity = EntityTag::None) {
        AnnotatedToken t;
        t.surface = std::move(surface);
        t.lemma = std::move(lemma);
        t.pos = pos;
        t.entity = entity;
        return t;
    };
    CHECK(rules.excludes(token("2005", "2005", PosTag::Noun)));
    CHECK(rules.excludes(token("XIV", "xiv", PosTag::ProperNoun)));
    CHECK(rules.excludes(token("II", "ii", PosTag::Noun)));
    CHECK_FALSE(rules.excludes(token("mix", "mix", PosTag::Verb)));
    CHECK(rules.excludes(token("March", "march", PosTag::ProperNoun, EntityTag::NonPersonEntity)));
    CHECK(rules.excludes(token("Smith", "smith", PosTag::ProperNoun, EntityTag::Person)));
    CHECK(rules.excludes(token("UK", "uk", PosTag::ProperNoun)));
    CHECK_FALSE(rules.excludes(token("Paris", "paris", PosTag::ProperNoun, EntityTag::NonPersonEntity)));
    CHECK_FALSE(rules.excludes(token("river", "river", PosTag::Noun)));

    auto relaxed = rules;
    relaxed.exclude_person_entities = false;
    CHECK_FALSE(relaxed.excludes(token("Smith", "smith", PosTag::ProperNoun, EntityTag::Person)));

    CHECK(is_roman_numeral("xiv"));
    CHECK(is_roman_numeral("MCMXC"));
    CHECK_FALSE(is_roman_numeral("i"));
    CHECK_FALSE(is_roman_numeral("iiii"));
    CHECK_FALSE(is_roman_numeral("vx"));
    CHECK(contains_digit("b2b"));
    CHECK_FALSE(contains_digit("bb"));
}

TEST_CASE("farthest-point sampling matches the brute-force definition") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        Rng rng(seed);
        std::map<std::string, std::vector<double>> vectors;
        std::map<std::string, std::size_t> frequency;
        for (int i = 0; i < 10; ++i) {
            std::vector<double> v(6);
            double norm = 0.0;
            for (auto& x : v) {
                x = rng.normal();
                norm += x * x;
            }
            for (auto& x : v) x /= std::sqrt(norm);
            const std::string name = "w" + std::to_string(i);
            vectors[name] = v;
            frequency[name] = 1 + rng.below(4);
        }
        const auto candidates = candidates_from(vectors, frequency);
        for (std::size_t k : {1u, 4u, 10u}) {
            CHECK(farthest_point_sample(candidates, k) == oracle::brute_force_fps(vectors, frequency, k));
        }
        CHECK_THROWS_AS(farthest_point_sample(candidates, 11), ConfigError);
    }
}

TEST_CASE("farthest-point sampling on a circle") {
    auto at = [](double degrees) {
        const double r = degrees * M_PI / 180.0;
        return std::vector<double>{std::cos(r), std::sin(r)};
    };
    // Exact coordinates so the 60/120 tie is exact in floating point.
    const double h = std::sqrt(3.0) / 2.0;
    const std::map<std::string, std::vector<double>> vectors{{"a000", {1.0, 0.0}},
                                                             {"b060", {0.5, h}},
                                                             {"c120", {-0.5, h}},
                                                             {"d180", {-1.0, 0.0}},
                                                             {"e030", at(30)}};
    const std::map<std::string, std::size_t> frequency{
        {"a000", 5}, {"b060", 1}, {"c120", 1}, {"d180", 1}, {"e030", 1}};
    // Opposite point first; then 60 and 120 tie at distance 0.5 and lemma order decides.
    const auto picked = farthest_point_sample(candidates_from(vectors, frequency), 4);
    CHECK(picked == std::vector<std::string>{"a000", "d180", "b060", "c120"});
    CHECK(picked == oracle::brute_force_fps(vectors, frequency, 4));
    CHECK(cosine_distance(at(0), at(90)) == doctest::Approx(1.0));

    auto first = farthest_point_sample(candidates_from(vectors, frequency), 1, StartRule::FirstCandidate);
    CHECK(first.front() == "a000");
}

TEST_CASE("vocabulary build errors") {
    const auto sentences = vocab6_sentences();
    const auto bank = EmbeddingBank::load(testutil::fixture("vocab6/word_bank.embk"));
    VocabOptions options;
    options.min_freq = 2;
    CHECK_THROWS_AS(build_vocabulary(sentences, bank, 1, ExclusionRules::defaults(), options), ConfigError);
    options.min_freq = 5;
    CHECK_THROWS_AS(build_vocabulary(sentences, bank, 5, ExclusionRules::defaults(), options), ConfigError);
    CHECK_THROWS_AS(build_candidate_pool({}, ExclusionRules::defaults()), ValidationError);

    EmbeddingBank thin(3);
    thin.add("good", std::vector<double>{0.0, 1.0, 0.0});
    options.min_freq = 2;
    CHECK_THROWS_AS(build_vocabulary(sentences, thin, 5, ExclusionRules::defaults(), options), ValidationError);
}

TEST_CASE("vocabulary hash") {
    const std::vector<std::string> a{"good", "film"};
    CHECK(vocabulary_hash(a) == vocabulary_hash(a));
    CHECK(vocabulary_hash(a) != vocabulary_hash({"film", "good"}));
}
