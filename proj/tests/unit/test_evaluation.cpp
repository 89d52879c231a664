#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"
#include "anchorlab/embedder.hpp"
#include "anchorlab/evaluation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace anchorlab;
using nlohmann::json;

namespace {

struct Toy {
    Dataset data = load_dataset(testutil::fixture("toy.jsonl"));
    EmbeddingBank bank = EmbeddingBank::load(testutil::fixture("word_bank.embk"));
    std::vector<std::string> texts;
    std::unique_ptr<IdfWordBankEmbedder> embedder;
    std::map<Task, SentencePool> pools;

    Toy() {
        for (const auto& s : data.sentences.ordered()) texts.push_back(s.text);
        embedder = std::make_unique<IdfWordBankEmbedder>(bank, texts);
        pools.emplace(Task::SR1, SentencePool::build(data.sentences.by_task(Task::SR1), *embedder));
    }
};

std::vector<std::vector<double>> rows_of(const Matrix& m) {
    std::vector<std::vector<double>> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> row;
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(std::move(row));
    }
    return out;
}

} // namespace

TEST_CASE("oracle and random anchors") {
    const auto s = testutil::make_sentence(
        "s", "The/the/OTHER film/film/NOUN about/about/OTHER film/film/NOUN music/music/NOUN was/be/VERB good/good/ADJ");
    const std::set<std::string> vocab{"film", "music", "good", "river"};
    CHECK(oracle_anchors(s, vocab, 5) == std::vector<std::string>{"film", "music", "good"});
    CHECK(oracle_anchors(s, vocab, 2) == std::vector<std::string>{"film", "music"});

    const std::vector<std::string> keywords{"a", "b", "c", "d", "e", "f"};
    Rng rng(4);
    const auto draw = random_anchors(keywords, 4, rng);
    CHECK(draw.size() == 4);
    CHECK(std::set<std::string>(draw.begin(), draw.end()).size() == 4);
    Rng again(4);
    CHECK(random_anchors(keywords, 4, again) == draw);
    Rng big(1);
    CHECK(random_anchors(keywords, 10, big).size() == 6);
    CHECK(parse_anchor_kind("oracle") == AnchorKind::Oracle);
}

TEST_CASE("retrieval rank matches brute force") {
    Rng rng(9);
    Matrix pool(15, 5);
    for (Eigen::Index i = 0; i < pool.size(); ++i) pool.data()[i] = rng.normal();
    pool.row(7) = pool.row(3); // an exact tie
    for (Eigen::Index i = 0; i < pool.rows(); ++i) pool.row(i).normalize();
    const auto rows = rows_of(pool);
    for (int trial = 0; trial < 20; ++trial) {
        Vector query(5);
        for (Eigen::Index j = 0; j < 5; ++j) query(j) = rng.normal();
        std::vector<double> q(query.data(), query.data() + 5);
        for (std::size_t target = 0; target < 15; ++target) {
            CHECK(retrieval_rank(query, pool, target) == oracle::brute_force_rank(rows, q, target));
        }
    }
    CHECK(accuracy_at({1, 3, 6, 2}, {1, 5}) == std::map<std::size_t, double>{{1, 0.25}, {5, 0.75}});
}

TEST_CASE("sentence embedders") {
    Toy toy;
    const auto v = toy.embedder->embed(toy.texts[0]);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0));
    for (double x : toy.embedder->embed("zzz qqq")) CHECK(x == 0.0);

    EmbeddingBank sentences(2);
    sentences.add("Known text.", std::vector<double>{3.0, 4.0});
    SentenceBankEmbedder lookup(sentences);
    CHECK(lookup.embed("Known text.")[1] == doctest::Approx(0.8));
    CHECK_THROWS_AS(lookup.embed("Unknown."), ValidationError);
}

TEST_CASE("scoring perfect and shuffled reconstructions") {
    Toy toy;
    const auto& ordered = toy.data.sentences.ordered();
    std::vector<ReconstructionRecord> records;
    for (const char* subject : {"S01", "S02", "S03"}) {
        for (std::size_t i = 0; i < ordered.size(); ++i) {
            for (const char* condition : {"ordered", "oracle", "random"}) {
                ReconstructionRecord r;
                r.sentence_id = ordered[i].sentence_id;
                r.mode = PromptMode::CotRag;
                r.m = 3;
                r.subject_id = subject;
                r.condition = condition;
                r.anchors = {ordered[i].tokens[1].lemma, "nonexistent"};
                // Random reconstructions are someone else's sentence.
                r.output = std::string(condition) == "random" ? ordered[(i + 7) % ordered.size()].text : ordered[i].text;
                records.push_back(r);
            }
        }
    }
    ScoreOptions options;
    options.word_bank = &toy.bank;
    const auto report = score_records(records, toy.data.sentences, toy.pools, *toy.embedder, options);
    const auto* oracle = report.find("oracle", "cot_rag", 3);
    const auto* random = report.find("random", "cot_rag", 3);
    REQUIRE(oracle != nullptr);
    REQUIRE(random != nullptr);
    CHECK(oracle->subjects == 3);
    CHECK(oracle->n == 90);
    CHECK(oracle->topk.at(5) == 1.0);
    CHECK(oracle->bleu[0] == doctest::Approx(1.0));
    CHECK(oracle->rouge1 == doctest::Approx(1.0));
    CHECK(*oracle->greedy_f1 <= 1.0 + 1e-9);
    CHECK(oracle->anchor_hit == doctest::Approx(0.5));
    CHECK(oracle->anchor_all == 0.0);
    CHECK(random->topk.at(5) < 0.5);
    CHECK(report.find("oracle", "cot_rag", 3, "S02") != nullptr);
    CHECK(topk_monotone(report));
    CHECK(report.chance["SR1"]["topk"]["5"].get<double>() == doctest::Approx(5.0 / 30.0));
    CHECK(report.chance["SR1"]["pool_size"] == 30);
    REQUIRE(report.recovery.size() == 1);
    CHECK(report.recovery[0]["ordered_recovery"].get<double>() == doctest::Approx(1.0));

    // Top-1 from the pool agrees with a brute-force ranking of the same embeddings.
    const auto& pool = toy.pools.at(Task::SR1);
    const auto rows = rows_of(pool.embeddings);
    std::size_t top1 = 0;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        top1 += oracle::brute_force_rank(rows, rows[i], i) == 1;
    }
    CHECK(report.find("oracle", "cot_rag", 3, "S01")->topk.count(5) == 1);
    ScoreOptions with_one = options;
    with_one.ks = {1};
    const auto one = score_records(records, toy.data.sentences, toy.pools, *toy.embedder, with_one);
    CHECK(one.find("oracle", "cot_rag", 3)->topk.at(1) == doctest::Approx(static_cast<double>(top1) / 30.0));

    // Three subjects: the condition ANOVA and both paired tests run.
    std::set<std::string> names;
    for (const auto& t : report.stats) names.insert(t.name);
    CHECK(names.count("conditions top5 cot_rag m=3") == 1);
    CHECK(names.count("ordered vs random top5 cot_rag m=3") == 1);

    const auto back = EvalReport::from_json(report.to_json());
    CHECK(back.to_json() == report.to_json());
    json bad = report.to_json();
    bad["schema_version"] = 99;
    CHECK_THROWS_AS(EvalReport::from_json(bad), ValidationError);

    auto dir = testutil::scratch("report");
    report.write(dir);
    report.write_plot_data(dir);
    for (const char* name : {"report.json", "metrics.csv", "stats.csv", "topk_curve.csv", "m_curve.csv"}) {
        CHECK(std::filesystem::exists(dir / name));
    }
}

TEST_CASE("single-subject scoring records the skipped statistics") {
    Toy toy;
    std::vector<ReconstructionRecord> records;
    for (const auto& s : toy.data.sentences.ordered()) {
        ReconstructionRecord r;
        r.sentence_id = s.sentence_id;
        r.output = s.text;
        r.m = 3;
        records.push_back(r);
    }
    const auto report = score_records(records, toy.data.sentences, toy.pools, *toy.embedder, {});
    CHECK(report.stats.empty());
    REQUIRE_FALSE(report.gaps.empty());
    CHECK(report.gaps.back().find("statistics skipped") != std::string::npos);
}

TEST_CASE("anchor permutation test and its label-shuffled control") {
    Toy toy;
    std::vector<ReconstructionRecord> records;
    for (const auto& s : toy.data.sentences.ordered()) {
        ReconstructionRecord r;
        r.sentence_id = s.sentence_id;
        r.output = s.text;
        r.mode = PromptMode::CotRag;
        r.m = 5;
        records.push_back(r);
    }
    PermutationOptions options;
    options.k = 1;
    options.n_perm = 200;
    options.control_repeats = 5;
    options.seed = 3;
    const auto result = anchor_permutation(records, toy.data.sentences, toy.pools, *toy.embedder, options);
    const auto& sr1 = result.at("SR1");
    CHECK(sr1["observed"].get<double>() > 0.9);
    CHECK(sr1["p"].get<double>() == doctest::Approx(1.0 / 201.0));
    CHECK(sr1["n"] == 30);
    CHECK(sr1["control"]["p_values"].size() == 5);
    CHECK(sr1["control"]["mean_p"].get<double>() > 0.05);
    CHECK(anchor_permutation(records, toy.data.sentences, toy.pools, *toy.embedder, options) == result);

    options.m = 3;
    CHECK_THROWS_AS(anchor_permutation(records, toy.data.sentences, toy.pools, *toy.embedder, options),
                    ValidationError);
}

TEST_CASE("condition requests") {
    Toy toy;
    const auto& s = toy.data.sentences.ordered()[0];
    const std::vector<std::string> keywords{"film", "river", "music", "city", "teacher", "quiet", "famous"};
    SamplePredictions decoded{s.sentence_id, "S01", {}};
    for (std::size_t p = 0; p < s.tokens.size(); ++p) decoded.segments.push_back({p, p % keywords.size(), 0.1 * p});
    SuiteOptions options;
    options.ms = {3};
    options.modes = {PromptMode::Naive};
    const auto requests = build_condition_requests(toy.data.sentences, {decoded}, keywords, options);
    std::map<std::string, std::vector<std::string>> by_condition;
    for (const auto& r : requests) by_condition[r.condition] = r.anchors;
    CHECK(by_condition.at("random").size() == 3);
    CHECK(by_condition.at("ordered").size() == 3);
    // Ordered anchors come back in source order.
    const auto entries = select_anchors(decoded.segments, keywords, 3);
    for (std::size_t i = 1; i < entries.size(); ++i) CHECK(entries[i - 1].position < entries[i].position);
}

TEST_CASE("predictions file round trip") {
    SamplePredictions p{"toy-01", "S01", {{0, 2, 0.5}, {3, 1, 0.25}}};
    auto dir = testutil::scratch("pred");
    write_predictions(dir / "p.jsonl", {p, p});
    const auto back = read_predictions(dir / "p.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].segments[1].keyword_id == 1);
    CHECK(back[1].segments[1].confidence == 0.25);
    std::ofstream(dir / "bad.jsonl") << "{}\n";
    CHECK_THROWS_AS(read_predictions(dir / "bad.jsonl"), ValidationError);
}
