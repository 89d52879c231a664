#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "anchorlab/aligner.hpp"
#include "anchorlab/common.hpp"
#include "anchorlab/vocab.hpp"
#include "oracles.hpp"

using namespace anchorlab;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

Matrix unit_rows(Matrix m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r).normalize();
    return m;
}

EmbeddingBank bank_from(const Matrix& rows, const std::vector<std::string>& names) {
    EmbeddingBank bank(static_cast<std::size_t>(rows.cols()));
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        std::vector<double> values(rows.row(r).data(), rows.row(r).data() + 0);
        values.resize(static_cast<std::size_t>(rows.cols()));
        for (Eigen::Index c = 0; c < rows.cols(); ++c) values[static_cast<std::size_t>(c)] = rows(r, c);
        bank.add(names[static_cast<std::size_t>(r)], std::span<const double>(values));
    }
    return bank;
}

} // namespace

TEST_CASE("gelu matches its erf definition and derivative") {
    for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
        CHECK(gelu(x) == doctest::Approx(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)))).epsilon(1e-14));
        const double h = 1e-6;
        CHECK(gelu_grad(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-7));
    }
}

TEST_CASE("encoder output shape and unit norm") {
    const auto config = EncoderConfig::compact(12, 6);
    TransformerEncoder encoder(config, 3);
    Rng rng(5);
    for (Eigen::Index length : {1, 4, 9}) {
        const Matrix out = encoder.forward(random_matrix(rng, length, 12));
        CHECK(out.rows() == length);
        CHECK(out.cols() == 6);
        for (Eigen::Index r = 0; r < out.rows(); ++r) CHECK(std::abs(out.row(r).norm() - 1.0) < 1e-6);
    }
    CHECK_THROWS_AS(encoder.forward(random_matrix(rng, 65, 12)), ValidationError);
    CHECK_THROWS_AS(encoder.forward(random_matrix(rng, 3, 11)), ValidationError);
}

TEST_CASE("paper profile dimensions") {
    const auto config = EncoderConfig::paper();
    CHECK(config.input_dim == 840);
    CHECK(config.model_dim == 768);
    CHECK(config.layers == 3);
    CHECK(config.heads == 8);
    CHECK(config.ffn_dim == 2048);
    CHECK(config.output_dim == 768);
    EncoderConfig bad = config;
    bad.heads = 7;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("encoder gradients agree with central differences") {
    auto config = EncoderConfig::compact(10, 6);
    config.max_positions = 8;
    TransformerEncoder encoder(config, 11);
    Rng rng(12);
    const Matrix input = random_matrix(rng, 5, 10);
    const Matrix weights = random_matrix(rng, 5, 6);
    for (const auto& group : oracle::encoder_gradient_errors(encoder, input, weights)) {
        INFO(group.name);
        CHECK(group.relative_error <= 1e-4);
    }
}

TEST_CASE("alignment loss closed forms") {
    for (Eigen::Index v : {2, 50, 100}) {
        Matrix bank = Matrix::Zero(v, v + 1);
        for (Eigen::Index i = 0; i < v; ++i) bank(i, i) = 1.0;
        Matrix out = Matrix::Zero(1, v + 1);
        out(0, v) = 1.0;
        const auto loss = alignment_loss(out, {0}, bank, 0.07);
        CHECK(std::abs(loss.loss - std::log(static_cast<double>(v))) < 1e-9);
    }
    Matrix bank{{1.0, 0.0}, {0.0, 1.0}};
    Matrix out{{1.0, 0.0}};
    CHECK(std::abs(alignment_loss(out, {0}, bank, 1.0).loss - std::log1p(std::exp(-1.0))) < 1e-9);

    Matrix sat_bank{{1.0, 0.0}, {-1.0, 0.0}, {-1.0, 0.0}};
    CHECK(alignment_loss(out, {0}, sat_bank, 0.01).loss <= 1e-6);

    CHECK_THROWS_AS(alignment_loss(Matrix(0, 2), {}, bank, 1.0), ValidationError);
    CHECK_THROWS_AS(alignment_loss(out, {5}, bank, 1.0), ValidationError);
}

TEST_CASE("alignment loss gradient wrt outputs and log tau") {
    Rng rng(3);
    const Matrix bank = unit_rows(random_matrix(rng, 7, 4));
    Matrix out = unit_rows(random_matrix(rng, 3, 4));
    const std::vector<std::size_t> targets{1, 6, 1};
    const double tau = 0.3;
    const auto loss = alignment_loss(out, targets, bank, tau);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        Matrix up = out;
        Matrix down = out;
        up.data()[i] += h;
        down.data()[i] -= h;
        const double numeric =
            (alignment_loss(up, targets, bank, tau).loss - alignment_loss(down, targets, bank, tau).loss) / (2 * h);
        CHECK(loss.d_outputs.data()[i] == doctest::Approx(numeric).epsilon(1e-6));
    }
    const double numeric_tau = (alignment_loss(out, targets, bank, tau * std::exp(h)).loss -
                                alignment_loss(out, targets, bank, tau * std::exp(-h)).loss) /
                               (2 * h);
    CHECK(loss.d_log_tau == doctest::Approx(numeric_tau).epsilon(1e-6));
    const Vector p = bank_softmax(out.row(0).transpose(), bank, tau);
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
}

TEST_CASE("anchor selection rules") {
    const std::vector<std::string> words{"a", "b", "c", "d", "e", "f", "g", "h"};
    SUBCASE("top-m by confidence then position order") {
        std::vector<SegmentPrediction> preds{{4, 0, 0.9}, {1, 1, 0.8}, {7, 2, 0.7}};
        const auto entries = select_anchors(preds, words, 2);
        REQUIRE(entries.size() == 2);
        CHECK(entries[0].position == 1);
        CHECK(entries[1].position == 4);
    }
    SUBCASE("duplicate keywords keep the best occurrence") {
        std::vector<SegmentPrediction> preds{{2, 3, 0.9}, {5, 3, 0.6}, {6, 1, 0.5}};
        const auto entries = select_anchors(preds, words, 3);
        REQUIRE(entries.size() == 2);
        CHECK(entries[0].position == 2);
        CHECK(entries[0].keyword == "d");
    }
    SUBCASE("truncation to available keywords") {
        std::vector<SegmentPrediction> preds{{0, 0, 0.1}, {1, 1, 0.2}, {2, 2, 0.3}};
        CHECK(select_anchors(preds, words, 5).size() == 3);
    }
    SUBCASE("equal confidence duplicates keep the earliest") {
        std::vector<SegmentPrediction> preds{{6, 2, 0.4}, {3, 2, 0.4}};
        const auto entries = select_anchors(preds, words, 3);
        REQUIRE(entries.size() == 1);
        CHECK(entries[0].position == 3);
    }
}

TEST_CASE("model decoding, checkpoints and determinism") {
    const std::size_t in = 8;
    const std::size_t out = 5;
    Rng rng(21);
    const std::vector<std::string> keywords{"k0", "k1", "k2", "k3", "k4", "k5"};
    const Matrix bank_rows = unit_rows(random_matrix(rng, 6, static_cast<Eigen::Index>(out)));
    const auto bank = bank_from(bank_rows, keywords);
    auto config = EncoderConfig::compact(in, out);
    AlignerModel model(TransformerEncoder(config, 4), keywords, bank, 0.07);

    EegWordSequence sample{"s1", "subj", {}};
    for (std::size_t p = 0; p < 4; ++p) {
        Segment segment{p * 2, {}};
        for (std::size_t i = 0; i < in; ++i) segment.features.push_back(rng.normal());
        sample.segments.push_back(segment);
    }
    const auto anchors = decode_anchors(model, sample, 3);
    CHECK(anchors.entries.size() <= 3);
    for (std::size_t i = 1; i < anchors.entries.size(); ++i) {
        CHECK(anchors.entries[i - 1].position < anchors.entries[i].position);
    }
    for (const auto& entry : anchors.entries) {
        CHECK(entry.confidence >= -1.0);
        CHECK(entry.confidence <= 1.0);
    }

    // Argmax is invariant to positive rescaling of the similarity vector.
    const Matrix sims = model.encode(sample) * model.bank().transpose();
    for (Eigen::Index r = 0; r < sims.rows(); ++r) {
        Eigen::Index a = 0;
        Eigen::Index b = 0;
        sims.row(r).maxCoeff(&a);
        (sims.row(r) * 3.7).maxCoeff(&b);
        CHECK(a == b);
    }

    EegWordSequence empty{"s2", "subj", {}};
    CHECK(decode_anchors(model, empty, 3).entries.empty());

    const auto dir = std::filesystem::temp_directory_path() / "anchorlab_aligner_test";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "model.bclm", model);
    const auto loaded = load_checkpoint(dir / "model.bclm", keywords, bank);
    const Matrix a = model.encode(sample);
    const Matrix b = loaded.encode(sample);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-4);
    auto other = keywords;
    std::swap(other[0], other[1]);
    CHECK_THROWS_AS(load_checkpoint(dir / "model.bclm", other, bank), ValidationError);

    write_anchors(dir / "anchors.jsonl", {anchors});
    const auto back = read_anchors(dir / "anchors.jsonl");
    REQUIRE(back.size() == 1);
    CHECK(back[0].lemmas() == anchors.lemmas());
    std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic and learns a separable toy task") {
    const std::size_t in = 6;
    const std::size_t out = 4;
    Rng rng(8);
    const std::vector<std::string> keywords{"k0", "k1", "k2", "k3"};
    const Matrix bank_rows = unit_rows(random_matrix(rng, 4, static_cast<Eigen::Index>(out)));
    const auto bank = bank_from(bank_rows, keywords);
    const Matrix prototypes = random_matrix(rng, 4, static_cast<Eigen::Index>(in)) * 2.0;

    auto make = [&](std::size_t count) {
        std::vector<LabeledSequence> set;
        for (std::size_t s = 0; s < count; ++s) {
            LabeledSequence sequence;
            sequence.features.resize(3, static_cast<Eigen::Index>(in));
            for (Eigen::Index r = 0; r < 3; ++r) {
                const auto label = static_cast<long>(rng.below(4));
                sequence.labels.push_back(r == 2 ? -1 : label);
                sequence.features.row(r) = prototypes.row(label) + 0.05 * random_matrix(rng, 1, in);
            }
            set.push_back(std::move(sequence));
        }
        return set;
    };
    const auto train_set = make(40);
    const auto val_set = make(10);

    TrainConfig config;
    config.learning_rate = 3e-3;
    config.epochs = 15;
    config.batch_size = 8;
    config.tau = 0.1;
    config.seed = 99;
    auto run = [&]() {
        AlignerModel model(TransformerEncoder(EncoderConfig::compact(in, out), 1), keywords, bank, 0.1);
        const auto before = evaluate_alignment(model, val_set);
        const auto result = train(model, train_set, val_set, config);
        return std::make_tuple(before, result, evaluate_alignment(model, val_set));
    };
    const auto [before, result, after] = run();
    const auto [before2, result2, after2] = run();
    CHECK(after.loss < before.loss);
    CHECK(after.top1 >= 0.9);
    CHECK(result.history.size() == 15);
    CHECK(after.loss == after2.loss);
    CHECK(result.best_epoch == result2.best_epoch);

    TrainConfig aux = config;
    aux.aux_weight = 0.5;
    aux.epochs = 3;
    AlignerModel model(TransformerEncoder(EncoderConfig::compact(in, out), 1), keywords, bank, 0.1);
    CHECK_NOTHROW(train(model, train_set, val_set, aux));

    TrainConfig bad = config;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
