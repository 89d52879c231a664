#include "anchorlab/aligner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "anchorlab/common.hpp"
#include "anchorlab/vocab.hpp"

namespace anchorlab {

using nlohmann::json;

AlignmentLoss alignment_loss(const Matrix& outputs, const std::vector<std::size_t>& targets, const Matrix& bank,
                             double tau) {
    if (outputs.rows() == 0 || targets.empty()) {
        throw ValidationError("alignment loss needs at least one supervised position");
    }
    if (static_cast<std::size_t>(outputs.rows()) != targets.size()) {
        throw ValidationError("alignment loss: outputs and targets differ in length");
    }
    if (!(tau > 0.0)) {
        throw ValidationError("temperature must be positive");
    }
    const auto n = static_cast<double>(targets.size());
    const Matrix logits = outputs * bank.transpose() / tau;
    Matrix d_logits(logits.rows(), logits.cols());
    AlignmentLoss result;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const auto target = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]);
        if (target >= bank.rows()) {
            throw ValidationError("keyword target " + std::to_string(target) + " outside bank of " +
                                  std::to_string(bank.rows()));
        }
        const double max = logits.row(r).maxCoeff();
        const auto shifted = (logits.row(r).array() - max).exp();
        const double sum = shifted.sum();
        result.loss += -(logits(r, target) - max - std::log(sum));
        d_logits.row(r) = shifted / sum;
        d_logits(r, target) -= 1.0;
    }
    result.loss /= n;
    d_logits /= n;
    result.d_outputs = d_logits * bank / tau;
    result.d_log_tau = -(d_logits.cwiseProduct(logits)).sum();
    return result;
}

Vector bank_softmax(const Vector& output, const Matrix& bank, double tau) {
    Vector logits = bank * output / tau;
    logits = (logits.array() - logits.maxCoeff()).exp();
    return logits / logits.sum();
}

AlignerModel::AlignerModel(TransformerEncoder encoder, std::vector<std::string> keywords,
                           const EmbeddingBank& keyword_bank, double tau, bool learn_tau)
    : encoder_(std::move(encoder)), keywords_(std::move(keywords)), tau_(tau), learn_tau_(learn_tau) {
    if (!(tau > 0.0)) {
        throw ConfigError("temperature must be positive");
    }
    if (keyword_bank.dim() != encoder_.config().output_dim) {
        throw ValidationError("keyword bank dim " + std::to_string(keyword_bank.dim()) +
                              " does not match encoder output_dim " + std::to_string(encoder_.config().output_dim));
    }
    const EmbeddingBank ordered = keyword_bank.reordered(keywords_);
    if (ordered.size() != keyword_bank.size()) {
        throw ValidationError("keyword bank must cover the vocabulary exactly (bank has " +
                              std::to_string(keyword_bank.size()) + " rows, vocabulary " +
                              std::to_string(keywords_.size()) + ")");
    }
    if (ordered.max_norm_deviation() > 1e-4) {
        throw ValidationError("keyword bank rows must be unit length");
    }
    bank_.resize(static_cast<Eigen::Index>(ordered.size()), static_cast<Eigen::Index>(ordered.dim()));
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        const auto row = ordered.vector(i, true);
        bank_.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Vector>(row.data(), static_cast<Eigen::Index>(row.size()));
    }
}

std::optional<std::size_t> AlignerModel::keyword_id(const std::string& lemma) const {
    auto it = std::find(keywords_.begin(), keywords_.end(), lemma);
    if (it == keywords_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - keywords_.begin());
}

void AlignerModel::set_tau(double tau) {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
    tau_ = tau;
}

Matrix features_matrix(const EegWordSequence& sample) {
    const auto rows = static_cast<Eigen::Index>(sample.segments.size());
    const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(sample.segments.front().features.size());
    Matrix features(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& values = sample.segments[static_cast<std::size_t>(r)].features;
        if (static_cast<Eigen::Index>(values.size()) != cols) {
            throw ValidationError("segments of one sample differ in feature width");
        }
        features.row(r) = Eigen::Map<const Vector>(values.data(), cols);
    }
    return features;
}

Matrix encode_sequence(const TransformerEncoder& encoder, const Matrix& features) {
    return encoder.forward(features);
}

Matrix AlignerModel::encode(const EegWordSequence& sample) const {
    return encoder_.forward(features_matrix(sample));
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (aux_weight < 0.0) throw ConfigError("aux weight must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(tau > 0.0) || !(aux_tau > 0.0)) throw ConfigError("temperatures must be positive");
}

json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"weight_decay", weight_decay}, {"beta1", beta1},
            {"beta2", beta2},                 {"epsilon", epsilon},           {"batch_size", batch_size},
            {"epochs", epochs},               {"patience", patience},         {"tau", tau},
            {"learn_tau", learn_tau},         {"aux_weight", aux_weight},     {"aux_noise", aux_noise},
            {"aux_tau", aux_tau},             {"seed", seed}};
}

std::vector<LabeledSequence> label_samples(const Dataset& dataset, const std::vector<std::size_t>& sample_indices,
                                           const AlignerModel& model) {
    std::map<std::string, std::size_t> ids;
    for (std::size_t i = 0; i < model.keywords().size(); ++i) ids.emplace(model.keywords()[i], i);
    std::vector<LabeledSequence> out;
    out.reserve(sample_indices.size());
    for (std::size_t index : sample_indices) {
        const auto& sample = dataset.samples.at(index);
        if (sample.segments.empty()) continue;
        const auto& sentence = dataset.sentences.at(sample.sentence_id);
        LabeledSequence labeled;
        labeled.features = features_matrix(sample);
        labeled.sample_index = index;
        for (const auto& segment : sample.segments) {
            auto it = ids.find(sentence.tokens.at(segment.position).lemma);
            labeled.labels.push_back(it == ids.end() ? -1 : static_cast<long>(it->second));
        }
        out.push_back(std::move(labeled));
    }
    return out;
}

SplitMetrics evaluate_alignment(const AlignerModel& model, const std::vector<LabeledSequence>& sequences) {
    SplitMetrics metrics;
    double loss_sum = 0.0;
    std::size_t hit1 = 0;
    std::size_t hit5 = 0;
    for (const auto& sequence : sequences) {
        const Matrix outputs = model.encoder().forward(sequence.features);
        for (std::size_t r = 0; r < sequence.labels.size(); ++r) {
            if (sequence.labels[r] < 0) continue;
            const auto target = static_cast<Eigen::Index>(sequence.labels[r]);
            const Vector sims = model.bank() * outputs.row(static_cast<Eigen::Index>(r)).transpose();
            const Vector logits = sims / model.tau();
            const double max = logits.maxCoeff();
            loss_sum += -(logits(target) - max - std::log((logits.array() - max).exp().sum()));
            std::size_t rank = 0;
            for (Eigen::Index j = 0; j < sims.size(); ++j) {
                if (sims(j) > sims(target)) ++rank;
            }
            hit1 += rank < 1;
            hit5 += rank < 5;
            ++metrics.supervised;
        }
    }
    if (metrics.supervised > 0) {
        const auto n = static_cast<double>(metrics.supervised);
        metrics.loss = loss_sum / n;
        metrics.top1 = static_cast<double>(hit1) / n;
        metrics.top5 = static_cast<double>(hit5) / n;
    }
    return metrics;
}

AdamOptimizer::AdamOptimizer(const ParameterSet& shape, const TrainConfig& config)
    : config_(config), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

void AdamOptimizer::step(ParameterSet& params, const ParameterSet& grads) {
    ++t_;
    const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    auto& tensors = params.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        Matrix& value = tensors[i].value;
        const Matrix& grad = grads.tensors()[i].value;
        Matrix& m = m_.tensors()[i].value;
        Matrix& v = v_.tensors()[i].value;
        m = config_.beta1 * m + (1.0 - config_.beta1) * grad;
        v = config_.beta2 * v + (1.0 - config_.beta2) * grad.cwiseAbs2();
        if (config_.weight_decay > 0.0) {
            value *= 1.0 - config_.learning_rate * config_.weight_decay;
        }
        value.array() -= config_.learning_rate * (m.array() / correction1) /
                         ((v.array() / correction2).sqrt() + config_.epsilon);
    }
}

double AdamOptimizer::step_scalar(double value, double grad) {
    // Shares the step counter advanced by step(); call after it.
    const auto t = static_cast<double>(std::max<std::size_t>(t_, 1));
    m_scalar_ = config_.beta1 * m_scalar_ + (1.0 - config_.beta1) * grad;
    v_scalar_ = config_.beta2 * v_scalar_ + (1.0 - config_.beta2) * grad * grad;
    const double m_hat = m_scalar_ / (1.0 - std::pow(config_.beta1, t));
    const double v_hat = v_scalar_ / (1.0 - std::pow(config_.beta2, t));
    return value - config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
}

namespace {

struct BatchOutputs {
    std::vector<TransformerEncoder::Cache> caches;
    Matrix supervised;                                      // N x D
    std::vector<std::size_t> targets;                       // N
    std::vector<std::pair<std::size_t, Eigen::Index>> rows; // (sequence in batch, row)
};

BatchOutputs forward_batch(const TransformerEncoder& encoder, const std::vector<const LabeledSequence*>& batch,
                           const std::vector<Matrix>* perturbed) {
    BatchOutputs out;
    out.caches.resize(batch.size());
    std::vector<Matrix> outputs(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Matrix& features = perturbed != nullptr ? (*perturbed)[b] : batch[b]->features;
        outputs[b] = encoder.forward(features, &out.caches[b]);
        for (std::size_t r = 0; r < batch[b]->labels.size(); ++r) {
            if (batch[b]->labels[r] >= 0) {
                out.targets.push_back(static_cast<std::size_t>(batch[b]->labels[r]));
                out.rows.emplace_back(b, static_cast<Eigen::Index>(r));
            }
        }
    }
    const auto dim = static_cast<Eigen::Index>(encoder.config().output_dim);
    out.supervised.resize(static_cast<Eigen::Index>(out.rows.size()), dim);
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        out.supervised.row(static_cast<Eigen::Index>(i)) = outputs[out.rows[i].first].row(out.rows[i].second);
    }
    return out;
}

void backward_batch(const TransformerEncoder& encoder, const std::vector<const LabeledSequence*>& batch,
                    const BatchOutputs& outputs, const Matrix& d_supervised, ParameterSet& grads) {
    std::vector<Matrix> d_outputs(batch.size());
    const auto dim = static_cast<Eigen::Index>(encoder.config().output_dim);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        d_outputs[b] = Matrix::Zero(batch[b]->features.rows(), dim);
    }
    for (std::size_t i = 0; i < outputs.rows.size(); ++i) {
        d_outputs[outputs.rows[i].first].row(outputs.rows[i].second) = d_supervised.row(static_cast<Eigen::Index>(i));
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
        encoder.backward(outputs.caches[b], d_outputs[b], grads);
    }
}

// Instance discrimination between clean and perturbed views: row i of `clean` should pick
// row i of `noisy` among all noisy rows.
double instance_loss(const Matrix& clean, const Matrix& noisy, double tau, Matrix& d_clean, Matrix& d_noisy) {
    const auto n = static_cast<double>(clean.rows());
    const Matrix logits = clean * noisy.transpose() / tau;
    Matrix d_logits(logits.rows(), logits.cols());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double max = logits.row(r).maxCoeff();
        const auto shifted = (logits.row(r).array() - max).exp();
        const double sum = shifted.sum();
        loss += -(logits(r, r) - max - std::log(sum));
        d_logits.row(r) = shifted / sum;
        d_logits(r, r) -= 1.0;
    }
    d_logits /= n;
    d_clean = d_logits * noisy / tau;
    d_noisy = d_logits.transpose() * clean / tau;
    return loss / n;
}

} // namespace

TrainResult train(AlignerModel& model, const std::vector<LabeledSequence>& train_set,
                  const std::vector<LabeledSequence>& val_set, const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) {
        throw ConfigError("training split is empty");
    }
    model.set_tau(config.tau);
    auto& encoder = model.encoder();
    AdamOptimizer optimizer(encoder.parameters(), config);
    ParameterSet grads = encoder.parameters().zeros_like();
    double log_tau = std::log(config.tau);

    TrainResult result;
    ParameterSet best_params = encoder.parameters();
    double best_tau = model.tau();
    double best_score = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, epoch));
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<const LabeledSequence*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
                batch.push_back(&train_set[order[i]]);
            }
            BatchOutputs clean = forward_batch(encoder, batch, nullptr);
            if (clean.targets.empty()) continue;
            grads.set_zero();
            AlignmentLoss loss = alignment_loss(clean.supervised, clean.targets, model.bank(), model.tau());
            double total = loss.loss;
            Matrix d_clean = loss.d_outputs;

            if (config.aux_weight > 0.0 && clean.targets.size() > 1) {
                std::vector<Matrix> perturbed;
                for (const auto* sequence : batch) {
                    const double rms = std::sqrt(sequence->features.squaredNorm() /
                                                 std::max<double>(1.0, static_cast<double>(sequence->features.size())));
                    Matrix noisy = sequence->features;
                    for (Eigen::Index i = 0; i < noisy.size(); ++i) {
                        noisy.data()[i] += config.aux_noise * rms * rng.normal();
                    }
                    perturbed.push_back(std::move(noisy));
                }
                BatchOutputs noisy = forward_batch(encoder, batch, &perturbed);
                Matrix d_a;
                Matrix d_b;
                const double aux = instance_loss(clean.supervised, noisy.supervised, config.aux_tau, d_a, d_b);
                total += config.aux_weight * aux;
                d_clean += config.aux_weight * d_a;
                backward_batch(encoder, batch, noisy, config.aux_weight * d_b, grads);
            }
            if (!std::isfinite(total)) {
                throw RuntimeFailure("training diverged at epoch " + std::to_string(epoch) + ", batch starting " +
                                     std::to_string(start) + ": loss=" + std::to_string(total) +
                                     ", tau=" + std::to_string(model.tau()));
            }
            backward_batch(encoder, batch, clean, d_clean, grads);
            optimizer.step(encoder.parameters(), grads);
            if (config.learn_tau) {
                log_tau = optimizer.step_scalar(log_tau, loss.d_log_tau);
                model.set_tau(std::exp(log_tau));
            }
            if (!encoder.parameters().all_finite()) {
                throw RuntimeFailure("training diverged at epoch " + std::to_string(epoch) +
                                     ": non-finite parameters after update (last loss " + std::to_string(total) + ")");
            }
            loss_sum += loss.loss * static_cast<double>(clean.targets.size());
            loss_count += clean.targets.size();
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
        const SplitMetrics val = evaluate_alignment(model, val_set);
        metrics.val_loss = val.loss;
        metrics.val_top1 = val.top1;
        metrics.val_top5 = val.top5;
        result.history.push_back(metrics);
        spdlog::debug("epoch {} train_loss {:.4f} val_loss {:.4f} val_top1 {:.3f}", epoch, metrics.train_loss,
                      metrics.val_loss, metrics.val_top1);

        const double score = val.supervised > 0 ? val.loss : metrics.train_loss;
        if (score < best_score) {
            best_score = score;
            best_params = encoder.parameters();
            best_tau = model.tau();
            result.best_epoch = epoch;
            since_best = 0;
        } else if (config.patience > 0 && ++since_best >= config.patience) {
            break;
        }
    }
    encoder.parameters() = best_params;
    model.set_tau(best_tau);
    return result;
}

void write_training_log(const std::filesystem::path& path, const TrainResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write training log " + path.string());
    out << "epoch,train_loss,val_loss,val_top1,val_top5\n";
    out.precision(10);
    for (const auto& row : result.history) {
        out << row.epoch << ',' << row.train_loss << ',' << row.val_loss << ',' << row.val_top1 << ','
            << row.val_top5 << '\n';
    }
}

std::vector<std::string> AnchorSequence::lemmas() const {
    std::vector<std::string> out;
    for (const auto& entry : entries) out.push_back(entry.keyword);
    return out;
}

std::vector<SegmentPrediction> predict_segments(const AlignerModel& model, const EegWordSequence& sample) {
    std::vector<SegmentPrediction> predictions;
    if (sample.segments.empty()) return predictions;
    const Matrix outputs = model.encode(sample);
    const Matrix sims = outputs * model.bank().transpose();
    for (Eigen::Index r = 0; r < sims.rows(); ++r) {
        Eigen::Index best = 0;
        sims.row(r).maxCoeff(&best);
        predictions.push_back({sample.segments[static_cast<std::size_t>(r)].position, static_cast<std::size_t>(best),
                               sims(r, best)});
    }
    return predictions;
}

std::vector<AnchorEntry> select_anchors(const std::vector<SegmentPrediction>& predictions,
                                        const std::vector<std::string>& keywords, std::size_t m) {
    std::map<std::size_t, SegmentPrediction> best_per_keyword;
    for (const auto& prediction : predictions) {
        auto [it, inserted] = best_per_keyword.emplace(prediction.keyword_id, prediction);
        if (!inserted) {
            const auto& current = it->second;
            if (prediction.confidence > current.confidence ||
                (prediction.confidence == current.confidence && prediction.position < current.position)) {
                it->second = prediction;
            }
        }
    }
    std::vector<SegmentPrediction> ranked;
    for (const auto& [id, prediction] : best_per_keyword) ranked.push_back(prediction);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.position < b.position;
    });
    if (ranked.size() > m) ranked.resize(m);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.position < b.position; });
    std::vector<AnchorEntry> entries;
    for (const auto& prediction : ranked) {
        entries.push_back({prediction.keyword_id, keywords.at(prediction.keyword_id), prediction.position,
                           prediction.confidence});
    }
    return entries;
}

AnchorSequence decode_anchors(const AlignerModel& model, const EegWordSequence& sample, std::size_t m) {
    if (m == 0) {
        throw ConfigError("anchor depth m must be at least 1");
    }
    AnchorSequence anchors{sample.sentence_id, sample.subject_id, m, {}};
    if (sample.segments.empty()) {
        spdlog::warn("sample {}/{} has no segments; decoded an empty anchor sequence", sample.subject_id,
                     sample.sentence_id);
        return anchors;
    }
    anchors.entries = select_anchors(predict_segments(model, sample), model.keywords(), m);
    return anchors;
}

json anchors_to_json(const AnchorSequence& anchors) {
    json entries = json::array();
    for (const auto& entry : anchors.entries) {
        entries.push_back({{"keyword_id", entry.keyword_id},
                           {"keyword", entry.keyword},
                           {"position", entry.position},
                           {"confidence", entry.confidence}});
    }
    return {{"sentence_id", anchors.sentence_id},
            {"subject_id", anchors.subject_id},
            {"m", anchors.m_requested},
            {"entries", std::move(entries)}};
}

AnchorSequence anchors_from_json(const json& object) {
    AnchorSequence anchors;
    anchors.sentence_id = object.at("sentence_id").get<std::string>();
    anchors.subject_id = object.value("subject_id", std::string("pooled"));
    anchors.m_requested = object.at("m").get<std::size_t>();
    for (const auto& entry : object.at("entries")) {
        anchors.entries.push_back({entry.at("keyword_id").get<std::size_t>(), entry.at("keyword").get<std::string>(),
                                   entry.at("position").get<std::size_t>(), entry.at("confidence").get<double>()});
    }
    return anchors;
}

void write_anchors(const std::filesystem::path& path, const std::vector<AnchorSequence>& sequences) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write anchors " + path.string());
    for (const auto& sequence : sequences) out << anchors_to_json(sequence).dump() << '\n';
}

std::vector<AnchorSequence> read_anchors(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open anchors file " + path.string());
    std::vector<AnchorSequence> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        try {
            out.push_back(anchors_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(number) + ": " + e.what());
        }
    }
    return out;
}

namespace {

constexpr char kCheckpointMagic[4] = {'B', 'C', 'L', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
    static_assert(std::endian::native == std::endian::little);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(const std::vector<char>& bytes, std::size_t& offset) {
    if (offset + sizeof(T) > bytes.size()) throw ValidationError("checkpoint truncated");
    T value;
    std::memcpy(&value, bytes.data() + offset, sizeof(T));
    offset += sizeof(T);
    return value;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const AlignerModel& model) {
    const auto& params = model.encoder().parameters();
    const json header = {{"config", model.encoder().config().to_json()},
                         {"vocab_hash", vocabulary_hash(model.keywords())},
                         {"keyword_count", model.keywords().size()},
                         {"tau", model.tau()},
                         {"learn_tau", model.learn_tau()},
                         {"tensors", params.tensors().size()}};
    const std::string header_text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& tensor : params.tensors()) {
        put<std::uint16_t>(out, static_cast<std::uint16_t>(tensor.name.size()));
        out.write(tensor.name.data(), static_cast<std::streamsize>(tensor.name.size()));
        put<std::uint32_t>(out, 2);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.value.rows()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.value.cols()));
        for (Eigen::Index r = 0; r < tensor.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < tensor.value.cols(); ++c) {
                put<float>(out, static_cast<float>(tensor.value(r, c)));
            }
        }
    }
}

AlignerModel load_checkpoint(const std::filesystem::path& path, const std::vector<std::string>& keywords,
                             const EmbeddingBank& keyword_bank) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    const std::vector<char> bytes(std::istreambuf_iterator<char>(in), {});
    std::size_t offset = 0;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw ValidationError(path.string() + ": not a BCLM checkpoint");
    }
    offset = 4;
    const auto version = take<std::uint32_t>(bytes, offset);
    if (version != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto header_length = take<std::uint32_t>(bytes, offset);
    if (offset + header_length > bytes.size()) throw ValidationError("checkpoint truncated");
    const json header = json::parse(std::string(bytes.data() + offset, header_length));
    offset += header_length;

    const auto config = EncoderConfig::from_json(header.at("config"));
    if (header.at("vocab_hash").get<std::string>() != vocabulary_hash(keywords)) {
        throw ValidationError("checkpoint was trained on a different keyword vocabulary");
    }
    ParameterSet params;
    while (offset < bytes.size()) {
        const auto name_length = take<std::uint16_t>(bytes, offset);
        if (offset + name_length > bytes.size()) throw ValidationError("checkpoint truncated");
        const std::string name(bytes.data() + offset, name_length);
        offset += name_length;
        const auto rank = take<std::uint32_t>(bytes, offset);
        if (rank != 1 && rank != 2) throw ValidationError("tensor " + name + " has unsupported rank");
        const auto rows = rank == 2 ? take<std::uint32_t>(bytes, offset) : 1U;
        const auto cols = take<std::uint32_t>(bytes, offset);
        Matrix& value = params.add(name, rows, cols);
        for (Eigen::Index r = 0; r < value.rows(); ++r) {
            for (Eigen::Index c = 0; c < value.cols(); ++c) {
                value(r, c) = take<float>(bytes, offset);
            }
        }
    }
    TransformerEncoder encoder(config, std::move(params));
    return AlignerModel(std::move(encoder), keywords, keyword_bank, header.at("tau").get<double>(),
                        header.value("learn_tau", false));
}

} // namespace anchorlab
