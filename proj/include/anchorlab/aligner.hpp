#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "anchorlab/corpus.hpp"
#include "anchorlab/embedding_bank.hpp"
#include "anchorlab/encoder.hpp"

namespace anchorlab {

/// Per-position gradients and value of the keyword-bank softmax loss.
struct AlignmentLoss {
    double loss = 0.0;
    Matrix d_outputs;  ///< same shape as outputs
    double d_log_tau = 0.0;
};

/// Mean over rows of -log softmax(bank . h / tau)[target].
///
/// `outputs` is N x D (unit rows), `bank` is V x D (unit rows), `targets` index bank rows.
/// Throws ValidationError for an empty batch or an out-of-range target.
AlignmentLoss alignment_loss(const Matrix& outputs, const std::vector<std::size_t>& targets, const Matrix& bank,
                             double tau);

/// Softmax over bank similarities for one output row.
Vector bank_softmax(const Vector& output, const Matrix& bank, double tau);

/// Frozen keyword bank plus the trainable encoder and temperature.
class AlignerModel {
  public:
    AlignerModel(TransformerEncoder encoder, std::vector<std::string> keywords, const EmbeddingBank& keyword_bank,
                 double tau, bool learn_tau = false);

    TransformerEncoder& encoder() { return encoder_; }
    const TransformerEncoder& encoder() const { return encoder_; }
    const std::vector<std::string>& keywords() const { return keywords_; }
    std::optional<std::size_t> keyword_id(const std::string& lemma) const;
    /// V x output_dim, unit rows, in vocabulary order.
    const Matrix& bank() const { return bank_; }
    double tau() const { return tau_; }
    void set_tau(double tau);
    bool learn_tau() const { return learn_tau_; }

    /// Unit output vectors for a sample (rows follow segments).
    Matrix encode(const EegWordSequence& sample) const;

  private:
    TransformerEncoder encoder_;
    std::vector<std::string> keywords_;
    Matrix bank_;
    double tau_;
    bool learn_tau_;
};

/// Encodes L x input_dim features; one unit vector per row.
Matrix encode_sequence(const TransformerEncoder& encoder, const Matrix& features);
Matrix features_matrix(const EegWordSequence& sample);

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 32;
    std::size_t epochs = 50;
    /// Stop after this many epochs without validation improvement; 0 disables.
    std::size_t patience = 0;
    double tau = 0.07;
    bool learn_tau = false;
    /// Weight of the clean-vs-perturbed instance discrimination term (0 = off).
    double aux_weight = 0.0;
    double aux_noise = 0.1;
    double aux_tau = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

/// Sample with per-segment keyword labels (-1 where the lemma is out of vocabulary).
struct LabeledSequence {
    Matrix features;
    std::vector<long> labels;
    std::size_t sample_index = 0;
};

std::vector<LabeledSequence> label_samples(const Dataset& dataset, const std::vector<std::size_t>& sample_indices,
                                           const AlignerModel& model);

struct SplitMetrics {
    double loss = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
    std::size_t supervised = 0;
};

SplitMetrics evaluate_alignment(const AlignerModel& model, const std::vector<LabeledSequence>& sequences);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_top1 = 0.0;
    double val_top5 = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    std::size_t best_epoch = 0;
};

/// Adam with decoupled weight decay over a ParameterSet.
class AdamOptimizer {
  public:
    AdamOptimizer(const ParameterSet& shape, const TrainConfig& config);
    void step(ParameterSet& params, const ParameterSet& grads);
    /// Scalar variant for the log-temperature.
    double step_scalar(double value, double grad);

  private:
    TrainConfig config_;
    ParameterSet m_;
    ParameterSet v_;
    double m_scalar_ = 0.0;
    double v_scalar_ = 0.0;
    std::size_t t_ = 0;
};

/// Trains in place and leaves the best-validation parameters in `model`.
TrainResult train(AlignerModel& model, const std::vector<LabeledSequence>& train_set,
                  const std::vector<LabeledSequence>& val_set, const TrainConfig& config);

void write_training_log(const std::filesystem::path& path, const TrainResult& result);

struct AnchorEntry {
    std::size_t keyword_id = 0;
    std::string keyword;
    std::size_t position = 0;
    double confidence = 0.0;
};

struct AnchorSequence {
    std::string sentence_id;
    std::string subject_id;
    std::size_t m_requested = 0;
    std::vector<AnchorEntry> entries;

    std::vector<std::string> lemmas() const;
};

/// Nearest keyword for one segment.
struct SegmentPrediction {
    std::size_t position = 0;
    std::size_t keyword_id = 0;
    double confidence = 0.0;
};

std::vector<SegmentPrediction> predict_segments(const AlignerModel& model, const EegWordSequence& sample);

/// Dedup by keyword (highest confidence, then earliest position), keep the top m by
/// confidence, then re-sort by source position.
std::vector<AnchorEntry> select_anchors(const std::vector<SegmentPrediction>& predictions,
                                        const std::vector<std::string>& keywords, std::size_t m);

AnchorSequence decode_anchors(const AlignerModel& model, const EegWordSequence& sample, std::size_t m);

nlohmann::json anchors_to_json(const AnchorSequence& anchors);
AnchorSequence anchors_from_json(const nlohmann::json& object);
void write_anchors(const std::filesystem::path& path, const std::vector<AnchorSequence>& sequences);
std::vector<AnchorSequence> read_anchors(const std::filesystem::path& path);

/// Per-segment predictions for a whole sample, serialisable so anchor depth can be re-chosen later.
struct SamplePredictions {
    std::string sentence_id;
    std::string subject_id;
    std::vector<SegmentPrediction> segments;
};

/// Checkpoint layout: "BCLM" | u32 version | u32 header length | JSON header |
/// tensors as (u16 name length, name, u32 rank, u32 dims..., f32 row-major data).
void save_checkpoint(const std::filesystem::path& path, const AlignerModel& model);
AlignerModel load_checkpoint(const std::filesystem::path& path, const std::vector<std::string>& keywords,
                             const EmbeddingBank& keyword_bank);

} // namespace anchorlab
