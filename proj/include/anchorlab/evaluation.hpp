#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anchorlab/aligner.hpp"
#include "anchorlab/common.hpp"
#include "anchorlab/corpus.hpp"
#include "anchorlab/embedder.hpp"
#include "anchorlab/reconstruct.hpp"
#include "anchorlab/stats.hpp"

namespace anchorlab {

enum class AnchorKind { Random, Ordered, Oracle };
std::string to_string(AnchorKind kind);
AnchorKind parse_anchor_kind(const std::string& text);

/// First m distinct in-vocabulary content lemmas in reading order.
std::vector<std::string> oracle_anchors(const AnnotatedSentence& sentence, const std::set<std::string>& vocabulary,
                                        std::size_t m);
/// m distinct keywords drawn uniformly (order of draw kept).
std::vector<std::string> random_anchors(const std::vector<std::string>& vocabulary, std::size_t m, Rng& rng);

/// One task's sentence pool with unit embeddings.
struct SentencePool {
    Task task = Task::SR1;
    std::vector<std::string> ids;
    std::vector<std::string> texts;
    Matrix embeddings; ///< N x D, unit rows
    std::map<std::string, std::size_t> index;

    static SentencePool build(const std::vector<const AnnotatedSentence*>& sentences, const SentenceEmbedder& embedder);
    std::size_t size() const { return ids.size(); }
};

/// 1-based rank of pool row `target` under cosine to `query`; ties go to the earlier pool row.
std::size_t retrieval_rank(const Vector& query, const Matrix& pool_embeddings, std::size_t target);

/// Caches embeddings by text; fallback reconstructions repeat pool sentences a lot.
class EmbeddingCache {
  public:
    explicit EmbeddingCache(const SentenceEmbedder& embedder) : embedder_(embedder) {}
    const Vector& get(const std::string& text);

  private:
    const SentenceEmbedder& embedder_;
    std::map<std::string, Vector> cache_;
};

/// Rank of each ground-truth sentence for its reconstruction.
std::vector<std::size_t> retrieval_ranks(const std::vector<std::string>& reconstructions,
                                         const std::vector<std::string>& ground_truth_ids, const SentencePool& pool,
                                         EmbeddingCache& cache);

std::map<std::size_t, double> accuracy_at(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks);

std::map<std::size_t, double> retrieval_accuracy(const std::vector<std::string>& reconstructions,
                                                 const std::vector<std::string>& ground_truth_ids,
                                                 const SentencePool& pool, const SentenceEmbedder& embedder,
                                                 const std::vector<std::size_t>& ks);

/// hits[i][j]: ground truth j ranks within k for reconstruction i.
HitMatrix hit_matrix(const std::vector<std::string>& reconstructions, const std::vector<std::string>& ground_truth_ids,
                     const SentencePool& pool, EmbeddingCache& cache, std::size_t k);

struct MetricRow {
    std::string condition;
    std::string mode;
    std::size_t m = 0;
    std::string subject = "pooled";
    std::size_t n = 0;
    std::size_t subjects = 1;
    double anchor_hit = 0.0;
    double anchor_all = 0.0;
    std::map<std::size_t, double> topk;
    std::vector<double> bleu;
    double rouge1 = 0.0;
    std::optional<double> greedy_f1;
    std::size_t greedy_missing = 0;
    /// SD across subjects for pooled rows with more than one subject.
    std::map<std::string, double> sd;

    nlohmann::json to_json() const;
    static MetricRow from_json(const nlohmann::json& object);
};

struct EvalReport {
    static constexpr int kSchemaVersion = 1;
    nlohmann::json config = nlohmann::json::object();
    std::vector<MetricRow> rows;
    std::vector<TestResult> stats;
    nlohmann::json permutation = nlohmann::json::object();
    nlohmann::json chance = nlohmann::json::object();
    nlohmann::json recovery = nlohmann::json::array();
    std::vector<std::string> gaps;

    const MetricRow* find(const std::string& condition, const std::string& mode, std::size_t m,
                          const std::string& subject = "pooled") const;
    nlohmann::json to_json() const;
    /// Throws ValidationError on an unknown schema version.
    static EvalReport from_json(const nlohmann::json& object);
    /// report.json, metrics.csv, stats.csv.
    void write(const std::filesystem::path& dir) const;
    /// topk_curve.csv (k vs accuracy) and m_curve.csv (m vs Top-5).
    void write_plot_data(const std::filesystem::path& dir) const;
};

/// True when every row's Top-k is non-decreasing in k.
bool topk_monotone(const EvalReport& report);

struct ScoreOptions {
    std::vector<std::size_t> ks{5, 10, 15, 20, 25};
    std::size_t bleu_order = 3;
    /// Enables the greedy-matching F1 when set.
    const EmbeddingBank* word_bank = nullptr;
};

/// Scores reconstruction records (ours or external) grouped by condition, mode, m and subject,
/// then adds chance levels, recovery ratios and the statistics that the subject count allows.
EvalReport score_records(const std::vector<ReconstructionRecord>& records, const SentenceMap& sentences,
                         const std::map<Task, SentencePool>& pools, const SentenceEmbedder& embedder,
                         const ScoreOptions& options);

struct SuiteOptions {
    std::vector<AnchorKind> conditions{AnchorKind::Random, AnchorKind::Ordered, AnchorKind::Oracle};
    std::vector<PromptMode> modes{PromptMode::Naive, PromptMode::Cot, PromptMode::Rag, PromptMode::CotRag};
    std::vector<std::size_t> ms{3, 5, 7};
    ScoreOptions score;
    std::uint64_t seed = 0;
};

/// Builds the anchor conditions for every decoded sample, reconstructs them with the
/// per-task reconstructors and scores the result.
std::vector<ReconstructionRequest> build_condition_requests(const SentenceMap& sentences,
                                                            const std::vector<SamplePredictions>& decoded,
                                                            const std::vector<std::string>& keywords,
                                                            const SuiteOptions& options,
                                                            std::vector<std::string>* gaps = nullptr);

EvalReport run_condition_suite(const SentenceMap& sentences, const std::vector<SamplePredictions>& decoded,
                               const std::vector<std::string>& keywords,
                               const std::map<Task, const Reconstructor*>& reconstructors,
                               const std::map<Task, SentencePool>& pools, const SentenceEmbedder& embedder,
                               const SuiteOptions& options,
                               std::vector<ReconstructionRecord>* records_out = nullptr);

struct PermutationOptions {
    std::string condition = "ordered";
    PromptMode mode = PromptMode::CotRag;
    std::size_t m = 5;
    std::size_t k = 25;
    std::size_t n_perm = 500;
    /// Label-shuffled control runs; 0 disables the control.
    std::size_t control_repeats = 20;
    std::uint64_t seed = 0;
};

/// Permutation test on the records of one (condition, mode, m) cell, per task. The control
/// shuffles the reconstruction-to-sentence assignment once and re-runs the test on that.
nlohmann::json anchor_permutation(const std::vector<ReconstructionRecord>& records, const SentenceMap& sentences,
                                  const std::map<Task, SentencePool>& pools, const SentenceEmbedder& embedder,
                                  const PermutationOptions& options);

nlohmann::json predictions_to_json(const SamplePredictions& predictions);
SamplePredictions predictions_from_json(const nlohmann::json& object);
void write_predictions(const std::filesystem::path& path, const std::vector<SamplePredictions>& predictions);
std::vector<SamplePredictions> read_predictions(const std::filesystem::path& path);

} // namespace anchorlab
