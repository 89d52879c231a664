#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "anchorlab/chat_client.hpp"
#include "anchorlab/prompt.hpp"
#include "anchorlab/retrieval.hpp"

namespace anchorlab {

enum class Provenance { Remote, Fallback, External };
std::string to_string(Provenance provenance);
Provenance parse_provenance(const std::string& text);

struct ReconstructionRecord {
    std::string sentence_id;
    PromptMode mode = PromptMode::Naive;
    std::vector<std::string> anchors;
    std::vector<std::string> retrieved_ids;
    std::string output;
    Provenance provenance = Provenance::Fallback;
    std::optional<std::string> raw_response;
    // Bookkeeping for the evaluation harness; optional in files written by other tools.
    std::string subject_id = "pooled";
    std::string condition = "ordered";
    std::size_t m = 0;
    std::string template_id;
};

nlohmann::json record_to_json(const ReconstructionRecord& record);
/// Only sentence_id and output are required; everything else has defaults.
ReconstructionRecord record_from_json(const nlohmann::json& object);
void write_records(const std::filesystem::path& path, const std::vector<ReconstructionRecord>& records);
std::vector<ReconstructionRecord> read_records(const std::filesystem::path& path);

/// Trim, keep text up to and including the first sentence terminator, strip surrounding quotes.
std::string postprocess_response(const std::string& response);

/// Offline output: the top reference for rag modes, otherwise the anchors joined into a sentence.
std::string fallback_sentence(PromptMode mode, const std::vector<std::string>& anchors,
                              const std::vector<std::string>& references);

struct ReconstructOptions {
    std::size_t k = 5;
    GenerationParams params;
    /// Parallel endpoint calls; output order always follows input order.
    std::size_t concurrency = 1;
    bool keep_raw_response = true;
};

struct ReconstructionRequest {
    std::string sentence_id;
    std::string subject_id = "pooled";
    std::string condition = "ordered";
    std::size_t m = 0;
    std::vector<std::string> anchors;
    PromptMode mode = PromptMode::Naive;
};

class Reconstructor {
  public:
    /// `client` may be null for the deterministic offline fallback. `index` is the pool of the
    /// task the requests come from; it is required for rag modes.
    Reconstructor(const RetrievalIndex* index, PromptTemplates templates, ChatClient* client,
                  ReconstructOptions options);

    ReconstructionRecord reconstruct(const ReconstructionRequest& request) const;
    std::vector<ReconstructionRecord> reconstruct_all(const std::vector<ReconstructionRequest>& requests) const;

    bool remote() const { return client_ != nullptr; }
    const ReconstructOptions& options() const { return options_; }
    const PromptTemplates& templates() const { return templates_; }

  private:
    const RetrievalIndex* index_;
    PromptTemplates templates_;
    ChatClient* client_;
    ReconstructOptions options_;
};

} // namespace anchorlab
