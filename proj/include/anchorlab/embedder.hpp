#pragma once

#include <map>
#include <string>
#include <vector>

#include "anchorlab/chat_client.hpp"
#include "anchorlab/embedding_bank.hpp"

namespace anchorlab {

/// Maps sentence text to a unit vector (zero when nothing is embeddable).
class SentenceEmbedder {
  public:
    virtual ~SentenceEmbedder() = default;
    virtual std::vector<double> embed(const std::string& text) const = 0;
    virtual std::string name() const = 0;
};

/// IDF-weighted mean of unit word-bank vectors; idf = ln((1+N)/(1+df)) + 1 over the pool texts.
class IdfWordBankEmbedder : public SentenceEmbedder {
  public:
    IdfWordBankEmbedder(const EmbeddingBank& word_bank, const std::vector<std::string>& pool_texts);
    std::vector<double> embed(const std::string& text) const override;
    std::string name() const override { return "idf-word-bank"; }

  private:
    const EmbeddingBank& word_bank_;
    std::map<std::string, double> idf_;
    double unseen_idf_ = 1.0;
};

/// Exact-text lookup into a precomputed sentence bank. Missing text is a ValidationError.
class SentenceBankEmbedder : public SentenceEmbedder {
  public:
    explicit SentenceBankEmbedder(const EmbeddingBank& bank) : bank_(bank) {}
    std::vector<double> embed(const std::string& text) const override;
    std::string name() const override { return "sentence-bank"; }

  private:
    const EmbeddingBank& bank_;
};

/// OpenAI-compatible /v1/embeddings endpoint.
class RemoteEmbedder : public SentenceEmbedder {
  public:
    explicit RemoteEmbedder(EndpointConfig config);
    std::vector<double> embed(const std::string& text) const override;
    std::string name() const override { return "remote:" + config_.model; }

  private:
    EndpointConfig config_;
};

std::vector<double> normalized(std::vector<double> values);

} // namespace anchorlab
