#include "anchorlab/embedder.hpp"

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"

namespace anchorlab {

std::vector<double> normalized(std::vector<double> values) {
    double norm = 0.0;
    for (double v : values) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& v : values) v /= norm;
    }
    return values;
}

IdfWordBankEmbedder::IdfWordBankEmbedder(const EmbeddingBank& word_bank, const std::vector<std::string>& pool_texts)
    : word_bank_(word_bank) {
    std::map<std::string, std::size_t> df;
    for (const auto& text : pool_texts) {
        const auto tokens = simple_tokenize(text);
        for (const auto& token : std::set<std::string>(tokens.begin(), tokens.end())) ++df[token];
    }
    const auto n = static_cast<double>(pool_texts.size());
    for (const auto& [token, d] : df) idf_[token] = std::log((1.0 + n) / (1.0 + static_cast<double>(d))) + 1.0;
    unseen_idf_ = std::log(1.0 + n) + 1.0;
}

std::vector<double> IdfWordBankEmbedder::embed(const std::string& text) const {
    std::vector<double> sum(word_bank_.dim(), 0.0);
    for (const auto& token : simple_tokenize(text)) {
        const auto index = word_bank_.index_of(token);
        if (!index) continue;
        auto it = idf_.find(token);
        const double weight = it == idf_.end() ? unseen_idf_ : it->second;
        const auto vec = word_bank_.vector(*index, true);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += weight * vec[i];
    }
    return normalized(std::move(sum));
}

std::vector<double> SentenceBankEmbedder::embed(const std::string& text) const {
    const auto index = bank_.index_of(text);
    if (!index) throw ValidationError("sentence bank has no entry for: " + text);
    return bank_.vector(*index, true);
}

RemoteEmbedder::RemoteEmbedder(EndpointConfig config) : config_(std::move(config)) {
    if (config_.url.empty()) throw ConfigError("remote embedder needs an endpoint URL");
}

std::vector<double> RemoteEmbedder::embed(const std::string& text) const {
    const nlohmann::json body = {{"model", config_.model}, {"input", text}};
    const auto raw = post_json_with_retries(config_, "/v1/embeddings", body);
    try {
        return normalized(nlohmann::json::parse(raw).at("data").at(0).at("embedding").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        throw RuntimeFailure(std::string("malformed embedding response: ") + e.what());
    }
}

} // namespace anchorlab
