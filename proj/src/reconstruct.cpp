#include "anchorlab/reconstruct.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"

namespace anchorlab {

using nlohmann::json;

std::string to_string(Provenance provenance) {
    switch (provenance) {
    case Provenance::Remote: return "remote";
    case Provenance::Fallback: return "fallback";
    case Provenance::External: return "external";
    }
    return "external";
}

Provenance parse_provenance(const std::string& text) {
    if (text == "remote") return Provenance::Remote;
    if (text == "fallback") return Provenance::Fallback;
    if (text == "external") return Provenance::External;
    throw ValidationError("unknown provenance '" + text + "'");
}

json record_to_json(const ReconstructionRecord& record) {
    json out = {{"sentence_id", record.sentence_id},
                {"subject_id", record.subject_id},
                {"condition", record.condition},
                {"m", record.m},
                {"mode", to_string(record.mode)},
                {"template_id", record.template_id},
                {"anchors", record.anchors},
                {"retrieved_ids", record.retrieved_ids},
                {"output", record.output},
                {"provenance", to_string(record.provenance)}};
    if (record.raw_response) out["raw_response"] = *record.raw_response;
    return out;
}

ReconstructionRecord record_from_json(const json& object) {
    ReconstructionRecord record;
    record.sentence_id = object.at("sentence_id").get<std::string>();
    record.output = object.at("output").get<std::string>();
    record.subject_id = object.value("subject_id", std::string("pooled"));
    record.condition = object.value("condition", std::string("external"));
    record.m = object.value("m", std::size_t{0});
    record.mode = parse_prompt_mode(object.value("mode", std::string("naive")));
    record.template_id = object.value("template_id", std::string());
    record.anchors = object.value("anchors", std::vector<std::string>{});
    record.retrieved_ids = object.value("retrieved_ids", std::vector<std::string>{});
    record.provenance = parse_provenance(object.value("provenance", std::string("external")));
    if (object.contains("raw_response") && object["raw_response"].is_string()) {
        record.raw_response = object["raw_response"].get<std::string>();
    }
    return record;
}

void write_records(const std::filesystem::path& path, const std::vector<ReconstructionRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    for (const auto& record : records) out << record_to_json(record).dump() << '\n';
}

std::vector<ReconstructionRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open reconstruction file " + path.string());
    std::vector<ReconstructionRecord> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        try {
            out.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(number) + ": " + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + " line " + std::to_string(number) + ": " + e.what());
        }
    }
    return out;
}

namespace {

bool is_quote(char c) { return c == '"' || c == '\'' || c == '`'; }

std::string strip_quotes(std::string text) {
    // Curly quotes arrive as UTF-8 sequences.
    static const std::vector<std::string> curly{"\xE2\x80\x9C", "\xE2\x80\x9D", "\xE2\x80\x98", "\xE2\x80\x99"};
    bool changed = true;
    while (changed && !text.empty()) {
        changed = false;
        if (is_quote(text.front())) {
            text.erase(0, 1);
            changed = true;
        }
        if (!text.empty() && is_quote(text.back())) {
            text.pop_back();
            changed = true;
        }
        for (const auto& q : curly) {
            if (text.rfind(q, 0) == 0) {
                text.erase(0, q.size());
                changed = true;
            }
            if (text.size() >= q.size() && text.compare(text.size() - q.size(), q.size(), q) == 0) {
                text.erase(text.size() - q.size());
                changed = true;
            }
        }
        text = trim(text);
    }
    return text;
}

} // namespace

std::string postprocess_response(const std::string& response) {
    std::string text = strip_quotes(trim(response));
    std::string collapsed;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (space) {
            if (!collapsed.empty() && collapsed.back() != ' ') collapsed += ' ';
        } else {
            collapsed += c;
        }
    }
    text = trim(collapsed);
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        std::size_t end = i + 1;
        while (end < text.size() && (text[end] == '.' || text[end] == '!' || text[end] == '?')) ++end;
        while (end < text.size() && is_quote(text[end])) ++end;
        // A terminator ends the sentence only when followed by whitespace or the end of text.
        if (end == text.size() || text[end] == ' ') {
            text = text.substr(0, end);
            break;
        }
    }
    return strip_quotes(text);
}

std::string fallback_sentence(PromptMode mode, const std::vector<std::string>& anchors,
                              const std::vector<std::string>& references) {
    if (uses_references(mode) && !references.empty()) return references.front();
    std::string sentence;
    for (const auto& anchor : anchors) {
        if (!sentence.empty()) sentence += ' ';
        sentence += anchor;
    }
    if (!sentence.empty()) sentence[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sentence[0])));
    return sentence + ".";
}

Reconstructor::Reconstructor(const RetrievalIndex* index, PromptTemplates templates, ChatClient* client,
                             ReconstructOptions options)
    : index_(index), templates_(std::move(templates)), client_(client), options_(std::move(options)) {
    if (options_.concurrency == 0) throw ConfigError("concurrency must be at least 1");
}

ReconstructionRecord Reconstructor::reconstruct(const ReconstructionRequest& request) const {
    if (request.anchors.empty()) {
        throw ValidationError("sentence " + request.sentence_id + ": cannot reconstruct from empty anchors");
    }
    ReconstructionRecord record;
    record.sentence_id = request.sentence_id;
    record.subject_id = request.subject_id;
    record.condition = request.condition;
    record.m = request.m;
    record.mode = request.mode;
    record.anchors = request.anchors;
    record.template_id = templates_.id;

    std::vector<std::string> references;
    if (uses_references(request.mode)) {
        if (index_ == nullptr) throw ConfigError("mode " + to_string(request.mode) + " needs a retrieval index");
        for (const auto& hit : retrieve(*index_, request.anchors, options_.k)) {
            record.retrieved_ids.push_back(index_->ids[hit.index]);
            references.push_back(index_->texts[hit.index]);
        }
    }
    if (client_ == nullptr) {
        record.output = fallback_sentence(request.mode, request.anchors, references);
        record.provenance = Provenance::Fallback;
        return record;
    }
    const std::string prompt = build_prompt({request.mode, request.anchors, references}, templates_);
    const ChatResponse response = client_->complete(prompt, options_.params);
    record.output = postprocess_response(response.content);
    record.provenance = Provenance::Remote;
    if (options_.keep_raw_response) record.raw_response = response.raw;
    return record;
}

std::vector<ReconstructionRecord> Reconstructor::reconstruct_all(
    const std::vector<ReconstructionRequest>& requests) const {
    std::vector<ReconstructionRecord> records(requests.size());
    const std::size_t workers = std::min(options_.concurrency, std::max<std::size_t>(requests.size(), 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < requests.size(); ++i) records[i] = reconstruct(requests[i]);
        return records;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (std::size_t i = next++; i < requests.size(); i = next++) {
                try {
                    records[i] = reconstruct(requests[i]);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = requests.size();
                }
            }
        });
    }
    for (auto& thread : pool) thread.join();
    if (failure) std::rethrow_exception(failure);
    return records;
}

} // namespace anchorlab
