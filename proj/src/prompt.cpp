#include "anchorlab/prompt.hpp"

#include <fstream>
#include <sstream>

#include "anchorlab/common.hpp"

namespace anchorlab {

std::string to_string(PromptMode mode) {
    switch (mode) {
    case PromptMode::Naive: return "naive";
    case PromptMode::Cot: return "cot";
    case PromptMode::Rag: return "rag";
    case PromptMode::CotRag: return "cot_rag";
    }
    return "naive";
}

PromptMode parse_prompt_mode(const std::string& text) {
    for (auto mode : all_prompt_modes()) {
        if (to_string(mode) == text) return mode;
    }
    throw ValidationError("unknown prompt mode '" + text + "' (expected naive, cot, rag or cot_rag)");
}

bool uses_references(PromptMode mode) { return mode == PromptMode::Rag || mode == PromptMode::CotRag; }

const std::vector<PromptMode>& all_prompt_modes() {
    static const std::vector<PromptMode> modes{PromptMode::Naive, PromptMode::Cot, PromptMode::Rag,
                                               PromptMode::CotRag};
    return modes;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& root, const std::string& id) {
    PromptTemplates templates;
    templates.id = id;
    for (auto mode : all_prompt_modes()) {
        const auto path = root / id / (to_string(mode) + ".txt");
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ValidationError("missing prompt template " + path.string());
        std::ostringstream text;
        text << in.rdbuf();
        const std::string body = text.str();
        if (body.find("{anchors}") == std::string::npos) {
            throw ValidationError(path.string() + " has no {anchors} placeholder");
        }
        if (uses_references(mode) != (body.find("{references}") != std::string::npos)) {
            throw ValidationError(path.string() + ": {references} placeholder must appear exactly in rag modes");
        }
        if (body.find(kSingleSentenceInstruction) == std::string::npos) {
            throw ValidationError(path.string() + " lacks the single-sentence instruction");
        }
        templates.text[mode] = body;
    }
    return templates;
}

PromptTemplates PromptTemplates::defaults(const std::string& id) { return load(data_dir() / "templates", id); }

namespace {

/// Single pass, so placeholder-looking text inside anchors or references stays literal.
std::string render(const std::string& body, const std::string& anchors, const std::string& references) {
    std::string out;
    for (std::size_t i = 0; i < body.size();) {
        if (body.compare(i, 9, "{anchors}") == 0) {
            out += anchors;
            i += 9;
        } else if (body.compare(i, 12, "{references}") == 0) {
            out += references;
            i += 12;
        } else {
            out += body[i++];
        }
    }
    return out;
}

} // namespace

std::string build_prompt(const PromptSpec& spec, const PromptTemplates& templates) {
    if (spec.anchors.empty()) throw ValidationError("cannot build a prompt without anchors");
    if (!uses_references(spec.mode) && !spec.references.empty()) {
        throw ValidationError("mode " + to_string(spec.mode) + " takes no references");
    }
    std::string anchors;
    for (std::size_t i = 0; i < spec.anchors.size(); ++i) {
        if (i > 0) anchors += ", ";
        anchors += spec.anchors[i];
    }
    std::string references;
    for (std::size_t i = 0; i < spec.references.size(); ++i) {
        if (i > 0) references += "\n";
        references += std::to_string(i + 1) + ". " + spec.references[i];
    }
    if (uses_references(spec.mode) && spec.references.empty()) references = "(none)";
    return render(templates.text.at(spec.mode), anchors, references);
}

} // namespace anchorlab
