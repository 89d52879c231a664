#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace anchorlab {

enum class PromptMode { Naive, Cot, Rag, CotRag };

std::string to_string(PromptMode mode);
PromptMode parse_prompt_mode(const std::string& text);
bool uses_references(PromptMode mode);
const std::vector<PromptMode>& all_prompt_modes();

struct PromptSpec {
    PromptMode mode = PromptMode::Naive;
    std::vector<std::string> anchors;
    std::vector<std::string> references;
};

/// One template per mode, read from `<root>/<id>/<mode>.txt`.
///
/// Templates use `{anchors}` (comma-separated, in order) and `{references}` (numbered lines).
struct PromptTemplates {
    std::string id;
    std::map<PromptMode, std::string> text;

    static PromptTemplates load(const std::filesystem::path& root, const std::string& id);
    /// Templates shipped under data/templates.
    static PromptTemplates defaults(const std::string& id = "v1");
};

/// The literal instruction every template must carry.
inline constexpr const char* kSingleSentenceInstruction = "Output exactly one sentence";

/// Throws ValidationError when references do not match the mode or no anchors are given.
std::string build_prompt(const PromptSpec& spec, const PromptTemplates& templates);

} // namespace anchorlab
