#pragma once

#include <atomic>
#include <filesystem>
#include <sstream>
#include <string>
#include <unistd.h>

#include "anchorlab/corpus.hpp"

namespace testutil {

inline std::filesystem::path source_dir() { return ANCHORLAB_SOURCE_DIR; }
inline std::filesystem::path fixture(const std::string& name) { return source_dir() / "fixtures" / name; }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& tag) {
    static std::atomic<int> counter{0};
    auto dir = std::filesystem::temp_directory_path() /
               ("anchorlab-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Tokens written as "surface/lemma/POS[/ENTITY]" separated by spaces.
inline anchorlab::AnnotatedSentence make_sentence(const std::string& id, const std::string& spec,
                                                  anchorlab::Task task = anchorlab::Task::SR1) {
    anchorlab::AnnotatedSentence s;
    s.sentence_id = id;
    s.task = task;
    std::istringstream in(spec);
    std::string item;
    while (in >> item) {
        anchorlab::AnnotatedToken t;
        std::vector<std::string> parts;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= item.size(); ++i) {
            if (i == item.size() || item[i] == '/') {
                parts.push_back(item.substr(start, i - start));
                start = i + 1;
            }
        }
        t.surface = parts.at(0);
        t.lemma = parts.at(1);
        t.pos = anchorlab::parse_pos(parts.at(2));
        t.entity = parts.size() > 3 ? anchorlab::parse_entity(parts[3]) : anchorlab::EntityTag::None;
        t.position = s.tokens.size();
        s.text += (s.tokens.empty() ? "" : " ") + t.surface;
        s.tokens.push_back(t);
    }
    s.text += ".";
    return s;
}

} // namespace testutil
