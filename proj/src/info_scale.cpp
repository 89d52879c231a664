#include "anchorlab/info_scale.hpp"

#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"

namespace anchorlab {

double anchor_entropy(std::size_t vocabulary_size, std::size_t m, bool with_repetition) {
    if (vocabulary_size < 1) throw ValidationError("vocabulary size must be at least 1");
    if (with_repetition) return static_cast<double>(m) * std::log2(static_cast<double>(vocabulary_size));
    if (m > vocabulary_size) throw ValidationError("cannot draw more distinct anchors than the vocabulary holds");
    double bits = 0.0;
    for (std::size_t i = 0; i < m; ++i) bits += std::log2(static_cast<double>(vocabulary_size - i));
    return bits;
}

double sentence_lower_bound(std::size_t length, std::size_t vocabulary_size) {
    if (vocabulary_size < 1) throw ValidationError("vocabulary size must be at least 1");
    return static_cast<double>(length) * std::log2(static_cast<double>(vocabulary_size));
}

std::vector<ScaleRow> scale_table(std::size_t vocabulary_size, const std::vector<std::size_t>& ms, std::size_t length,
                                  bool with_repetition) {
    std::vector<ScaleRow> rows;
    const std::string name = with_repetition ? "anchor_entropy" : "anchor_entropy_distinct";
    for (std::size_t m : ms) rows.push_back({name, vocabulary_size, m, anchor_entropy(vocabulary_size, m, with_repetition)});
    rows.push_back({"sentence_lower_bound", vocabulary_size, length, sentence_lower_bound(length, vocabulary_size)});
    return rows;
}

std::string scale_table_csv(const std::vector<ScaleRow>& rows) {
    std::ostringstream out;
    out << "quantity,V,count,bits\n";
    for (const auto& row : rows) {
        out << row.quantity << ',' << row.vocabulary_size << ',' << row.count << ',' << fmt::format("{:.2f}", row.bits)
            << '\n';
    }
    return out.str();
}

nlohmann::json scale_table_json(const std::vector<ScaleRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& row : rows) {
        out.push_back({{"quantity", row.quantity}, {"V", row.vocabulary_size}, {"count", row.count}, {"bits", row.bits}});
    }
    return out;
}

} // namespace anchorlab
