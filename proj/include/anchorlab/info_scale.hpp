#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace anchorlab {

/// m * log2(V), or log2(V (V-1) ... (V-m+1)) when repeats are not allowed.
/// Throws ValidationError for V < 1 (and for m > V without repetition).
double anchor_entropy(std::size_t vocabulary_size, std::size_t m, bool with_repetition = true);

/// L * log2(V).
double sentence_lower_bound(std::size_t length, std::size_t vocabulary_size);

struct ScaleRow {
    std::string quantity;
    std::size_t vocabulary_size = 0;
    std::size_t count = 0;
    double bits = 0.0;
};

std::vector<ScaleRow> scale_table(std::size_t vocabulary_size, const std::vector<std::size_t>& ms, std::size_t length,
                                  bool with_repetition = true);
std::string scale_table_csv(const std::vector<ScaleRow>& rows);
nlohmann::json scale_table_json(const std::vector<ScaleRow>& rows);

} // namespace anchorlab
