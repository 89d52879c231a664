#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace anchorlab {

/// Token -> vector table backed by the EMBK binary format:
///
///   "EMBK" | u32 version (=1) | u32 count | u32 dim |
///   count x ( u16 token byte length | UTF-8 token | dim x f32 )
///
/// All integers and floats little-endian. Tokens are unique.
class EmbeddingBank {
  public:
    static constexpr std::uint32_t kVersion = 1;

    EmbeddingBank() = default;
    explicit EmbeddingBank(std::size_t dim) : dim_(dim) {}

    static EmbeddingBank load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Appends a row. Throws ValidationError on duplicates, wrong length or non-finite values.
    void add(const std::string& token, std::span<const float> values);
    void add(const std::string& token, std::span<const double> values);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return tokens_.size(); }
    bool empty() const { return tokens_.empty(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::optional<std::size_t> index_of(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    std::span<const float> row(std::size_t i) const;
    /// Row as doubles, optionally rescaled to unit length (zero rows stay zero).
    std::vector<double> vector(std::size_t i, bool unit = false) const;

    /// Max |norm - 1| over rows.
    double max_norm_deviation() const;
    /// Copy whose rows follow `order`; throws if a token is missing.
    EmbeddingBank reordered(const std::vector<std::string>& order) const;

  private:
    std::size_t dim_ = 0;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<float> data_;
};

} // namespace anchorlab
