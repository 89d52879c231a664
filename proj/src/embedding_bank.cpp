#include "anchorlab/embedding_bank.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "anchorlab/common.hpp"

namespace anchorlab {

static_assert(std::endian::native == std::endian::little, "EMBK I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', 'K'};

class Reader {
  public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    template <typename T>
    T read() {
        T value;
        need(sizeof(T));
        std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
        offset_ += sizeof(T);
        return value;
    }

    std::string read_string(std::size_t length) {
        need(length);
        std::string out(bytes_.data() + offset_, length);
        offset_ += length;
        return out;
    }

    void read_floats(float* dst, std::size_t count) {
        need(count * sizeof(float));
        std::memcpy(dst, bytes_.data() + offset_, count * sizeof(float));
        offset_ += count * sizeof(float);
    }

    bool at_end() const { return offset_ == bytes_.size(); }
    std::size_t offset() const { return offset_; }

  private:
    void need(std::size_t count) const {
        if (offset_ + count > bytes_.size()) {
            throw ValidationError("EMBK file truncated at byte " + std::to_string(offset_));
        }
    }

    std::vector<char> bytes_;
    std::size_t offset_ = 0;
};

template <typename T>
void write_raw(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

} // namespace

EmbeddingBank EmbeddingBank::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open embedding bank " + path.string());
    }
    Reader reader(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
    const std::string magic = reader.read_string(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw ValidationError(path.string() + ": not an EMBK file");
    }
    const auto version = reader.read<std::uint32_t>();
    if (version != kVersion) {
        throw ValidationError(path.string() + ": unsupported EMBK version " + std::to_string(version));
    }
    const auto count = reader.read<std::uint32_t>();
    const auto dim = reader.read<std::uint32_t>();
    EmbeddingBank bank(dim);
    std::vector<float> values(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto length = reader.read<std::uint16_t>();
        const std::string token = reader.read_string(length);
        reader.read_floats(values.data(), dim);
        bank.add(token, std::span<const float>(values));
    }
    if (!reader.at_end()) {
        throw ValidationError(path.string() + ": trailing bytes after " + std::to_string(count) +
                              " entries");
    }
    return bank;
}

void EmbeddingBank::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw RuntimeFailure("cannot write embedding bank " + path.string());
    }
    out.write(kMagic, 4);
    write_raw(out, kVersion);
    write_raw(out, static_cast<std::uint32_t>(tokens_.size()));
    write_raw(out, static_cast<std::uint32_t>(dim_));
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        write_raw(out, static_cast<std::uint16_t>(tokens_[i].size()));
        out.write(tokens_[i].data(), static_cast<std::streamsize>(tokens_[i].size()));
        out.write(reinterpret_cast<const char*>(data_.data() + i * dim_),
                  static_cast<std::streamsize>(dim_ * sizeof(float)));
    }
}

void EmbeddingBank::add(const std::string& token, std::span<const float> values) {
    if (token.empty() || token.size() > UINT16_MAX) {
        throw ValidationError("embedding token length out of range");
    }
    if (values.size() != dim_) {
        throw ValidationError("embedding for '" + token + "' has " + std::to_string(values.size()) +
                              " values, bank dim is " + std::to_string(dim_));
    }
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw ValidationError("non-finite embedding value for '" + token + "'");
        }
    }
    if (!index_.emplace(token, tokens_.size()).second) {
        throw ValidationError("duplicate embedding token '" + token + "'");
    }
    tokens_.push_back(token);
    data_.insert(data_.end(), values.begin(), values.end());
}

void EmbeddingBank::add(const std::string& token, std::span<const double> values) {
    std::vector<float> narrowed(values.begin(), values.end());
    add(token, std::span<const float>(narrowed));
}

std::optional<std::size_t> EmbeddingBank::index_of(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::span<const float> EmbeddingBank::row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
}

std::vector<double> EmbeddingBank::vector(std::size_t i, bool unit) const {
    const auto values = row(i);
    std::vector<double> out(values.begin(), values.end());
    if (unit) {
        double norm = 0.0;
        for (double v : out) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 0.0) {
            for (double& v : out) v /= norm;
        }
    }
    return out;
}

double EmbeddingBank::max_norm_deviation() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
        double norm = 0.0;
        for (float v : row(i)) norm += static_cast<double>(v) * v;
        worst = std::max(worst, std::abs(std::sqrt(norm) - 1.0));
    }
    return worst;
}

EmbeddingBank EmbeddingBank::reordered(const std::vector<std::string>& order) const {
    EmbeddingBank out(dim_);
    for (const auto& token : order) {
        const auto index = index_of(token);
        if (!index) {
            throw ValidationError("embedding bank has no entry for '" + token + "'");
        }
        out.add(token, row(*index));
    }
    return out;
}

} // namespace anchorlab
