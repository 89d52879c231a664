#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace anchorlab {

/// Input data violates a documented invariant (bad file, bad dimension, unknown id).
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Caller asked for something the inputs cannot support (too few sentences, bad ratios).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Failure while running (divergence, endpoint errors, I/O).
class RuntimeFailure : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Seedable generator used everywhere randomness leaks into outputs.
///
/// Wraps mt19937_64 (bit-exact across standard libraries) and derives uniform
/// and normal variates itself, since the standard distributions are
/// implementation-defined and would break byte-identical reruns.
class Rng {
  public:
    static constexpr std::string_view kName = "mt19937_64";

    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer on [0, n) by rejection. n must be positive.
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller; caches the second variate.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Stable child seed for a (seed, stream) pair (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

/// Directory holding shipped data files (exclusion lists, prompt templates).
/// `ANCHORLAB_DATA_DIR` in the environment overrides the build-time location.
std::filesystem::path data_dir();

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);

/// Lowercase, replace punctuation with spaces, split on whitespace.
std::vector<std::string> simple_tokenize(std::string_view text);

} // namespace anchorlab
