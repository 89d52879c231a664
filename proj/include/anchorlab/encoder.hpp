#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace anchorlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct EncoderConfig {
    std::size_t input_dim = 840;
    std::size_t model_dim = 768;
    std::size_t layers = 3;
    std::size_t heads = 8;
    std::size_t ffn_dim = 2048;
    std::size_t max_positions = 64;
    std::size_t output_dim = 768;
    std::string profile = "paper";

    static EncoderConfig paper();
    /// Small model for desk-scale runs; keeps the input/output widths given.
    static EncoderConfig compact(std::size_t input_dim, std::size_t output_dim);

    void validate() const;
    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& object);
    bool operator==(const EncoderConfig&) const = default;
};

struct NamedTensor {
    std::string name;
    Matrix value;
};

/// Ordered collection of named matrices (model parameters or their gradients).
class ParameterSet {
  public:
    Matrix& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    Matrix& at(const std::string& name);
    const Matrix& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<NamedTensor>& tensors() { return tensors_; }
    const std::vector<NamedTensor>& tensors() const { return tensors_; }
    std::size_t scalar_count() const;

    /// Same names and shapes, all zero.
    ParameterSet zeros_like() const;
    void set_zero();
    bool all_finite() const;

  private:
    std::vector<NamedTensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Input MLP -> learnable positions -> post-norm transformer stack -> output MLP -> L2 normalise.
///
/// Each sequence is processed on its own (no padding), so batching is just gradient
/// accumulation across sequences.
class TransformerEncoder {
  public:
    struct LayerCache {
        Matrix input;
        Matrix q, k, v;
        std::vector<Matrix> attention; // per head, L x L softmax weights
        Matrix context;                // concatenated head outputs
        Matrix norm1_hat;
        Vector norm1_inv_std;
        Matrix hidden1;
        Matrix ffn_pre;
        Matrix ffn_act;
        Matrix norm2_hat;
        Vector norm2_inv_std;
    };

    struct Cache {
        Matrix input;
        Matrix in_pre;
        Matrix in_act;
        std::vector<LayerCache> layers;
        Matrix stack_out;
        Matrix out_pre;
        Matrix out_act;
        Matrix raw;    // before normalisation
        Vector norms;  // row norms of raw
        Matrix output; // unit rows
    };

    TransformerEncoder() = default;
    TransformerEncoder(const EncoderConfig& config, std::uint64_t seed);
    TransformerEncoder(const EncoderConfig& config, ParameterSet parameters);

    /// `input` is L x input_dim; returns L x output_dim with unit rows.
    Matrix forward(const Matrix& input, Cache* cache = nullptr) const;
    /// Accumulates parameter gradients for d(loss)/d(output) into `grads`.
    void backward(const Cache& cache, const Matrix& d_output, ParameterSet& grads) const;

    const EncoderConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

  private:
    EncoderConfig config_;
    ParameterSet params_;

    void allocate();
};

/// Exact (erf) GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);

} // namespace anchorlab
