#include "anchorlab/encoder.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "anchorlab/common.hpp"

namespace anchorlab {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kMinRowNorm = 1e-12;

std::string layer_name(std::size_t layer, const char* suffix) {
    return "layer" + std::to_string(layer) + "." + suffix;
}

Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
}

// Accumulates dW, db and returns dX.
Matrix linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw, Matrix& db) {
    dw.noalias() += dy.transpose() * x;
    db.row(0) += dy.colwise().sum();
    return dy * w;
}

Matrix apply_gelu(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

Matrix gelu_backward(const Matrix& pre, const Matrix& d_act) {
    return d_act.cwiseProduct(pre.unaryExpr([](double v) { return gelu_grad(v); }));
}

Matrix layer_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta, Matrix& x_hat, Vector& inv_std) {
    const auto n = static_cast<double>(x.cols());
    x_hat.resize(x.rows(), x.cols());
    inv_std.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / n;
        const auto centered = x.row(r).array() - mean;
        const double var = centered.square().sum() / n;
        inv_std(r) = 1.0 / std::sqrt(var + kNormEps);
        x_hat.row(r) = centered * inv_std(r);
    }
    Matrix y = x_hat.array().rowwise() * gamma.row(0).array();
    y.rowwise() += beta.row(0);
    return y;
}

Matrix layer_norm_backward(const Matrix& x_hat, const Vector& inv_std, const Matrix& gamma, const Matrix& dy,
                           Matrix& d_gamma, Matrix& d_beta) {
    d_gamma.row(0) += dy.cwiseProduct(x_hat).colwise().sum();
    d_beta.row(0) += dy.colwise().sum();
    const Matrix d_hat = dy.array().rowwise() * gamma.row(0).array();
    const auto n = static_cast<double>(x_hat.cols());
    Matrix dx(x_hat.rows(), x_hat.cols());
    for (Eigen::Index r = 0; r < x_hat.rows(); ++r) {
        const double sum = d_hat.row(r).sum();
        const double dot = d_hat.row(r).dot(x_hat.row(r));
        dx.row(r) = (inv_std(r) / n) * (n * d_hat.row(r).array() - sum - x_hat.row(r).array() * dot);
    }
    return dx;
}

void softmax_rows(Matrix& scores) {
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double max = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - max).exp();
        scores.row(r) /= scores.row(r).sum();
    }
}

void init_uniform(Matrix& m, Rng& rng, double bound) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
    }
}

void init_xavier(Matrix& w, Rng& rng) {
    init_uniform(w, rng, std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols())));
}

} // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

EncoderConfig EncoderConfig::paper() { return {}; }

EncoderConfig EncoderConfig::compact(std::size_t input_dim, std::size_t output_dim) {
    EncoderConfig config;
    config.input_dim = input_dim;
    config.model_dim = 32;
    config.layers = 2;
    config.heads = 4;
    config.ffn_dim = 64;
    config.max_positions = 64;
    config.output_dim = output_dim;
    config.profile = "compact";
    return config;
}

void EncoderConfig::validate() const {
    if (input_dim == 0 || model_dim == 0 || layers == 0 || heads == 0 || ffn_dim == 0 || max_positions == 0 ||
        output_dim == 0) {
        throw ConfigError("encoder dimensions must be positive");
    }
    if (model_dim % heads != 0) {
        throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
                          std::to_string(heads));
    }
    if (profile != "paper" && profile != "compact") {
        throw ConfigError("unknown encoder profile '" + profile + "'");
    }
}

nlohmann::json EncoderConfig::to_json() const {
    return {{"input_dim", input_dim}, {"model_dim", model_dim},         {"layers", layers},
            {"heads", heads},         {"ffn_dim", ffn_dim},             {"max_positions", max_positions},
            {"output_dim", output_dim}, {"profile", profile}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& object) {
    EncoderConfig config;
    config.input_dim = object.at("input_dim").get<std::size_t>();
    config.model_dim = object.at("model_dim").get<std::size_t>();
    config.layers = object.at("layers").get<std::size_t>();
    config.heads = object.at("heads").get<std::size_t>();
    config.ffn_dim = object.at("ffn_dim").get<std::size_t>();
    config.max_positions = object.at("max_positions").get<std::size_t>();
    config.output_dim = object.at("output_dim").get<std::size_t>();
    config.profile = object.at("profile").get<std::string>();
    config.validate();
    return config;
}

Matrix& ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (!index_.emplace(name, tensors_.size()).second) {
        throw std::logic_error("duplicate parameter " + name);
    }
    tensors_.push_back({name, Matrix::Zero(rows, cols)});
    return tensors_.back().value;
}

Matrix& ParameterSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("missing parameter " + name);
    return tensors_[it->second].value;
}

const Matrix& ParameterSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("missing parameter " + name);
    return tensors_[it->second].value;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t total = 0;
    for (const auto& tensor : tensors_) total += static_cast<std::size_t>(tensor.value.size());
    return total;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out;
    for (const auto& tensor : tensors_) out.add(tensor.name, tensor.value.rows(), tensor.value.cols());
    return out;
}

void ParameterSet::set_zero() {
    for (auto& tensor : tensors_) tensor.value.setZero();
}

bool ParameterSet::all_finite() const {
    for (const auto& tensor : tensors_) {
        if (!tensor.value.allFinite()) return false;
    }
    return true;
}

void TransformerEncoder::allocate() {
    const auto in = static_cast<Eigen::Index>(config_.input_dim);
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    const auto f = static_cast<Eigen::Index>(config_.ffn_dim);
    const auto out = static_cast<Eigen::Index>(config_.output_dim);
    params_.add("input.w1", d, in);
    params_.add("input.b1", 1, d);
    params_.add("input.w2", d, d);
    params_.add("input.b2", 1, d);
    params_.add("positions", static_cast<Eigen::Index>(config_.max_positions), d);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
            params_.add(layer_name(l, name), d, d);
        }
        for (const char* name : {"attn.bq", "attn.bk", "attn.bv", "attn.bo", "norm1.gamma", "norm1.beta"}) {
            params_.add(layer_name(l, name), 1, d);
        }
        params_.add(layer_name(l, "ffn.w1"), f, d);
        params_.add(layer_name(l, "ffn.b1"), 1, f);
        params_.add(layer_name(l, "ffn.w2"), d, f);
        params_.add(layer_name(l, "ffn.b2"), 1, d);
        params_.add(layer_name(l, "norm2.gamma"), 1, d);
        params_.add(layer_name(l, "norm2.beta"), 1, d);
    }
    params_.add("output.w1", d, d);
    params_.add("output.b1", 1, d);
    params_.add("output.w2", out, d);
    params_.add("output.b2", 1, out);
}

TransformerEncoder::TransformerEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    allocate();
    Rng rng(seed);
    for (auto& tensor : params_.tensors()) {
        const auto& name = tensor.name;
        if (name.ends_with("gamma")) {
            tensor.value.setOnes();
        } else if (name == "positions") {
            for (Eigen::Index i = 0; i < tensor.value.size(); ++i) tensor.value.data()[i] = 0.02 * rng.normal();
        } else if (tensor.value.rows() > 1) {
            init_xavier(tensor.value, rng);
        }
    }
}

TransformerEncoder::TransformerEncoder(const EncoderConfig& config, ParameterSet parameters) : config_(config) {
    config_.validate();
    allocate();
    for (auto& tensor : params_.tensors()) {
        const Matrix& loaded = parameters.at(tensor.name);
        if (loaded.rows() != tensor.value.rows() || loaded.cols() != tensor.value.cols()) {
            throw ValidationError("parameter " + tensor.name + " has the wrong shape");
        }
        tensor.value = loaded;
    }
}

Matrix TransformerEncoder::forward(const Matrix& input, Cache* cache) const {
    const auto length = input.rows();
    if (static_cast<std::size_t>(length) > config_.max_positions) {
        throw ValidationError("sequence length " + std::to_string(length) + " exceeds max_positions " +
                              std::to_string(config_.max_positions));
    }
    if (static_cast<std::size_t>(input.cols()) != config_.input_dim) {
        throw ValidationError("input has " + std::to_string(input.cols()) + " features, encoder expects " +
                              std::to_string(config_.input_dim));
    }
    if (!input.allFinite()) {
        throw ValidationError("encoder input contains non-finite values");
    }
    Cache local;
    Cache& c = cache != nullptr ? *cache : local;
    const auto& p = params_;
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    const auto heads = static_cast<Eigen::Index>(config_.heads);
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    c.input = input;
    c.in_pre = linear_forward(input, p.at("input.w1"), p.at("input.b1"));
    c.in_act = apply_gelu(c.in_pre);
    Matrix x = linear_forward(c.in_act, p.at("input.w2"), p.at("input.b2"));
    x += p.at("positions").topRows(length);

    c.layers.assign(config_.layers, {});
    for (std::size_t l = 0; l < config_.layers; ++l) {
        auto& lc = c.layers[l];
        lc.input = x;
        lc.q = linear_forward(x, p.at(layer_name(l, "attn.wq")), p.at(layer_name(l, "attn.bq")));
        lc.k = linear_forward(x, p.at(layer_name(l, "attn.wk")), p.at(layer_name(l, "attn.bk")));
        lc.v = linear_forward(x, p.at(layer_name(l, "attn.wv")), p.at(layer_name(l, "attn.bv")));
        lc.context.resize(length, d);
        lc.attention.resize(static_cast<std::size_t>(heads));
        for (Eigen::Index h = 0; h < heads; ++h) {
            Matrix scores = lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose() * scale;
            softmax_rows(scores);
            lc.context.middleCols(h * dh, dh) = scores * lc.v.middleCols(h * dh, dh);
            lc.attention[static_cast<std::size_t>(h)] = std::move(scores);
        }
        const Matrix attended = linear_forward(lc.context, p.at(layer_name(l, "attn.wo")), p.at(layer_name(l, "attn.bo")));
        lc.hidden1 = layer_norm_forward(x + attended, p.at(layer_name(l, "norm1.gamma")),
                                        p.at(layer_name(l, "norm1.beta")), lc.norm1_hat, lc.norm1_inv_std);
        lc.ffn_pre = linear_forward(lc.hidden1, p.at(layer_name(l, "ffn.w1")), p.at(layer_name(l, "ffn.b1")));
        lc.ffn_act = apply_gelu(lc.ffn_pre);
        const Matrix ffn_out = linear_forward(lc.ffn_act, p.at(layer_name(l, "ffn.w2")), p.at(layer_name(l, "ffn.b2")));
        x = layer_norm_forward(lc.hidden1 + ffn_out, p.at(layer_name(l, "norm2.gamma")),
                               p.at(layer_name(l, "norm2.beta")), lc.norm2_hat, lc.norm2_inv_std);
    }

    c.stack_out = x;
    c.out_pre = linear_forward(x, p.at("output.w1"), p.at("output.b1"));
    c.out_act = apply_gelu(c.out_pre);
    c.raw = linear_forward(c.out_act, p.at("output.w2"), p.at("output.b2"));
    c.norms = c.raw.rowwise().norm();
    c.output.resize(c.raw.rows(), c.raw.cols());
    for (Eigen::Index r = 0; r < c.raw.rows(); ++r) {
        c.output.row(r) = c.raw.row(r) / std::max(c.norms(r), kMinRowNorm);
    }
    return c.output;
}

void TransformerEncoder::backward(const Cache& c, const Matrix& d_output, ParameterSet& g) const {
    const auto& p = params_;
    const auto length = c.input.rows();
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    const auto heads = static_cast<Eigen::Index>(config_.heads);
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Row normalisation: d raw = (dy - y (y . dy)) / |raw|.
    Matrix d_raw(d_output.rows(), d_output.cols());
    for (Eigen::Index r = 0; r < d_output.rows(); ++r) {
        const double proj = c.output.row(r).dot(d_output.row(r));
        d_raw.row(r) = (d_output.row(r) - proj * c.output.row(r)) / std::max(c.norms(r), kMinRowNorm);
    }

    Matrix d_act = linear_backward(c.out_act, p.at("output.w2"), d_raw, g.at("output.w2"), g.at("output.b2"));
    Matrix dx = linear_backward(c.stack_out, p.at("output.w1"), gelu_backward(c.out_pre, d_act), g.at("output.w1"),
                                g.at("output.b1"));

    for (std::size_t li = config_.layers; li-- > 0;) {
        const auto& lc = c.layers[li];
        const Matrix d_res2 = layer_norm_backward(lc.norm2_hat, lc.norm2_inv_std, p.at(layer_name(li, "norm2.gamma")), dx,
                                                  g.at(layer_name(li, "norm2.gamma")), g.at(layer_name(li, "norm2.beta")));
        const Matrix d_ffn_act = linear_backward(lc.ffn_act, p.at(layer_name(li, "ffn.w2")), d_res2,
                                                 g.at(layer_name(li, "ffn.w2")), g.at(layer_name(li, "ffn.b2")));
        Matrix d_hidden1 = d_res2 + linear_backward(lc.hidden1, p.at(layer_name(li, "ffn.w1")),
                                                    gelu_backward(lc.ffn_pre, d_ffn_act), g.at(layer_name(li, "ffn.w1")),
                                                    g.at(layer_name(li, "ffn.b1")));
        const Matrix d_res1 = layer_norm_backward(lc.norm1_hat, lc.norm1_inv_std, p.at(layer_name(li, "norm1.gamma")),
                                                  d_hidden1, g.at(layer_name(li, "norm1.gamma")),
                                                  g.at(layer_name(li, "norm1.beta")));
        const Matrix d_context = linear_backward(lc.context, p.at(layer_name(li, "attn.wo")), d_res1,
                                                 g.at(layer_name(li, "attn.wo")), g.at(layer_name(li, "attn.bo")));
        Matrix dq = Matrix::Zero(length, d);
        Matrix dk = Matrix::Zero(length, d);
        Matrix dv = Matrix::Zero(length, d);
        for (Eigen::Index h = 0; h < heads; ++h) {
            const Matrix& attn = lc.attention[static_cast<std::size_t>(h)];
            const auto d_ctx_h = d_context.middleCols(h * dh, dh);
            const Matrix d_attn = d_ctx_h * lc.v.middleCols(h * dh, dh).transpose();
            dv.middleCols(h * dh, dh) = attn.transpose() * d_ctx_h;
            Matrix d_scores(length, length);
            for (Eigen::Index r = 0; r < length; ++r) {
                const double dot = d_attn.row(r).dot(attn.row(r));
                d_scores.row(r) = attn.row(r).array() * (d_attn.row(r).array() - dot);
            }
            d_scores *= scale;
            dq.middleCols(h * dh, dh) = d_scores * lc.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh) = d_scores.transpose() * lc.q.middleCols(h * dh, dh);
        }
        dx = d_res1;
        dx += linear_backward(lc.input, p.at(layer_name(li, "attn.wq")), dq, g.at(layer_name(li, "attn.wq")),
                              g.at(layer_name(li, "attn.bq")));
        dx += linear_backward(lc.input, p.at(layer_name(li, "attn.wk")), dk, g.at(layer_name(li, "attn.wk")),
                              g.at(layer_name(li, "attn.bk")));
        dx += linear_backward(lc.input, p.at(layer_name(li, "attn.wv")), dv, g.at(layer_name(li, "attn.wv")),
                              g.at(layer_name(li, "attn.bv")));
    }

    g.at("positions").topRows(length) += dx;
    const Matrix d_in_act = linear_backward(c.in_act, p.at("input.w2"), dx, g.at("input.w2"), g.at("input.b2"));
    // The input gradient itself is not needed.
    Matrix& dw1 = g.at("input.w1");
    Matrix& db1 = g.at("input.b1");
    const Matrix d_in_pre = gelu_backward(c.in_pre, d_in_act);
    dw1.noalias() += d_in_pre.transpose() * c.input;
    db1.row(0) += d_in_pre.colwise().sum();
}

} // namespace anchorlab
