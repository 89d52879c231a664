// Acceptance run: one PASS/FAIL line per primary criterion.
//
// Criteria 5, 6 and 8 drive the real `anchorlab` binary; the rest call the library directly.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "anchorlab/aligner.hpp"
#include "anchorlab/common.hpp"
#include "anchorlab/corpus.hpp"
#include "anchorlab/encoder.hpp"
#include "anchorlab/evaluation.hpp"
#include "anchorlab/info_scale.hpp"
#include "anchorlab/metrics.hpp"
#include "anchorlab/stats.hpp"
#include "anchorlab/vocab.hpp"
#include "oracles.hpp"

// After Eigen: resolv.h defines _res.
#include <httplib.h>

namespace fs = std::filesystem;
using namespace anchorlab;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

const fs::path kSource = ANCHORLAB_SOURCE_DIR;
const fs::path kWork = ANCHORLAB_WORK_DIR;
const std::string kCli = ANCHORLAB_CLI;

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
}

/// Runs the CLI with its log appended to `<work>/cli.log`; returns the exit status.
int cli(const std::string& args) {
    const std::string command = shell_quote(kCli) + " " + args + " >> " + shell_quote((kWork / "cli.log").string()) + " 2>&1";
    {
        std::ofstream log(kWork / "cli.log", std::ios::app);
        log << "$ anchorlab " << args << '\n';
    }
    const int status = std::system(command.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing " + path.string());
    return json::parse(in);
}

std::string read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

// ---------------------------------------------------------------- 1

Outcome entropy_table() {
    const auto start = std::chrono::steady_clock::now();
    const double got[4] = {anchor_entropy(100, 3), anchor_entropy(100, 5), anchor_entropy(100, 7),
                           sentence_lower_bound(20, 100)};
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double paper[4] = {19.93, 33.22, 46.51, 132.88};
    bool ok = seconds < 1.0;
    for (int i = 0; i < 4; ++i) ok = ok && near(got[i], paper[i], 0.05);
    return {ok, fmt::format("H(m=3,5,7) = {:.4f}, {:.4f}, {:.4f} bits; L=20 bound {:.4f} bits; {:.2e} s", got[0], got[1],
                            got[2], got[3], seconds)};
}

// ---------------------------------------------------------------- 2

Outcome loss_closed_forms() {
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (Eigen::Index v : {2, 50, 100}) {
        // Output orthogonal to every bank row: all similarities equal.
        Matrix bank = Matrix::Zero(v, v + 1);
        for (Eigen::Index i = 0; i < v; ++i) bank(i, i) = 1.0;
        Matrix out = Matrix::Zero(1, v + 1);
        out(0, v) = 1.0;
        const double err = std::fabs(alignment_loss(out, {0}, bank, 0.07).loss - std::log(static_cast<double>(v)));
        ok = ok && err <= 1e-9;
        detail += fmt::format("|L-lnV| V={}: {:.1e}; ", v, err);
    }
    const Matrix bank{{1.0, 0.0}, {0.0, 1.0}};
    const Matrix out{{1.0, 0.0}};
    const double err = std::fabs(alignment_loss(out, {0}, bank, 1.0).loss - std::log1p(std::exp(-1.0)));
    ok = ok && err <= 1e-9;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ok = ok && seconds < 1.0;
    return {ok, detail + fmt::format("|L-ln(1+e^-1)|: {:.1e}; {:.2e} s", err, seconds)};
}

// ---------------------------------------------------------------- 3

Outcome gradient_suite() {
    const auto start = std::chrono::steady_clock::now();
    // Compact profile at the synthetic run's widths (840-d features, 768-d keyword bank).
    const auto config = EncoderConfig::compact(840, 768);
    TransformerEncoder encoder(config, 2024);
    Rng rng(2025);
    Matrix input(4, 840);
    Matrix weights(4, 768);
    for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = rng.normal();
    double worst = 0.0;
    std::string worst_name;
    std::size_t groups = 0;
    for (const auto& group : oracle::encoder_gradient_errors(encoder, input, weights)) {
        ++groups;
        if (group.relative_error >= worst) {
            worst = group.relative_error;
            worst_name = group.name;
        }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {worst <= 1e-4 && seconds < 120.0,
            fmt::format("{} parameter groups, max relative error {:.2e} ({}); {:.1f} s", groups, worst, worst_name,
                        seconds)};
}

// ---------------------------------------------------------------- 4

Outcome vocabulary_oracle() {
    const auto start = std::chrono::steady_clock::now();
    const auto data = load_dataset(kSource / "fixtures/vocab6/sentences.jsonl");
    const auto bank = EmbeddingBank::load(kSource / "fixtures/vocab6/word_bank.embk");
    VocabOptions options;
    options.min_freq = 2;
    const auto vocab = build_vocabulary(data.sentences.ordered(), bank, 5, ExclusionRules::defaults(), options);
    const bool bytes_equal = vocabulary_text(vocab) == read_all(kSource / "fixtures/vocab6/expected_vocab.txt");

    Rng rng(42);
    std::map<std::string, std::vector<double>> vectors;
    std::map<std::string, std::size_t> frequency;
    std::vector<FpsCandidate> candidates;
    for (int i = 0; i < 10; ++i) {
        std::vector<double> v(16);
        double norm = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            norm += x * x;
        }
        for (auto& x : v) x /= std::sqrt(norm);
        const std::string name = fmt::format("p{:02d}", i);
        vectors[name] = v;
        frequency[name] = 1 + rng.below(5);
    }
    for (const auto& [name, v] : vectors) candidates.push_back({name, v, frequency[name]});
    bool fps_equal = true;
    for (std::size_t k = 1; k <= 10; ++k) {
        fps_equal = fps_equal && farthest_point_sample(candidates, k) == oracle::brute_force_fps(vectors, frequency, k);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {bytes_equal && fps_equal && seconds < 5.0,
            fmt::format("fixture vocabulary {} (byte match {}); FPS k=1..10 equals brute force: {}; {:.2f} s",
                        fmt::join(vocab.lemmas(), ","), bytes_equal ? "yes" : "no", fps_equal ? "yes" : "no",
                        seconds)};
}

// ---------------------------------------------------------------- 5

struct SweepPoint {
    std::string label;
    double top1 = 0.0;
    double top5 = 0.0;
    std::size_t n = 0;
};

fs::path sweep_dir(const std::string& label) { return kWork / ("snr_" + label); }

Outcome synthetic_sweep(std::vector<SweepPoint>& points) {
    const auto start = std::chrono::steady_clock::now();
    for (const std::string label : {"inf", "20", "10", "0", "-inf"}) {
        const fs::path dir = sweep_dir(label);
        fs::remove_all(dir);
        const std::string globals = "--out " + shell_quote(dir.string()) + " --seed 7 --profile compact";
        if (cli(globals + " synth-gen --V 50 --sentences 500 --snr-db=" + label) != 0 ||
            cli(globals + " train --lr 1e-3 --epochs 20") != 0) {
            return {false, "CLI failed at snr " + label + "; see " + (kWork / "cli.log").string()};
        }
        const auto report = read_json(dir / "train_report.json");
        points.push_back({label, report["test"]["top1"].get<double>(), report["test"]["top5"].get<double>(),
                          report["test"]["supervised"].get<std::size_t>()});
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const auto& clean = points.front();
    const auto& noise = points.back();
    const auto hits = static_cast<std::size_t>(std::llround(noise.top1 * static_cast<double>(noise.n)));
    const auto ci = oracle::clopper_pearson(hits, noise.n);
    bool monotone = true;
    for (std::size_t i = 1; i < points.size(); ++i) {
        monotone = monotone && points[i].top1 <= points[i - 1].top1 + 0.01 && points[i].top5 <= points[i - 1].top5 + 0.01;
    }
    const bool ok = clean.top1 >= 0.95 && clean.top5 >= 0.99 && ci.first <= 0.02 && 0.02 <= ci.second && monotone &&
                    seconds < 900.0;
    std::string curve;
    for (const auto& p : points) curve += fmt::format("{}dB {:.3f}/{:.3f} ", p.label, p.top1, p.top5);
    return {ok, fmt::format("top1/top5 {}(n={}); -inf CI [{:.4f}, {:.4f}] vs 1/50; monotone {}; {:.0f} s", curve,
                            clean.n, ci.first, ci.second, monotone ? "yes" : "no", seconds)};
}

// ---------------------------------------------------------------- 6

Outcome condition_ordering(json& report_out) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path dir = sweep_dir("20");
    const std::string globals = "--out " + shell_quote(dir.string()) + " --seed 7 --profile compact";
    if (!fs::exists(dir / "checkpoint.bclm")) return {false, "no trained 20 dB run"};
    if (cli(globals + " decode --m 5") != 0 ||
        cli(globals + " evaluate --fallback --permutation --n-perm 500 --control-repeats 20") != 0) {
        return {false, "CLI failed; see " + (kWork / "cli.log").string()};
    }
    report_out = read_json(dir / "report.json");
    const auto report = EvalReport::from_json(report_out);

    bool ordering = true;
    std::size_t cells = 0;
    std::string focus;
    std::set<std::pair<std::string, std::size_t>> mode_m;
    for (const auto& row : report.rows) mode_m.emplace(row.mode, row.m);
    for (const auto& [mode, m] : mode_m) {
        const auto* oracle = report.find("oracle", mode, m);
        const auto* ordered = report.find("ordered", mode, m);
        const auto* random = report.find("random", mode, m);
        if (!oracle || !ordered || !random) continue;
        ++cells;
        const double o = oracle->topk.at(5), d = ordered->topk.at(5), r = random->topk.at(5);
        if (!(o >= d && d > r)) {
            ordering = false;
            focus += fmt::format("[violated {} m={}: {:.3f}/{:.3f}/{:.3f}] ", mode, m, o, d, r);
        }
        if (mode == "cot_rag" && m == 5) focus += fmt::format("cot_rag m=5 oracle {:.3f} ordered {:.3f} random {:.3f}; ", o, d, r);
    }
    const auto& perm = report_out.at("permutation").at("SR1");
    const double p = perm.at("p").get<double>();
    const double mean_p = perm.at("control").at("mean_p").get<double>();
    const bool perm_ok = perm.at("n_perm").get<std::size_t>() == 500 && p <= 0.01 &&
                         perm.at("control").at("repeats").get<std::size_t>() == 20 && mean_p >= 0.4 && mean_p <= 0.6;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {ordering && cells > 0 && perm_ok && seconds < 600.0,
            fmt::format("{}oracle>=ordered>random in {} cells: {}; permutation p {:.4f} (n_perm 500, top-{}), control "
                        "mean p {:.3f} over 20; {:.0f} s",
                        focus, cells, ordering ? "yes" : "no", p, perm.at("k").get<std::size_t>(), mean_p, seconds)};
}

// ---------------------------------------------------------------- 7

Outcome metric_oracles(const json& suite_report) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::pair<std::string, double>> errors;
    const auto b = bleu(metric_tokens("the cat sat"), metric_tokens("the cat sat down"), 3);
    errors.emplace_back("bleu", std::fabs(b[2] - std::exp(1.0 - 4.0 / 3.0)));
    errors.emplace_back("rouge1", std::fabs(rouge1_f1(metric_tokens("a b"), metric_tokens("b c")) - 0.5));

    EmbeddingBank bank(2);
    const double r = 1.0 / std::sqrt(2.0);
    bank.add("x", std::vector<double>{1.0, 0.0});
    bank.add("y", std::vector<double>{0.0, 1.0});
    bank.add("z", std::vector<double>{r, r});
    const double precision = r / 2.0, recall = r;
    errors.emplace_back("greedy_f1", std::fabs(*embedding_greedy_f1({"x", "z"}, {"y"}, bank).f1 -
                                               2.0 * precision * recall / (precision + recall)));

    const auto t = paired_t_test({1, 2, 3, 4}, {2, 3, 5, 7});
    errors.emplace_back("paired_t", std::max(std::fabs(t.statistic + 3.6556307750696546),
                                             std::fabs(t.p - oracle::student_t_two_sided_p(t.statistic, 3))));
    const auto a = rm_anova({{1, 2, 3}, {2, 2, 4}, {3, 4, 4}, {1, 3, 5}, {2, 3, 3}});
    errors.emplace_back("rm_anova", std::max(std::fabs(a.statistic - 10.0), std::fabs(a.p - 0.006663890045814248)));
    errors.emplace_back("bonferroni", std::fabs(bonferroni(0.03, 3) - 0.09));

    bool ok = true;
    std::string detail;
    for (const auto& [name, err] : errors) {
        ok = ok && err <= 1e-6;
        detail += fmt::format("{} {:.1e}; ", name, err);
    }
    bool monotone = !suite_report.is_null() && topk_monotone(EvalReport::from_json(suite_report));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {ok && monotone && seconds < 10.0,
            fmt::format("{}Top-k monotone on suite report: {}; {:.2f} s", detail, monotone ? "yes" : "no", seconds)};
}

// ---------------------------------------------------------------- 8

class RecordingEndpoint {
  public:
    RecordingEndpoint() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mutex_);
            bodies.push_back(req.body);
            json reply = {{"choices",
                           {{{"message",
                              {{"role", "assistant"},
                               {"content", "\"The quiet film followed the river.\" It was also famous.\nSecond line."}}}}}}};
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~RecordingEndpoint() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return fmt::format("http://127.0.0.1:{}/v1/chat/completions", port_); }
    std::vector<std::string> bodies;

  private:
    httplib::Server server_;
    std::thread thread_;
    std::mutex mutex_;
    int port_ = 0;
};

Outcome protocol_fidelity() {
    RecordingEndpoint endpoint;
    ::setenv("ANCHORLAB_LLM_URL", endpoint.url().c_str(), 1);
    const fs::path dir = kWork / "protocol";
    fs::remove_all(dir);
    const int status = cli("--out " + shell_quote(dir.string()) + " reconstruct --remote --dataset " +
                           shell_quote((kSource / "fixtures/toy.jsonl").string()) + " --anchors " +
                           shell_quote((kSource / "fixtures/toy_anchors.jsonl").string()) + " --mode naive --mode cot_rag");
    ::unsetenv("ANCHORLAB_LLM_URL");
    if (status != 0) return {false, "reconstruct --remote exited with " + std::to_string(status)};

    bool params_ok = !endpoint.bodies.empty();
    for (const auto& raw : endpoint.bodies) {
        const auto body = json::parse(raw);
        params_ok = params_ok && body.at("temperature").get<double>() == 0.7 && body.at("top_p").get<double>() == 0.9 &&
                    body.at("repetition_penalty").get<double>() == 1.2 && body.at("max_tokens").is_number_integer() &&
                    body.at("max_tokens").get<int>() == 100;
    }
    const auto records = read_records(dir / "reconstructions.jsonl");
    bool single = records.size() == endpoint.bodies.size() && !records.empty();
    for (const auto& record : records) {
        std::size_t terminators = 0;
        for (char c : record.output) terminators += c == '.' || c == '!' || c == '?';
        single = single && terminators == 1 && record.output.back() == '.' &&
                 record.output.find('\n') == std::string::npos && record.provenance == Provenance::Remote;
    }
    return {params_ok && single,
            fmt::format("{} requests, each temperature 0.7 top_p 0.9 repetition_penalty 1.2 max_tokens 100: {}; "
                        "outputs single sentence: {} (\"{}\")",
                        endpoint.bodies.size(), params_ok ? "yes" : "no", single ? "yes" : "no",
                        records.empty() ? "" : records.front().output)};
}

} // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    fs::create_directories(kWork);
    fs::remove(kWork / "cli.log");

    std::vector<SweepPoint> sweep;
    json suite_report;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"entropy table", entropy_table},
        {"loss closed forms", loss_closed_forms},
        {"gradient suite", gradient_suite},
        {"vocabulary oracle", vocabulary_oracle},
        {"synthetic end-to-end", [&] { return synthetic_sweep(sweep); }},
        {"condition ordering", [&] { return condition_ordering(suite_report); }},
        {"metric oracles", [&] { return metric_oracles(suite_report); }},
        {"protocol fidelity", protocol_fidelity},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome outcome;
        try {
            outcome = criteria[i].second();
        } catch (const std::exception& e) {
            outcome = {false, std::string("error: ") + e.what()};
        }
        failures += outcome.pass ? 0 : 1;
        std::cout << (outcome.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": "
                  << outcome.detail << std::endl;
    }
    std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
