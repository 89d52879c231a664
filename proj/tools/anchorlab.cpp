// anchorlab command-line entry point.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "anchorlab/aligner.hpp"
#include "anchorlab/chat_client.hpp"
#include "anchorlab/common.hpp"
#include "anchorlab/corpus.hpp"
#include "anchorlab/embedder.hpp"
#include "anchorlab/evaluation.hpp"
#include "anchorlab/info_scale.hpp"
#include "anchorlab/reconstruct.hpp"
#include "anchorlab/retrieval.hpp"
#include "anchorlab/synth.hpp"
#include "anchorlab/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anchorlab;

namespace {

struct Globals {
    std::string out = "out";
    std::uint64_t seed = 0;
    std::string profile = "paper";
    bool emit_plot_data = false;
    std::string log_level = "info";
    std::size_t feature_dim = kPaperFeatureDim;
};

/// artifacts.json in the output directory: name -> absolute path of what earlier steps wrote.
class Artifacts {
  public:
    explicit Artifacts(fs::path dir) : path_(std::move(dir) / "artifacts.json") {
        if (fs::exists(path_)) {
            std::ifstream in(path_);
            data_ = json::parse(in, nullptr, false);
            if (data_.is_discarded() || !data_.is_object()) throw ValidationError("corrupt " + path_.string());
        }
    }

    std::optional<fs::path> get(const std::string& key) const {
        if (!data_.contains(key)) return std::nullopt;
        return fs::path(data_[key].get<std::string>());
    }

    void set(const std::string& key, const fs::path& value) { data_[key] = fs::absolute(value).lexically_normal().string(); }

    void save() const {
        std::ofstream out(path_, std::ios::binary);
        out << data_.dump(2) << '\n';
    }

  private:
    fs::path path_;
    json data_ = json::object();
};

/// Flag value, else the artifact recorded by an earlier step, else `fallback` when it exists.
fs::path resolve(const std::string& flag, const Artifacts& artifacts, const std::string& key,
                 const std::optional<fs::path>& fallback = std::nullopt) {
    if (!flag.empty()) return flag;
    if (auto p = artifacts.get(key)) return *p;
    if (fallback && fs::exists(*fallback)) return *fallback;
    throw ConfigError(fmt::format("no {} given: pass --{} or run the step that produces it into --out", key,
                                  key == "keyword_bank" ? "keyword-bank" : key == "word_bank" ? "word-bank" : key));
}

std::optional<fs::path> sibling(const fs::path& file, const std::string& name) {
    if (file.empty()) return std::nullopt;
    return file.parent_path() / name;
}

double parse_db(const std::string& text) {
    const std::string t = to_lower(trim(text));
    if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
    if (t == "-inf") return -std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad dB value '" + text + "'");
    }
}

/// Global options plus the ones of the subcommand that ran, defaults included. Unset
/// optional values are left out so the file reads back cleanly through --config.
void write_snapshot(const CLI::App& app, const fs::path& out, const std::string& name) {
    std::istringstream all(app.config_to_str(true, false));
    std::ofstream file(out / (name + ".config.ini"), std::ios::binary);
    std::string line;
    while (std::getline(all, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (value == "\"\"" || key == "config") continue;
        const auto dot = key.find('.');
        if (dot != std::string::npos && key.substr(0, dot) != name) continue;
        file << line << '\n';
    }
}

std::map<Task, std::vector<const AnnotatedSentence*>> sentences_by_task(const SentenceMap& sentences) {
    std::map<Task, std::vector<const AnnotatedSentence*>> out;
    for (const auto& s : sentences.ordered()) out[s.task].push_back(&s);
    return out;
}

// ---------------------------------------------------------------- build-vocab

struct VocabArgs {
    std::string dataset;
    std::string word_bank;
    std::string exclusions;
    std::string root_map;
    std::size_t size = 100;
    std::size_t min_freq = 5;
    double reserve = 0.2;
    std::string start_rule = "max-frequency";
    double min_bank_coverage = 0.9;
};

void run_build_vocab(const Globals& g, const VocabArgs& a, Artifacts& artifacts) {
    const fs::path dataset_path = resolve(a.dataset, artifacts, "dataset");
    const Dataset dataset = load_dataset(dataset_path, {g.feature_dim});
    const fs::path bank_path = resolve(a.word_bank, artifacts, "word_bank", sibling(dataset_path, "word_bank.embk"));
    const EmbeddingBank word_bank = EmbeddingBank::load(bank_path);
    const ExclusionRules rules = a.exclusions.empty() ? ExclusionRules::defaults() : ExclusionRules::load(a.exclusions);
    VocabOptions options;
    options.min_freq = a.min_freq;
    options.reserve_fraction = a.reserve;
    options.seed = g.seed;
    options.min_bank_coverage = a.min_bank_coverage;
    if (a.start_rule == "max-frequency") {
        options.start_rule = StartRule::MaxFrequency;
    } else if (a.start_rule == "first-candidate") {
        options.start_rule = StartRule::FirstCandidate;
    } else {
        throw ConfigError("unknown start rule '" + a.start_rule + "'");
    }
    if (!a.root_map.empty()) options.root_map = read_root_map(a.root_map);
    const auto vocabulary = build_vocabulary(dataset.sentences.ordered(), word_bank, a.size, rules, options);
    const fs::path out(g.out);
    write_vocabulary(out / "vocab.txt", out / "vocab.audit.json", vocabulary);
    artifacts.set("dataset", dataset_path);
    artifacts.set("word_bank", bank_path);
    artifacts.set("vocab", out / "vocab.txt");
    spdlog::info("vocabulary of {} keywords written to {}", vocabulary.keywords.size(), (out / "vocab.txt").string());
}

// ---------------------------------------------------------------- synth-gen

struct SynthArgs {
    SynthSpec spec;
    std::string snr = "inf";
    std::string task = "SR1";
};

void run_synth_gen(const Globals& g, SynthArgs a, Artifacts& artifacts) {
    a.spec.snr_db = parse_db(a.snr);
    a.spec.task = parse_task(a.task);
    a.spec.seed = g.seed;
    a.spec.feature_dim = g.feature_dim;
    const auto lexicon = generate_lexicon(a.spec);
    const auto dataset = generate(a.spec, lexicon);
    const fs::path out(g.out);
    write_synth(out, a.spec, lexicon, dataset);
    json report = {{"sentences", dataset.sentences.size()}, {"samples", dataset.samples.size()}};
    if (!(std::isinf(a.spec.snr_db) && a.spec.snr_db < 0)) {
        const auto snr = snr_report(dataset, a.spec, lexicon);
        report["measured_snr_db"] = std::isinf(snr.snr_db) ? json("inf") : json(snr.snr_db);
        report["keyword_segments"] = snr.segments;
    } else {
        report["measured_snr_db"] = "-inf";
    }
    std::ofstream(out / "synth_report.json", std::ios::binary) << report.dump(2) << '\n';
    artifacts.set("dataset", out / "dataset.jsonl");
    artifacts.set("vocab", out / "vocab.txt");
    artifacts.set("keyword_bank", out / "keyword_bank.embk");
    artifacts.set("word_bank", out / "word_bank.embk");
    spdlog::info("synthetic corpus: {} sentences, {} samples", dataset.sentences.size(), dataset.samples.size());
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string dataset;
    std::string vocab;
    std::string keyword_bank;
    TrainConfig config;
    std::string split_mode = "by-sentence";
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
    std::optional<std::uint64_t> split_seed;
    std::string held_out_subject;
    std::string val_subject;
    bool filter = false;
};

struct LoadedModelInputs {
    fs::path dataset_path;
    fs::path vocab_path;
    fs::path bank_path;
    Dataset dataset;
    std::vector<std::string> keywords;
    EmbeddingBank bank;
};

LoadedModelInputs load_model_inputs(const Globals& g, const std::string& dataset, const std::string& vocab,
                                    const std::string& keyword_bank, const Artifacts& artifacts) {
    LoadedModelInputs in;
    in.dataset_path = resolve(dataset, artifacts, "dataset");
    in.vocab_path = resolve(vocab, artifacts, "vocab", sibling(in.dataset_path, "vocab.txt"));
    in.bank_path = resolve(keyword_bank, artifacts, "keyword_bank", sibling(in.dataset_path, "keyword_bank.embk"));
    in.dataset = load_dataset(in.dataset_path, {g.feature_dim});
    in.keywords = read_vocabulary(in.vocab_path);
    in.bank = EmbeddingBank::load(in.bank_path);
    return in;
}

void run_train(const Globals& g, TrainArgs a, Artifacts& artifacts) {
    auto in = load_model_inputs(g, a.dataset, a.vocab, a.keyword_bank, artifacts);
    if (a.filter) in.dataset.samples = filter_samples(in.dataset.samples, in.dataset.sentences);

    SplitSpec split_spec;
    split_spec.mode = parse_split_mode(a.split_mode);
    split_spec.train = a.train_fraction;
    split_spec.val = a.val_fraction;
    split_spec.test = a.test_fraction;
    split_spec.seed = a.split_seed.value_or(g.seed);
    if (!a.held_out_subject.empty()) split_spec.held_out_subject = a.held_out_subject;
    if (!a.val_subject.empty()) split_spec.val_subject = a.val_subject;
    const Split parts = split(in.dataset, split_spec);

    EncoderConfig encoder_config;
    if (g.profile == "compact") {
        encoder_config = EncoderConfig::compact(g.feature_dim, in.bank.dim());
    } else if (g.profile == "paper") {
        encoder_config = EncoderConfig::paper();
        encoder_config.input_dim = g.feature_dim;
    } else {
        throw ConfigError("unknown profile '" + g.profile + "' (expected paper or compact)");
    }
    a.config.seed = derive_seed(g.seed, 2);
    AlignerModel model(TransformerEncoder(encoder_config, derive_seed(g.seed, 1)), in.keywords, in.bank,
                       a.config.tau, a.config.learn_tau);
    const auto train_set = label_samples(in.dataset, parts.train_samples, model);
    const auto val_set = label_samples(in.dataset, parts.val_samples, model);
    const auto test_set = label_samples(in.dataset, parts.test_samples, model);
    spdlog::info("training on {} sequences ({} val, {} test), profile {}", train_set.size(), val_set.size(),
                 test_set.size(), encoder_config.profile);
    const TrainResult result = train(model, train_set, val_set, a.config);

    const fs::path out(g.out);
    save_checkpoint(out / "checkpoint.bclm", model);
    write_training_log(out / "training_log.csv", result);
    write_split_manifest(out / "split.json", parts, split_spec);
    json report = {{"best_epoch", result.best_epoch}, {"epochs_run", result.history.size()},
                   {"encoder", encoder_config.to_json()}, {"train", a.config.to_json()}, {"tau", model.tau()}};
    if (!test_set.empty()) {
        const auto test = evaluate_alignment(model, test_set);
        report["test"] = {{"loss", test.loss}, {"top1", test.top1}, {"top5", test.top5}, {"supervised", test.supervised}};
        spdlog::info("held-out keyword accuracy: top1 {:.4f}, top5 {:.4f} over {} segments", test.top1, test.top5,
                     test.supervised);
    }
    std::ofstream(out / "train_report.json", std::ios::binary) << report.dump(2) << '\n';
    artifacts.set("dataset", in.dataset_path);
    artifacts.set("vocab", in.vocab_path);
    artifacts.set("keyword_bank", in.bank_path);
    artifacts.set("checkpoint", out / "checkpoint.bclm");
    artifacts.set("split", out / "split.json");
}

// ---------------------------------------------------------------- decode

struct DecodeArgs {
    std::string dataset;
    std::string vocab;
    std::string keyword_bank;
    std::string checkpoint;
    std::string split_manifest;
    std::string part = "all";
    std::size_t m = 5;
};

std::vector<const EegWordSequence*> select_part(const Dataset& dataset, const std::string& part,
                                                const fs::path& manifest_path) {
    std::vector<const EegWordSequence*> out;
    if (part == "all") {
        for (const auto& s : dataset.samples) out.push_back(&s);
        return out;
    }
    if (part != "train" && part != "val" && part != "test") throw ConfigError("unknown split part '" + part + "'");
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("cannot open split manifest " + manifest_path.string());
    const json manifest = json::parse(in);
    const auto ids = manifest.at(part).get<std::set<std::string>>();
    const json spec = manifest.value("spec", json::object());
    std::optional<std::string> subject;
    if (part == "test" && spec.contains("held_out_subject")) subject = spec["held_out_subject"].get<std::string>();
    if (part == "val" && spec.contains("val_subject")) subject = spec["val_subject"].get<std::string>();
    std::set<std::string> excluded;
    if (part == "train") {
        for (const char* key : {"held_out_subject", "val_subject"}) {
            if (spec.contains(key)) excluded.insert(spec[key].get<std::string>());
        }
    }
    for (const auto& s : dataset.samples) {
        if (!ids.count(s.sentence_id) || excluded.count(s.subject_id)) continue;
        if (subject && s.subject_id != *subject) continue;
        out.push_back(&s);
    }
    return out;
}

void run_decode(const Globals& g, const DecodeArgs& a, Artifacts& artifacts) {
    auto in = load_model_inputs(g, a.dataset, a.vocab, a.keyword_bank, artifacts);
    const fs::path checkpoint = resolve(a.checkpoint, artifacts, "checkpoint");
    const AlignerModel model = load_checkpoint(checkpoint, in.keywords, in.bank);
    if (a.m == 0) throw ConfigError("--m must be at least 1");
    std::vector<const EegWordSequence*> samples;
    if (a.part == "all") {
        samples = select_part(in.dataset, a.part, {});
    } else {
        samples = select_part(in.dataset, a.part, resolve(a.split_manifest, artifacts, "split"));
    }
    std::vector<SamplePredictions> predictions;
    std::vector<AnchorSequence> anchors;
    for (const auto* sample : samples) {
        SamplePredictions p{sample->sentence_id, sample->subject_id, predict_segments(model, *sample)};
        AnchorSequence seq{sample->sentence_id, sample->subject_id, a.m, select_anchors(p.segments, model.keywords(), a.m)};
        if (seq.entries.empty()) spdlog::warn("{} / {}: no segments to decode", sample->sentence_id, sample->subject_id);
        predictions.push_back(std::move(p));
        anchors.push_back(std::move(seq));
    }
    const fs::path out(g.out);
    write_predictions(out / "predictions.jsonl", predictions);
    write_anchors(out / "anchors.jsonl", anchors);
    artifacts.set("predictions", out / "predictions.jsonl");
    artifacts.set("anchors", out / "anchors.jsonl");
    spdlog::info("decoded {} samples (m={}, part {})", samples.size(), a.m, a.part);
}

// ---------------------------------------------------------------- reconstruct

struct GenerationArgs {
    GenerationParams params;
    bool no_repetition_penalty = false;
    std::optional<std::uint64_t> seed;

    GenerationParams resolved() const {
        GenerationParams p = params;
        p.send_repetition_penalty = !no_repetition_penalty;
        p.seed = seed;
        return p;
    }
};

struct ReconstructArgs {
    std::string dataset;
    std::string anchors;
    std::vector<std::string> modes{"cot_rag"};
    std::string condition = "ordered";
    std::size_t k = 5;
    std::string template_id = "v1";
    std::string templates_dir;
    bool remote = false;
    std::string model = "llama-2-7b-chat";
    double timeout = 60.0;
    std::size_t retries = 3;
    double backoff = 0.5;
    std::size_t concurrency = 1;
    std::size_t limit = 0;
    GenerationArgs generation;
};

PromptTemplates load_templates(const std::string& dir, const std::string& id) {
    return dir.empty() ? PromptTemplates::defaults(id) : PromptTemplates::load(dir, id);
}

void run_reconstruct(const Globals& g, const ReconstructArgs& a, Artifacts& artifacts) {
    const fs::path dataset_path = resolve(a.dataset, artifacts, "dataset");
    const fs::path anchors_path = resolve(a.anchors, artifacts, "anchors");
    const Dataset dataset = load_dataset(dataset_path, {g.feature_dim});
    auto sequences = read_anchors(anchors_path);
    if (a.limit > 0 && sequences.size() > a.limit) sequences.resize(a.limit);
    std::vector<PromptMode> modes;
    for (const auto& m : a.modes) modes.push_back(parse_prompt_mode(m));

    std::unique_ptr<ChatClient> client;
    if (a.remote) {
        EndpointConfig base;
        base.model = a.model;
        base.timeout_seconds = a.timeout;
        base.max_retries = a.retries;
        base.backoff_seconds = a.backoff;
        const EndpointConfig endpoint = EndpointConfig::from_env(base);
        if (endpoint.url.empty()) throw ConfigError("--remote needs ANCHORLAB_LLM_URL");
        client = std::make_unique<HttpChatClient>(endpoint);
    }
    ReconstructOptions options;
    options.k = a.k;
    options.params = a.generation.resolved();
    options.concurrency = a.concurrency;
    const PromptTemplates templates = load_templates(a.templates_dir, a.template_id);
    const ExclusionRules rules = ExclusionRules::defaults();

    std::map<Task, RetrievalIndex> indices;
    for (const auto& [task, pool] : sentences_by_task(dataset.sentences)) indices.emplace(task, build_index(pool, rules.stopwords));
    std::map<Task, std::vector<std::size_t>> by_task;
    std::vector<ReconstructionRequest> requests;
    for (const auto& seq : sequences) {
        const auto& sentence = dataset.sentences.at(seq.sentence_id);
        for (auto mode : modes) {
            by_task[sentence.task].push_back(requests.size());
            requests.push_back({seq.sentence_id, seq.subject_id, a.condition, seq.m_requested, seq.lemmas(), mode});
        }
    }
    std::vector<ReconstructionRecord> records(requests.size());
    for (const auto& [task, ids] : by_task) {
        Reconstructor reconstructor(&indices.at(task), templates, client.get(), options);
        std::vector<ReconstructionRequest> batch;
        for (std::size_t i : ids) batch.push_back(requests[i]);
        auto done = reconstructor.reconstruct_all(batch);
        for (std::size_t j = 0; j < ids.size(); ++j) records[ids[j]] = std::move(done[j]);
    }
    const fs::path out(g.out);
    write_records(out / "reconstructions.jsonl", records);
    artifacts.set("dataset", dataset_path);
    artifacts.set("records", out / "reconstructions.jsonl");
    spdlog::info("{} reconstructions ({})", records.size(), client ? "remote" : "fallback");
}

// ---------------------------------------------------------------- evaluate / permute

struct EmbedderArgs {
    std::string kind = "word-bank";
    std::string word_bank;
    std::string sentence_bank;
    std::string url;
    std::string model = "sentence-transformers/all-MiniLM-L6-v2";
};

/// Owns whatever the chosen embedder borrows.
struct EmbedderHolder {
    std::optional<EmbeddingBank> word_bank;
    std::optional<EmbeddingBank> sentence_bank;
    std::unique_ptr<SentenceEmbedder> embedder;
};

void make_embedder(EmbedderHolder& holder, const EmbedderArgs& a, const Artifacts& artifacts,
                   const fs::path& dataset_path, const SentenceMap& sentences) {
    // The word bank also feeds the greedy-matching F1, so load it whenever one can be found.
    try {
        holder.word_bank = EmbeddingBank::load(resolve(a.word_bank, artifacts, "word_bank",
                                                       sibling(dataset_path, "word_bank.embk")));
    } catch (const ConfigError&) {
        if (a.kind == "word-bank") throw;
    }
    if (a.kind == "word-bank") {
        std::vector<std::string> texts;
        for (const auto& s : sentences.ordered()) texts.push_back(s.text);
        holder.embedder = std::make_unique<IdfWordBankEmbedder>(*holder.word_bank, texts);
    } else if (a.kind == "sentence-bank") {
        if (a.sentence_bank.empty()) throw ConfigError("--embedder sentence-bank needs --sentence-bank");
        holder.sentence_bank = EmbeddingBank::load(a.sentence_bank);
        holder.embedder = std::make_unique<SentenceBankEmbedder>(*holder.sentence_bank);
    } else if (a.kind == "remote") {
        EndpointConfig config;
        config.model = a.model;
        config = EndpointConfig::from_env(config);
        if (!a.url.empty()) config.url = a.url;
        if (config.url.empty()) throw ConfigError("--embedder remote needs --embed-url");
        holder.embedder = std::make_unique<RemoteEmbedder>(config);
    } else {
        throw ConfigError("unknown embedder '" + a.kind + "'");
    }
}

std::map<Task, SentencePool> build_pools(const SentenceMap& sentences, const SentenceEmbedder& embedder) {
    std::map<Task, SentencePool> pools;
    for (const auto& [task, list] : sentences_by_task(sentences)) pools.emplace(task, SentencePool::build(list, embedder));
    return pools;
}

struct PermutationArgs {
    bool enabled = true;
    std::string condition = "ordered";
    std::string mode = "cot_rag";
    std::size_t m = 5;
    std::size_t k = 25;
    std::size_t n_perm = 500;
    std::size_t control_repeats = 20;

    PermutationOptions options(std::uint64_t seed) const {
        return {condition, parse_prompt_mode(mode), m, k, n_perm, control_repeats, seed};
    }
};

struct EvaluateArgs {
    std::string dataset;
    std::vector<std::string> records;
    bool fallback = false;
    std::string predictions;
    std::string vocab;
    std::vector<std::size_t> ks{5, 10, 15, 20, 25};
    std::vector<std::size_t> ms{3, 5, 7};
    std::vector<std::string> modes{"naive", "cot", "rag", "cot_rag"};
    std::vector<std::string> conditions{"random", "ordered", "oracle"};
    std::size_t retrieval_k = 5;
    std::size_t bleu_order = 3;
    std::string template_id = "v1";
    std::string templates_dir;
    EmbedderArgs embedder;
    PermutationArgs permutation;
};

void run_evaluate(const Globals& g, const EvaluateArgs& a, Artifacts& artifacts) {
    if (a.records.empty() && !a.fallback) throw ConfigError("evaluate needs --records or --fallback");
    if (!a.records.empty() && a.fallback) throw ConfigError("--records and --fallback are exclusive");
    const fs::path dataset_path = resolve(a.dataset, artifacts, "dataset");
    const Dataset dataset = load_dataset(dataset_path, {g.feature_dim});
    EmbedderHolder holder;
    make_embedder(holder, a.embedder, artifacts, dataset_path, dataset.sentences);
    const auto pools = build_pools(dataset.sentences, *holder.embedder);

    ScoreOptions score;
    score.ks = a.ks;
    score.bleu_order = a.bleu_order;
    score.word_bank = holder.word_bank ? &*holder.word_bank : nullptr;

    std::vector<ReconstructionRecord> records;
    EvalReport report;
    const fs::path out(g.out);
    if (a.fallback) {
        const fs::path predictions_path = resolve(a.predictions, artifacts, "predictions");
        const fs::path vocab_path = resolve(a.vocab, artifacts, "vocab", sibling(dataset_path, "vocab.txt"));
        const auto decoded = read_predictions(predictions_path);
        const auto keywords = read_vocabulary(vocab_path);
        const ExclusionRules rules = ExclusionRules::defaults();
        const PromptTemplates templates = load_templates(a.templates_dir, a.template_id);
        ReconstructOptions options;
        options.k = a.retrieval_k;
        std::map<Task, RetrievalIndex> indices;
        std::map<Task, std::unique_ptr<Reconstructor>> owned;
        std::map<Task, const Reconstructor*> reconstructors;
        for (const auto& [task, list] : sentences_by_task(dataset.sentences)) {
            indices.emplace(task, build_index(list, rules.stopwords));
            owned.emplace(task, std::make_unique<Reconstructor>(&indices.at(task), templates, nullptr, options));
            reconstructors.emplace(task, owned.at(task).get());
        }
        SuiteOptions suite;
        suite.conditions.clear();
        for (const auto& c : a.conditions) suite.conditions.push_back(parse_anchor_kind(c));
        suite.modes.clear();
        for (const auto& m : a.modes) suite.modes.push_back(parse_prompt_mode(m));
        suite.ms = a.ms;
        suite.score = score;
        suite.seed = g.seed;
        report = run_condition_suite(dataset.sentences, decoded, keywords, reconstructors, pools, *holder.embedder,
                                     suite, &records);
        write_records(out / "suite_records.jsonl", records);
        artifacts.set("records", out / "suite_records.jsonl");
    } else {
        for (const auto& path : a.records) {
            auto part = read_records(path);
            records.insert(records.end(), part.begin(), part.end());
        }
        report = score_records(records, dataset.sentences, pools, *holder.embedder, score);
    }

    if (a.permutation.enabled) {
        try {
            report.permutation =
                anchor_permutation(records, dataset.sentences, pools, *holder.embedder, a.permutation.options(g.seed));
        } catch (const ValidationError& e) {
            report.gaps.push_back(std::string("permutation test skipped: ") + e.what());
        }
    }
    report.write(out);
    if (g.emit_plot_data) report.write_plot_data(out);
    artifacts.set("report", out / "report.json");
    if (!topk_monotone(report)) spdlog::warn("a report row has non-monotone Top-k accuracy");
    for (const auto& row : report.rows) {
        if (row.subject != "pooled" || !row.topk.count(5)) continue;
        spdlog::info("{:8} {:8} m={} top5 {:.3f}", row.condition, row.mode, row.m, row.topk.at(5));
    }
}

struct PermuteArgs {
    std::string dataset;
    std::vector<std::string> records;
    EmbedderArgs embedder;
    PermutationArgs permutation;
};

void run_permute(const Globals& g, const PermuteArgs& a, Artifacts& artifacts) {
    const fs::path dataset_path = resolve(a.dataset, artifacts, "dataset");
    const Dataset dataset = load_dataset(dataset_path, {g.feature_dim});
    std::vector<ReconstructionRecord> records;
    if (a.records.empty()) {
        records = read_records(resolve("", artifacts, "records"));
    } else {
        for (const auto& path : a.records) {
            auto part = read_records(path);
            records.insert(records.end(), part.begin(), part.end());
        }
    }
    EmbedderHolder holder;
    make_embedder(holder, a.embedder, artifacts, dataset_path, dataset.sentences);
    const auto pools = build_pools(dataset.sentences, *holder.embedder);
    const json result = anchor_permutation(records, dataset.sentences, pools, *holder.embedder,
                                           a.permutation.options(g.seed));
    std::ofstream(fs::path(g.out) / "permutation.json", std::ios::binary) << result.dump(2) << '\n';
    for (const auto& [task, entry] : result.items()) {
        std::cout << fmt::format("{}: observed {:.4f}, p {:.4f}", task, entry["observed"].get<double>(),
                                 entry["p"].get<double>());
        if (entry.contains("control")) std::cout << fmt::format(", control mean p {:.4f}", entry["control"]["mean_p"].get<double>());
        std::cout << '\n';
    }
}

// ---------------------------------------------------------------- entropy / report

struct EntropyArgs {
    std::size_t vocabulary = 100;
    std::vector<std::size_t> ms{3, 5, 7};
    std::size_t length = 20;
    bool no_repetition = false;
    std::string format = "csv";
};

void run_entropy(const Globals& g, const EntropyArgs& a) {
    const auto rows = scale_table(a.vocabulary, a.ms, a.length, !a.no_repetition);
    const std::string csv = scale_table_csv(rows);
    const std::string js = scale_table_json(rows).dump(2) + "\n";
    std::ofstream(fs::path(g.out) / "entropy.csv", std::ios::binary) << csv;
    std::ofstream(fs::path(g.out) / "entropy.json", std::ios::binary) << js;
    if (a.format == "csv") {
        std::cout << csv;
    } else if (a.format == "json") {
        std::cout << js;
    } else {
        throw ConfigError("unknown format '" + a.format + "'");
    }
}

struct ReportArgs {
    std::string report;
};

void run_report(const Globals& g, const ReportArgs& a, Artifacts& artifacts) {
    const fs::path path = resolve(a.report, artifacts, "report");
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open report " + path.string());
    const json parsed = json::parse(in, nullptr, false);
    if (parsed.is_discarded()) throw ValidationError(path.string() + " is not valid JSON");
    const EvalReport report = EvalReport::from_json(parsed);
    const fs::path out(g.out);
    if (fs::absolute(path.parent_path()) != fs::absolute(out)) report.write(out);
    if (g.emit_plot_data) report.write_plot_data(out);

    std::vector<std::size_t> ks;
    for (const auto& row : report.rows) {
        for (const auto& [k, v] : row.topk) {
            if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
        }
    }
    std::sort(ks.begin(), ks.end());
    std::string table = "| condition | mode | m | n | AnchorHit |";
    std::string rule = "|---|---|---|---|---|";
    for (std::size_t k : ks) {
        table += fmt::format(" Top-{} |", k);
        rule += "---|";
    }
    table += " BLEU-1 | ROUGE-1 F1 |\n" + rule + "---|---|\n";
    for (const auto& row : report.rows) {
        if (row.subject != "pooled") continue;
        table += fmt::format("| {} | {} | {} | {} | {:.3f} |", row.condition, row.mode, row.m, row.n, row.anchor_hit);
        for (std::size_t k : ks) table += row.topk.count(k) ? fmt::format(" {:.3f} |", row.topk.at(k)) : " |";
        table += fmt::format(" {:.3f} | {:.3f} |\n", row.bleu.empty() ? 0.0 : row.bleu.front(), row.rouge1);
    }
    for (const auto& s : report.stats) {
        table += fmt::format("\n{}: {} = {:.4g}, p = {:.4g} (corrected {:.4g})", s.name, s.test, s.statistic, s.p,
                             s.p_corrected);
    }
    for (const auto& [task, entry] : report.permutation.items()) {
        table += fmt::format("\npermutation {}: observed {:.4f}, p {:.4f}", task, entry.value("observed", 0.0),
                             entry.value("p", 1.0));
    }
    for (const auto& gap : report.gaps) table += "\ngap: " + gap;
    table += "\n";
    std::ofstream(out / "summary.md", std::ios::binary) << table;
    std::cout << table;
}

void add_embedder_options(CLI::App* sub, EmbedderArgs& a) {
    sub->add_option("--embedder", a.kind, "word-bank, sentence-bank or remote")->capture_default_str();
    sub->add_option("--word-bank", a.word_bank, "300-d word bank (EMBK)");
    sub->add_option("--sentence-bank", a.sentence_bank, "precomputed sentence embeddings keyed by text (EMBK)");
    sub->add_option("--embed-url", a.url, "OpenAI-compatible embeddings URL");
    sub->add_option("--embed-model", a.model, "model name sent to the embeddings endpoint")->capture_default_str();
}

void add_permutation_options(CLI::App* sub, PermutationArgs& a) {
    sub->add_option("--perm-condition", a.condition, "condition whose records are permuted")->capture_default_str();
    sub->add_option("--perm-mode", a.mode, "prompt mode of the permuted records")->capture_default_str();
    sub->add_option("--perm-m", a.m, "anchor count of the permuted records")->capture_default_str();
    sub->add_option("--perm-k", a.k, "Top-k used as the permutation statistic")->capture_default_str();
    sub->add_option("--n-perm", a.n_perm, "permutations")->capture_default_str();
    sub->add_option("--control-repeats", a.control_repeats, "label-shuffled control runs (0 = off)")
        ->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("anchorlab");
    spdlog::set_default_logger(logger);

    CLI::App app{"EEG semantic-anchor decoding and anchor-guided sentence reconstruction"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI config file; flags override it");
    Globals g;
    app.add_option("--out", g.out, "output directory")->capture_default_str();
    app.add_option("--seed", g.seed, "master seed")->capture_default_str();
    app.add_option("--profile", g.profile, "encoder profile: paper or compact")->capture_default_str();
    app.add_flag("--emit-plot-data", g.emit_plot_data, "write topk_curve.csv and m_curve.csv");
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")->capture_default_str();
    app.add_option("--feature-dim", g.feature_dim, "expected feature vector length")->capture_default_str();

    VocabArgs vocab;
    auto* build_vocab = app.add_subcommand("build-vocab", "select the keyword vocabulary");
    build_vocab->add_option("--dataset", vocab.dataset, "annotated corpus (JSONL)");
    build_vocab->add_option("--word-bank", vocab.word_bank, "word bank (EMBK); defaults to word_bank.embk next to the dataset");
    build_vocab->add_option("--size", vocab.size, "vocabulary size V")->capture_default_str();
    build_vocab->add_option("--min-freq", vocab.min_freq, "minimum sentence frequency")->capture_default_str();
    build_vocab->add_option("--reserve", vocab.reserve, "fraction of V held back for refinement")->capture_default_str();
    build_vocab->add_option("--exclusions", vocab.exclusions, "directory of exclusion lists");
    build_vocab->add_option("--root-map", vocab.root_map, "two-column lemma/root file");
    build_vocab->add_option("--start-rule", vocab.start_rule, "max-frequency or first-candidate")->capture_default_str();
    build_vocab->add_option("--min-bank-coverage", vocab.min_bank_coverage, "required word-bank coverage")
        ->capture_default_str();

    SynthArgs synth;
    auto* synth_gen = app.add_subcommand("synth-gen", "generate a synthetic corpus with known ground truth");
    synth_gen->add_option("--V", synth.spec.vocab_size, "keywords")->capture_default_str();
    synth_gen->add_option("--sentences", synth.spec.sentences, "sentences")->capture_default_str();
    synth_gen->add_option("--min-words", synth.spec.min_words, "shortest sentence")->capture_default_str();
    synth_gen->add_option("--max-words", synth.spec.max_words, "longest sentence")->capture_default_str();
    synth_gen->add_option("--filler-rate", synth.spec.filler_rate, "share of filler positions")->capture_default_str();
    synth_gen->add_option("--filler-vocab", synth.spec.filler_vocab, "distinct fillers")->capture_default_str();
    synth_gen->add_option("--snr-db", synth.snr, "signal-to-noise ratio in dB, inf or -inf")->capture_default_str();
    synth_gen->add_option("--bank-dim", synth.spec.bank_dim, "keyword bank width")->capture_default_str();
    synth_gen->add_option("--word-dim", synth.spec.word_dim, "word bank width")->capture_default_str();
    synth_gen->add_option("--subjects", synth.spec.subjects, "simulated subjects")->capture_default_str();
    synth_gen->add_option("--task", synth.task, "task label")->capture_default_str();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train the EEG encoder against the keyword bank");
    train_cmd->add_option("--dataset", tr.dataset, "dataset with samples (JSONL)");
    train_cmd->add_option("--vocab", tr.vocab, "vocabulary file");
    train_cmd->add_option("--keyword-bank", tr.keyword_bank, "keyword bank (EMBK)");
    train_cmd->add_option("--epochs", tr.config.epochs, "epochs")->capture_default_str();
    train_cmd->add_option("--lr", tr.config.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--weight-decay", tr.config.weight_decay, "decoupled weight decay")->capture_default_str();
    train_cmd->add_option("--batch-size", tr.config.batch_size, "sequences per step")->capture_default_str();
    train_cmd->add_option("--patience", tr.config.patience, "early stopping patience (0 = off)")->capture_default_str();
    train_cmd->add_option("--tau", tr.config.tau, "softmax temperature")->capture_default_str();
    train_cmd->add_flag("--learn-tau", tr.config.learn_tau, "train log temperature");
    train_cmd->add_option("--aux-weight", tr.config.aux_weight, "instance discrimination weight")->capture_default_str();
    train_cmd->add_option("--aux-noise", tr.config.aux_noise, "relative noise of the perturbed view")->capture_default_str();
    train_cmd->add_option("--split-mode", tr.split_mode, "by-sentence or loso")->capture_default_str();
    train_cmd->add_option("--train-fraction", tr.train_fraction, "train share")->capture_default_str();
    train_cmd->add_option("--val-fraction", tr.val_fraction, "validation share")->capture_default_str();
    train_cmd->add_option("--test-fraction", tr.test_fraction, "test share")->capture_default_str();
    train_cmd->add_option("--split-seed", tr.split_seed, "split seed (defaults to --seed)");
    train_cmd->add_option("--held-out-subject", tr.held_out_subject, "LOSO test subject");
    train_cmd->add_option("--val-subject", tr.val_subject, "LOSO validation subject");
    train_cmd->add_flag("--filter-samples", tr.filter, "drop samples covering less than half the words");

    DecodeArgs dec;
    auto* decode = app.add_subcommand("decode", "decode ordered anchors");
    decode->add_option("--dataset", dec.dataset, "dataset with samples (JSONL)");
    decode->add_option("--vocab", dec.vocab, "vocabulary file");
    decode->add_option("--keyword-bank", dec.keyword_bank, "keyword bank (EMBK)");
    decode->add_option("--checkpoint", dec.checkpoint, "model checkpoint");
    decode->add_option("--split-manifest", dec.split_manifest, "split.json written by train");
    decode->add_option("--split", dec.part, "all, train, val or test")->capture_default_str();
    decode->add_option("--m", dec.m, "anchors per sentence")->capture_default_str();

    ReconstructArgs rec;
    auto* reconstruct = app.add_subcommand("reconstruct", "turn anchors into sentences");
    reconstruct->add_option("--dataset", rec.dataset, "dataset providing the sentence pool");
    reconstruct->add_option("--anchors", rec.anchors, "anchors.jsonl");
    reconstruct->add_option("--mode", rec.modes, "naive, cot, rag, cot_rag (repeatable)")->capture_default_str();
    reconstruct->add_option("--condition", rec.condition, "condition label stored in the records")->capture_default_str();
    reconstruct->add_option("--k", rec.k, "retrieved references")->capture_default_str();
    reconstruct->add_option("--template-id", rec.template_id, "template set")->capture_default_str();
    reconstruct->add_option("--templates-dir", rec.templates_dir, "template root directory");
    reconstruct->add_flag("--remote", rec.remote, "call the chat endpoint in ANCHORLAB_LLM_URL");
    reconstruct->add_option("--model", rec.model, "chat model name")->capture_default_str();
    reconstruct->add_option("--timeout", rec.timeout, "request timeout in seconds")->capture_default_str();
    reconstruct->add_option("--retries", rec.retries, "retries after the first attempt")->capture_default_str();
    reconstruct->add_option("--backoff", rec.backoff, "initial backoff in seconds")->capture_default_str();
    reconstruct->add_option("--concurrency", rec.concurrency, "parallel requests")->capture_default_str();
    reconstruct->add_option("--limit", rec.limit, "only the first N anchor sequences (0 = all)")->capture_default_str();
    reconstruct->add_option("--temperature", rec.generation.params.temperature)->capture_default_str();
    reconstruct->add_option("--top-p", rec.generation.params.top_p)->capture_default_str();
    reconstruct->add_option("--repetition-penalty", rec.generation.params.repetition_penalty)->capture_default_str();
    reconstruct->add_option("--max-tokens", rec.generation.params.max_tokens)->capture_default_str();
    reconstruct->add_flag("--no-repetition-penalty", rec.generation.no_repetition_penalty,
                          "omit repetition_penalty for endpoints that reject it");
    reconstruct->add_option("--generation-seed", rec.generation.seed, "seed forwarded to the endpoint");

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "score reconstructions");
    evaluate->add_option("--dataset", ev.dataset, "dataset providing sentences and pools");
    evaluate->add_option("--records", ev.records, "reconstruction JSONL files (ours or external)");
    evaluate->add_flag("--fallback", ev.fallback, "run the full condition suite with the offline reconstructor");
    evaluate->add_option("--predictions", ev.predictions, "predictions.jsonl written by decode");
    evaluate->add_option("--vocab", ev.vocab, "vocabulary file");
    evaluate->add_option("--ks", ev.ks, "retrieval cut-offs")->capture_default_str();
    evaluate->add_option("--ms", ev.ms, "anchor counts")->capture_default_str();
    evaluate->add_option("--modes", ev.modes, "prompt modes")->capture_default_str();
    evaluate->add_option("--conditions", ev.conditions, "anchor conditions")->capture_default_str();
    evaluate->add_option("--retrieval-k", ev.retrieval_k, "references per prompt")->capture_default_str();
    evaluate->add_option("--bleu-order", ev.bleu_order, "highest BLEU n-gram order")->capture_default_str();
    evaluate->add_option("--template-id", ev.template_id, "template set")->capture_default_str();
    evaluate->add_option("--templates-dir", ev.templates_dir, "template root directory");
    evaluate->add_flag("--permutation,!--no-permutation", ev.permutation.enabled, "run the permutation test")
        ->capture_default_str();
    add_embedder_options(evaluate, ev.embedder);
    add_permutation_options(evaluate, ev.permutation);

    PermuteArgs pm;
    auto* permute = app.add_subcommand("permute", "permutation test on reconstruction records");
    permute->add_option("--dataset", pm.dataset, "dataset providing sentences and pools");
    permute->add_option("--records", pm.records, "reconstruction JSONL files");
    add_embedder_options(permute, pm.embedder);
    add_permutation_options(permute, pm.permutation);

    EntropyArgs en;
    auto* entropy = app.add_subcommand("entropy", "information-scale table");
    entropy->add_option("--V", en.vocabulary, "vocabulary size")->capture_default_str();
    entropy->add_option("--m", en.ms, "anchor counts")->capture_default_str();
    entropy->add_option("--L", en.length, "sentence length for the lower bound")->capture_default_str();
    entropy->add_flag("--no-repetition", en.no_repetition, "count ordered draws without repeats");
    entropy->add_option("--format", en.format, "csv or json")->capture_default_str();

    ReportArgs rp;
    auto* report = app.add_subcommand("report", "summarise an existing report.json");
    report->add_option("--report", rp.report, "report.json (defaults to the one in --out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const auto level = spdlog::level::from_str(g.log_level);
    spdlog::set_level(level);

    try {
        fs::create_directories(g.out);
        Artifacts artifacts(g.out);
        CLI::App* used = app.get_subcommands().front();
        if (used == build_vocab) run_build_vocab(g, vocab, artifacts);
        else if (used == synth_gen) run_synth_gen(g, synth, artifacts);
        else if (used == train_cmd) run_train(g, tr, artifacts);
        else if (used == decode) run_decode(g, dec, artifacts);
        else if (used == reconstruct) run_reconstruct(g, rec, artifacts);
        else if (used == evaluate) run_evaluate(g, ev, artifacts);
        else if (used == permute) run_permute(g, pm, artifacts);
        else if (used == entropy) run_entropy(g, en);
        else if (used == report) run_report(g, rp, artifacts);
        artifacts.save();
        write_snapshot(app, g.out, used->get_name());
        return 0;
    } catch (const ValidationError& e) {
        spdlog::error("validation error: {}", e.what());
        return 1;
    } catch (const ConfigError& e) {
        spdlog::error("configuration error: {}", e.what());
        return 1;
    } catch (const RuntimeFailure& e) {
        spdlog::error("runtime failure: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
}
