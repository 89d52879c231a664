#include "anchorlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "anchorlab/common.hpp"
#include "anchorlab/metrics.hpp"

namespace anchorlab {

using nlohmann::json;

std::string to_string(AnchorKind kind) {
    switch (kind) {
    case AnchorKind::Random: return "random";
    case AnchorKind::Ordered: return "ordered";
    case AnchorKind::Oracle: return "oracle";
    }
    return "ordered";
}

AnchorKind parse_anchor_kind(const std::string& text) {
    if (text == "random") return AnchorKind::Random;
    if (text == "ordered") return AnchorKind::Ordered;
    if (text == "oracle") return AnchorKind::Oracle;
    throw ValidationError("unknown anchor condition '" + text + "'");
}

std::vector<std::string> oracle_anchors(const AnnotatedSentence& sentence, const std::set<std::string>& vocabulary,
                                        std::size_t m) {
    std::vector<std::string> out;
    for (const auto& token : sentence.tokens) {
        if (out.size() == m) break;
        if (!is_content_pos(token.pos) || vocabulary.count(token.lemma) == 0) continue;
        if (std::find(out.begin(), out.end(), token.lemma) == out.end()) out.push_back(token.lemma);
    }
    return out;
}

std::vector<std::string> random_anchors(const std::vector<std::string>& vocabulary, std::size_t m, Rng& rng) {
    std::vector<std::string> pool = vocabulary;
    const std::size_t take = std::min(m, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(take);
    return pool;
}

SentencePool SentencePool::build(const std::vector<const AnnotatedSentence*>& sentences,
                                 const SentenceEmbedder& embedder) {
    if (sentences.empty()) throw ValidationError("sentence pool is empty");
    SentencePool pool;
    pool.task = sentences.front()->task;
    std::vector<std::vector<double>> rows;
    for (const auto* sentence : sentences) {
        if (!pool.index.emplace(sentence->sentence_id, pool.ids.size()).second) {
            throw ValidationError("sentence pool repeats " + sentence->sentence_id);
        }
        pool.ids.push_back(sentence->sentence_id);
        pool.texts.push_back(sentence->text);
        rows.push_back(embedder.embed(sentence->text));
    }
    const auto dim = static_cast<Eigen::Index>(rows.front().size());
    pool.embeddings.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != dim) throw ValidationError("embedder changed dimension");
        pool.embeddings.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Vector>(rows[i].data(), dim);
    }
    return pool;
}

std::size_t retrieval_rank(const Vector& query, const Matrix& pool_embeddings, std::size_t target) {
    const Vector scores = pool_embeddings * query;
    const double own = scores(static_cast<Eigen::Index>(target));
    std::size_t rank = 1;
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (scores(j) > own || (scores(j) == own && ju < target)) ++rank;
    }
    return rank;
}

const Vector& EmbeddingCache::get(const std::string& text) {
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
    const auto values = embedder_.embed(text);
    return cache_.emplace(text, Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())))
        .first->second;
}

std::vector<std::size_t> retrieval_ranks(const std::vector<std::string>& reconstructions,
                                         const std::vector<std::string>& ground_truth_ids, const SentencePool& pool,
                                         EmbeddingCache& cache) {
    if (reconstructions.size() != ground_truth_ids.size()) {
        throw ValidationError("reconstructions and ground truth differ in length");
    }
    std::vector<std::size_t> ranks;
    for (std::size_t i = 0; i < reconstructions.size(); ++i) {
        auto it = pool.index.find(ground_truth_ids[i]);
        if (it == pool.index.end()) throw ValidationError("ground truth " + ground_truth_ids[i] + " not in pool");
        ranks.push_back(retrieval_rank(cache.get(reconstructions[i]), pool.embeddings, it->second));
    }
    return ranks;
}

std::map<std::size_t, double> accuracy_at(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks) {
    std::map<std::size_t, double> out;
    for (std::size_t k : ks) {
        std::size_t hits = 0;
        for (std::size_t r : ranks) hits += r <= k;
        out[k] = ranks.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranks.size());
    }
    return out;
}

std::map<std::size_t, double> retrieval_accuracy(const std::vector<std::string>& reconstructions,
                                                 const std::vector<std::string>& ground_truth_ids,
                                                 const SentencePool& pool, const SentenceEmbedder& embedder,
                                                 const std::vector<std::size_t>& ks) {
    EmbeddingCache cache(embedder);
    return accuracy_at(retrieval_ranks(reconstructions, ground_truth_ids, pool, cache), ks);
}

HitMatrix hit_matrix(const std::vector<std::string>& reconstructions, const std::vector<std::string>& ground_truth_ids,
                     const SentencePool& pool, EmbeddingCache& cache, std::size_t k) {
    const std::size_t n = reconstructions.size();
    if (ground_truth_ids.size() != n) throw ValidationError("reconstructions and ground truth differ in length");
    std::vector<std::size_t> targets;
    for (const auto& id : ground_truth_ids) {
        auto it = pool.index.find(id);
        if (it == pool.index.end()) throw ValidationError("ground truth " + id + " not in pool");
        targets.push_back(it->second);
    }
    HitMatrix hits(n, std::vector<std::uint8_t>(n, 0));
    for (std::size_t i = 0; i < n; ++i) {
        const Vector scores = pool.embeddings * cache.get(reconstructions[i]);
        // Rank of every pool row at once: sort indices by score, ties by pool order.
        std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
        });
        std::vector<std::size_t> rank(order.size());
        for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
        for (std::size_t j = 0; j < n; ++j) hits[i][j] = rank[targets[j]] <= k;
    }
    return hits;
}

json MetricRow::to_json() const {
    json top = json::object();
    for (const auto& [k, v] : topk) top[std::to_string(k)] = v;
    json out = {{"condition", condition}, {"mode", mode},       {"m", m},
                {"subject", subject},     {"n", n},             {"subjects", subjects},
                {"anchor_hit", anchor_hit}, {"anchor_all", anchor_all}, {"topk", top},
                {"bleu", bleu},           {"rouge1_f1", rouge1}, {"greedy_f1_missing", greedy_missing}};
    out["greedy_f1"] = greedy_f1 ? json(*greedy_f1) : json(nullptr);
    if (!sd.empty()) out["sd"] = sd;
    return out;
}

MetricRow MetricRow::from_json(const json& object) {
    MetricRow row;
    row.condition = object.at("condition").get<std::string>();
    row.mode = object.at("mode").get<std::string>();
    row.m = object.at("m").get<std::size_t>();
    row.subject = object.value("subject", std::string("pooled"));
    row.n = object.value("n", std::size_t{0});
    row.subjects = object.value("subjects", std::size_t{1});
    row.anchor_hit = object.value("anchor_hit", 0.0);
    row.anchor_all = object.value("anchor_all", 0.0);
    for (const auto& [k, v] : object.at("topk").items()) row.topk[std::stoul(k)] = v.get<double>();
    row.bleu = object.value("bleu", std::vector<double>{});
    row.rouge1 = object.value("rouge1_f1", 0.0);
    if (object.contains("greedy_f1") && !object["greedy_f1"].is_null()) row.greedy_f1 = object["greedy_f1"].get<double>();
    row.greedy_missing = object.value("greedy_f1_missing", std::size_t{0});
    if (object.contains("sd")) row.sd = object["sd"].get<std::map<std::string, double>>();
    return row;
}

EvalReport EvalReport::from_json(const json& object) {
    const int version = object.value("schema_version", 0);
    if (version != kSchemaVersion) {
        throw ValidationError("unsupported report schema version " + std::to_string(version));
    }
    EvalReport report;
    report.config = object.value("config", json::object());
    report.chance = object.value("chance", json::object());
    report.recovery = object.value("recovery", json::array());
    report.permutation = object.value("permutation", json::object());
    report.gaps = object.value("gaps", std::vector<std::string>{});
    for (const auto& row : object.at("rows")) report.rows.push_back(MetricRow::from_json(row));
    for (const auto& s : object.value("stats", json::array())) report.stats.push_back(TestResult::from_json(s));
    return report;
}

const MetricRow* EvalReport::find(const std::string& condition, const std::string& mode, std::size_t m,
                                  const std::string& subject) const {
    for (const auto& row : rows) {
        if (row.condition == condition && row.mode == mode && row.m == m && row.subject == subject) return &row;
    }
    return nullptr;
}

json EvalReport::to_json() const {
    json out = {{"schema_version", kSchemaVersion}, {"config", config}, {"chance", chance},
                {"recovery", recovery},             {"permutation", permutation}, {"gaps", gaps}};
    out["rows"] = json::array();
    for (const auto& row : rows) out["rows"].push_back(row.to_json());
    out["stats"] = json::array();
    for (const auto& s : stats) out["stats"].push_back(s.to_json());
    return out;
}

void EvalReport::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.json", std::ios::binary) << to_json().dump(2) << '\n';

    std::ofstream csv(dir / "metrics.csv", std::ios::binary);
    std::vector<std::size_t> ks;
    if (!rows.empty()) {
        for (const auto& [k, v] : rows.front().topk) ks.push_back(k);
    }
    csv << "condition,mode,m,subject,n,anchor_hit,anchor_all";
    for (std::size_t k : ks) csv << ",top" << k;
    const std::size_t orders = rows.empty() ? 0 : rows.front().bleu.size();
    for (std::size_t n = 1; n <= orders; ++n) csv << ",bleu" << n;
    csv << ",rouge1_f1,greedy_f1\n";
    for (const auto& row : rows) {
        csv << row.condition << ',' << row.mode << ',' << row.m << ',' << row.subject << ',' << row.n << ','
            << fmt::format("{:.6f},{:.6f}", row.anchor_hit, row.anchor_all);
        for (std::size_t k : ks) csv << fmt::format(",{:.6f}", row.topk.count(k) ? row.topk.at(k) : 0.0);
        for (double b : row.bleu) csv << fmt::format(",{:.6f}", b);
        csv << fmt::format(",{:.6f},", row.rouge1) << (row.greedy_f1 ? fmt::format("{:.6f}", *row.greedy_f1) : "")
            << '\n';
    }

    std::ofstream stats_csv(dir / "stats.csv", std::ios::binary);
    stats_csv << "name,test,statistic,df1,df2,p,p_corrected,correction\n";
    for (const auto& s : stats) {
        stats_csv << '"' << s.name << "\"," << s.test << ',' << fmt::format("{:.6g},{},{},{:.6g},{:.6g}", s.statistic,
                                                                            s.df1, s.df2, s.p, s.p_corrected)
                  << ',' << s.correction << '\n';
    }
}

void EvalReport::write_plot_data(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream topk(dir / "topk_curve.csv", std::ios::binary);
    topk << "condition,mode,m,k,accuracy\n";
    std::ofstream mcurve(dir / "m_curve.csv", std::ios::binary);
    mcurve << "condition,mode,m,top5,anchor_hit\n";
    for (const auto& row : rows) {
        if (row.subject != "pooled") continue;
        for (const auto& [k, v] : row.topk) {
            topk << row.condition << ',' << row.mode << ',' << row.m << ',' << k << ',' << fmt::format("{:.6f}", v)
                 << '\n';
        }
        const double top5 = row.topk.count(5) ? row.topk.at(5) : 0.0;
        mcurve << row.condition << ',' << row.mode << ',' << row.m << ',' << fmt::format("{:.6f},{:.6f}", top5, row.anchor_hit)
               << '\n';
    }
}

bool topk_monotone(const EvalReport& report) {
    for (const auto& row : report.rows) {
        double previous = -1.0;
        for (const auto& [k, v] : row.topk) {
            if (v < previous) return false;
            previous = v;
        }
    }
    return true;
}

namespace {

struct SentenceScore {
    std::optional<AnchorMetrics> anchors;
    std::size_t rank = 0;
    std::vector<double> bleu;
    double rouge1 = 0.0;
    std::optional<double> greedy;
};

using GroupKey = std::tuple<std::string, std::string, std::size_t>;

MetricRow aggregate(const std::vector<const SentenceScore*>& scores, const ScoreOptions& options) {
    MetricRow row;
    row.n = scores.size();
    std::vector<std::size_t> ranks;
    std::size_t anchored = 0;
    std::size_t greedy_count = 0;
    double greedy_sum = 0.0;
    row.bleu.assign(options.bleu_order, 0.0);
    for (const auto* s : scores) {
        ranks.push_back(s->rank);
        if (s->anchors) {
            ++anchored;
            row.anchor_hit += s->anchors->hit_fraction;
            row.anchor_all += s->anchors->all_grounded ? 1.0 : 0.0;
        }
        for (std::size_t i = 0; i < row.bleu.size(); ++i) row.bleu[i] += s->bleu[i];
        row.rouge1 += s->rouge1;
        if (s->greedy) {
            greedy_sum += *s->greedy;
            ++greedy_count;
        } else {
            ++row.greedy_missing;
        }
    }
    const auto n = static_cast<double>(std::max<std::size_t>(row.n, 1));
    if (anchored > 0) {
        row.anchor_hit /= static_cast<double>(anchored);
        row.anchor_all /= static_cast<double>(anchored);
    }
    for (double& b : row.bleu) b /= n;
    row.rouge1 /= n;
    if (options.word_bank != nullptr && greedy_count > 0) row.greedy_f1 = greedy_sum / static_cast<double>(greedy_count);
    row.topk = accuracy_at(ranks, options.ks);
    return row;
}

std::map<std::string, double> row_values(const MetricRow& row) {
    std::map<std::string, double> out{{"anchor_hit", row.anchor_hit}, {"anchor_all", row.anchor_all}, {"rouge1_f1", row.rouge1}};
    for (const auto& [k, v] : row.topk) out["top" + std::to_string(k)] = v;
    for (std::size_t i = 0; i < row.bleu.size(); ++i) out["bleu" + std::to_string(i + 1)] = row.bleu[i];
    if (row.greedy_f1) out["greedy_f1"] = *row.greedy_f1;
    return out;
}

/// Mean across subject rows, with SD.
MetricRow pool_subjects(const std::vector<MetricRow>& subject_rows) {
    MetricRow pooled = subject_rows.front();
    pooled.subject = "pooled";
    pooled.subjects = subject_rows.size();
    pooled.n = 0;
    pooled.greedy_missing = 0;
    for (const auto& r : subject_rows) {
        pooled.n += r.n;
        pooled.greedy_missing += r.greedy_missing;
    }
    if (subject_rows.size() == 1) return pooled;
    std::map<std::string, std::vector<double>> columns;
    for (const auto& r : subject_rows) {
        for (const auto& [name, value] : row_values(r)) columns[name].push_back(value);
    }
    pooled.anchor_hit = mean(columns["anchor_hit"]);
    pooled.anchor_all = mean(columns["anchor_all"]);
    pooled.rouge1 = mean(columns["rouge1_f1"]);
    for (auto& [k, v] : pooled.topk) v = mean(columns["top" + std::to_string(k)]);
    for (std::size_t i = 0; i < pooled.bleu.size(); ++i) pooled.bleu[i] = mean(columns["bleu" + std::to_string(i + 1)]);
    if (columns.count("greedy_f1") && columns["greedy_f1"].size() == subject_rows.size()) {
        pooled.greedy_f1 = mean(columns["greedy_f1"]);
    }
    for (const auto& [name, values] : columns) pooled.sd[name] = sample_sd(values);
    return pooled;
}

void add_statistics(EvalReport& report, const std::vector<std::string>& subjects) {
    if (subjects.size() < 2) {
        report.gaps.push_back("statistics skipped: need at least 2 subjects, have " + std::to_string(subjects.size()));
        return;
    }
    std::set<std::pair<std::string, std::size_t>> mode_m;
    for (const auto& row : report.rows) mode_m.emplace(row.mode, row.m);
    auto top5 = [&](const std::string& condition, const std::string& mode, std::size_t m,
                    const std::string& subject) -> std::optional<double> {
        const auto* row = report.find(condition, mode, m, subject);
        if (row == nullptr || !row->topk.count(5)) return std::nullopt;
        return row->topk.at(5);
    };
    auto column = [&](const std::string& condition, const std::string& mode, std::size_t m) {
        std::vector<double> values;
        for (const auto& s : subjects) {
            auto v = top5(condition, mode, m, s);
            if (!v) return std::vector<double>{};
            values.push_back(*v);
        }
        return values;
    };
    for (const auto& [mode, m] : mode_m) {
        const std::string tag = fmt::format("top5 {} m={}", mode, m);
        std::vector<std::string> present;
        std::vector<std::vector<double>> columns;
        for (const char* c : {"random", "ordered", "oracle"}) {
            auto col = column(c, mode, m);
            if (!col.empty()) {
                present.push_back(c);
                columns.push_back(col);
            }
        }
        if (present.size() >= 2) {
            std::vector<std::vector<double>> data(subjects.size());
            for (std::size_t i = 0; i < subjects.size(); ++i) {
                for (const auto& col : columns) data[i].push_back(col[i]);
            }
            auto anova = rm_anova(data);
            anova.name = "conditions " + tag;
            report.stats.push_back(anova);
        }
        std::vector<TestResult> family;
        const auto ordered = column("ordered", mode, m);
        for (const char* other : {"random", "oracle"}) {
            const auto col = column(other, mode, m);
            if (ordered.empty() || col.empty()) continue;
            auto t = paired_t_test(ordered, col);
            t.name = fmt::format("ordered vs {} {}", other, tag);
            family.push_back(t);
        }
        apply_bonferroni(family);
        report.stats.insert(report.stats.end(), family.begin(), family.end());
    }
    std::set<std::pair<std::string, std::size_t>> condition_m;
    for (const auto& row : report.rows) condition_m.emplace(row.condition, row.m);
    for (const auto& [condition, m] : condition_m) {
        std::vector<std::vector<double>> cells(subjects.size());
        bool complete = true;
        for (const char* mode : {"naive", "rag", "cot", "cot_rag"}) {
            const auto col = column(condition, mode, m);
            if (col.empty()) {
                complete = false;
                break;
            }
            for (std::size_t i = 0; i < subjects.size(); ++i) cells[i].push_back(col[i]);
        }
        if (!complete) continue;
        auto result = two_by_two(cells, fmt::format("CoT ({} m={})", condition, m), fmt::format("RAG ({} m={})", condition, m));
        std::vector<TestResult> family{result.factor_a, result.factor_b, result.interaction};
        apply_bonferroni(family);
        report.stats.insert(report.stats.end(), family.begin(), family.end());
    }
}

} // namespace

EvalReport score_records(const std::vector<ReconstructionRecord>& records, const SentenceMap& sentences,
                         const std::map<Task, SentencePool>& pools, const SentenceEmbedder& embedder,
                         const ScoreOptions& options) {
    EvalReport report;
    EmbeddingCache cache(embedder);
    std::vector<SentenceScore> scores(records.size());
    std::map<GroupKey, std::map<std::string, std::vector<const SentenceScore*>>> groups;
    std::set<std::string> all_subjects;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& record = records[i];
        const auto& sentence = sentences.at(record.sentence_id);
        auto pool_it = pools.find(sentence.task);
        if (pool_it == pools.end()) throw ValidationError("no sentence pool for task " + to_string(sentence.task));
        const SentencePool& pool = pool_it->second;
        auto& score = scores[i];
        if (!record.anchors.empty()) score.anchors = anchor_metrics(record.anchors, sentence);
        score.rank = retrieval_ranks({record.output}, {record.sentence_id}, pool, cache).front();
        const auto hyp = metric_tokens(record.output);
        const auto ref = metric_tokens(sentence.text);
        score.bleu = bleu(hyp, ref, options.bleu_order);
        score.rouge1 = rouge1_f1(hyp, ref);
        if (options.word_bank != nullptr) score.greedy = embedding_greedy_f1(hyp, ref, *options.word_bank).f1;
        groups[{record.condition, to_string(record.mode), record.m}][record.subject_id].push_back(&score);
        all_subjects.insert(record.subject_id);
    }
    for (const auto& [key, by_subject] : groups) {
        std::vector<MetricRow> subject_rows;
        for (const auto& [subject, list] : by_subject) {
            MetricRow row = aggregate(list, options);
            std::tie(row.condition, row.mode, row.m) = key;
            row.subject = subject;
            subject_rows.push_back(row);
        }
        if (by_subject.size() != all_subjects.size()) {
            report.gaps.push_back(fmt::format("{} {} m={}: only {} of {} subjects present", std::get<0>(key),
                                              std::get<1>(key), std::get<2>(key), by_subject.size(),
                                              all_subjects.size()));
        }
        if (subject_rows.size() > 1 || subject_rows.front().subject != "pooled") {
            report.rows.insert(report.rows.end(), subject_rows.begin(), subject_rows.end());
        }
        report.rows.push_back(pool_subjects(subject_rows));
    }

    for (const auto& [task, pool] : pools) {
        json levels = json::object();
        for (std::size_t k : options.ks) {
            levels[std::to_string(k)] = std::min(1.0, static_cast<double>(k) / static_cast<double>(pool.size()));
        }
        report.chance[to_string(task)] = {{"pool_size", pool.size()}, {"topk", levels}};
    }

    std::set<std::pair<std::string, std::size_t>> mode_m;
    for (const auto& row : report.rows) mode_m.emplace(row.mode, row.m);
    for (const auto& [mode, m] : mode_m) {
        const auto* oracle = report.find("oracle", mode, m);
        const auto* ordered = report.find("ordered", mode, m);
        const auto* random = report.find("random", mode, m);
        if (oracle == nullptr || !oracle->topk.count(5)) continue;
        json entry = {{"mode", mode}, {"m", m}, {"oracle_top5", oracle->topk.at(5)}};
        const double base = oracle->topk.at(5);
        for (const auto* row : {ordered, random}) {
            if (row == nullptr) continue;
            const double v = row->topk.at(5);
            entry[row->condition + "_top5"] = v;
            entry[row->condition + "_delta_from_oracle"] = v - base;
            entry[row->condition + "_recovery"] = base > 0.0 ? json(v / base) : json(nullptr);
        }
        report.recovery.push_back(entry);
    }

    std::vector<std::string> subjects(all_subjects.begin(), all_subjects.end());
    add_statistics(report, subjects);
    report.config["ks"] = options.ks;
    report.config["bleu_order"] = options.bleu_order;
    report.config["embedder"] = embedder.name();
    report.config["greedy_f1"] = options.word_bank != nullptr ? "static word-bank greedy match (not BERTScore)" : "off";
    return report;
}

std::vector<ReconstructionRequest> build_condition_requests(const SentenceMap& sentences,
                                                            const std::vector<SamplePredictions>& decoded,
                                                            const std::vector<std::string>& keywords,
                                                            const SuiteOptions& options,
                                                            std::vector<std::string>* gaps) {
    const std::set<std::string> vocabulary(keywords.begin(), keywords.end());
    std::vector<ReconstructionRequest> requests;
    std::size_t missing = 0;
    for (std::size_t s = 0; s < decoded.size(); ++s) {
        const auto& sample = decoded[s];
        const auto& sentence = sentences.at(sample.sentence_id);
        for (std::size_t m : options.ms) {
            for (auto kind : options.conditions) {
                std::vector<std::string> anchors;
                if (kind == AnchorKind::Ordered) {
                    for (const auto& entry : select_anchors(sample.segments, keywords, m)) anchors.push_back(entry.keyword);
                } else if (kind == AnchorKind::Oracle) {
                    anchors = oracle_anchors(sentence, vocabulary, m);
                } else {
                    Rng rng(derive_seed(derive_seed(options.seed, s), m));
                    anchors = random_anchors(keywords, m, rng);
                }
                if (anchors.empty()) {
                    ++missing;
                    continue;
                }
                for (auto mode : options.modes) {
                    requests.push_back({sample.sentence_id, sample.subject_id, to_string(kind), m, anchors, mode});
                }
            }
        }
    }
    if (missing > 0 && gaps != nullptr) {
        gaps->push_back(std::to_string(missing) + " (sample, m, condition) cells had no anchors and were skipped");
    }
    return requests;
}

EvalReport run_condition_suite(const SentenceMap& sentences, const std::vector<SamplePredictions>& decoded,
                               const std::vector<std::string>& keywords,
                               const std::map<Task, const Reconstructor*>& reconstructors,
                               const std::map<Task, SentencePool>& pools, const SentenceEmbedder& embedder,
                               const SuiteOptions& options, std::vector<ReconstructionRecord>* records_out) {
    std::vector<std::string> gaps;
    const auto requests = build_condition_requests(sentences, decoded, keywords, options, &gaps);
    std::map<Task, std::vector<std::size_t>> by_task;
    for (std::size_t i = 0; i < requests.size(); ++i) by_task[sentences.at(requests[i].sentence_id).task].push_back(i);
    std::vector<ReconstructionRecord> records(requests.size());
    for (const auto& [task, indices] : by_task) {
        auto it = reconstructors.find(task);
        if (it == reconstructors.end() || it->second == nullptr) {
            throw ConfigError("no reconstructor for task " + to_string(task));
        }
        std::vector<ReconstructionRequest> batch;
        for (std::size_t i : indices) batch.push_back(requests[i]);
        auto done = it->second->reconstruct_all(batch);
        for (std::size_t j = 0; j < indices.size(); ++j) records[indices[j]] = std::move(done[j]);
    }
    EvalReport report = score_records(records, sentences, pools, embedder, options.score);
    report.gaps.insert(report.gaps.begin(), gaps.begin(), gaps.end());
    json conditions = json::array();
    for (auto c : options.conditions) conditions.push_back(to_string(c));
    json modes = json::array();
    for (auto m : options.modes) modes.push_back(to_string(m));
    report.config["conditions"] = conditions;
    report.config["modes"] = modes;
    report.config["ms"] = options.ms;
    report.config["seed"] = options.seed;
    report.config["V"] = keywords.size();
    report.config["prng"] = std::string(Rng::kName);
    if (!reconstructors.empty()) {
        const auto* any = reconstructors.begin()->second;
        report.config["template_id"] = any->templates().id;
        report.config["retrieval_k"] = any->options().k;
        report.config["generation"] = any->options().params.to_json();
        report.config["reconstructor"] = any->remote() ? "remote" : "fallback";
    }
    if (records_out != nullptr) *records_out = std::move(records);
    return report;
}

json anchor_permutation(const std::vector<ReconstructionRecord>& records, const SentenceMap& sentences,
                        const std::map<Task, SentencePool>& pools, const SentenceEmbedder& embedder,
                        const PermutationOptions& options) {
    std::map<Task, std::pair<std::vector<std::string>, std::vector<std::string>>> by_task;
    for (const auto& record : records) {
        if (record.condition != options.condition || record.mode != options.mode || record.m != options.m) continue;
        auto& [outputs, truth] = by_task[sentences.at(record.sentence_id).task];
        outputs.push_back(record.output);
        truth.push_back(record.sentence_id);
    }
    if (by_task.empty()) {
        throw ValidationError(fmt::format("no records for {} {} m={}", options.condition, to_string(options.mode),
                                          options.m));
    }
    EmbeddingCache cache(embedder);
    json out = json::object();
    for (const auto& [task, pair] : by_task) {
        const auto& [outputs, truth] = pair;
        auto pool_it = pools.find(task);
        if (pool_it == pools.end()) throw ValidationError("no sentence pool for task " + to_string(task));
        const auto& pool = pool_it->second;
        const auto result = permutation_test(hit_matrix(outputs, truth, pool, cache, options.k), options.n_perm,
                                             derive_seed(options.seed, 0));
        json entry = result.to_json();
        entry["condition"] = options.condition;
        entry["mode"] = to_string(options.mode);
        entry["m"] = options.m;
        entry["k"] = options.k;
        entry["n"] = outputs.size();
        if (options.control_repeats > 0) {
            std::vector<double> ps;
            for (std::size_t rep = 0; rep < options.control_repeats; ++rep) {
                auto shuffled = outputs;
                Rng rng(derive_seed(options.seed, 2 * rep + 1));
                rng.shuffle(shuffled);
                const auto control = permutation_test(hit_matrix(shuffled, truth, pool, cache, options.k),
                                                      options.n_perm, derive_seed(options.seed, 2 * rep + 2));
                ps.push_back(control.p);
            }
            entry["control"] = {{"repeats", ps.size()}, {"p_values", ps}, {"mean_p", mean(ps)}};
        }
        out[to_string(task)] = entry;
    }
    return out;
}

json predictions_to_json(const SamplePredictions& predictions) {
    json segments = json::array();
    for (const auto& s : predictions.segments) {
        segments.push_back({{"position", s.position}, {"keyword_id", s.keyword_id}, {"confidence", s.confidence}});
    }
    return {{"sentence_id", predictions.sentence_id}, {"subject_id", predictions.subject_id}, {"segments", segments}};
}

SamplePredictions predictions_from_json(const json& object) {
    SamplePredictions out;
    out.sentence_id = object.at("sentence_id").get<std::string>();
    out.subject_id = object.at("subject_id").get<std::string>();
    for (const auto& s : object.at("segments")) {
        out.segments.push_back(
            {s.at("position").get<std::size_t>(), s.at("keyword_id").get<std::size_t>(), s.at("confidence").get<double>()});
    }
    return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<SamplePredictions>& predictions) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    for (const auto& p : predictions) out << predictions_to_json(p).dump() << '\n';
}

std::vector<SamplePredictions> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open predictions file " + path.string());
    std::vector<SamplePredictions> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        try {
            out.push_back(predictions_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(number) + ": " + e.what());
        }
    }
    return out;
}

} // namespace anchorlab
