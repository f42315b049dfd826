#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgqg/config.hpp"
#include "kgqg/dataset.hpp"
#include "kgqg/metrics.hpp"
#include "kgqg/model.hpp"
#include "kgqg/training.hpp"

namespace kgqg::cli {

namespace fs = std::filesystem;
using Float = float; // training precision; the gradient-check harness templates on double

inline void write_atomic(const std::string &path, const std::string &content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        require(bool(os), "cannot write ", tmp);
        os << content;
    }
    fs::rename(tmp, path);
}

inline std::uint64_t file_hash(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), "cannot open ", path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (is.read(buf, sizeof buf) || is.gcount() > 0)
        h = fnv1a_bytes(buf, static_cast<std::size_t>(is.gcount()), h);
    return h;
}

// --- preprocess ---

inline nlohmann::json graph_cache_entry(const QGExample &ex) {
    LeviGraph levi = to_levi(ex.graph);
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto &n : levi.nodes)
        nodes.push_back({{"text", n.text},
                         {"kind", n.kind == NodeKind::Entity ? "entity" : "predicate"},
                         {"answer", n.is_answer}});
    nlohmann::json edges = nlohmann::json::array();
    for (auto [f, t] : levi.edges) edges.push_back({f, t});
    return {{"id", ex.id},
            {"n", ex.graph.entities.size()},
            {"m", ex.graph.edges.size()},
            {"nodes", nodes},
            {"edges", edges}};
}

inline nlohmann::json target_cache_entry(const QGExample &ex, const Vocabulary &vocab) {
    auto target = align_copy_targets(ex, vocab);
    nlohmann::json steps = nlohmann::json::array();
    for (const auto &s : target.steps)
        steps.push_back({{"k", s.kind == CopyAlignedTarget::Kind::Copy ? "c" : "g"},
                         {"v", s.value}});
    return {{"id", ex.id}, {"steps", steps}, {"surface", join(target.surface)}};
}

/// Builds the vocabulary from the training split and caches Levi graphs and
/// copy-aligned targets for every provided split. Re-running with unchanged
/// inputs is a no-op (content hash kept in manifest.json).
inline int cmd_preprocess(const RunConfig &cfg) {
    require(!cfg.train_path.empty(), "preprocess requires --train");
    require(fs::exists(cfg.train_path), "corpus file not found: ", cfg.train_path);
    std::vector<std::pair<std::string, std::string>> splits = {{"train", cfg.train_path}};
    if (!cfg.dev_path.empty()) splits.emplace_back("dev", cfg.dev_path);
    if (!cfg.test_path.empty()) splits.emplace_back("test", cfg.test_path);
    for (const auto &[name, path] : splits)
        require(fs::exists(path), "corpus file not found: ", path);

    std::uint64_t input_hash = fnv1a(std::to_string(cfg.min_freq));
    for (const auto &[name, path] : splits) {
        input_hash = fnv1a(name, input_hash);
        std::uint64_t fh = file_hash(path);
        input_hash = fnv1a_bytes(&fh, sizeof fh, input_hash);
    }

    fs::create_directories(cfg.out_dir);
    std::string manifest_path = cfg.out_dir + "/manifest.json";
    if (fs::exists(manifest_path)) {
        std::ifstream is(manifest_path);
        nlohmann::json m;
        is >> m;
        if (m.value("input_hash", std::uint64_t(0)) == input_hash) {
            std::cout << "preprocess: inputs unchanged, nothing to do\n";
            return 0;
        }
    }

    auto train = load_corpus(cfg.train_path, "train");
    Vocabulary vocab = build_vocab(train, cfg.min_freq);
    vocab.save(cfg.out_dir + "/vocab.txt");

    nlohmann::json counts;
    for (const auto &[name, path] : splits) {
        auto examples = name == "train" ? train : load_corpus(path, name);
        std::ostringstream graphs, targets;
        for (const auto &ex : examples) {
            graphs << graph_cache_entry(ex).dump() << "\n";
            targets << target_cache_entry(ex, vocab).dump() << "\n";
        }
        write_atomic(cfg.out_dir + "/" + name + ".graphs.jsonl", graphs.str());
        write_atomic(cfg.out_dir + "/" + name + ".targets.jsonl", targets.str());
        counts[name] = examples.size();
    }

    nlohmann::json manifest = {{"input_hash", input_hash},
                               {"min_freq", cfg.min_freq},
                               {"vocab_size", vocab.size()},
                               {"examples", counts}};
    write_atomic(manifest_path, manifest.dump(2) + "\n");
    std::cout << "preprocess: vocab " << vocab.size() << " tokens, splits cached to "
              << cfg.out_dir << "\n";
    return 0;
}

// --- shared model construction ---

inline Vocabulary load_run_vocab(const RunConfig &cfg) {
    std::string path = cfg.out_dir + "/vocab.txt";
    require(fs::exists(path), "no vocabulary at ", path, "; run preprocess first");
    return Vocabulary::load(path);
}

template <typename F>
Graph2Seq<F> build_model(const RunConfig &cfg, const Vocabulary &vocab) {
    int kg_dim = 0;
    KGEmbeddingTable<F> table;
    if (cfg.node_init == "kg-table") {
        table = KGEmbeddingTable<F>::load(cfg.kg_table_path);
        kg_dim = table.dim;
    }
    Graph2Seq<F> model(vocab, cfg.model_config<F>(kg_dim), cfg.seed);
    if (kg_dim > 0) model.set_kg_table(std::move(table));
    return model;
}

template <typename F>
void maybe_load_embeddings(Graph2Seq<F> &model, const RunConfig &cfg, const Vocabulary &vocab,
                           const std::vector<QGExample> &train) {
    if (cfg.embeddings_path.empty()) return;
    auto freq = token_frequencies(train);
    model.embed().words.load_pretrained(cfg.embeddings_path, vocab, freq);
}

// --- train ---

inline int cmd_train(RunConfig cfg) {
    cfg.validate();
    require(!cfg.train_path.empty() && !cfg.dev_path.empty(),
            "train requires --train and --dev");
    require(cfg.stage != 2 || !cfg.init_checkpoint.empty(),
            "stage 2 requires --init-checkpoint with a stage-1 checkpoint");
    Vocabulary vocab = load_run_vocab(cfg);
    auto train = load_corpus(cfg.train_path, "train");
    auto dev = load_corpus(cfg.dev_path, "dev");
    auto model = build_model<Float>(cfg, vocab);
    maybe_load_embeddings(model, cfg, vocab, train);

    Trainer<Float> trainer(model, cfg.train_config<Float>());
    if (cfg.stage == 2) {
        CheckpointMeta meta = load_checkpoint(cfg.init_checkpoint, model);
        trainer.optimizer().set_step_count(meta.adam_steps);
        trainer.set_global_step(meta.adam_steps);
        std::cout << "loaded stage-1 checkpoint " << cfg.init_checkpoint << " (epoch "
                  << meta.epoch << ", dev BLEU-4 " << meta.best_dev_bleu4 * 100 << ")\n";
    }

    fs::create_directories(cfg.out_dir);
    std::string log_path = cfg.out_dir + "/train.stage" + std::to_string(cfg.stage) + ".log.jsonl";
    std::ofstream log(log_path);
    require(bool(log), "cannot write ", log_path);
    auto result = trainer.fit(train, dev, [&](const Trainer<Float>::EpochStats &s) {
        nlohmann::json line = {{"epoch", s.epoch},       {"stage", s.stage},
                               {"loss", s.mean_loss},    {"dev_bleu4", s.dev_bleu4},
                               {"lr", s.lr},             {"improved", s.improved},
                               {"seconds", s.seconds}};
        log << line.dump() << "\n";
        log.flush();
        std::cout << "epoch " << s.epoch << " loss " << s.mean_loss << " dev BLEU-4 "
                  << s.dev_bleu4 * 100 << (s.improved ? " *" : "") << "\n";
    });
    std::cout << "best dev BLEU-4 " << result.best_dev_bleu4 * 100 << " at epoch "
              << result.best_epoch << "; checkpoints in " << cfg.out_dir << "\n";
    return 0;
}

// --- generate ---

inline int cmd_generate(RunConfig cfg, const std::string &checkpoint,
                        const std::string &corpus_path, int beam_width,
                        const std::string &out_path) {
    cfg.validate();
    require(fs::exists(checkpoint), "checkpoint not found: ", checkpoint);
    require(fs::exists(corpus_path), "corpus file not found: ", corpus_path);
    Vocabulary vocab = load_run_vocab(cfg);
    auto model = build_model<Float>(cfg, vocab);
    load_checkpoint(checkpoint, model); // refuses on config-hash mismatch
    auto examples = load_corpus(corpus_path, "eval");
    std::ostringstream out;
    for (const auto &ex : examples) {
        auto prep = model.prepare(ex);
        std::vector<std::string> tokens;
        if (beam_width <= 1)
            tokens = model.greedy_decode(prep, cfg.max_decode_len);
        else
            tokens = model.beam_decode(prep, beam_width, cfg.max_decode_len).tokens;
        nlohmann::json line = {
            {"id", ex.id}, {"prediction", join(tokens)}, {"gold", join(ex.question)}};
        out << line.dump() << "\n";
    }
    write_atomic(out_path, out.str());
    std::cout << "wrote " << examples.size() << " predictions to " << out_path << "\n";
    return 0;
}

// --- evaluate ---

struct PredictionFile {
    std::vector<std::string> ids;
    std::vector<std::vector<std::string>> predictions;
    std::vector<std::vector<std::string>> golds;
};

inline PredictionFile read_predictions(const std::string &path) {
    std::ifstream is(path);
    require(bool(is), "cannot open predictions file ", path);
    PredictionFile pf;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception &e) {
            fail(path, " line ", lineno, ": malformed JSON: ", e.what());
        }
        require(j.contains("id") && j.contains("prediction") && j.contains("gold"),
                path, " line ", lineno, ": expected id/prediction/gold");
        pf.ids.push_back(j["id"].get<std::string>());
        pf.predictions.push_back(tokenize(j["prediction"].get<std::string>()));
        pf.golds.push_back(tokenize(j["gold"].get<std::string>()));
    }
    require(!pf.ids.empty(), "predictions file ", path, " is empty");
    return pf;
}

/// Prints corpus metrics scaled by 100. With a corpus given, the id sets
/// must match exactly.
inline int cmd_evaluate(const std::string &predictions_path, const std::string &corpus_path,
                        bool table) {
    PredictionFile pf = read_predictions(predictions_path);
    if (!corpus_path.empty()) {
        auto corpus = load_corpus(corpus_path, "eval");
        std::map<std::string, bool> corpus_ids, seen;
        for (const auto &ex : corpus) corpus_ids[ex.id] = true;
        std::vector<std::string> unknown, missing;
        for (const auto &id : pf.ids) {
            seen[id] = true;
            if (!corpus_ids.count(id)) unknown.push_back(id);
        }
        for (const auto &[id, _] : corpus_ids)
            if (!seen.count(id)) missing.push_back(id);
        if (!unknown.empty() || !missing.empty())
            fail("prediction/corpus id mismatch; unknown: [", join(unknown, ", "),
                 "], missing: [", join(missing, ", "), "]");
    }
    // empty predictions still count as examples (score 0)
    auto report = metrics::evaluate_corpus(pf.predictions, pf.golds);
    nlohmann::json out = {{"bleu4", report.bleu4 * 100},
                          {"rouge_l", report.rouge_l * 100},
                          {"meteor_simplified", report.meteor_simplified * 100},
                          {"n_examples", pf.ids.size()}};
    std::cout << out.dump() << "\n";
    if (table) {
        std::printf("%-10s %-8s %-18s %-8s\n", "", "BLEU-4", "METEOR(simplified)", "ROUGE-L");
        std::printf("%-10s %-8.2f %-18.2f %-8.2f\n", "corpus", report.bleu4 * 100,
                    report.meteor_simplified * 100, report.rouge_l * 100);
    }
    return 0;
}

// --- analyze ---

using TrigramCounts = std::map<std::array<std::string, 3>, long>;

/// Counts first-three-token prefixes; predictions shorter than three tokens
/// are excluded, prefixes rarer than min_freq dropped.
inline TrigramCounts trigram_prefix_counts(const std::vector<std::vector<std::string>> &questions,
                                           long min_freq) {
    TrigramCounts counts;
    for (const auto &q : questions)
        if (q.size() >= 3) ++counts[{q[0], q[1], q[2]}];
    for (auto it = counts.begin(); it != counts.end();)
        it = it->second < min_freq ? counts.erase(it) : std::next(it);
    return counts;
}

inline int cmd_analyze(const std::string &predictions_path, long top_k, long min_freq,
                       const std::string &csv_path, bool use_gold) {
    PredictionFile pf = read_predictions(predictions_path);
    auto counts = trigram_prefix_counts(use_gold ? pf.golds : pf.predictions, min_freq);
    std::vector<std::pair<std::array<std::string, 3>, long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto &a, const auto &b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (top_k > 0 && static_cast<long>(ranked.size()) > top_k)
        ranked.resize(static_cast<std::size_t>(top_k));

    // token1 -> token2 -> token3 -> count, sunburst-style hierarchy
    nlohmann::json tree = nlohmann::json::object();
    long covered = 0;
    for (const auto &[gram, n] : ranked) {
        tree[gram[0]][gram[1]][gram[2]] = n;
        covered += n;
    }
    nlohmann::json out = {{"n_questions", use_gold ? pf.golds.size() : pf.predictions.size()},
                          {"min_freq", min_freq},
                          {"prefixes", tree},
                          {"covered", covered}};
    std::cout << out.dump(2) << "\n";
    if (!csv_path.empty()) {
        std::ostringstream csv;
        csv << "token1,token2,token3,count\n";
        for (const auto &[gram, n] : ranked)
            csv << gram[0] << ',' << gram[1] << ',' << gram[2] << ',' << n << "\n";
        write_atomic(csv_path, csv.str());
    }
    return 0;
}

// --- report ---

/// Summarizes a training log: per-epoch dev BLEU-4 and the best epoch,
/// enough to plot convergence.
inline int cmd_report(const std::string &log_path) {
    std::ifstream is(log_path);
    require(bool(is), "cannot open training log ", log_path);
    std::string line;
    int best_epoch = 0;
    double best = -1;
    std::printf("%-7s %-12s %-12s %-10s\n", "epoch", "loss", "dev BLEU-4", "lr");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        double bleu = j.at("dev_bleu4").get<double>();
        int epoch = j.at("epoch").get<int>();
        std::printf("%-7d %-12.4f %-12.2f %-10.6f\n", epoch, j.at("loss").get<double>(),
                    bleu * 100, j.at("lr").get<double>());
        if (bleu > best) {
            best = bleu;
            best_epoch = epoch;
        }
    }
    require(best_epoch > 0, "training log ", log_path, " has no epochs");
    std::printf("best dev BLEU-4 %.2f at epoch %d\n", best * 100, best_epoch);
    return 0;
}

// --- dot ---

inline int cmd_dot(const std::string &corpus_path, const std::string &example_id) {
    auto examples = load_corpus(corpus_path, "eval");
    for (const auto &ex : examples) {
        if (example_id.empty() || ex.id == example_id) {
            std::cout << to_dot(to_levi(ex.graph));
            return 0;
        }
    }
    fail("no example with id '", example_id, "' in ", corpus_path);
}

} // namespace kgqg::cli
