#pragma once

#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "kgqg/model.hpp"
#include "kgqg/training.hpp"

namespace kgqg {

/// Everything a run needs: paths, model shape, ablation switches and
/// training hyperparameters. Defaults follow the WQ setup; --dataset pq
/// switches the dataset-specific values.
struct RunConfig {
    // paths
    std::string train_path;
    std::string dev_path;
    std::string test_path;
    std::string out_dir = "out";
    std::string embeddings_path;
    std::string kg_table_path;
    std::string init_checkpoint;
    std::string dataset; // "", "wq", "pq"

    // model
    int word_dim = 300;
    int lstm_hidden = 150;
    int markup_dim = 32;
    int hidden = 300;
    int attn_dim = 300;
    int hops = 4;
    std::string variant = "g2s-levi";  // g2s-levi | g2s-edge
    std::string direction = "bi";      // bi | fwd | bwd
    std::string node_init = "word";    // word | kg-table
    bool use_copy = true;
    bool use_markup = true;
    bool input_feed = true;
    bool beam_mean_norm = true;
    double dropout_embed = 0.4;
    double dropout_rnn = 0.3;

    // training
    int stage = 1;
    double lr = 1e-3;
    double rl_lr = 1e-5;
    int batch_size = 30;
    double grad_clip = 10.0;
    double label_smoothing = 0.2;
    double tf_init = 0.8;
    double tf_decay = 0.9999;
    double gamma = 0.02;
    double reward_bleu = 1.0;
    double reward_rouge = 0.02;
    double lr_reduce_factor = 0.5;
    int lr_patience = 3;
    int early_stop_patience = 10;
    int beam_width = 5;
    int max_epochs = 100;
    int max_decode_len = 40;
    long min_freq = 3;
    std::uint64_t seed = 42;

    void apply_dataset_preset(const std::string &name) {
        dataset = name;
        if (name == "wq") {
            markup_dim = 32;
            gamma = 0.02;
            rl_lr = 1e-5;
        } else if (name == "pq") {
            markup_dim = 24;
            gamma = 0.07;
            rl_lr = 2e-5;
        } else if (!name.empty()) {
            fail("unknown dataset preset '", name, "' (expected wq or pq)");
        }
    }

    /// KGQG_OUT_DIR overrides the output directory when set.
    void apply_env() {
        if (const char *env = std::getenv("KGQG_OUT_DIR"); env && *env) out_dir = env;
    }

    void validate() const {
        require(variant == "g2s-levi" || variant == "g2s-edge",
                "variant must be g2s-levi or g2s-edge, got '", variant, "'");
        require(direction == "bi" || direction == "fwd" || direction == "bwd",
                "direction must be bi, fwd or bwd, got '", direction, "'");
        require(node_init == "word" || node_init == "kg-table",
                "node_init must be word or kg-table, got '", node_init, "'");
        require(node_init != "kg-table" || !kg_table_path.empty(),
                "node_init kg-table requires --kg-table");
        require(stage == 1 || stage == 2, "stage must be 1 or 2");
        require(gamma >= 0.0 && gamma <= 1.0, "gamma must be in [0, 1]");
        require(hops >= 1, "hops must be >= 1");
        require(beam_width >= 1, "beam width must be >= 1");
        require(batch_size >= 1, "batch size must be >= 1");
    }

    template <typename F>
    ModelConfig<F> model_config(int kg_dim = 0) const {
        ModelConfig<F> m;
        m.word_dim = word_dim;
        m.lstm_hidden = lstm_hidden;
        m.markup_dim = markup_dim;
        m.hidden = hidden;
        m.attn_dim = attn_dim;
        m.hops = hops;
        m.edge_mode = variant == "g2s-edge";
        m.direction = direction == "bi"    ? EncoderDirection::Bidirectional
                      : direction == "fwd" ? EncoderDirection::Forward
                                           : EncoderDirection::Backward;
        m.node_init = node_init == "kg-table" ? NodeInitMode::KgTable : NodeInitMode::Word;
        m.kg_dim = kg_dim;
        m.use_copy = use_copy;
        m.use_markup = use_markup;
        m.input_feed = input_feed;
        m.beam_mean_norm = beam_mean_norm;
        m.dropout_embed = static_cast<F>(dropout_embed);
        m.dropout_rnn = static_cast<F>(dropout_rnn);
        return m;
    }

    template <typename F>
    TrainConfig<F> train_config() const {
        TrainConfig<F> t;
        t.stage = stage;
        t.lr = lr;
        t.rl_lr = rl_lr;
        t.batch_size = batch_size;
        t.grad_clip = grad_clip;
        t.label_smoothing = label_smoothing;
        t.tf_init = tf_init;
        t.tf_decay = tf_decay;
        t.gamma = gamma;
        t.reward_bleu = reward_bleu;
        t.reward_rouge = reward_rouge;
        t.lr_reduce_factor = lr_reduce_factor;
        t.lr_patience = lr_patience;
        t.early_stop_patience = early_stop_patience;
        t.beam_width = beam_width;
        t.max_epochs = max_epochs;
        t.max_decode_len = max_decode_len;
        t.seed = seed;
        t.checkpoint_dir = out_dir;
        return t;
    }

    /// Merge fields present in a JSON config file (missing keys keep their
    /// current values).
    void merge_json(const nlohmann::json &j) {
        auto get = [&](const char *key, auto &field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("train_path", train_path);
        get("dev_path", dev_path);
        get("test_path", test_path);
        get("out_dir", out_dir);
        get("embeddings_path", embeddings_path);
        get("kg_table_path", kg_table_path);
        get("init_checkpoint", init_checkpoint);
        get("word_dim", word_dim);
        get("lstm_hidden", lstm_hidden);
        get("markup_dim", markup_dim);
        get("hidden", hidden);
        get("attn_dim", attn_dim);
        get("hops", hops);
        get("variant", variant);
        get("direction", direction);
        get("node_init", node_init);
        get("use_copy", use_copy);
        get("use_answer_markup", use_markup);
        get("input_feed", input_feed);
        get("beam_length_norm", beam_mean_norm);
        get("dropout_embed", dropout_embed);
        get("dropout_rnn", dropout_rnn);
        get("stage", stage);
        get("lr", lr);
        get("rl_lr", rl_lr);
        get("batch_size", batch_size);
        get("grad_clip", grad_clip);
        get("label_smoothing", label_smoothing);
        get("tf_init", tf_init);
        get("tf_decay", tf_decay);
        get("gamma", gamma);
        get("reward_bleu", reward_bleu);
        get("reward_rouge", reward_rouge);
        get("lr_reduce_factor", lr_reduce_factor);
        get("lr_patience", lr_patience);
        get("early_stop_patience", early_stop_patience);
        get("beam_width", beam_width);
        get("max_epochs", max_epochs);
        get("max_decode_len", max_decode_len);
        get("min_freq", min_freq);
        get("seed", seed);
    }

    void merge_file(const std::string &path) {
        std::ifstream is(path);
        require(bool(is), "cannot open config file ", path);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception &e) {
            fail("config file ", path, " is not valid JSON: ", e.what());
        }
        merge_json(j);
    }
};

} // namespace kgqg
