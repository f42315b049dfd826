#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kgqg/cli.hpp"

namespace {

using kgqg::RunConfig;

/// Common options bound to staging variables; after parsing, values set on
/// the command line are applied over the preset and config-file values
/// (precedence: CLI > file > --dataset preset > defaults).
struct CommonOpts {
    RunConfig staged; // parse target
    std::string config_file;
    std::string dataset;
    std::vector<std::pair<CLI::Option *, std::function<void(RunConfig &, const RunConfig &)>>> applies;

    void add(CLI::App *app) {
        staged = RunConfig{};
        app->add_option("--config", config_file, "JSON config file");
        app->add_option("--dataset", dataset, "dataset preset: wq or pq")
            ->check(CLI::IsMember({"wq", "pq"}));
        bind(app->add_option("--train", staged.train_path, "training corpus (JSON lines)"),
             [](RunConfig &c, const RunConfig &s) { c.train_path = s.train_path; });
        bind(app->add_option("--dev", staged.dev_path, "dev corpus"),
             [](RunConfig &c, const RunConfig &s) { c.dev_path = s.dev_path; });
        bind(app->add_option("--test", staged.test_path, "test corpus"),
             [](RunConfig &c, const RunConfig &s) { c.test_path = s.test_path; });
        bind(app->add_option("--out", staged.out_dir, "output directory"),
             [](RunConfig &c, const RunConfig &s) { c.out_dir = s.out_dir; });
        bind(app->add_option("--embeddings", staged.embeddings_path,
                             "pretrained word vectors (GloVe text format)"),
             [](RunConfig &c, const RunConfig &s) { c.embeddings_path = s.embeddings_path; });
        bind(app->add_option("--kg-table", staged.kg_table_path,
                             "precomputed KG embedding table (id<TAB>values)"),
             [](RunConfig &c, const RunConfig &s) { c.kg_table_path = s.kg_table_path; });
        bind(app->add_option("--word-dim", staged.word_dim, "word embedding dimension"),
             [](RunConfig &c, const RunConfig &s) { c.word_dim = s.word_dim; });
        bind(app->add_option("--lstm-hidden", staged.lstm_hidden,
                             "text BiLSTM hidden size per direction"),
             [](RunConfig &c, const RunConfig &s) { c.lstm_hidden = s.lstm_hidden; });
        bind(app->add_option("--markup-dim", staged.markup_dim, "answer markup dimension"),
             [](RunConfig &c, const RunConfig &s) { c.markup_dim = s.markup_dim; });
        bind(app->add_option("--hidden", staged.hidden, "model hidden size"),
             [](RunConfig &c, const RunConfig &s) { c.hidden = s.hidden; });
        bind(app->add_option("--attn-dim", staged.attn_dim, "attention dimension"),
             [](RunConfig &c, const RunConfig &s) { c.attn_dim = s.attn_dim; });
        bind(app->add_option("--hops", staged.hops, "GNN hops"),
             [](RunConfig &c, const RunConfig &s) { c.hops = s.hops; });
        bind(app->add_option("--variant", staged.variant, "g2s-levi or g2s-edge")
                 ->check(CLI::IsMember({"g2s-levi", "g2s-edge"})),
             [](RunConfig &c, const RunConfig &s) { c.variant = s.variant; });
        bind(app->add_option("--direction", staged.direction, "bi, fwd or bwd")
                 ->check(CLI::IsMember({"bi", "fwd", "bwd"})),
             [](RunConfig &c, const RunConfig &s) { c.direction = s.direction; });
        bind(app->add_option("--node-init", staged.node_init, "word or kg-table")
                 ->check(CLI::IsMember({"word", "kg-table"})),
             [](RunConfig &c, const RunConfig &s) { c.node_init = s.node_init; });
        bind(app->add_option("--use-copy", staged.use_copy, "node-level copying (ablation)"),
             [](RunConfig &c, const RunConfig &s) { c.use_copy = s.use_copy; });
        bind(app->add_option("--use-answer-markup", staged.use_markup,
                             "answer markup vectors (ablation)"),
             [](RunConfig &c, const RunConfig &s) { c.use_markup = s.use_markup; });
        bind(app->add_option("--input-feed", staged.input_feed, "decoder input feeding"),
             [](RunConfig &c, const RunConfig &s) { c.input_feed = s.input_feed; });
        bind(app->add_option("--beam-length-norm", staged.beam_mean_norm,
                             "score beam hypotheses by mean log-prob (false: raw sum)"),
             [](RunConfig &c, const RunConfig &s) { c.beam_mean_norm = s.beam_mean_norm; });
        bind(app->add_option("--dropout-embed", staged.dropout_embed, "embedding dropout"),
             [](RunConfig &c, const RunConfig &s) { c.dropout_embed = s.dropout_embed; });
        bind(app->add_option("--dropout-rnn", staged.dropout_rnn, "encoder output dropout"),
             [](RunConfig &c, const RunConfig &s) { c.dropout_rnn = s.dropout_rnn; });
        bind(app->add_option("--lr", staged.lr, "stage-1 learning rate"),
             [](RunConfig &c, const RunConfig &s) { c.lr = s.lr; });
        bind(app->add_option("--rl-lr", staged.rl_lr, "stage-2 learning rate"),
             [](RunConfig &c, const RunConfig &s) { c.rl_lr = s.rl_lr; });
        bind(app->add_option("--batch-size", staged.batch_size, "batch size"),
             [](RunConfig &c, const RunConfig &s) { c.batch_size = s.batch_size; });
        bind(app->add_option("--grad-clip", staged.grad_clip, "gradient clip (global norm)"),
             [](RunConfig &c, const RunConfig &s) { c.grad_clip = s.grad_clip; });
        bind(app->add_option("--label-smoothing", staged.label_smoothing, "label smoothing"),
             [](RunConfig &c, const RunConfig &s) { c.label_smoothing = s.label_smoothing; });
        bind(app->add_option("--tf-init", staged.tf_init, "initial teacher forcing probability"),
             [](RunConfig &c, const RunConfig &s) { c.tf_init = s.tf_init; });
        bind(app->add_option("--tf-decay", staged.tf_decay, "teacher forcing decay per step"),
             [](RunConfig &c, const RunConfig &s) { c.tf_decay = s.tf_decay; });
        bind(app->add_option("--gamma", staged.gamma, "RL share of the stage-2 hybrid loss"),
             [](RunConfig &c, const RunConfig &s) { c.gamma = s.gamma; });
        bind(app->add_option("--lr-patience", staged.lr_patience, "plateau epochs before LR cut"),
             [](RunConfig &c, const RunConfig &s) { c.lr_patience = s.lr_patience; });
        bind(app->add_option("--early-stop", staged.early_stop_patience,
                             "plateau epochs before stopping"),
             [](RunConfig &c, const RunConfig &s) { c.early_stop_patience = s.early_stop_patience; });
        bind(app->add_option("--beam", staged.beam_width, "beam width"),
             [](RunConfig &c, const RunConfig &s) { c.beam_width = s.beam_width; });
        bind(app->add_option("--max-epochs", staged.max_epochs, "epoch limit"),
             [](RunConfig &c, const RunConfig &s) { c.max_epochs = s.max_epochs; });
        bind(app->add_option("--max-decode-len", staged.max_decode_len, "decode length limit"),
             [](RunConfig &c, const RunConfig &s) { c.max_decode_len = s.max_decode_len; });
        bind(app->add_option("--min-freq", staged.min_freq,
                             "vocabulary frequency cutoff (tokens kept at freq >= this)"),
             [](RunConfig &c, const RunConfig &s) { c.min_freq = s.min_freq; });
        bind(app->add_option("--seed", staged.seed, "random seed"),
             [](RunConfig &c, const RunConfig &s) { c.seed = s.seed; });
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!dataset.empty()) cfg.apply_dataset_preset(dataset);
        if (!config_file.empty()) cfg.merge_file(config_file);
        for (const auto &[opt, apply] : applies)
            if (opt->count() > 0) apply(cfg, staged);
        cfg.apply_env();
        return cfg;
    }

  private:
    void bind(CLI::Option *opt, std::function<void(RunConfig &, const RunConfig &)> apply) {
        applies.emplace_back(opt, std::move(apply));
    }
};

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"question generation from knowledge-graph subgraphs"};
    app.require_subcommand(1);

    CommonOpts pre_opts, train_opts, gen_opts;

    auto *pre = app.add_subcommand("preprocess", "build vocabulary and caches");
    pre_opts.add(pre);

    auto *train = app.add_subcommand("train", "train stage 1 (cross-entropy) or 2 (RL fine-tune)");
    train_opts.add(train);
    int stage = 1;
    std::string init_checkpoint;
    train->add_option("--stage", stage, "1 = cross-entropy, 2 = hybrid RL")
        ->check(CLI::IsMember({1, 2}));
    train->add_option("--init-checkpoint", init_checkpoint, "stage-1 checkpoint for stage 2");

    auto *gen = app.add_subcommand("generate", "decode questions with a trained checkpoint");
    gen_opts.add(gen);
    std::string gen_checkpoint, gen_corpus, gen_out = "predictions.jsonl";
    bool gen_greedy = false;
    gen->add_option("--checkpoint", gen_checkpoint, "model checkpoint")->required();
    gen->add_option("--corpus", gen_corpus, "corpus to decode")->required();
    gen->add_option("--output", gen_out, "predictions output path");
    gen->add_flag("--greedy", gen_greedy, "greedy decoding (same as --beam 1)");

    auto *eval = app.add_subcommand("evaluate", "score a predictions file");
    std::string eval_predictions, eval_corpus;
    bool eval_table = false;
    eval->add_option("--predictions", eval_predictions, "predictions JSON lines")->required();
    eval->add_option("--corpus", eval_corpus, "optional corpus for id cross-checking");
    eval->add_flag("--table", eval_table, "also print a formatted table");

    auto *analyze = app.add_subcommand("analyze", "trigram-prefix distribution of predictions");
    std::string an_predictions, an_csv;
    long an_top_k = 0, an_min_freq = 5;
    bool an_gold = false;
    analyze->add_option("--predictions", an_predictions, "predictions JSON lines")->required();
    analyze->add_option("--top-k", an_top_k, "keep only the k most frequent prefixes (0 = all)");
    analyze->add_option("--min-freq", an_min_freq, "drop prefixes rarer than this");
    analyze->add_option("--csv", an_csv, "also write a sunburst-ready CSV");
    analyze->add_flag("--gold", an_gold, "analyze gold questions instead of predictions");

    auto *report = app.add_subcommand("report", "summarize a training log (convergence)");
    std::string report_log;
    report->add_option("--log", report_log, "training log (JSON lines)")->required();

    auto *dot = app.add_subcommand("dot", "dump an example's Levi graph as DOT");
    std::string dot_corpus, dot_id;
    dot->add_option("--corpus", dot_corpus, "corpus file")->required();
    dot->add_option("--id", dot_id, "example id (default: first example)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) return kgqg::cli::cmd_preprocess(pre_opts.resolve());
        if (train->parsed()) {
            kgqg::RunConfig cfg = train_opts.resolve();
            cfg.stage = stage;
            if (!init_checkpoint.empty()) cfg.init_checkpoint = init_checkpoint;
            return kgqg::cli::cmd_train(cfg);
        }
        if (gen->parsed()) {
            kgqg::RunConfig cfg = gen_opts.resolve();
            int beam = gen_greedy ? 1 : cfg.beam_width;
            return kgqg::cli::cmd_generate(cfg, gen_checkpoint, gen_corpus, beam, gen_out);
        }
        if (eval->parsed()) return kgqg::cli::cmd_evaluate(eval_predictions, eval_corpus, eval_table);
        if (analyze->parsed())
            return kgqg::cli::cmd_analyze(an_predictions, an_top_k, an_min_freq, an_csv, an_gold);
        if (report->parsed()) return kgqg::cli::cmd_report(report_log);
        if (dot->parsed()) return kgqg::cli::cmd_dot(dot_corpus, dot_id);
    } catch (const kgqg::Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
