#pragma once

#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgqg/nn.hpp"
#include "kgqg/vocab.hpp"

namespace kgqg {

/// Word embedding matrix, one row per vocabulary token. Rows backed by
/// pretrained vectors for frequent tokens are frozen; everything else is
/// trainable and initialized uniform in [-0.05, 0.05].
template <typename F>
struct WordEmbeddingTable {
    Param<F> *table = nullptr;
    int dim = 0;

    void build(ParamStore<F> &store, int vocab_size, int word_dim, Rng &rng) {
        dim = word_dim;
        table = store.add("embed.words", vocab_size, word_dim);
        uniform_init(table, rng, 0.05);
    }

    /// GloVe-style text file: token v1 ... v_dim. Tokens with corpus
    /// frequency > freeze_above get their pretrained row fixed.
    void load_pretrained(const std::string &path, const Vocabulary &vocab,
                         const std::map<std::string, long> &freq, long freeze_above = 2) {
        std::ifstream is(path);
        require(bool(is), "cannot open embedding file ", path);
        table->row_trainable.assign(static_cast<std::size_t>(table->value.rows), 1);
        std::string line;
        while (std::getline(is, line)) {
            std::istringstream ls(line);
            std::string tok;
            if (!(ls >> tok) || !vocab.contains(tok)) continue;
            int row = vocab.lookup(tok);
            std::vector<F> v;
            v.reserve(static_cast<std::size_t>(dim));
            double x;
            while (ls >> x) v.push_back(static_cast<F>(x));
            require(static_cast<int>(v.size()) == dim, "embedding for '", tok,
                    "' has dimension ", v.size(), ", expected ", dim);
            for (int j = 0; j < dim; ++j) table->value(row, j) = v[static_cast<std::size_t>(j)];
            auto it = freq.find(tok);
            if (it != freq.end() && it->second > freeze_above)
                table->row_trainable[static_cast<std::size_t>(row)] = 0;
        }
    }
};

/// Precomputed KG-embedding table keyed by node text; vectors may have any
/// dimension, the init projection absorbs it.
template <typename F>
struct KGEmbeddingTable {
    std::unordered_map<std::string, std::vector<F>> rows;
    int dim = 0;

    static KGEmbeddingTable load(const std::string &path) {
        std::ifstream is(path);
        require(bool(is), "cannot open KG embedding table ", path);
        KGEmbeddingTable t;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto tab = line.find('\t');
            require(tab != std::string::npos, path, " line ", lineno, ": expected id<TAB>values");
            std::string id = line.substr(0, tab);
            std::istringstream vs(line.substr(tab + 1));
            std::vector<F> v;
            double x;
            while (vs >> x) v.push_back(static_cast<F>(x));
            require(!v.empty(), path, " line ", lineno, ": no values");
            if (t.dim == 0) t.dim = static_cast<int>(v.size());
            require(static_cast<int>(v.size()) == t.dim, path, " line ", lineno,
                    ": inconsistent dimension");
            t.rows[id] = std::move(v);
        }
        return t;
    }

    const std::vector<F> &at(const std::string &id) const {
        auto it = rows.find(id);
        require(it != rows.end(), "KG embedding table has no entry for node '", id, "'");
        return it->second;
    }
};

enum class AttrKind { Node, Edge };

/// Initial d-dim embeddings for graph nodes and edges: a BiLSTM summary of
/// the textual attribute (one parameter set for nodes, one for edges)
/// concatenated with the answer markup vector, then projected back to d.
template <typename F>
class EmbedInit {
  public:
    using Var = typename Tape<F>::Var;

    struct Config {
        int word_dim = 300;
        int lstm_hidden = 150; // per direction
        int markup_dim = 32;
        int hidden = 300;
        int kg_dim = 0; // > 0 enables the kg-table projection
        bool use_markup = true;
    };

    void build(ParamStore<F> &store, const Config &cfg, int vocab_size, Rng &rng) {
        cfg_ = cfg;
        words.build(store, vocab_size, cfg.word_dim, rng);
        node_lstm_.build(store, "embed.node_lstm", cfg.word_dim, cfg.lstm_hidden, rng);
        edge_lstm_.build(store, "embed.edge_lstm", cfg.word_dim, cfg.lstm_hidden, rng);
        markup_ = store.add("embed.markup", 2, cfg.markup_dim);
        uniform_init(markup_, rng, 0.05);
        int text_dim = 2 * cfg.lstm_hidden + cfg.markup_dim;
        node_proj_.build(store, "embed.node_proj", text_dim, cfg.hidden, rng);
        edge_proj_.build(store, "embed.edge_proj", text_dim, cfg.hidden, rng);
        if (cfg.kg_dim > 0)
            kg_proj_.build(store, "embed.kg_proj", cfg.kg_dim + cfg.markup_dim, cfg.hidden, rng);
    }

    const Config &config() const { return cfg_; }

    /// Everything bound once per tape; word_table is shared by the decoder's
    /// input embeddings.
    struct Bound {
        Var word_table;
        Var markup;
    };

    Bound bind(Tape<F> &tape) const {
        return {tape.leaf(words.table->value, &words.table->grad),
                tape.leaf(markup_->value, &markup_->grad)};
    }

    /// BiLSTM over the attribute tokens; returns 1 x 2*lstm_hidden.
    /// dropout_mask < 0 disables the (variational) embedding dropout.
    Var encode_text_attribute(Tape<F> &tape, const Bound &bound,
                              const std::vector<int> &token_ids, AttrKind kind,
                              Var dropout_mask = -1) const {
        require(!token_ids.empty(), "encode_text_attribute: empty token sequence");
        Var rows = tape.gather_rows(bound.word_table, token_ids);
        if (dropout_mask >= 0) rows = tape.mul_row(rows, dropout_mask);
        const BiLSTM<F> &lstm = kind == AttrKind::Node ? node_lstm_ : edge_lstm_;
        return lstm.encode(tape, rows);
    }

    /// Markup row: index 1 when the node is an answer, 0 otherwise. With
    /// markup disabled every node gets row 0, so outputs cannot depend on
    /// the answer flags.
    Var markup_row(Tape<F> &tape, const Bound &bound, bool is_answer) const {
        return tape.pick_row(bound.markup, (cfg_.use_markup && is_answer) ? 1 : 0);
    }

    Var node_row_word(Tape<F> &tape, const Bound &bound, const std::vector<int> &token_ids,
                      bool is_answer, Var dropout_mask = -1) const {
        Var text = encode_text_attribute(tape, bound, token_ids, AttrKind::Node, dropout_mask);
        return node_proj_.apply(tape, tape.concat_cols({text, markup_row(tape, bound, is_answer)}));
    }

    Var edge_row_word(Tape<F> &tape, const Bound &bound, const std::vector<int> &token_ids,
                      Var dropout_mask = -1) const {
        Var text = encode_text_attribute(tape, bound, token_ids, AttrKind::Edge, dropout_mask);
        return edge_proj_.apply(tape, tape.concat_cols({text, markup_row(tape, bound, false)}));
    }

    Var node_row_kg(Tape<F> &tape, const Bound &bound, const std::vector<F> &kg_vector,
                    bool is_answer) const {
        require(cfg_.kg_dim > 0, "model was not built for kg-table initialization");
        require(static_cast<int>(kg_vector.size()) == cfg_.kg_dim,
                "kg vector dimension mismatch");
        Var v = tape.input(Mat<F>::row(kg_vector));
        return kg_proj_.apply(tape, tape.concat_cols({v, markup_row(tape, bound, is_answer)}));
    }

    WordEmbeddingTable<F> words;

  private:
    Config cfg_;
    BiLSTM<F> node_lstm_, edge_lstm_;
    Param<F> *markup_ = nullptr;
    Linear<F> node_proj_, edge_proj_, kg_proj_;
};

} // namespace kgqg
