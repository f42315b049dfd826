#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgqg/nn.hpp"
#include "kgqg/vocab.hpp"

namespace kgqg {

/// Base vocabulary unioned with the entity-node names of the current batch.
/// A single-token in-vocabulary name shares the token's index, so generation
/// and copying pool their probability mass there; every other distinct name
/// gets a fresh index starting at |base|.
class ExtendedVocabulary {
  public:
    explicit ExtendedVocabulary(const Vocabulary &base) : base_(&base) {}

    /// Registers an entity name given by its tokenized form; returns the
    /// extended index. Identical names map to one index.
    int add_name(const std::vector<std::string> &name_tokens) {
        require(!name_tokens.empty(), "empty entity name");
        if (name_tokens.size() == 1 && base_->contains(name_tokens[0]))
            return base_->lookup(name_tokens[0]);
        std::string key = join(name_tokens);
        auto it = index_.find(key);
        if (it != index_.end()) return it->second;
        int idx = total();
        index_.emplace(key, idx);
        names_.push_back(name_tokens);
        return idx;
    }

    int base_size() const { return base_->size(); }
    int total() const { return base_->size() + static_cast<int>(names_.size()); }
    bool is_name_index(int idx) const { return idx >= base_size(); }

    /// Surface tokens of an extended symbol: the vocabulary token below
    /// |base|, the node name's tokens above.
    std::vector<std::string> surface(int idx) const {
        if (idx < base_size()) return {base_->token(idx)};
        require(idx < total(), "extended index ", idx, " out of range");
        return names_[static_cast<std::size_t>(idx - base_size())];
    }

    /// Word-embedding rows backing an extended symbol: the token itself, or
    /// the name's constituent tokens (UNK for out-of-vocabulary ones).
    std::vector<int> embedding_token_ids(int idx) const {
        if (idx < base_size()) return {idx};
        std::vector<int> ids;
        for (const auto &tok : surface(idx)) ids.push_back(base_->lookup(tok));
        return ids;
    }

    const Vocabulary &base() const { return *base_; }

  private:
    const Vocabulary *base_;
    std::vector<std::vector<std::string>> names_;
    std::unordered_map<std::string, int> index_;
};

/// Attention LSTM decoder with node-level copying. The attention memory is
/// the encoder's node matrix; copying reuses the attention weights, masked
/// to entity nodes and renormalized, with mass pooled per node name.
template <typename F>
class Decoder {
  public:
    using Var = typename Tape<F>::Var;

    struct Config {
        int hidden = 300;
        int word_dim = 300;
        int attn_dim = 300;
        int vocab_size = 0;
        bool use_copy = true;
        bool input_feed = true;
        F force_p_gen = F(-1); // in [0,1] pins the generation switch (tests, ablations)
    };

    void build(ParamStore<F> &store, const Config &cfg, Rng &rng) {
        cfg_ = cfg;
        init_c_.build(store, "decoder.init_c", cfg.hidden, cfg.hidden, rng);
        init_s_.build(store, "decoder.init_s", cfg.hidden, cfg.hidden, rng);
        int in_dim = cfg.word_dim + (cfg.input_feed ? cfg.hidden : 0);
        lstm_.build(store, "decoder.lstm", in_dim, cfg.hidden, rng);
        attn_mem_w_ = store.add("decoder.attn.wh", cfg.hidden, cfg.attn_dim);
        attn_state_w_ = store.add("decoder.attn.ws", cfg.hidden, cfg.attn_dim);
        attn_b_ = store.add("decoder.attn.b", 1, cfg.attn_dim);
        attn_v_ = store.add("decoder.attn.v", cfg.attn_dim, 1);
        glorot_init(attn_mem_w_, rng);
        glorot_init(attn_state_w_, rng);
        glorot_init(attn_v_, rng);
        out_.build(store, "decoder.out", 2 * cfg.hidden, cfg.vocab_size, rng);
        pgen_.build(store, "decoder.pgen", 2 * cfg.hidden + cfg.word_dim, 1, rng);
    }

    const Config &config() const { return cfg_; }

    /// Per-sequence bindings: parameters bound once, the memory-side
    /// attention projection precomputed, and the copy layout fixed.
    struct Bound {
        Var memory = -1;       // N x d
        Var attn_mem = -1;     // N x attn_dim (memory * Wh)
        Var attn_ws = -1, attn_b = -1, attn_v = -1;
        typename LSTMCell<F>::Bound lstm;
        typename Linear<F>::Bound out, pgen;
        std::vector<F> entity_mask;   // 1 per copyable (entity) row
        std::vector<int> node_to_ext; // memory row -> extended index (-1 = not copyable)
        int ext_total = 0;
        Var mask_row = -1; // 1 x N constant
    };

    Bound bind(Tape<F> &tape, Var memory, std::vector<F> entity_mask,
               std::vector<int> node_to_ext, int ext_total) const {
        Bound b;
        b.memory = memory;
        const Mat<F> &mem = tape.value(memory);
        require(mem.rows >= 1, "decoder memory is empty");
        require(static_cast<int>(entity_mask.size()) == mem.rows, "entity mask size mismatch");
        require(node_to_ext.size() == entity_mask.size(), "copy index map size mismatch");
        Var wh = tape.leaf(attn_mem_w_->value, &attn_mem_w_->grad);
        b.attn_mem = tape.matmul_(memory, wh);
        b.attn_ws = tape.leaf(attn_state_w_->value, &attn_state_w_->grad);
        b.attn_b = tape.leaf(attn_b_->value, &attn_b_->grad);
        b.attn_v = tape.leaf(attn_v_->value, &attn_v_->grad);
        b.lstm = lstm_.bind(tape);
        b.out = out_.bind(tape);
        b.pgen = pgen_.bind(tape);
        b.entity_mask = std::move(entity_mask);
        b.node_to_ext = std::move(node_to_ext);
        b.ext_total = ext_total >= cfg_.vocab_size ? ext_total : cfg_.vocab_size;
        b.mask_row = tape.input(Mat<F>::row(b.entity_mask));
        return b;
    }

    struct State {
        Var s = -1; // LSTM hidden
        Var c = -1; // LSTM cell
        Var context = -1;
        int t = 0;
    };

    /// c0 and s0 come from the graph embedding through two separate
    /// fully-connected layers.
    State initial_state(Tape<F> &tape, Var graph_emb) const {
        State st;
        st.c = tape.tanh_(init_c_.apply(tape, graph_emb));
        st.s = tape.tanh_(init_s_.apply(tape, graph_emb));
        st.context = tape.input(Mat<F>(1, cfg_.hidden));
        st.t = 0;
        return st;
    }

    struct Attention {
        Var weights; // 1 x N, on the simplex
        Var context; // 1 x d
    };

    /// score_i = v^T tanh(Wh h_i + Ws s + b); weights = softmax(scores).
    Attention attend(Tape<F> &tape, const Bound &b, Var s) const {
        Var proj = tape.add_row(b.attn_mem, tape.affine(s, b.attn_ws, b.attn_b));
        Var scores = tape.transpose(tape.matmul_(tape.tanh_(proj), b.attn_v)); // 1 x N
        Var weights = tape.softmax(scores);
        return {weights, tape.matmul_(weights, b.memory)};
    }

    struct StepOutput {
        Var attention = -1; // 1 x N
        Var context = -1;   // 1 x d
        Var p_gen = -1;     // 1 x 1
        Var final_dist = -1; // 1 x ext_total
    };

    /// One decoding step. x_emb is the embedded previous output (1 x
    /// word_dim). P_final = p_gen * P_vocab + (1 - p_gen) * P_copy with
    /// P_copy the entity-masked, renormalized attention pooled per name.
    std::pair<StepOutput, State> step(Tape<F> &tape, const Bound &b, const State &prev,
                                      Var x_emb) const {
        Var lstm_in = cfg_.input_feed ? tape.concat_cols({x_emb, prev.context}) : x_emb;
        auto lstm_state = lstm_.step(tape, lstm_in, {prev.s, prev.c}, b.lstm.w, b.lstm.b);
        Attention att = attend(tape, b, lstm_state.h);

        StepOutput out;
        out.attention = att.weights;
        out.context = att.context;
        Var features = tape.concat_cols({lstm_state.h, att.context});
        Var p_vocab = tape.softmax(Linear<F>::apply_bound(tape, b.out, features));

        State next{lstm_state.h, lstm_state.c, att.context, prev.t + 1};

        if (!cfg_.use_copy) {
            out.p_gen = tape.input(Mat<F>(1, 1, F(1)));
            out.final_dist = p_vocab;
            return {out, next};
        }

        bool copyable = false;
        for (F m : b.entity_mask) copyable = copyable || m > F(0);
        require(copyable, "no copyable nodes");

        if (cfg_.force_p_gen >= F(0)) {
            out.p_gen = tape.input(Mat<F>(1, 1, cfg_.force_p_gen));
        } else {
            Var pin = tape.concat_cols({att.context, lstm_state.h, x_emb});
            out.p_gen = tape.sigmoid(Linear<F>::apply_bound(tape, b.pgen, pin));
        }

        Var masked = tape.mul(att.weights, b.mask_row);
        Var copy_norm = tape.scalar_div(masked, tape.sum(masked));
        Var copy_dist = tape.scatter_cols(copy_norm, b.node_to_ext, b.ext_total);

        std::vector<int> vocab_map(static_cast<std::size_t>(cfg_.vocab_size));
        for (int j = 0; j < cfg_.vocab_size; ++j) vocab_map[static_cast<std::size_t>(j)] = j;
        Var vocab_dist = tape.scatter_cols(p_vocab, std::move(vocab_map), b.ext_total);

        Var one = tape.input(Mat<F>(1, 1, F(1)));
        out.final_dist = tape.add(tape.scalar_mul(vocab_dist, out.p_gen),
                                  tape.scalar_mul(copy_dist, tape.sub(one, out.p_gen)));
        return {out, next};
    }

    /// Mean of the word-embedding rows backing an extended symbol: a single
    /// row for vocabulary tokens, the average of the name's constituent
    /// tokens for copied nodes.
    Var embed_output(Tape<F> &tape, Var word_table, const ExtendedVocabulary &ext,
                     int ext_index) const {
        std::vector<int> ids = ext.embedding_token_ids(ext_index);
        if (ids.size() == 1) return tape.pick_row(word_table, ids[0]);
        return tape.mean_rows(tape.gather_rows(word_table, std::move(ids)));
    }

  private:
    Config cfg_;
    Linear<F> init_c_, init_s_;
    LSTMCell<F> lstm_;
    Param<F> *attn_mem_w_ = nullptr;
    Param<F> *attn_state_w_ = nullptr;
    Param<F> *attn_b_ = nullptr;
    Param<F> *attn_v_ = nullptr;
    Linear<F> out_, pgen_;
};

} // namespace kgqg
