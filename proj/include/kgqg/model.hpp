#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "kgqg/dataset.hpp"
#include "kgqg/decoder.hpp"
#include "kgqg/embed_init.hpp"
#include "kgqg/encoder.hpp"
#include "kgqg/graph.hpp"

namespace kgqg {

enum class NodeInitMode { Word, KgTable };

template <typename F>
struct ModelConfig {
    int word_dim = 300;
    int lstm_hidden = 150; // per direction; text summary is 2x this
    int markup_dim = 32;
    int hidden = 300;
    int attn_dim = 300;
    int hops = 4;
    bool edge_mode = false; // BiGGNN_edge on the original graph vs BiGGNN on the Levi graph
    EncoderDirection direction = EncoderDirection::Bidirectional;
    NodeInitMode node_init = NodeInitMode::Word;
    int kg_dim = 0; // required > 0 for kg-table init
    bool use_copy = true;
    bool use_markup = true;
    bool input_feed = true;
    bool beam_mean_norm = true; // score hypotheses by mean log-prob (false: raw sum)
    F dropout_embed = F(0.4);
    F dropout_rnn = F(0.3);
    F force_p_gen = F(-1);
};

template <typename F>
class Graph2Seq {
  public:
    using Var = typename Tape<F>::Var;

    Graph2Seq(const Vocabulary &vocab, const ModelConfig<F> &cfg, std::uint64_t seed)
        : vocab_(&vocab), cfg_(cfg) {
        require(cfg.node_init != NodeInitMode::KgTable || cfg.kg_dim > 0,
                "kg-table initialization requires kg_dim > 0");
        Rng rng(seed);
        typename EmbedInit<F>::Config ec;
        ec.word_dim = cfg.word_dim;
        ec.lstm_hidden = cfg.lstm_hidden;
        ec.markup_dim = cfg.markup_dim;
        ec.hidden = cfg.hidden;
        ec.kg_dim = cfg.kg_dim;
        ec.use_markup = cfg.use_markup;
        embed_.build(store_, ec, vocab.size(), rng);
        typename BiGGNN<F>::Config gc;
        gc.hidden = cfg.hidden;
        gc.hops = cfg.hops;
        gc.edge_mode = cfg.edge_mode;
        encoder_.build(store_, gc, rng);
        typename Decoder<F>::Config dc;
        dc.hidden = cfg.hidden;
        dc.word_dim = cfg.word_dim;
        dc.attn_dim = cfg.attn_dim;
        dc.vocab_size = vocab.size();
        dc.use_copy = cfg.use_copy;
        dc.input_feed = cfg.input_feed;
        dc.force_p_gen = cfg.force_p_gen;
        decoder_.build(store_, dc, rng);
        vocab_hash_ = hash_vocab(vocab);
    }

    const ModelConfig<F> &config() const { return cfg_; }
    const Vocabulary &vocab() const { return *vocab_; }
    ParamStore<F> &params() { return store_; }
    const ParamStore<F> &params() const { return store_; }
    EmbedInit<F> &embed() { return embed_; }
    BiGGNN<F> &encoder() { return encoder_; }
    Decoder<F> &decoder() { return decoder_; }

    void set_kg_table(KGEmbeddingTable<F> table) { kg_table_ = std::move(table); }

    /// Hash over every shape-affecting choice plus the vocabulary content;
    /// checkpoints refuse to load into a model with a different hash.
    std::string config_hash() const {
        std::ostringstream os;
        os << cfg_.word_dim << '|' << cfg_.lstm_hidden << '|' << cfg_.markup_dim << '|'
           << cfg_.hidden << '|' << cfg_.attn_dim << '|' << cfg_.hops << '|' << cfg_.edge_mode
           << '|' << static_cast<int>(cfg_.direction) << '|' << static_cast<int>(cfg_.node_init)
           << '|' << cfg_.kg_dim << '|' << cfg_.use_copy << '|' << cfg_.use_markup << '|'
           << cfg_.input_feed << '|' << vocab_->size() << '|' << vocab_hash_;
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a(os.str())));
        return buf;
    }

    /// Tokenization, graph transform and copy alignment done once per
    /// example; reused across epochs and decodes.
    struct Prepared {
        QGExample example;
        LeviGraph levi; // levi mode only
        Adjacency adj;
        std::vector<std::vector<int>> node_tokens; // per memory row
        std::vector<std::string> node_texts;
        std::vector<std::uint8_t> row_is_entity;
        std::vector<std::uint8_t> row_is_answer;
        std::vector<std::vector<std::string>> entity_names; // tokenized; empty for predicates
        std::vector<std::vector<int>> edge_tokens;          // edge mode only
        std::vector<std::string> edge_texts;
        CopyAlignedTarget target;
    };

    Prepared prepare(const QGExample &ex) const {
        Prepared p;
        p.example = ex;
        auto push_row = [&](const std::string &text, bool entity, bool answer) {
            auto toks = tokenize(text);
            require(!toks.empty(), "node '", text, "' has no tokens");
            std::vector<int> ids;
            ids.reserve(toks.size());
            for (const auto &t : toks) ids.push_back(vocab_->lookup(t));
            p.node_tokens.push_back(std::move(ids));
            p.node_texts.push_back(text);
            p.row_is_entity.push_back(entity ? 1 : 0);
            p.row_is_answer.push_back(answer ? 1 : 0);
            p.entity_names.push_back(entity ? tokenize(text) : std::vector<std::string>{});
        };
        if (cfg_.edge_mode) {
            ex.graph.validate();
            p.adj = build_adjacency(ex.graph);
            for (const auto &ent : ex.graph.entities) push_row(ent.text, true, ent.is_answer);
            for (const auto &edge : ex.graph.edges) {
                auto toks = tokenize(edge.text);
                require(!toks.empty(), "edge '", edge.text, "' has no tokens");
                std::vector<int> ids;
                for (const auto &t : toks) ids.push_back(vocab_->lookup(t));
                p.edge_tokens.push_back(std::move(ids));
                p.edge_texts.push_back(edge.text);
            }
        } else {
            p.levi = to_levi(ex.graph);
            p.adj = build_adjacency(p.levi);
            for (const auto &node : p.levi.nodes)
                push_row(node.text, node.kind == NodeKind::Entity, node.is_answer);
        }
        p.target = align_copy_targets(ex, *vocab_, cfg_.use_copy);
        return p;
    }

    struct Encoded {
        NodeStates<F> states;
        Var memory = -1;    // attention memory (dropout applied when training)
        Var graph_emb = -1; // 1 x d
        typename EmbedInit<F>::Bound ebound;
    };

    Encoded encode_prepared(Tape<F> &tape, const Prepared &p, bool training, Rng &rng) const {
        Encoded enc;
        enc.ebound = embed_.bind(tape);
        bool drop = training && cfg_.dropout_embed > F(0);
        std::vector<Var> rows;
        rows.reserve(p.node_tokens.size());
        for (std::size_t i = 0; i < p.node_tokens.size(); ++i) {
            bool answer = p.row_is_answer[i] != 0;
            if (cfg_.node_init == NodeInitMode::KgTable) {
                require(kg_table_.has_value(), "kg-table mode without a loaded table");
                rows.push_back(embed_.node_row_kg(tape, enc.ebound,
                                                  kg_table_->at(p.node_texts[i]), answer));
            } else {
                Var mask = drop ? dropout_mask(tape, cfg_.word_dim, cfg_.dropout_embed, rng) : -1;
                rows.push_back(
                    embed_.node_row_word(tape, enc.ebound, p.node_tokens[i], answer, mask));
            }
        }
        Var init_nodes = tape.concat_rows(rows);
        tape.check_finite(init_nodes, "initial node embeddings");
        Var edges = -1;
        if (cfg_.edge_mode) {
            std::vector<Var> erows;
            erows.reserve(p.edge_tokens.size());
            for (std::size_t i = 0; i < p.edge_tokens.size(); ++i) {
                if (cfg_.node_init == NodeInitMode::KgTable) {
                    erows.push_back(embed_.node_row_kg(tape, enc.ebound,
                                                       kg_table_->at(p.edge_texts[i]), false));
                } else {
                    Var mask = drop ? dropout_mask(tape, cfg_.word_dim, cfg_.dropout_embed, rng) : -1;
                    erows.push_back(embed_.edge_row_word(tape, enc.ebound, p.edge_tokens[i], mask));
                }
            }
            edges = tape.concat_rows(erows);
        }
        enc.states = encoder_.encode(tape, init_nodes, p.adj, cfg_.hops, cfg_.direction, edges);
        enc.memory = enc.states.final_nodes;
        enc.graph_emb = enc.states.graph_emb;
        if (training && cfg_.dropout_rnn > F(0)) {
            enc.memory = tape.mul_row(enc.memory, dropout_mask(tape, cfg_.hidden, cfg_.dropout_rnn, rng));
            enc.graph_emb =
                tape.mul_row(enc.graph_emb, dropout_mask(tape, cfg_.hidden, cfg_.dropout_rnn, rng));
        }
        return enc;
    }

    /// Registers the example's entity names; returns the memory-row ->
    /// extended-index map (-1 on non-copyable rows). With copying disabled
    /// nothing is registered and the output space stays the base vocabulary.
    std::vector<int> copy_index_map(const Prepared &p, ExtendedVocabulary &ext) const {
        std::vector<int> map(p.entity_names.size(), -1);
        if (!cfg_.use_copy) return map;
        for (std::size_t i = 0; i < p.entity_names.size(); ++i)
            if (p.row_is_entity[i]) map[i] = ext.add_name(p.entity_names[i]);
        return map;
    }

    /// Gold extended-vocabulary labels for the target steps, EOS-terminated.
    std::vector<int> gold_sequence(const Prepared &p, ExtendedVocabulary &ext) const {
        std::vector<int> gold;
        gold.reserve(p.target.steps.size() + 1);
        for (const auto &step : p.target.steps) {
            if (step.kind == CopyAlignedTarget::Kind::Copy)
                gold.push_back(ext.add_name(p.entity_names[static_cast<std::size_t>(step.value)]));
            else
                gold.push_back(step.value);
        }
        gold.push_back(Vocabulary::kEos);
        return gold;
    }

    typename Decoder<F>::Bound bind_decoder(Tape<F> &tape, const Encoded &enc, const Prepared &p,
                                            ExtendedVocabulary &ext) const {
        std::vector<F> mask(p.row_is_entity.size());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = p.row_is_entity[i] ? F(1) : F(0);
        std::vector<int> node_to_ext = copy_index_map(p, ext); // registers names first
        return decoder_.bind(tape, enc.memory, std::move(mask), std::move(node_to_ext),
                             ext.total());
    }

    struct TeacherForward {
        std::vector<Var> dists; // one final distribution per step
        std::vector<int> gold;  // extended labels per step (EOS-terminated)
    };

    /// Scheduled teacher forcing: at every step independently the next input
    /// is the gold symbol with probability tf_prob, otherwise the model's
    /// own greedy emission.
    TeacherForward forward_teacher(Tape<F> &tape, const Prepared &p, ExtendedVocabulary &ext,
                                   double tf_prob, Rng &rng, bool training) const {
        Encoded enc = encode_prepared(tape, p, training, rng);
        auto bound = bind_decoder(tape, enc, p, ext);
        TeacherForward fwd;
        fwd.gold = gold_sequence(p, ext);
        Var in_mask = training && cfg_.dropout_embed > F(0)
                          ? dropout_mask(tape, cfg_.word_dim, cfg_.dropout_embed, rng)
                          : -1;
        auto state = decoder_.initial_state(tape, enc.graph_emb);
        Var x = input_embedding(tape, enc.ebound.word_table, ext, Vocabulary::kSos, in_mask);
        for (std::size_t t = 0; t < fwd.gold.size(); ++t) {
            auto [out, next] = decoder_.step(tape, bound, state, x);
            fwd.dists.push_back(out.final_dist);
            state = next;
            if (t + 1 < fwd.gold.size()) {
                int next_sym = rng.bernoulli(tf_prob) ? fwd.gold[t]
                                                      : argmax_index(tape.value(out.final_dist));
                x = input_embedding(tape, enc.ebound.word_table, ext, next_sym, in_mask);
            }
        }
        return fwd;
    }

    /// Greedy search: argmax at each step (ties to the lower extended
    /// index), stop at EOS or max_len. Returns surface tokens with copied
    /// names expanded.
    std::vector<std::string> greedy_decode(const Prepared &p, int max_len) const {
        require(max_len >= 1, "greedy_decode: max_len must be >= 1");
        Tape<F> tape;
        Rng rng(0); // eval mode draws nothing
        ExtendedVocabulary ext(*vocab_);
        Encoded enc = encode_prepared(tape, p, false, rng);
        auto bound = bind_decoder(tape, enc, p, ext);
        auto state = decoder_.initial_state(tape, enc.graph_emb);
        Var x = input_embedding(tape, enc.ebound.word_table, ext, Vocabulary::kSos, -1);
        std::vector<std::string> surface;
        for (int t = 0; t < max_len; ++t) {
            auto [out, next] = decoder_.step(tape, bound, state, x);
            int sym = argmax_index(tape.value(out.final_dist));
            if (sym == Vocabulary::kEos) break;
            for (const auto &tok : ext.surface(sym)) surface.push_back(tok);
            state = next;
            x = input_embedding(tape, enc.ebound.word_table, ext, sym, -1);
        }
        return surface;
    }

    struct BeamResult {
        std::vector<int> ext_seq; // emitted symbols, EOS excluded
        std::vector<std::string> tokens;
        double norm_logp = 0; // sum of step log-probs / emitted steps (EOS counted)
    };

    /// Beam search over the extended vocabulary, scored by length-normalized
    /// log-probability; finished hypotheses are retired and compared at the
    /// end. The width-1 result is always considered, so widening the beam
    /// never returns a worse-scored hypothesis than greedy.
    BeamResult beam_decode(const Prepared &p, int width, int max_len) const {
        require(width >= 1, "beam_decode: width must be >= 1");
        BeamResult best = core_beam(p, width, max_len);
        if (width > 1) {
            BeamResult g = core_beam(p, 1, max_len);
            if (better(g, best)) best = g;
        }
        return best;
    }

    struct Sampled {
        std::vector<int> ext_seq; // includes the EOS emission when sampled
        std::vector<Var> step_logps;
        std::vector<std::string> tokens; // surface, EOS excluded
    };

    /// Multinomial sampling per step; per-step log-probabilities stay on the
    /// tape so an RL loss can backpropagate through them.
    Sampled sample_decode(Tape<F> &tape, const Prepared &p, ExtendedVocabulary &ext, Rng &rng,
                          int max_len, bool training, Rng &dropout_rng) const {
        Encoded enc = encode_prepared(tape, p, training, dropout_rng);
        auto bound = bind_decoder(tape, enc, p, ext);
        Var in_mask = training && cfg_.dropout_embed > F(0)
                          ? dropout_mask(tape, cfg_.word_dim, cfg_.dropout_embed, dropout_rng)
                          : -1;
        auto state = decoder_.initial_state(tape, enc.graph_emb);
        Var x = input_embedding(tape, enc.ebound.word_table, ext, Vocabulary::kSos, in_mask);
        Sampled s;
        for (int t = 0; t < max_len; ++t) {
            auto [out, next] = decoder_.step(tape, bound, state, x);
            int sym = static_cast<int>(rng.categorical(tape.value(out.final_dist).a));
            s.ext_seq.push_back(sym);
            s.step_logps.push_back(tape.logp(tape.slice_cols(out.final_dist, sym, sym + 1)));
            if (sym == Vocabulary::kEos) break;
            for (const auto &tok : ext.surface(sym)) s.tokens.push_back(tok);
            state = next;
            x = input_embedding(tape, enc.ebound.word_table, ext, sym, in_mask);
        }
        return s;
    }

    /// Log-probabilities of a fixed emission sequence (inputs fed from the
    /// sequence itself). Recomputes exactly the sampled-path terms; used by
    /// the RL gradient harness.
    std::vector<Var> sequence_logps(Tape<F> &tape, const Prepared &p, ExtendedVocabulary &ext,
                                    const std::vector<int> &ext_seq, bool training,
                                    Rng &dropout_rng) const {
        Encoded enc = encode_prepared(tape, p, training, dropout_rng);
        auto bound = bind_decoder(tape, enc, p, ext);
        Var in_mask = training && cfg_.dropout_embed > F(0)
                          ? dropout_mask(tape, cfg_.word_dim, cfg_.dropout_embed, dropout_rng)
                          : -1;
        auto state = decoder_.initial_state(tape, enc.graph_emb);
        Var x = input_embedding(tape, enc.ebound.word_table, ext, Vocabulary::kSos, in_mask);
        std::vector<Var> logps;
        for (std::size_t t = 0; t < ext_seq.size(); ++t) {
            auto [out, next] = decoder_.step(tape, bound, state, x);
            int sym = ext_seq[t];
            logps.push_back(tape.logp(tape.slice_cols(out.final_dist, sym, sym + 1)));
            state = next;
            if (t + 1 < ext_seq.size())
                x = input_embedding(tape, enc.ebound.word_table, ext, sym, in_mask);
        }
        return logps;
    }

    static int argmax_index(const Mat<F> &dist) {
        int best = 0;
        for (int j = 1; j < dist.size(); ++j)
            if (dist.a[j] > dist.a[best]) best = j;
        return best;
    }

  private:
    const Vocabulary *vocab_;
    ModelConfig<F> cfg_;
    ParamStore<F> store_;
    EmbedInit<F> embed_;
    BiGGNN<F> encoder_;
    Decoder<F> decoder_;
    std::optional<KGEmbeddingTable<F>> kg_table_;
    std::uint64_t vocab_hash_ = 0;

    static std::uint64_t hash_vocab(const Vocabulary &v) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (int i = 0; i < v.size(); ++i) {
            h = fnv1a(v.token(i), h);
            h = fnv1a(std::string(1, '\n'), h);
        }
        return h;
    }

    Var input_embedding(Tape<F> &tape, Var word_table, const ExtendedVocabulary &ext, int sym,
                        Var mask) const {
        Var x = decoder_.embed_output(tape, word_table, ext, sym);
        return mask >= 0 ? tape.mul_row(x, mask) : x;
    }

    static bool better(const BeamResult &a, const BeamResult &b) {
        if (a.norm_logp != b.norm_logp) return a.norm_logp > b.norm_logp;
        return std::lexicographical_compare(a.ext_seq.begin(), a.ext_seq.end(),
                                            b.ext_seq.begin(), b.ext_seq.end());
    }

    BeamResult core_beam(const Prepared &p, int width, int max_len) const {
        Tape<F> tape;
        Rng rng(0);
        ExtendedVocabulary ext(*vocab_);
        Encoded enc = encode_prepared(tape, p, false, rng);
        auto bound = bind_decoder(tape, enc, p, ext);

        struct Hyp {
            std::vector<int> seq; // EOS excluded
            double sum_lp = 0;
            typename Decoder<F>::State state;
        };
        std::vector<Hyp> live;
        live.push_back({{}, 0.0, decoder_.initial_state(tape, enc.graph_emb)});
        std::vector<BeamResult> finished;

        for (int t = 1; t <= max_len && !live.empty(); ++t) {
            struct Cand {
                std::size_t src;
                int sym;
                double sum_lp;
            };
            std::vector<Cand> cands;
            std::vector<typename Decoder<F>::State> next_states(live.size());
            for (std::size_t h = 0; h < live.size(); ++h) {
                int prev = live[h].seq.empty() ? Vocabulary::kSos : live[h].seq.back();
                Var x = input_embedding(tape, enc.ebound.word_table, ext, prev, -1);
                auto [out, next] = decoder_.step(tape, bound, live[h].state, x);
                next_states[h] = next;
                const Mat<F> &dist = tape.value(out.final_dist);
                for (int j = 0; j < dist.size(); ++j) {
                    double lp = dist.a[j] > F(0)
                                    ? std::log(static_cast<double>(dist.a[j]))
                                    : -1e9;
                    cands.push_back({h, j, live[h].sum_lp + lp});
                }
            }
            std::sort(cands.begin(), cands.end(), [&](const Cand &a, const Cand &b) {
                if (a.sum_lp != b.sum_lp) return a.sum_lp > b.sum_lp;
                const auto &sa = live[a.src].seq, &sb = live[b.src].seq;
                std::vector<int> fa = sa, fb = sb;
                fa.push_back(a.sym);
                fb.push_back(b.sym);
                return std::lexicographical_compare(fa.begin(), fa.end(), fb.begin(), fb.end());
            });
            std::vector<Hyp> next_live;
            std::size_t take = std::min(cands.size(), static_cast<std::size_t>(width));
            for (std::size_t i = 0; i < take; ++i) {
                const Cand &c = cands[i];
                if (c.sym == Vocabulary::kEos) {
                    BeamResult r;
                    r.ext_seq = live[c.src].seq;
                    r.norm_logp = cfg_.beam_mean_norm ? c.sum_lp / static_cast<double>(t)
                                                      : c.sum_lp;
                    finished.push_back(std::move(r));
                } else {
                    Hyp h;
                    h.seq = live[c.src].seq;
                    h.seq.push_back(c.sym);
                    h.sum_lp = c.sum_lp;
                    h.state = next_states[c.src];
                    next_live.push_back(std::move(h));
                }
            }
            live.swap(next_live);
        }
        for (const auto &h : live) {
            BeamResult r;
            r.ext_seq = h.seq;
            double len = static_cast<double>(h.seq.size() > 0 ? h.seq.size() : 1);
            r.norm_logp = cfg_.beam_mean_norm ? h.sum_lp / len : h.sum_lp;
            finished.push_back(std::move(r));
        }
        require(!finished.empty(), "beam search produced no hypotheses");
        std::size_t best = 0;
        for (std::size_t i = 1; i < finished.size(); ++i)
            if (better(finished[i], finished[best])) best = i;
        BeamResult result = std::move(finished[best]);
        for (int sym : result.ext_seq)
            for (const auto &tok : ext.surface(sym)) result.tokens.push_back(tok);
        return result;
    }
};

} // namespace kgqg
