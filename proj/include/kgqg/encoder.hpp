#pragma once

#include <string>
#include <vector>

#include "kgqg/graph.hpp"
#include "kgqg/nn.hpp"

namespace kgqg {

enum class AggDirection { Incoming, Outgoing };
enum class EncoderDirection { Bidirectional, Forward, Backward };

/// Per-hop node state matrices plus the pooled graph embedding.
template <typename F>
struct NodeStates {
    using Var = typename Tape<F>::Var;
    std::vector<Var> hops; // hops[0] is the initial embedding matrix
    Var final_nodes = -1;  // == hops.back()
    Var graph_emb = -1;    // 1 x d
};

/// Bidirectional gated graph network. Each hop averages the incoming and
/// outgoing neighborhoods separately (self vector always included), fuses
/// the two directions through a learned gate and updates node states with a
/// GRU. One parameter set is shared across hops.
template <typename F>
class BiGGNN {
  public:
    using Var = typename Tape<F>::Var;

    struct Config {
        int hidden = 300;
        int hops = 4;
        bool edge_mode = false; // message passing with explicit edge embeddings
    };

    void build(ParamStore<F> &store, const Config &cfg, Rng &rng) {
        cfg_ = cfg;
        fuse_gate_.build(store, "encoder.fuse", 4 * cfg.hidden, cfg.hidden, rng);
        gru_.build(store, "encoder.gru", cfg.hidden, cfg.hidden, rng);
        pool_proj_.build(store, "encoder.pool", cfg.hidden, cfg.hidden, rng);
        if (cfg.edge_mode)
            edge_msg_.build(store, "encoder.edge_msg", 2 * cfg.hidden, cfg.hidden, rng);
    }

    const Config &config() const { return cfg_; }

    /// Mean over the node's own vector and its neighbors in the given
    /// direction; a node isolated in that direction keeps its own vector.
    Var aggregate(Tape<F> &tape, Var h, const Adjacency &adj, AggDirection dir) const {
        const auto &lists = dir == AggDirection::Incoming ? adj.in : adj.out;
        std::vector<int> flat, offsets;
        flatten(lists, flat, offsets);
        Var contrib = tape.gather_rows(h, std::move(flat));
        return tape.group_mean_with_self(h, contrib, std::move(offsets));
    }

    /// Edge-aware variant: each neighbor contribution is relu(W [h_u; e_uv] + b);
    /// the self vector enters the mean untransformed and edge embeddings are
    /// not updated across hops.
    Var aggregate_with_edges(Tape<F> &tape, Var h, Var edges, const Adjacency &adj,
                             AggDirection dir) const {
        require(cfg_.edge_mode, "encoder was not built in edge mode");
        const auto &lists = dir == AggDirection::Incoming ? adj.in : adj.out;
        const auto &edge_lists = dir == AggDirection::Incoming ? adj.edge_in : adj.edge_out;
        std::vector<int> flat, offsets, edge_flat;
        flatten(lists, flat, offsets);
        for (const auto &l : edge_lists) edge_flat.insert(edge_flat.end(), l.begin(), l.end());
        if (flat.empty()) // no edges in this direction: every node keeps itself
            return tape.group_mean_with_self(h, tape.input(Mat<F>(0, cfg_.hidden)),
                                             std::move(offsets));
        Var hu = tape.gather_rows(h, std::move(flat));
        Var ev = tape.gather_rows(edges, std::move(edge_flat));
        Var msg = tape.relu(edge_msg_.apply(tape, tape.concat_cols({hu, ev})));
        return tape.group_mean_with_self(h, msg, std::move(offsets));
    }

    /// Gated sum: z = sigmoid(Wz [a; b; a*b; a-b] + bz), out = z*a + (1-z)*b.
    Var fuse(Tape<F> &tape, Var a, Var b) const {
        Var z = tape.sigmoid(fuse_gate_.apply(
            tape, tape.concat_cols({a, b, tape.mul(a, b), tape.sub(a, b)})));
        const Mat<F> &zv = tape.value(z);
        Var one = tape.input(Mat<F>(zv.rows, zv.cols, F(1)));
        return tape.add(tape.mul(z, a), tape.mul(tape.sub(one, z), b));
    }

    /// Runs `hops` rounds of aggregate -> fuse -> GRU and max-pools a linear
    /// projection of the final node states into the graph embedding.
    /// `edges` is required (and only used) in edge mode.
    NodeStates<F> encode(Tape<F> &tape, Var init_nodes, const Adjacency &adj, int hops,
                         EncoderDirection direction = EncoderDirection::Bidirectional,
                         Var edges = -1) const {
        require(hops >= 1, "encoder hops must be >= 1");
        require(!cfg_.edge_mode || edges >= 0, "edge mode requires edge embeddings");
        NodeStates<F> states;
        Var h = init_nodes;
        states.hops.push_back(h);
        for (int k = 1; k <= hops; ++k) {
            Var update = -1;
            switch (direction) {
            case EncoderDirection::Bidirectional: {
                Var back = one_direction(tape, h, edges, adj, AggDirection::Incoming);
                Var fwd = one_direction(tape, h, edges, adj, AggDirection::Outgoing);
                update = fuse(tape, back, fwd);
                break;
            }
            case EncoderDirection::Forward:
                update = one_direction(tape, h, edges, adj, AggDirection::Outgoing);
                break;
            case EncoderDirection::Backward:
                update = one_direction(tape, h, edges, adj, AggDirection::Incoming);
                break;
            }
            h = gru_.step(tape, update, h);
            if (!tape.value(h).finite()) fail("non-finite node state at hop ", k);
            states.hops.push_back(h);
        }
        states.final_nodes = h;
        states.graph_emb = tape.max_rows(pool_proj_.apply(tape, h));
        return states;
    }

  private:
    Config cfg_;
    Linear<F> fuse_gate_;
    GRUCell<F> gru_;
    Linear<F> pool_proj_;
    Linear<F> edge_msg_;

    Var one_direction(Tape<F> &tape, Var h, Var edges, const Adjacency &adj,
                      AggDirection dir) const {
        return cfg_.edge_mode ? aggregate_with_edges(tape, h, edges, adj, dir)
                              : aggregate(tape, h, adj, dir);
    }

    static void flatten(const std::vector<std::vector<int>> &lists, std::vector<int> &flat,
                        std::vector<int> &offsets) {
        offsets.clear();
        offsets.push_back(0);
        for (const auto &l : lists) {
            flat.insert(flat.end(), l.begin(), l.end());
            offsets.push_back(static_cast<int>(flat.size()));
        }
    }
};

} // namespace kgqg
