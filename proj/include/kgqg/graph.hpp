#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "kgqg/common.hpp"

namespace kgqg {

struct EntityNode {
    int id = 0;
    std::string text;
    bool is_answer = false;
};

struct PredicateEdge {
    int id = 0;
    std::string text;
    int source = 0; // entity id
    int target = 0; // entity id
};

/// Directed multi-relational subgraph: entities connected by predicate
/// edges. Self-loops and parallel edges with distinct predicates are legal.
struct KGSubgraph {
    std::vector<EntityNode> entities;
    std::vector<PredicateEdge> edges;

    void validate() const {
        require(entities.size() >= 2, "graph has fewer than 2 entities");
        require(!edges.empty(), "graph has no edges");
        for (const auto &e : edges) {
            require(e.source >= 0 && e.source < static_cast<int>(entities.size()),
                    "edge ", e.id, " has dangling source");
            require(e.target >= 0 && e.target < static_cast<int>(entities.size()),
                    "edge ", e.id, " has dangling target");
        }
    }
};

enum class NodeKind { Entity, Predicate };

struct LeviNode {
    int id = 0;
    NodeKind kind = NodeKind::Entity;
    std::string text;
    bool is_answer = false;
};

/// Bipartite directed graph obtained by promoting every predicate edge to a
/// node. Entity nodes come first (same order as the source graph), then one
/// predicate node per edge instance.
struct LeviGraph {
    std::vector<LeviNode> nodes;
    std::vector<std::pair<int, int>> edges; // (from, to)

    std::vector<bool> entity_mask() const {
        std::vector<bool> mask(nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i)
            mask[i] = nodes[i].kind == NodeKind::Entity;
        return mask;
    }

    int entity_count() const {
        int n = 0;
        for (const auto &node : nodes) n += node.kind == NodeKind::Entity ? 1 : 0;
        return n;
    }
};

/// Per-node incoming and outgoing neighbor lists. Entries are one per
/// incident edge (parallel edges contribute one entry each); edge_in/edge_out
/// hold the matching edge ids for edge-aware aggregation.
struct Adjacency {
    std::vector<std::vector<int>> in;  // N-|(v)
    std::vector<std::vector<int>> out; // N|-(v)
    std::vector<std::vector<int>> edge_in;
    std::vector<std::vector<int>> edge_out;

    int node_count() const { return static_cast<int>(in.size()); }
};

/// Each triple (s, p, o) becomes nodes s, p, o with edges s->p and p->o.
/// Predicate nodes are per edge instance: two triples sharing a predicate
/// text yield two predicate nodes.
inline LeviGraph to_levi(const KGSubgraph &g) {
    g.validate();
    LeviGraph levi;
    levi.nodes.reserve(g.entities.size() + g.edges.size());
    for (const auto &ent : g.entities)
        levi.nodes.push_back({ent.id, NodeKind::Entity, ent.text, ent.is_answer});
    int next = static_cast<int>(g.entities.size());
    for (const auto &edge : g.edges) {
        int pid = next++;
        levi.nodes.push_back({pid, NodeKind::Predicate, edge.text, false});
        levi.edges.emplace_back(edge.source, pid);
        levi.edges.emplace_back(pid, edge.target);
    }
    return levi;
}

namespace detail {
inline void sort_with(std::vector<int> &keys, std::vector<int> &follow) {
    std::vector<std::size_t> idx(keys.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    std::vector<int> k2(keys.size()), f2(keys.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        k2[i] = keys[idx[i]];
        f2[i] = follow[idx[i]];
    }
    keys.swap(k2);
    follow.swap(f2);
}
} // namespace detail

inline Adjacency build_adjacency(const LeviGraph &g) {
    Adjacency adj;
    int n = static_cast<int>(g.nodes.size());
    adj.in.resize(n);
    adj.out.resize(n);
    adj.edge_in.resize(n);
    adj.edge_out.resize(n);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        auto [from, to] = g.edges[e];
        require(from >= 0 && from < n && to >= 0 && to < n,
                "levi edge ", e, " has dangling endpoint");
        adj.out[from].push_back(to);
        adj.edge_out[from].push_back(static_cast<int>(e));
        adj.in[to].push_back(from);
        adj.edge_in[to].push_back(static_cast<int>(e));
    }
    for (int v = 0; v < n; ++v) {
        detail::sort_with(adj.in[v], adj.edge_in[v]);
        detail::sort_with(adj.out[v], adj.edge_out[v]);
    }
    return adj;
}

/// Adjacency of the original multi-relational graph, keeping the predicate
/// edge id alongside each neighbor for BiGGNN_edge message passing.
inline Adjacency build_adjacency(const KGSubgraph &g) {
    g.validate();
    Adjacency adj;
    int n = static_cast<int>(g.entities.size());
    adj.in.resize(n);
    adj.out.resize(n);
    adj.edge_in.resize(n);
    adj.edge_out.resize(n);
    for (const auto &edge : g.edges) {
        adj.out[edge.source].push_back(edge.target);
        adj.edge_out[edge.source].push_back(edge.id);
        adj.in[edge.target].push_back(edge.source);
        adj.edge_in[edge.target].push_back(edge.id);
    }
    for (int v = 0; v < n; ++v) {
        detail::sort_with(adj.in[v], adj.edge_in[v]);
        detail::sort_with(adj.out[v], adj.edge_out[v]);
    }
    return adj;
}

/// Structural checks for a transformed graph: |V'| = n + m, |E'| = 2m,
/// bipartite entity<->predicate edges, predicate degrees >= 1.
inline void validate_levi(const LeviGraph &levi, const KGSubgraph &source) {
    std::size_t n = source.entities.size(), m = source.edges.size();
    require(levi.nodes.size() == n + m, "levi node count != n + m");
    require(levi.edges.size() == 2 * m, "levi edge count != 2m");
    std::vector<int> indeg(levi.nodes.size(), 0), outdeg(levi.nodes.size(), 0);
    for (auto [from, to] : levi.edges) {
        require(levi.nodes[from].kind != levi.nodes[to].kind, "levi graph is not bipartite");
        ++outdeg[from];
        ++indeg[to];
    }
    for (const auto &node : levi.nodes)
        if (node.kind == NodeKind::Predicate)
            require(indeg[node.id] >= 1 && outdeg[node.id] >= 1,
                    "predicate node ", node.id, " missing incident edges");
    auto mask = levi.entity_mask();
    for (std::size_t i = 0; i < mask.size(); ++i)
        require(mask[i] == (levi.nodes[i].kind == NodeKind::Entity), "entity mask mismatch");
}

/// DOT rendering for debugging; answer nodes are drawn bold.
inline std::string to_dot(const LeviGraph &g) {
    std::ostringstream os;
    os << "digraph levi {\n";
    for (const auto &node : g.nodes) {
        os << "  n" << node.id << " [label=\"" << node.text << "\"";
        if (node.kind == NodeKind::Predicate) os << ", shape=box";
        if (node.is_answer) os << ", style=bold, color=red";
        os << "];\n";
    }
    for (auto [from, to] : g.edges) os << "  n" << from << " -> n" << to << ";\n";
    os << "}\n";
    return os.str();
}

} // namespace kgqg
