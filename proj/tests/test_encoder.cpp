#include <catch2/catch.hpp>

#include "helpers.hpp"
#include "kgqg/encoder.hpp"

using namespace kgqg;
using Var = Tape<double>::Var;

namespace {

template <typename F>
BiGGNN<F> build_encoder(ParamStore<F> &store, Rng &rng, int hidden, int hops,
                        bool edge_mode = false) {
    typename BiGGNN<F>::Config cfg;
    cfg.hidden = hidden;
    cfg.hops = hops;
    cfg.edge_mode = edge_mode;
    BiGGNN<F> enc;
    enc.build(store, cfg, rng);
    return enc;
}

Adjacency chain_adjacency() {
    // 0 -> 1 -> 2
    LeviGraph g;
    g.nodes = {{0, NodeKind::Entity, "a", false}, {1, NodeKind::Predicate, "p", false},
               {2, NodeKind::Entity, "b", false}};
    g.edges = {{0, 1}, {1, 2}};
    return build_adjacency(g);
}

template <typename F>
Mat<F> random_mat(Rng &rng, int r, int c, double scale = 1.0) {
    Mat<F> m(r, c);
    for (auto &x : m.a) x = static_cast<F>(rng.uniform(-scale, scale));
    return m;
}

} // namespace

TEST_CASE("aggregate averages self with directional neighbors", "[encoder]") {
    ParamStore<double> store;
    Rng rng(51);
    auto enc = build_encoder(store, rng, 2, 1);
    Tape<double> tape;
    Mat<double> h(3, 2);
    h(0, 0) = 2;  h(0, 1) = 4;
    h(1, 0) = 6;  h(1, 1) = 8;
    h(2, 0) = 10; h(2, 1) = 12;
    Var hv = tape.input(h);
    Adjacency adj = chain_adjacency();

    Var incoming = enc.aggregate(tape, hv, adj, AggDirection::Incoming);
    const auto &in = tape.value(incoming);
    CHECK(in(0, 0) == Approx(2.0));  // no incoming neighbors: itself
    CHECK(in(1, 0) == Approx(4.0));  // (6 + 2) / 2
    CHECK(in(2, 1) == Approx(10.0)); // (12 + 8) / 2

    Var outgoing = enc.aggregate(tape, hv, adj, AggDirection::Outgoing);
    const auto &out = tape.value(outgoing);
    CHECK(out(0, 0) == Approx(4.0)); // (2 + 6) / 2
    CHECK(out(2, 0) == Approx(10.0)); // sink: itself
}

TEST_CASE("4-node fixture matches hand-computed means", "[encoder]") {
    // edges: 0->1, 0->2, 3->2; integer features
    LeviGraph g;
    for (int i = 0; i < 4; ++i)
        g.nodes.push_back({i, i % 2 ? NodeKind::Predicate : NodeKind::Entity,
                           "n" + std::to_string(i), false});
    g.edges = {{0, 1}, {0, 2}, {3, 2}};
    Adjacency adj = build_adjacency(g);

    ParamStore<double> store;
    Rng rng(52);
    auto enc = build_encoder(store, rng, 1, 1);
    Tape<double> tape;
    Mat<double> h(4, 1);
    h(0, 0) = 1; h(1, 0) = 2; h(2, 0) = 3; h(3, 0) = 4;
    Var hv = tape.input(h);

    const auto &in = tape.value(enc.aggregate(tape, hv, adj, AggDirection::Incoming));
    CHECK(in(0, 0) == Approx(1.0));           // none
    CHECK(in(1, 0) == Approx((2 + 1) / 2.0));
    CHECK(in(2, 0) == Approx((3 + 1 + 4) / 3.0));
    CHECK(in(3, 0) == Approx(4.0));
    const auto &out = tape.value(enc.aggregate(tape, hv, adj, AggDirection::Outgoing));
    CHECK(out(0, 0) == Approx((1 + 2 + 3) / 3.0));
    CHECK(out(3, 0) == Approx((4 + 3) / 2.0));
}

TEST_CASE("edge-aware aggregation reduces correctly in special cases", "[encoder]") {
    Adjacency adj = chain_adjacency();
    ParamStore<double> store;
    Rng rng(53);
    auto enc = build_encoder(store, rng, 2, 1, /*edge_mode=*/true);
    Tape<double> tape;
    Mat<double> h(3, 2);
    for (int i = 0; i < h.size(); ++i) h.a[i] = 0.25 * (i + 1); // nonnegative
    Mat<double> e(2, 2);
    e(0, 0) = 0.3; e(0, 1) = 0.1; e(1, 0) = 0.2; e(1, 1) = 0.4;
    Var hv = tape.input(h), ev = tape.input(e);

    SECTION("zero message weights leave only the self vector") {
        for (auto *p : store.all())
            if (p->name.find("edge_msg") != std::string::npos) p->value.zero();
        const auto &agg = tape.value(enc.aggregate_with_edges(tape, hv, ev, adj,
                                                              AggDirection::Incoming));
        CHECK(agg(1, 0) == Approx(h(1, 0) / 2)); // one incoming edge: h_v / (deg+1)
        CHECK(agg(0, 0) == Approx(h(0, 0)));     // isolated in this direction
    }

    SECTION("identity projection on the h slice reduces to the plain aggregate") {
        for (auto *p : store.all()) {
            if (p->name == "encoder.edge_msg.w") {
                p->value.zero();
                for (int i = 0; i < 2; ++i) p->value(i, i) = 1.0; // select h_u, drop e_uv
            }
            if (p->name == "encoder.edge_msg.b") p->value.zero();
        }
        Var plain = enc.aggregate(tape, hv, adj, AggDirection::Incoming);
        Var edged = enc.aggregate_with_edges(tape, hv, ev, adj, AggDirection::Incoming);
        for (int i = 0; i < 6; ++i)
            CHECK(tape.value(edged).a[i] == Approx(tape.value(plain).a[i]));
    }
}

TEST_CASE("edge embedding gradients match finite differences", "[encoder]") {
    Adjacency adj = chain_adjacency();
    ParamStore<double> store;
    Rng rng(54);
    auto enc = build_encoder(store, rng, 3, 2, /*edge_mode=*/true);
    Mat<double> h = random_mat<double>(rng, 3, 3);
    Mat<double> e = random_mat<double>(rng, 2, 3);

    // gradient w.r.t. the edge matrix itself
    Mat<double> analytic;
    {
        Tape<double> tape;
        Var hv = tape.input(h), ev = tape.input(e, true);
        auto states = enc.encode(tape, hv, adj, 2, EncoderDirection::Bidirectional, ev);
        tape.backward(tape.sum(states.graph_emb));
        analytic = tape.grad(ev);
    }
    double step = 1e-6, worst = 0;
    for (int i = 0; i < e.size(); ++i) {
        auto eval = [&](double v) {
            Mat<double> ep = e;
            ep.a[i] = v;
            Tape<double> tape;
            Var hv = tape.input(h), ev = tape.input(ep);
            auto states = enc.encode(tape, hv, adj, 2, EncoderDirection::Bidirectional, ev);
            return tape.value(tape.sum(states.graph_emb))(0, 0);
        };
        double fd = (eval(e.a[i] + step) - eval(e.a[i] - step)) / (2 * step);
        worst = std::max(worst, std::abs(fd - analytic.a[i]) /
                                    std::max({std::abs(fd), std::abs(analytic.a[i]), 1e-3}));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("fuse is a gated convex combination", "[encoder]") {
    ParamStore<double> store;
    Rng rng(55);
    auto enc = build_encoder(store, rng, 4, 1);

    SECTION("fuse(a, a) = a") {
        Tape<double> tape;
        Mat<double> a = random_mat<double>(rng, 2, 4);
        Var av = tape.input(a);
        const auto &out = tape.value(enc.fuse(tape, av, av));
        for (int i = 0; i < a.size(); ++i) CHECK(out.a[i] == Approx(a.a[i]).margin(1e-7));
    }

    SECTION("zero gate parameters give the plain average") {
        for (auto *p : store.all())
            if (p->name.find("fuse") != std::string::npos) p->value.zero();
        Tape<double> tape;
        Mat<double> a = random_mat<double>(rng, 1, 4), b = random_mat<double>(rng, 1, 4);
        Var av = tape.input(a), bv = tape.input(b);
        const auto &out = tape.value(enc.fuse(tape, av, bv));
        for (int i = 0; i < 4; ++i) CHECK(out.a[i] == Approx((a.a[i] + b.a[i]) / 2));
    }

    SECTION("envelope property over 1000 random draws") {
        for (int iter = 0; iter < 1000; ++iter) {
            ParamStore<double> st;
            Rng draw(1000 + iter);
            auto e2 = build_encoder(st, draw, 3, 1);
            Tape<double> tape;
            Mat<double> a = random_mat<double>(draw, 1, 3, 2.0), b = random_mat<double>(draw, 1, 3, 2.0);
            Var av = tape.input(a), bv = tape.input(b);
            const auto &out = tape.value(e2.fuse(tape, av, bv));
            for (int i = 0; i < 3; ++i) {
                CHECK(out.a[i] >= std::min(a.a[i], b.a[i]) - 1e-12);
                CHECK(out.a[i] <= std::max(a.a[i], b.a[i]) + 1e-12);
            }
        }
    }
}

TEST_CASE("hop zero is the initial embedding matrix, bitwise", "[encoder]") {
    ParamStore<double> store;
    Rng rng(56);
    auto enc = build_encoder(store, rng, 3, 2);
    Tape<double> tape;
    Mat<double> h = random_mat<double>(rng, 3, 3);
    Var hv = tape.input(h);
    auto states = enc.encode(tape, hv, chain_adjacency(), 2);
    REQUIRE(states.hops.size() == 3);
    const auto &h0 = tape.value(states.hops[0]);
    for (int i = 0; i < h.size(); ++i) CHECK(h0.a[i] == h.a[i]);
    CHECK(states.final_nodes == states.hops[2]);
}

TEST_CASE("any hop count from 1 to 6 runs and tracks per-hop states", "[encoder]") {
    ParamStore<double> store;
    Rng rng(66);
    auto enc = build_encoder(store, rng, 3, 6);
    Adjacency adj = chain_adjacency();
    Mat<double> h = random_mat<double>(rng, 3, 3);
    for (int hops = 1; hops <= 6; ++hops) {
        Tape<double> tape;
        auto states = enc.encode(tape, tape.input(h), adj, hops);
        CHECK(states.hops.size() == static_cast<std::size_t>(hops) + 1);
        CHECK(tape.value(states.graph_emb).finite());
    }
}

TEST_CASE("parameter count does not depend on the hop count", "[encoder]") {
    ParamStore<double> s2, s6;
    Rng r1(57), r2(57);
    build_encoder(s2, r1, 5, 2);
    build_encoder(s6, r2, 5, 6);
    CHECK(s2.scalar_count() == s6.scalar_count());
}

TEST_CASE("isolated node evolves exactly like a single-node graph", "[encoder]") {
    ParamStore<double> store;
    Rng rng(58);
    auto enc = build_encoder(store, rng, 4, 3);

    // graph: nodes {0,1,2}, edges only between 1 and 2; node 0 isolated
    LeviGraph g;
    g.nodes = {{0, NodeKind::Entity, "x", false}, {1, NodeKind::Entity, "a", false},
               {2, NodeKind::Predicate, "p", false}};
    g.edges = {{1, 2}, {2, 1}};
    Adjacency adj = build_adjacency(g);
    Adjacency solo;
    solo.in.resize(1);
    solo.out.resize(1);
    solo.edge_in.resize(1);
    solo.edge_out.resize(1);

    Mat<double> h = random_mat<double>(rng, 3, 4);
    Mat<double> h0(1, 4);
    for (int j = 0; j < 4; ++j) h0(0, j) = h(0, j);

    Tape<double> tape;
    auto full = enc.encode(tape, tape.input(h), adj, 3);
    auto single = enc.encode(tape, tape.input(h0), solo, 3);
    for (std::size_t k = 0; k < full.hops.size(); ++k) {
        const auto &a = tape.value(full.hops[k]);
        const auto &b = tape.value(single.hops[k]);
        for (int j = 0; j < 4; ++j) CHECK(a(0, j) == b(0, j)); // bitwise
    }
}

TEST_CASE("node relabeling permutes states and leaves the graph embedding", "[encoder]") {
    Rng rng(59);
    for (int iter = 0; iter < 50; ++iter) {
        auto ex = testutil::random_example(rng, {"a", "b", "c", "d"});
        LeviGraph levi = to_levi(ex.graph);
        int n = static_cast<int>(levi.nodes.size());

        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = i;
        for (int i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

        LeviGraph permuted;
        permuted.nodes.resize(levi.nodes.size());
        for (int i = 0; i < n; ++i) {
            permuted.nodes[perm[i]] = levi.nodes[i];
            permuted.nodes[perm[i]].id = perm[i];
        }
        for (auto [f, t] : levi.edges) permuted.edges.emplace_back(perm[f], perm[t]);

        ParamStore<float> store;
        Rng init(600 + iter);
        auto enc = build_encoder<float>(store, init, 6, 3);
        Mat<float> h = random_mat<float>(init, n, 6);
        Mat<float> hp(n, 6);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 6; ++j) hp(perm[i], j) = h(i, j);

        Tape<float> tape;
        auto base = enc.encode(tape, tape.input(h), build_adjacency(levi), 3);
        auto moved = enc.encode(tape, tape.input(hp), build_adjacency(permuted), 3);
        const auto &hb = tape.value(base.final_nodes), &hm = tape.value(moved.final_nodes);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 6; ++j)
                CHECK(hb(i, j) == Approx(hm(perm[i], j)).margin(1e-6));
        const auto &gb = tape.value(base.graph_emb), &gm = tape.value(moved.graph_emb);
        for (int j = 0; j < 6; ++j) CHECK(gb(0, j) == Approx(gm(0, j)).margin(1e-6));
    }
}

TEST_CASE("forward and backward walks differ on an asymmetric chain", "[encoder]") {
    ParamStore<double> store;
    Rng rng(60);
    auto enc = build_encoder(store, rng, 4, 2);
    Tape<double> tape;
    Mat<double> h = random_mat<double>(rng, 3, 4);
    Var hv = tape.input(h);
    Adjacency adj = chain_adjacency();
    auto fwd = enc.encode(tape, hv, adj, 2, EncoderDirection::Forward);
    auto bwd = enc.encode(tape, hv, adj, 2, EncoderDirection::Backward);
    double diff = 0;
    for (int j = 0; j < 4; ++j)
        diff += std::abs(tape.value(fwd.graph_emb)(0, j) - tape.value(bwd.graph_emb)(0, j));
    CHECK(diff > 1e-6);
}

TEST_CASE("edgeless forward direction reduces every node to GRU(h, h)", "[encoder]") {
    ParamStore<double> store;
    Rng rng(61);
    auto enc = build_encoder(store, rng, 3, 1);
    // all nodes are sinks in the outgoing direction
    LeviGraph g;
    g.nodes = {{0, NodeKind::Entity, "a", false}, {1, NodeKind::Entity, "b", false}};
    Adjacency adj = build_adjacency(g);

    Tape<double> tape;
    Mat<double> h = random_mat<double>(rng, 2, 3);
    auto states = enc.encode(tape, tape.input(h), adj, 1, EncoderDirection::Forward);

    // single isolated node run gives the same per-row dynamics
    Adjacency solo;
    solo.in.resize(1); solo.out.resize(1); solo.edge_in.resize(1); solo.edge_out.resize(1);
    for (int row = 0; row < 2; ++row) {
        Mat<double> hr(1, 3);
        for (int j = 0; j < 3; ++j) hr(0, j) = h(row, j);
        auto one = enc.encode(tape, tape.input(hr), solo, 1, EncoderDirection::Forward);
        for (int j = 0; j < 3; ++j)
            CHECK(tape.value(states.final_nodes)(row, j) == tape.value(one.final_nodes)(0, j));
    }
}

TEST_CASE("bidirectional equals unidirectional on symmetric adjacency with a 0.5 gate",
          "[encoder]") {
    ParamStore<double> store;
    Rng rng(62);
    auto enc = build_encoder(store, rng, 3, 2);
    for (auto *p : store.all())
        if (p->name.find("fuse") != std::string::npos) p->value.zero(); // gate = 0.5

    LeviGraph g; // every edge paired with its reverse
    g.nodes = {{0, NodeKind::Entity, "a", false}, {1, NodeKind::Predicate, "p", false},
               {2, NodeKind::Entity, "b", false}};
    g.edges = {{0, 1}, {1, 0}, {1, 2}, {2, 1}};
    Adjacency adj = build_adjacency(g);

    Tape<double> tape;
    Mat<double> h = random_mat<double>(rng, 3, 3);
    auto bi = enc.encode(tape, tape.input(h), adj, 2, EncoderDirection::Bidirectional);
    auto fwd = enc.encode(tape, tape.input(h), adj, 2, EncoderDirection::Forward);
    for (int i = 0; i < 9; ++i)
        CHECK(tape.value(bi.final_nodes).a[i] == Approx(tape.value(fwd.final_nodes).a[i]).margin(1e-12));
}

TEST_CASE("non-finite states report the hop index", "[encoder]") {
    ParamStore<double> store;
    Rng rng(63);
    auto enc = build_encoder(store, rng, 2, 3);
    Tape<double> tape;
    Mat<double> h(3, 2);
    h(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH(enc.encode(tape, tape.input(h), chain_adjacency(), 3),
                      Catch::Contains("hop 1"));
}

TEST_CASE("encoder gradients match finite differences in all modes", "[encoder]") {
    Adjacency adj = chain_adjacency();
    struct Case {
        bool edge_mode;
        EncoderDirection dir;
    };
    std::vector<Case> cases = {{false, EncoderDirection::Bidirectional},
                               {false, EncoderDirection::Forward},
                               {false, EncoderDirection::Backward},
                               {true, EncoderDirection::Bidirectional}};
    int seed = 64;
    for (const auto &c : cases) {
        ParamStore<double> store;
        Rng rng(seed++);
        auto enc = build_encoder(store, rng, 3, 2, c.edge_mode);
        Mat<double> h = random_mat<double>(rng, 3, 3);
        Mat<double> e = random_mat<double>(rng, 2, 3);
        auto loss_value = [&](Tape<double> &tape) {
            Var hv = tape.input(h);
            Var ev = c.edge_mode ? tape.input(e) : -1;
            auto states = enc.encode(tape, hv, adj, 2, c.dir, ev);
            return tape.sum(tape.add(states.graph_emb, tape.mean_rows(states.final_nodes)));
        };
        auto report = testutil::check_gradients(store, loss_value);
        INFO("edge_mode=" << c.edge_mode << " dir=" << static_cast<int>(c.dir) << " worst "
                          << report.worst_param);
        CHECK(report.max_rel_err < 1e-4);
    }
}
