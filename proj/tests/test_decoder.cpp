#include <catch2/catch.hpp>

#include <cmath>

#include "helpers.hpp"
#include "kgqg/model.hpp"
#include "kgqg/training.hpp"

using namespace kgqg;
using Var = Tape<double>::Var;
using testutil::tiny_vocab;

namespace {

double atanh_(double x) { return 0.5 * std::log((1 + x) / (1 - x)); }

struct TinyDecoder {
    ParamStore<double> store;
    Decoder<double> decoder;
};

/// hidden = attn_dim = 1 so attention scores are tanh(h_i) exactly; the
/// memory rows are chosen to produce a prescribed attention distribution.
TinyDecoder fixed_attention_decoder(int vocab_size, double force_p_gen) {
    TinyDecoder t;
    typename Decoder<double>::Config cfg;
    cfg.hidden = 1;
    cfg.word_dim = 2;
    cfg.attn_dim = 1;
    cfg.vocab_size = vocab_size;
    cfg.force_p_gen = force_p_gen;
    Rng rng(71);
    t.decoder.build(t.store, cfg, rng);
    for (auto *p : t.store.all()) {
        if (p->name == "decoder.attn.wh") p->value(0, 0) = 1.0;
        if (p->name == "decoder.attn.ws") p->value(0, 0) = 0.0;
        if (p->name == "decoder.attn.b") p->value(0, 0) = 0.0;
        if (p->name == "decoder.attn.v") p->value(0, 0) = 1.0;
    }
    return t;
}

Mat<double> attention_memory(const std::vector<double> &probs, double shift = 1.1) {
    Mat<double> memory(static_cast<int>(probs.size()), 1);
    for (std::size_t i = 0; i < probs.size(); ++i)
        memory(static_cast<int>(i), 0) = atanh_(std::log(probs[i]) + shift);
    return memory;
}

ModelConfig<double> toy_model_config() { return testutil::tiny_model_config<double>(); }

QGExample copy_example() {
    QGExample ex;
    ex.id = "copyex";
    ex.graph.entities = {{0, "blue river", false}, {1, "north city", true}};
    ex.graph.edges = {{0, "flows through", 0, 1}};
    ex.answers = {1};
    ex.question = tokenize("where is the blue river ?");
    return ex;
}

} // namespace

TEST_CASE("attend puts weight 1 on a single memory row", "[decoder]") {
    auto t = fixed_attention_decoder(6, -1);
    Tape<double> tape;
    Mat<double> memory(1, 1);
    memory(0, 0) = 0.37;
    auto bound = t.decoder.bind(tape, tape.input(memory), {1.0}, {4}, 6);
    auto att = t.decoder.attend(tape, bound, tape.input(Mat<double>(1, 1, 0.5)));
    CHECK(tape.value(att.weights)(0, 0) == Approx(1.0));
    CHECK(tape.value(att.context)(0, 0) == Approx(0.37));
}

TEST_CASE("attend splits evenly over identical rows", "[decoder]") {
    auto t = fixed_attention_decoder(6, -1);
    Tape<double> tape;
    Mat<double> memory(2, 1, 0.25);
    auto bound = t.decoder.bind(tape, tape.input(memory), {1.0, 1.0}, {4, 5}, 6);
    auto att = t.decoder.attend(tape, bound, tape.input(Mat<double>(1, 1, -0.3)));
    CHECK(tape.value(att.weights)(0, 0) == Approx(0.5));
    CHECK(tape.value(att.weights)(0, 1) == Approx(0.5));
}

TEST_CASE("attend reproduces a hand-computed softmax with zero state weights", "[decoder]") {
    auto t = fixed_attention_decoder(6, -1);
    Tape<double> tape;
    Mat<double> memory = attention_memory({0.2, 0.3, 0.5});
    auto bound = t.decoder.bind(tape, tape.input(memory), {1.0, 1.0, 0.0}, {4, 5, -1}, 6);
    auto att = t.decoder.attend(tape, bound, tape.input(Mat<double>(1, 1, 7.0)));
    CHECK(tape.value(att.weights)(0, 0) == Approx(0.2).margin(1e-12));
    CHECK(tape.value(att.weights)(0, 1) == Approx(0.3).margin(1e-12));
    CHECK(tape.value(att.weights)(0, 2) == Approx(0.5).margin(1e-12));
}

TEST_CASE("masked copying renormalizes entity mass: (0.2,0.3,0.5) -> (0.4,0.6)", "[decoder]") {
    auto t = fixed_attention_decoder(6, /*force_p_gen=*/0.0);
    Tape<double> tape;
    Mat<double> memory = attention_memory({0.2, 0.3, 0.5});
    // rows 0 and 1 are entities pooling at extended ids 6 and 7; row 2 is a predicate
    auto bound = t.decoder.bind(tape, tape.input(memory), {1.0, 1.0, 0.0}, {6, 7, -1}, 8);
    auto state = t.decoder.initial_state(tape, tape.input(Mat<double>(1, 1, 0.1)));
    auto [out, next] = t.decoder.step(tape, bound, state, tape.input(Mat<double>(1, 2, 0.0)));
    const auto &dist = tape.value(out.final_dist);
    REQUIRE(dist.cols == 8);
    for (int j = 0; j < 6; ++j) CHECK(dist(0, j) == 0.0); // p_gen = 0: no vocabulary mass
    CHECK(dist(0, 6) == Approx(0.4).margin(1e-12));
    CHECK(dist(0, 7) == Approx(0.6).margin(1e-12));
    CHECK(tape.value(out.p_gen)(0, 0) == 0.0);
}

TEST_CASE("p_gen forced to 1 gives exactly the vocabulary softmax", "[decoder]") {
    auto t = fixed_attention_decoder(6, /*force_p_gen=*/1.0);
    Tape<double> tape;
    Mat<double> memory = attention_memory({0.2, 0.8});
    auto bound = t.decoder.bind(tape, tape.input(memory), {1.0, 1.0}, {6, 7}, 8);
    auto state = t.decoder.initial_state(tape, tape.input(Mat<double>(1, 1, -0.4)));
    auto [out, next] = t.decoder.step(tape, bound, state, tape.input(Mat<double>(1, 2, 0.2)));
    const auto &dist = tape.value(out.final_dist);
    CHECK(dist(0, 6) == 0.0);
    CHECK(dist(0, 7) == 0.0);
    double sum = 0;
    for (int j = 0; j < 6; ++j) sum += dist(0, j);
    CHECK(sum == Approx(1.0).margin(1e-9));
}

TEST_CASE("p_gen forced to 0 with one entity puts all mass on its name", "[decoder]") {
    auto t = fixed_attention_decoder(6, /*force_p_gen=*/0.0);
    Tape<double> tape;
    Mat<double> memory = attention_memory({0.3, 0.7});
    auto bound = t.decoder.bind(tape, tape.input(memory), {1.0, 0.0}, {6, -1}, 7);
    auto state = t.decoder.initial_state(tape, tape.input(Mat<double>(1, 1, 0.0)));
    auto [out, next] = t.decoder.step(tape, bound, state, tape.input(Mat<double>(1, 2, 0.0)));
    CHECK(tape.value(out.final_dist)(0, 6) == Approx(1.0).margin(1e-12));
}

TEST_CASE("nodes sharing a name pool their copy mass at one index", "[decoder]") {
    auto t = fixed_attention_decoder(6, /*force_p_gen=*/0.0);
    Tape<double> tape;
    Mat<double> memory = attention_memory({0.25, 0.35, 0.4});
    auto bound = t.decoder.bind(tape, tape.input(memory), {1.0, 1.0, 0.0}, {6, 6, -1}, 7);
    auto state = t.decoder.initial_state(tape, tape.input(Mat<double>(1, 1, 0.2)));
    auto [out, next] = t.decoder.step(tape, bound, state, tape.input(Mat<double>(1, 2, 0.0)));
    CHECK(tape.value(out.final_dist)(0, 6) == Approx(1.0).margin(1e-12)); // both entities pooled
}

TEST_CASE("a memory with no copyable nodes is an error", "[decoder]") {
    auto t = fixed_attention_decoder(6, -1);
    Tape<double> tape;
    Mat<double> memory = attention_memory({0.5, 0.5});
    auto bound = t.decoder.bind(tape, tape.input(memory), {0.0, 0.0}, {-1, -1}, 6);
    auto state = t.decoder.initial_state(tape, tape.input(Mat<double>(1, 1, 0.0)));
    CHECK_THROWS_WITH(t.decoder.step(tape, bound, state, tape.input(Mat<double>(1, 2, 0.0))),
                      Catch::Contains("no copyable nodes"));
}

TEST_CASE("step output distributions live on the simplex", "[decoder]") {
    Vocabulary vocab = tiny_vocab();
    Rng rng(72);
    for (int iter = 0; iter < 25; ++iter) {
        Graph2Seq<double> model(vocab, toy_model_config(), 700 + iter);
        auto ex = testutil::random_example(rng, {"blue", "green", "north"});
        auto prep = model.prepare(ex);
        Tape<double> tape;
        ExtendedVocabulary ext(vocab);
        Rng eval_rng(0);
        auto enc = model.encode_prepared(tape, prep, false, eval_rng);
        auto bound = model.bind_decoder(tape, enc, prep, ext);
        auto state = model.decoder().initial_state(tape, enc.graph_emb);
        auto x = model.decoder().embed_output(tape, enc.ebound.word_table, ext, Vocabulary::kSos);
        for (int t = 0; t < 3; ++t) {
            auto [out, next] = model.decoder().step(tape, bound, state, x);
            const auto &att = tape.value(out.attention);
            double asum = 0;
            for (double v : att.a) asum += v;
            CHECK(asum == Approx(1.0).margin(1e-6));
            const auto &dist = tape.value(out.final_dist);
            double dsum = 0;
            for (double v : dist.a) dsum += v;
            CHECK(dsum == Approx(1.0).margin(1e-6));
            double pg = tape.value(out.p_gen)(0, 0);
            CHECK(pg > 0.0);
            CHECK(pg < 1.0);
            state = next;
            x = model.decoder().embed_output(tape, enc.ebound.word_table, ext,
                                             Graph2Seq<double>::argmax_index(dist));
        }
    }
}

TEST_CASE("embed_output averages the constituent word rows", "[decoder]") {
    Vocabulary vocab;
    int giza = vocab.add("giza");
    int necro = vocab.add("necropolis");
    vocab.freeze();
    ParamStore<double> store;
    Decoder<double> decoder;
    typename Decoder<double>::Config cfg;
    cfg.hidden = 2;
    cfg.word_dim = 4;
    cfg.attn_dim = 2;
    cfg.vocab_size = vocab.size();
    Rng rng(73);
    decoder.build(store, cfg, rng);

    Mat<double> table(vocab.size(), 4);
    for (int i = 0; i < table.size(); ++i) table.a[i] = 0.1 * i;
    Tape<double> tape;
    Var tv = tape.input(table);

    ExtendedVocabulary ext(vocab);
    int one_word = ext.add_name({"giza"});
    CHECK(one_word == giza); // single in-vocabulary token shares the index
    int two_word = ext.add_name({"giza", "necropolis"});
    REQUIRE(two_word == vocab.size());
    int dup = ext.add_name({"giza", "giza"});

    auto single = decoder.embed_output(tape, tv, ext, one_word);
    for (int j = 0; j < 4; ++j) CHECK(tape.value(single)(0, j) == table(giza, j));

    auto mean = decoder.embed_output(tape, tv, ext, two_word);
    for (int j = 0; j < 4; ++j)
        CHECK(tape.value(mean)(0, j) == Approx((table(giza, j) + table(necro, j)) / 2));

    auto same = decoder.embed_output(tape, tv, ext, dup);
    for (int j = 0; j < 4; ++j) CHECK(tape.value(same)(0, j) == Approx(table(giza, j)));
}

TEST_CASE("extended vocabulary dedupes names and exposes surfaces", "[decoder]") {
    Vocabulary vocab = tiny_vocab();
    ExtendedVocabulary ext(vocab);
    int a = ext.add_name({"blue", "river"});
    int b = ext.add_name({"blue", "river"});
    CHECK(a == b);
    CHECK(a >= vocab.size());
    CHECK(ext.surface(a) == std::vector<std::string>{"blue", "river"});
    int oov = ext.add_name({"zzz"});
    CHECK(oov >= vocab.size()); // out-of-vocabulary single token gets a fresh index
    CHECK(ext.embedding_token_ids(oov) == std::vector<int>{Vocabulary::kUnk});
    CHECK(ext.total() == vocab.size() + 2);
}

TEST_CASE("a model that emits EOS immediately produces an empty question", "[decoder]") {
    Vocabulary vocab = tiny_vocab();
    auto cfg = toy_model_config();
    cfg.force_p_gen = 1.0;
    Graph2Seq<double> model(vocab, cfg, 74);
    for (auto *p : model.params().all())
        if (p->name == "decoder.out.b") p->value(0, Vocabulary::kEos) = 50.0;
    auto prep = model.prepare(copy_example());
    CHECK(model.greedy_decode(prep, 10).empty());
}

TEST_CASE("a constant-output model emits the fixed token until the cap", "[decoder]") {
    Vocabulary vocab = tiny_vocab();
    auto cfg = toy_model_config();
    cfg.force_p_gen = 1.0;
    Graph2Seq<double> model(vocab, cfg, 75);
    int tok = vocab.lookup("city");
    for (auto *p : model.params().all()) {
        if (p->name == "decoder.out.w") p->value.zero();
        if (p->name == "decoder.out.b") {
            p->value.zero();
            p->value(0, tok) = 50.0;
        }
    }
    auto prep = model.prepare(copy_example());
    auto tokens = model.greedy_decode(prep, 4);
    CHECK(tokens == std::vector<std::string>{"city", "city", "city", "city"});
}

TEST_CASE("beam width 1 is token-identical to greedy on random models", "[decoder]") {
    Vocabulary vocab = tiny_vocab();
    Rng rng(76);
    for (int iter = 0; iter < 20; ++iter) {
        Graph2Seq<double> model(vocab, toy_model_config(), 7600 + iter);
        auto ex = testutil::random_example(rng, {"blue", "green", "north", "city"});
        auto prep = model.prepare(ex);
        auto greedy = model.greedy_decode(prep, 8);
        auto beam = model.beam_decode(prep, 1, 8);
        CHECK(greedy == beam.tokens);
    }
}

TEST_CASE("wider beams never return a worse normalized score", "[decoder]") {
    Vocabulary vocab = tiny_vocab();
    Rng rng(77);
    for (int iter = 0; iter < 100; ++iter) {
        Graph2Seq<double> model(vocab, toy_model_config(), 7700 + iter);
        auto ex = testutil::random_example(rng, {"blue", "green", "north"});
        auto prep = model.prepare(ex);
        auto one = model.beam_decode(prep, 1, 6);
        auto five = model.beam_decode(prep, 5, 6);
        CHECK(five.norm_logp >= one.norm_logp - 1e-12);
    }
}

namespace {

/// Exhaustive search over every emission sequence up to max_len (EOS
/// terminal or truncated), scored like the beam: mean step log-prob with
/// lexicographic tie-breaking.
struct OracleBest {
    std::vector<int> seq;
    double norm = -1e18;
    bool set = false;
};

void consider(OracleBest &best, const std::vector<int> &seq, double norm) {
    if (!best.set || norm > best.norm ||
        (norm == best.norm &&
         std::lexicographical_compare(seq.begin(), seq.end(), best.seq.begin(), best.seq.end()))) {
        best = {seq, norm, true};
    }
}

} // namespace

TEST_CASE("exhaustive enumeration confirms beam optimality on toy instances", "[decoder]") {
    Vocabulary vocab; // 4 specials + 2 content tokens = 6 symbols
    vocab.add("a");
    vocab.add("b");
    vocab.freeze();

    for (int iter = 0; iter < 3; ++iter) {
        auto cfg = testutil::tiny_model_config<double>();
        Graph2Seq<double> model(vocab, cfg, 780 + iter);
        QGExample ex;
        ex.id = "toy";
        ex.graph.entities = {{0, "a b", false}, {1, "b", true}};
        ex.graph.edges = {{0, "a", 0, 1}};
        ex.answers = {1};
        ex.question = tokenize("a b ?");
        auto prep = model.prepare(ex);

        // extended space: 6 vocab symbols + "a b"; "b" pools at its own index
        const int max_len = 3;
        ExtendedVocabulary probe(vocab);
        model.copy_index_map(prep, probe);
        int ext_total = probe.total();

        OracleBest best;
        std::vector<int> seq;
        std::function<void(int)> walk = [&](int depth) {
            for (int sym = 0; sym < ext_total; ++sym) {
                seq.push_back(sym);
                bool is_eos = sym == Vocabulary::kEos;
                if (is_eos || depth + 1 == max_len) {
                    Tape<double> tape;
                    ExtendedVocabulary ext(vocab);
                    model.copy_index_map(prep, ext);
                    Rng rng(0);
                    auto lps = model.sequence_logps(tape, prep, ext, seq, false, rng);
                    double sum = 0;
                    for (auto lp : lps) sum += tape.value(lp)(0, 0);
                    std::vector<int> emitted(seq.begin(), is_eos ? seq.end() - 1 : seq.end());
                    consider(best, emitted, sum / static_cast<double>(seq.size()));
                } else {
                    walk(depth + 1);
                }
                seq.pop_back();
            }
        };
        walk(0);

        auto beam = model.beam_decode(prep, 1000, max_len);
        CHECK(beam.ext_seq == best.seq);
        CHECK(beam.norm_logp == Approx(best.norm).margin(1e-9));
    }
}

TEST_CASE("input feeding off and unidirectional encoders decode end to end", "[decoder]") {
    Vocabulary vocab = tiny_vocab();
    auto ex = copy_example();

    auto no_feed = toy_model_config();
    no_feed.input_feed = false;
    Graph2Seq<double> plain(vocab, no_feed, 95);
    auto prep = plain.prepare(ex);
    CHECK_NOTHROW(plain.greedy_decode(prep, 8));
    {
        Tape<double> tape;
        ExtendedVocabulary ext(vocab);
        Rng tf(0);
        auto fwd = plain.forward_teacher(tape, prep, ext, 1.0, tf, false);
        auto loss = xent_loss(tape, fwd.dists, fwd.gold, 0.2);
        CHECK(std::isfinite(tape.value(loss.loss)(0, 0)));
    }

    for (auto dir : {EncoderDirection::Forward, EncoderDirection::Backward}) {
        auto cfg = toy_model_config();
        cfg.direction = dir;
        Graph2Seq<double> uni(vocab, cfg, 96);
        auto p = uni.prepare(ex);
        CHECK_NOTHROW(uni.beam_decode(p, 3, 8));
    }
}

TEST_CASE("copy-path gradients match finite differences through a step", "[decoder]") {
    Vocabulary vocab = tiny_vocab();
    Graph2Seq<double> model(vocab, toy_model_config(), 79);
    auto prep = model.prepare(copy_example());
    REQUIRE(std::any_of(prep.target.steps.begin(), prep.target.steps.end(), [](const auto &s) {
        return s.kind == CopyAlignedTarget::Kind::Copy;
    }));
    auto loss_value = [&](Tape<double> &tape) {
        ExtendedVocabulary ext(vocab);
        Rng rng(0);
        auto fwd = model.forward_teacher(tape, prep, ext, 1.0, rng, false);
        return xent_loss(tape, fwd.dists, fwd.gold, 0.0).loss;
    };
    auto report = testutil::check_gradients(model.params(), loss_value);
    INFO(report.worst_param);
    CHECK(report.max_rel_err < 1e-4);
}
