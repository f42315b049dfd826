#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "kgqg/dataset.hpp"
#include "kgqg/model.hpp"

namespace testutil {

using kgqg::Mat;
using kgqg::ParamStore;
using kgqg::QGExample;
using kgqg::Rng;
using kgqg::Tape;
using kgqg::Vocabulary;

/// Small vocabulary used by the synthetic model fixtures.
inline Vocabulary tiny_vocab() {
    Vocabulary v;
    for (const char *t : {"what", "is", "the", "of", "who", "where", "born", "city",
                          "river", "blue", "green", "north", "?", "a", "b"})
        v.add(t);
    v.freeze();
    return v;
}

inline QGExample random_example(Rng &rng, const std::vector<std::string> &words,
                                int max_entities = 4, int max_edges = 4) {
    QGExample ex;
    ex.id = "rand";
    int n = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(max_entities - 1)));
    for (int i = 0; i < n; ++i) {
        std::string name = words[rng.index(words.size())];
        if (rng.bernoulli(0.4)) name += " " + words[rng.index(words.size())];
        name += " " + std::to_string(i); // distinct node texts
        ex.graph.entities.push_back({i, name, false});
    }
    int m = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_edges)));
    for (int e = 0; e < m; ++e) {
        int s = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
        int o = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
        ex.graph.edges.push_back({e, "rel " + std::to_string(e % 3), s, o});
    }
    int answer = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    ex.graph.entities[answer].is_answer = true;
    ex.answers.push_back(answer);
    int qlen = 3 + static_cast<int>(rng.index(5));
    for (int i = 0; i < qlen; ++i) ex.question.push_back(words[rng.index(words.size())]);
    // mention one entity so the copy path is exercised
    for (const auto &tok : kgqg::tokenize(ex.graph.entities[0].text)) ex.question.push_back(tok);
    ex.question.push_back("?");
    return ex;
}

template <typename F>
kgqg::ModelConfig<F> tiny_model_config() {
    kgqg::ModelConfig<F> cfg;
    cfg.word_dim = 6;
    cfg.lstm_hidden = 4;
    cfg.markup_dim = 3;
    cfg.hidden = 8;
    cfg.attn_dim = 7;
    cfg.hops = 2;
    cfg.dropout_embed = F(0);
    cfg.dropout_rnn = F(0);
    return cfg;
}

struct GradCheckReport {
    double max_rel_err = 0;
    std::string worst_param;
    int checked = 0;
};

/// Central finite differences over every parameter component. `loss_value`
/// must rebuild the identical forward pass on each call (no fresh
/// randomness). Relative error uses max(|ga|, |gn|, floor) so near-zero
/// gradients are compared absolutely.
template <typename BuildFn>
GradCheckReport check_gradients(ParamStore<double> &store, BuildFn loss_value,
                                double step = 1e-5, double floor = 1e-3) {
    GradCheckReport report;
    store.zero_grads();
    {
        Tape<double> tape;
        auto loss = loss_value(tape);
        tape.backward(loss);
    }
    std::vector<Mat<double>> analytic;
    for (auto *p : store.all()) analytic.push_back(p->grad);

    auto eval = [&]() {
        Tape<double> tape;
        auto loss = loss_value(tape);
        return tape.value(loss)(0, 0);
    };
    std::size_t pi = 0;
    for (auto *p : store.all()) {
        for (int i = 0; i < p->value.size(); ++i) {
            double keep = p->value.a[i];
            p->value.a[i] = keep + step;
            double up = eval();
            p->value.a[i] = keep - step;
            double down = eval();
            p->value.a[i] = keep;
            double fd = (up - down) / (2 * step);
            double ga = analytic[pi].a[i];
            double denom = std::max({std::abs(ga), std::abs(fd), floor});
            double rel = std::abs(ga - fd) / denom;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p->name + "[" + std::to_string(i) + "]";
            }
        }
        ++pi;
    }
    return report;
}

/// Unique temp directory for file-producing tests.
inline std::string temp_dir(const std::string &tag) {
    auto path = std::filesystem::temp_directory_path() /
                ("kgqg_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
    return path.string();
}

inline void write_file(const std::string &path, const std::string &content) {
    std::ofstream os(path);
    os << content;
}

} // namespace testutil
