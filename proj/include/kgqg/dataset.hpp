#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kgqg/graph.hpp"
#include "kgqg/vocab.hpp"

namespace kgqg {

/// One subject-predicate-object edge, by id into the example's tables.
struct Triple {
    int subject = 0;
    int predicate = 0;
    int object = 0;
};

struct QGExample {
    std::string id;
    KGSubgraph graph;
    std::vector<int> answers; // entity ids, V^a subset of V
    std::vector<std::string> question; // lowercase tokens

    std::vector<Triple> triples() const {
        std::vector<Triple> out;
        out.reserve(graph.edges.size());
        for (const auto &e : graph.edges) out.push_back({e.source, e.id, e.target});
        return out;
    }
};

/// Copy-supervision target: the question with maximal entity-name mentions
/// collapsed into single COPY steps.
struct CopyAlignedTarget {
    enum class Kind { Gen, Copy };
    struct Step {
        Kind kind;
        int value; // vocab index for Gen, entity node id for Copy
    };
    std::vector<Step> steps;
    std::vector<std::string> surface;
};

/// Reads a JSON-lines corpus. Each line holds `triples` (list of
/// [subject_text, predicate_text, object_text]), `answers` (entity texts),
/// `question` (string) and optionally `id`.
inline std::vector<QGExample> load_corpus(const std::string &path, const std::string &split) {
    std::ifstream is(path);
    require(bool(is), "cannot open corpus file ", path);
    std::vector<QGExample> examples;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception &e) {
            fail(path, " line ", lineno, ": malformed JSON: ", e.what());
        }
        QGExample ex;
        try {
            ex.id = j.value("id", split + "-" + std::to_string(lineno));
            require(j.contains("triples") && j["triples"].is_array(),
                    "missing or non-array 'triples'");
            require(j.contains("answers") && j["answers"].is_array(),
                    "missing or non-array 'answers'");
            require(j.contains("question") && j["question"].is_string(),
                    "missing or non-string 'question'");
            require(!j["triples"].empty(), "graph has no edges");

            std::unordered_map<std::string, int> entity_ids;
            auto intern_entity = [&](const std::string &text) {
                auto it = entity_ids.find(text);
                if (it != entity_ids.end()) return it->second;
                int id = static_cast<int>(ex.graph.entities.size());
                ex.graph.entities.push_back({id, text, false});
                entity_ids.emplace(text, id);
                return id;
            };
            for (const auto &t : j["triples"]) {
                require(t.is_array() && t.size() == 3, "triple is not a 3-element array");
                int s = intern_entity(t[0].get<std::string>());
                std::string pred = t[1].get<std::string>();
                int o = intern_entity(t[2].get<std::string>());
                int pid = static_cast<int>(ex.graph.edges.size());
                ex.graph.edges.push_back({pid, pred, s, o});
            }
            for (const auto &ans : j["answers"]) {
                std::string text = ans.get<std::string>();
                auto it = entity_ids.find(text);
                require(it != entity_ids.end(), "example ", ex.id, ": answer '", text,
                        "' does not match any entity");
                if (!ex.graph.entities[it->second].is_answer) {
                    ex.graph.entities[it->second].is_answer = true;
                    ex.answers.push_back(it->second);
                }
            }
            ex.question = tokenize(j["question"].get<std::string>());
            require(!ex.question.empty(), "example ", ex.id, ": question is empty");
            ex.graph.validate();
            for (int a : ex.answers)
                require(a >= 0 && a < static_cast<int>(ex.graph.entities.size()),
                        "answer id out of range");
        } catch (const Error &) {
            throw;
        } catch (const std::exception &e) {
            fail(path, " line ", lineno, ": ", e.what());
        }
        examples.push_back(std::move(ex));
    }
    return examples;
}

/// Token frequencies over question, node and edge text.
inline std::map<std::string, long> token_frequencies(const std::vector<QGExample> &examples) {
    std::map<std::string, long> freq;
    for (const auto &ex : examples) {
        for (const auto &tok : ex.question) ++freq[tok];
        for (const auto &ent : ex.graph.entities)
            for (const auto &tok : tokenize(ent.text)) ++freq[tok];
        for (const auto &edge : ex.graph.edges)
            for (const auto &tok : tokenize(edge.text)) ++freq[tok];
    }
    return freq;
}

/// Keeps tokens with frequency >= min_freq; ordering is frequency
/// descending, ties lexicographic, so rebuilds are reproducible.
inline Vocabulary build_vocab(const std::vector<QGExample> &examples, long min_freq) {
    require(!examples.empty(), "build_vocab: empty example list");
    auto freq = token_frequencies(examples);
    std::vector<std::pair<std::string, long>> kept(freq.begin(), freq.end());
    kept.erase(std::remove_if(kept.begin(), kept.end(),
                              [&](const auto &kv) { return kv.second < min_freq; }),
               kept.end());
    std::sort(kept.begin(), kept.end(), [](const auto &a, const auto &b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto &[tok, n] : kept) vocab.add(tok);
    vocab.freeze();
    return vocab;
}

struct CopySpan {
    int start = 0;
    int length = 0;
    int node = 0;
};

/// All non-overlapping entity-name matches in the question, chosen
/// longest-match-first; ties broken by earliest position, then smallest
/// node id.
inline std::vector<CopySpan> find_copy_spans(const std::vector<std::string> &question,
                                             const std::vector<std::vector<std::string>> &names) {
    std::vector<CopySpan> candidates;
    for (std::size_t node = 0; node < names.size(); ++node) {
        const auto &name = names[node];
        if (name.empty() || name.size() > question.size()) continue;
        for (std::size_t start = 0; start + name.size() <= question.size(); ++start) {
            bool hit = true;
            for (std::size_t k = 0; k < name.size(); ++k)
                if (question[start + k] != name[k]) {
                    hit = false;
                    break;
                }
            if (hit)
                candidates.push_back({static_cast<int>(start), static_cast<int>(name.size()),
                                      static_cast<int>(node)});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const CopySpan &a, const CopySpan &b) {
        if (a.length != b.length) return a.length > b.length;
        if (a.start != b.start) return a.start < b.start;
        return a.node < b.node;
    });
    std::vector<bool> taken(question.size(), false);
    std::vector<CopySpan> chosen;
    for (const auto &c : candidates) {
        bool free = true;
        for (int k = 0; k < c.length; ++k)
            if (taken[static_cast<std::size_t>(c.start + k)]) {
                free = false;
                break;
            }
        if (!free) continue;
        for (int k = 0; k < c.length; ++k) taken[static_cast<std::size_t>(c.start + k)] = true;
        chosen.push_back(c);
    }
    std::sort(chosen.begin(), chosen.end(),
              [](const CopySpan &a, const CopySpan &b) { return a.start < b.start; });
    return chosen;
}

/// Collapses entity mentions into COPY steps; everything else becomes GEN
/// steps over the vocabulary. Expanding the result reproduces the question
/// tokens exactly.
inline CopyAlignedTarget align_copy_targets(const QGExample &ex, const Vocabulary &vocab,
                                            bool use_copy = true) {
    CopyAlignedTarget target;
    target.surface = ex.question;
    std::vector<CopySpan> spans;
    if (use_copy) {
        std::vector<std::vector<std::string>> names;
        names.reserve(ex.graph.entities.size());
        for (const auto &ent : ex.graph.entities) names.push_back(tokenize(ent.text));
        spans = find_copy_spans(ex.question, names);
    }
    std::size_t next_span = 0;
    for (std::size_t pos = 0; pos < ex.question.size();) {
        if (next_span < spans.size() && spans[next_span].start == static_cast<int>(pos)) {
            target.steps.push_back({CopyAlignedTarget::Kind::Copy, spans[next_span].node});
            pos += static_cast<std::size_t>(spans[next_span].length);
            ++next_span;
        } else {
            target.steps.push_back({CopyAlignedTarget::Kind::Gen, vocab.lookup(ex.question[pos])});
            ++pos;
        }
    }
    return target;
}

/// Inverse of align_copy_targets: expands COPY steps to their node's name
/// tokens and GEN steps to their token. GEN steps whose label is UNK expand
/// through the stored surface; every expansion is checked against the
/// surface, so a wrong alignment throws instead of passing silently.
inline std::vector<std::string> expand_target(const CopyAlignedTarget &target,
                                              const QGExample &ex, const Vocabulary &vocab) {
    std::vector<std::string> out;
    std::size_t cursor = 0;
    for (const auto &step : target.steps) {
        if (step.kind == CopyAlignedTarget::Kind::Copy) {
            for (const auto &tok : tokenize(ex.graph.entities[step.value].text)) {
                require(cursor < target.surface.size() && target.surface[cursor] == tok,
                        "copy step for node ", step.value, " does not match the surface");
                out.push_back(tok);
                ++cursor;
            }
        } else {
            require(cursor < target.surface.size(), "target steps overrun the surface");
            const std::string &tok = target.surface[cursor];
            require(vocab.lookup(tok) == step.value, "gen step label does not match the surface");
            out.push_back(tok);
            ++cursor;
        }
    }
    require(cursor == target.surface.size(), "target steps do not cover the surface");
    return out;
}

} // namespace kgqg
