#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "kgqg/common.hpp"

namespace kgqg::metrics {

using Tokens = std::vector<std::string>;

/// Clipped n-gram match and candidate n-gram counts for orders 1..4, plus
/// lengths for the brevity penalty.
struct BleuStats {
    std::array<long, 4> match{0, 0, 0, 0};
    std::array<long, 4> total{0, 0, 0, 0};
    long cand_len = 0;
    long ref_len = 0;

    BleuStats &operator+=(const BleuStats &o) {
        for (int n = 0; n < 4; ++n) {
            match[n] += o.match[n];
            total[n] += o.total[n];
        }
        cand_len += o.cand_len;
        ref_len += o.ref_len;
        return *this;
    }
};

namespace detail {
inline std::map<std::vector<std::string>, long> ngram_counts(const Tokens &toks, int n) {
    std::map<std::vector<std::string>, long> counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
        ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
    return counts;
}
} // namespace detail

inline BleuStats bleu_stats(const Tokens &cand, const Tokens &ref) {
    BleuStats s;
    s.cand_len = static_cast<long>(cand.size());
    s.ref_len = static_cast<long>(ref.size());
    for (int n = 1; n <= 4; ++n) {
        auto cc = detail::ngram_counts(cand, n);
        auto rc = detail::ngram_counts(ref, n);
        long total = 0, match = 0;
        for (const auto &[gram, count] : cc) {
            total += count;
            auto it = rc.find(gram);
            if (it != rc.end()) match += std::min(count, it->second);
        }
        s.total[n - 1] = total;
        s.match[n - 1] = match;
    }
    return s;
}

inline double brevity_penalty(long cand_len, long ref_len) {
    if (cand_len == 0) return 0.0;
    if (cand_len >= ref_len) return 1.0;
    return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
}

/// Geometric mean of the four modified precisions times the brevity
/// penalty. With smoothing, orders 2..4 get add-one counts (order 1 stays
/// raw so token-disjoint pairs score 0).
inline double bleu_from_stats(const BleuStats &s, bool smooth) {
    if (s.cand_len == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 0; n < 4; ++n) {
        double m = static_cast<double>(s.match[n]);
        double t = static_cast<double>(s.total[n]);
        if (smooth && n > 0) {
            m += 1.0;
            t += 1.0;
        }
        if (m <= 0.0 || t <= 0.0) return 0.0;
        log_sum += std::log(m / t);
    }
    return brevity_penalty(s.cand_len, s.ref_len) * std::exp(log_sum / 4.0);
}

inline double sentence_bleu4(const Tokens &cand, const Tokens &ref) {
    return bleu_from_stats(bleu_stats(cand, ref), true);
}

enum class BleuMode { Corpus, Sentence };

/// Corpus mode pools n-gram statistics over all pairs before taking the
/// geometric mean; sentence mode averages per-pair smoothed scores.
inline double bleu4(const std::vector<Tokens> &cands, const std::vector<Tokens> &refs,
                    BleuMode mode = BleuMode::Corpus) {
    require(cands.size() == refs.size(), "bleu4: candidate/reference count mismatch");
    require(!cands.empty(), "bleu4: empty input");
    if (mode == BleuMode::Sentence) {
        double sum = 0.0;
        for (std::size_t i = 0; i < cands.size(); ++i) sum += sentence_bleu4(cands[i], refs[i]);
        return sum / static_cast<double>(cands.size());
    }
    BleuStats pooled;
    for (std::size_t i = 0; i < cands.size(); ++i) pooled += bleu_stats(cands[i], refs[i]);
    return bleu_from_stats(pooled, false);
}

inline long lcs_length(const Tokens &a, const Tokens &b) {
    std::vector<long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// LCS F-measure with beta = 1.2 (recall-weighted).
inline double rouge_l(const Tokens &cand, const Tokens &ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    long lcs = lcs_length(cand, ref);
    if (lcs == 0) return 0.0;
    double p = static_cast<double>(lcs) / static_cast<double>(cand.size());
    double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
    double beta2 = 1.2 * 1.2;
    return (1.0 + beta2) * p * r / (r + beta2 * p);
}

/// Exact-match unigram METEOR: one-to-one alignment (preferring the
/// adjacent reference position, then the leftmost), recall-weighted
/// harmonic mean 10PR/(R+9P), fragmentation penalty 0.5*(chunks/matches)^3.
/// Not comparable to the official metric: no stemming or synonyms.
inline double meteor_simplified(const Tokens &cand, const Tokens &ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    std::vector<bool> used(ref.size(), false);
    std::vector<int> align(cand.size(), -1);
    int prev_ref = -1;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        int pick = -1;
        std::size_t adjacent = static_cast<std::size_t>(prev_ref + 1);
        if (adjacent < ref.size() && !used[adjacent] && ref[adjacent] == cand[i]) {
            pick = static_cast<int>(adjacent);
        } else {
            for (std::size_t j = 0; j < ref.size(); ++j)
                if (!used[j] && ref[j] == cand[i]) {
                    pick = static_cast<int>(j);
                    break;
                }
        }
        if (pick >= 0) {
            used[static_cast<std::size_t>(pick)] = true;
            align[i] = pick;
            prev_ref = pick;
        }
    }
    long matches = 0, chunks = 0;
    int last_cand = -2, last_ref = -2;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (align[i] < 0) continue;
        ++matches;
        bool contiguous = static_cast<int>(i) == last_cand + 1 && align[i] == last_ref + 1;
        if (!contiguous) ++chunks;
        last_cand = static_cast<int>(i);
        last_ref = align[i];
    }
    if (matches == 0) return 0.0;
    double p = static_cast<double>(matches) / static_cast<double>(cand.size());
    double r = static_cast<double>(matches) / static_cast<double>(ref.size());
    double f_mean = 10.0 * p * r / (r + 9.0 * p);
    double frag = static_cast<double>(chunks) / static_cast<double>(matches);
    return f_mean * (1.0 - 0.5 * frag * frag * frag);
}

/// Scalar training reward: sentence BLEU-4 plus 0.02 * ROUGE-L.
inline double reward(const Tokens &cand, const Tokens &ref, double bleu_ratio = 1.0,
                     double rouge_ratio = 0.02) {
    return bleu_ratio * sentence_bleu4(cand, ref) + rouge_ratio * rouge_l(cand, ref);
}

struct SentenceScores {
    double bleu4 = 0;
    double rouge_l = 0;
    double meteor = 0;
};

struct MetricReport {
    double bleu4 = 0;            // corpus-level, pooled statistics
    double rouge_l = 0;          // mean of sentence scores
    double meteor_simplified = 0; // mean of sentence scores
    std::vector<SentenceScores> sentences;
};

inline MetricReport evaluate_corpus(const std::vector<Tokens> &cands,
                                    const std::vector<Tokens> &refs) {
    require(cands.size() == refs.size(), "evaluate_corpus: count mismatch");
    require(!cands.empty(), "evaluate_corpus: empty input");
    MetricReport report;
    report.bleu4 = bleu4(cands, refs, BleuMode::Corpus);
    for (std::size_t i = 0; i < cands.size(); ++i) {
        SentenceScores s;
        s.bleu4 = sentence_bleu4(cands[i], refs[i]);
        s.rouge_l = rouge_l(cands[i], refs[i]);
        s.meteor = meteor_simplified(cands[i], refs[i]);
        report.sentences.push_back(s);
        report.rouge_l += s.rouge_l;
        report.meteor_simplified += s.meteor;
    }
    report.rouge_l /= static_cast<double>(cands.size());
    report.meteor_simplified /= static_cast<double>(cands.size());
    return report;
}

} // namespace kgqg::metrics
