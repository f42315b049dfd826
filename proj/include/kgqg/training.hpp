#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgqg/metrics.hpp"
#include "kgqg/model.hpp"

namespace kgqg {

template <typename F>
struct TrainConfig {
    int stage = 1;             // 1 = cross-entropy, 2 = hybrid RL fine-tune
    double lr = 1e-3;          // stage-1 Adam learning rate
    double rl_lr = 1e-5;       // stage-2 learning rate (2e-5 for PQ)
    int batch_size = 30;
    double grad_clip = 10.0;   // global norm
    double label_smoothing = 0.2;
    double tf_init = 0.8;      // teacher forcing start probability
    double tf_decay = 0.9999;  // per training step
    double gamma = 0.02;       // RL share of the hybrid loss (0.07 for PQ)
    double reward_bleu = 1.0;
    double reward_rouge = 0.02;
    double lr_reduce_factor = 0.5;
    int lr_patience = 3;        // epochs without dev improvement before reducing
    int early_stop_patience = 10;
    int beam_width = 5;         // final evaluation; epoch-level dev scoring is greedy
    int max_epochs = 100;
    int max_decode_len = 40;
    std::uint64_t seed = 42;
    std::string checkpoint_dir; // empty = keep checkpoints in memory only
};

/// p(step) = tf_init * tf_decay^step. At every decoding step an independent
/// draw against this probability picks the gold input over the model's own
/// greedy output.
inline double teacher_forcing_schedule(long step, double tf_init = 0.8,
                                       double tf_decay = 0.9999) {
    require(step >= 0, "teacher forcing step must be >= 0");
    return tf_init * std::pow(tf_decay, static_cast<double>(step));
}

template <typename F>
struct XentLoss {
    typename Tape<F>::Var loss = -1;
    bool clamped_zero_prob = false; // a gold symbol had zero probability
};

/// Mean over steps of -sum_w q(w) log P(w) with q = (1 - eps) on the gold
/// extended index plus eps uniform over the extended vocabulary. Extended
/// slots belonging to other batch examples' names have structurally zero
/// probability, so the uniform mass is spread over the example's reachable
/// support (base vocabulary plus its own node names). The sequences here
/// carry no padding, so every step counts.
template <typename F>
XentLoss<F> xent_loss(Tape<F> &tape, const std::vector<typename Tape<F>::Var> &dists,
                      const std::vector<int> &gold, double smoothing) {
    require(dists.size() == gold.size(), "xent_loss: step count mismatch");
    require(!dists.empty(), "xent_loss: no steps");
    using Var = typename Tape<F>::Var;
    XentLoss<F> result;
    Var acc = -1;
    for (std::size_t t = 0; t < dists.size(); ++t) {
        int cols = 0, support = 0;
        {
            const Mat<F> &dv = tape.value(dists[t]);
            require(dv.rows == 1, "xent_loss: distribution must be a row");
            cols = dv.cols;
            require(gold[t] >= 0 && gold[t] < cols, "xent_loss: gold index out of range");
            if (!(dv(0, gold[t]) > F(0))) result.clamped_zero_prob = true;
            for (int j = 0; j < cols; ++j) support += dv(0, j) > F(0) ? 1 : 0;
        }
        Var step_loss;
        if (smoothing > 0 && support > 0) {
            Mat<F> mask_values(1, cols);
            for (int j = 0; j < cols; ++j)
                mask_values(0, j) = tape.value(dists[t])(0, j) > F(0) ? F(1) : F(0);
            Var logd = tape.logp(dists[t]);
            Var lg = tape.slice_cols(logd, gold[t], gold[t] + 1);
            Var ls = tape.sum(tape.mul(logd, tape.input(std::move(mask_values))));
            F eps_unif = static_cast<F>(smoothing / support);
            step_loss = tape.add(tape.cscale(lg, static_cast<F>(-(1.0 - smoothing))),
                                 tape.cscale(ls, -eps_unif));
        } else {
            Var pg = tape.slice_cols(dists[t], gold[t], gold[t] + 1);
            step_loss = tape.cscale(tape.logp(pg), F(-1));
        }
        acc = acc < 0 ? step_loss : tape.add(acc, step_loss);
    }
    result.loss = tape.cscale(acc, F(1) / static_cast<F>(dists.size()));
    return result;
}

template <typename F>
struct ScstLoss {
    typename Tape<F>::Var loss = -1; // (r(baseline) - r(sample)) * sum_t log P(sampled_t)
    double reward_baseline = 0;
    double reward_sampled = 0;
    std::vector<int> sampled_seq;
};

using RewardFn = std::function<double(const std::vector<std::string> &,
                                      const std::vector<std::string> &)>;

/// Self-critical loss for one example: the greedy rollout is the reward
/// baseline, the multinomial sample provides the log-probability terms.
/// Rewards enter as constants, so gradients flow only through the log-probs.
template <typename F>
ScstLoss<F> scst_loss(Tape<F> &tape, const Graph2Seq<F> &model,
                      const typename Graph2Seq<F>::Prepared &prep, ExtendedVocabulary &ext,
                      const RewardFn &reward_fn, Rng &sample_rng, Rng &dropout_rng, int max_len,
                      bool training_dropout) {
    ScstLoss<F> out;
    auto baseline = model.greedy_decode(prep, max_len);
    out.reward_baseline = reward_fn(baseline, prep.example.question);
    auto sampled = model.sample_decode(tape, prep, ext, sample_rng, max_len, training_dropout,
                                       dropout_rng);
    out.reward_sampled = reward_fn(sampled.tokens, prep.example.question);
    out.sampled_seq = sampled.ext_seq;
    typename Tape<F>::Var sum_lp = -1;
    for (auto lp : sampled.step_logps) sum_lp = sum_lp < 0 ? lp : tape.add(sum_lp, lp);
    out.loss = tape.cscale(sum_lp, static_cast<F>(out.reward_baseline - out.reward_sampled));
    return out;
}

/// gamma * L_rl + (1 - gamma) * L_lm.
template <typename F>
typename Tape<F>::Var hybrid_loss(Tape<F> &tape, typename Tape<F>::Var l_rl,
                                  typename Tape<F>::Var l_lm, double gamma) {
    require(gamma >= 0.0 && gamma <= 1.0, "gamma must be in [0, 1]");
    return tape.add(tape.cscale(l_rl, static_cast<F>(gamma)),
                    tape.cscale(l_lm, static_cast<F>(1.0 - gamma)));
}

/// Dev-score bookkeeping: reduce the learning rate after `lr_patience`
/// epochs without improvement, stop after `early_stop_patience`.
class EpochScheduler {
  public:
    EpochScheduler(double factor, int lr_patience, int stop_patience)
        : factor_(factor), lr_patience_(lr_patience), stop_patience_(stop_patience) {}

    struct Decision {
        bool improved = false;
        bool reduce_lr = false;
        bool stop = false;
    };

    Decision observe(double score) {
        Decision d;
        if (score > best_) {
            best_ = score;
            stall_ = 0;
            since_reduce_ = 0;
            d.improved = true;
            return d;
        }
        ++stall_;
        ++since_reduce_;
        if (since_reduce_ >= lr_patience_) {
            d.reduce_lr = true;
            since_reduce_ = 0;
        }
        if (stall_ >= stop_patience_) d.stop = true;
        return d;
    }

    double best() const { return best_; }
    double factor() const { return factor_; }

  private:
    double factor_;
    int lr_patience_;
    int stop_patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int stall_ = 0;
    int since_reduce_ = 0;
};

struct CheckpointMeta {
    std::string config_hash;
    int epoch = 0;
    double best_dev_bleu4 = 0;
    int stage = 1;
    double lr = 0;
    long adam_steps = 0;
    std::uint64_t seed = 0;
    std::string rng_state;

    nlohmann::json to_json() const {
        return {{"config_hash", config_hash}, {"epoch", epoch},
                {"best_dev_bleu4", best_dev_bleu4}, {"stage", stage},
                {"lr", lr},                         {"adam_steps", adam_steps},
                {"seed", seed},                     {"rng_state", rng_state}};
    }

    static CheckpointMeta from_json(const nlohmann::json &j) {
        CheckpointMeta m;
        m.config_hash = j.at("config_hash").get<std::string>();
        m.epoch = j.at("epoch").get<int>();
        m.best_dev_bleu4 = j.at("best_dev_bleu4").get<double>();
        m.stage = j.at("stage").get<int>();
        m.lr = j.at("lr").get<double>();
        m.adam_steps = j.at("adam_steps").get<long>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.rng_state = j.at("rng_state").get<std::string>();
        return m;
    }
};

namespace detail {
constexpr std::uint32_t kCkptMagic = 0x4b475147; // "GQGK" little-endian
constexpr std::uint32_t kCkptVersion = 1;
} // namespace detail

/// Checkpoint file: magic, version, JSON manifest (length-prefixed), then
/// the parameter tensors with optimizer moments.
template <typename F>
void save_checkpoint(const std::string &path, const Graph2Seq<F> &model,
                     const CheckpointMeta &meta) {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), "cannot write checkpoint ", path);
    auto manifest = meta.to_json().dump();
    std::uint32_t magic = detail::kCkptMagic, version = detail::kCkptVersion;
    std::uint64_t len = manifest.size();
    os.write(reinterpret_cast<const char *>(&magic), sizeof magic);
    os.write(reinterpret_cast<const char *>(&version), sizeof version);
    os.write(reinterpret_cast<const char *>(&len), sizeof len);
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    model.params().save(os, true);
    require(bool(os), "failed writing checkpoint ", path);
}

inline CheckpointMeta read_checkpoint_meta(const std::string &path, std::ifstream &is) {
    require(bool(is), "cannot read checkpoint ", path);
    std::uint32_t magic = 0, version = 0;
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char *>(&magic), sizeof magic);
    is.read(reinterpret_cast<char *>(&version), sizeof version);
    is.read(reinterpret_cast<char *>(&len), sizeof len);
    require(bool(is) && magic == detail::kCkptMagic, path, " is not a checkpoint file");
    require(version == detail::kCkptVersion, path, " has unsupported checkpoint version ", version);
    std::string manifest(len, '\0');
    is.read(manifest.data(), static_cast<std::streamsize>(len));
    require(bool(is), "truncated checkpoint ", path);
    return CheckpointMeta::from_json(nlohmann::json::parse(manifest));
}

inline CheckpointMeta read_checkpoint_meta(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    return read_checkpoint_meta(path, is);
}

/// Loads parameters and moments; refuses when the manifest's config hash
/// does not match the model.
template <typename F>
CheckpointMeta load_checkpoint(const std::string &path, Graph2Seq<F> &model) {
    std::ifstream is(path, std::ios::binary);
    CheckpointMeta meta = read_checkpoint_meta(path, is);
    require(meta.config_hash == model.config_hash(), "checkpoint ", path,
            " was produced by an incompatible configuration (hash ", meta.config_hash,
            ", model has ", model.config_hash(), ")");
    model.params().load(is);
    return meta;
}

template <typename F>
class Trainer {
  public:
    using Prepared = typename Graph2Seq<F>::Prepared;

    struct EpochStats {
        int epoch = 0;
        int stage = 1;
        double mean_loss = 0;
        double dev_bleu4 = 0;
        double lr = 0;
        bool improved = false;
        double seconds = 0;
    };
    using EpochCallback = std::function<void(const EpochStats &)>;

    Trainer(Graph2Seq<F> &model, const TrainConfig<F> &cfg)
        : model_(model), cfg_(cfg), rng_(cfg.seed),
          adam_(cfg.stage == 1 ? cfg.lr : cfg.rl_lr),
          scheduler_(cfg.lr_reduce_factor, cfg.lr_patience, cfg.early_stop_patience) {}

    Adam<F> &optimizer() { return adam_; }
    long global_step() const { return global_step_; }
    void set_global_step(long s) { global_step_ = s; }
    Rng &rng() { return rng_; }

    /// Greedy corpus BLEU-4 on already-prepared examples.
    double evaluate_bleu(const std::vector<Prepared> &examples) const {
        std::vector<std::vector<std::string>> cands, refs;
        for (const auto &p : examples) {
            cands.push_back(model_.greedy_decode(p, cfg_.max_decode_len));
            refs.push_back(p.example.question);
        }
        return metrics::bleu4(cands, refs, metrics::BleuMode::Corpus);
    }

    /// One optimizer step over a batch; returns the batch loss value.
    double train_batch(const std::vector<const Prepared *> &batch) {
        Tape<F> tape;
        ExtendedVocabulary ext(model_.vocab());
        for (const auto *p : batch) model_.copy_index_map(*p, ext); // batch-level union
        double tf = teacher_forcing_schedule(global_step_, cfg_.tf_init, cfg_.tf_decay);
        typename Tape<F>::Var acc = -1;
        RewardFn reward_fn = [&](const auto &cand, const auto &ref) {
            return metrics::reward(cand, ref, cfg_.reward_bleu, cfg_.reward_rouge);
        };
        for (const auto *p : batch) {
            typename Tape<F>::Var example_loss;
            auto fwd = model_.forward_teacher(tape, *p, ext, tf, rng_, true);
            auto xl = xent_loss(tape, fwd.dists, fwd.gold, cfg_.label_smoothing);
            if (cfg_.stage == 1) {
                example_loss = xl.loss;
            } else {
                auto rl = scst_loss(tape, model_, *p, ext, reward_fn, rng_, rng_,
                                    cfg_.max_decode_len, true);
                example_loss = hybrid_loss(tape, rl.loss, xl.loss, cfg_.gamma);
            }
            acc = acc < 0 ? example_loss : tape.add(acc, example_loss);
        }
        auto loss = tape.cscale(acc, F(1) / static_cast<F>(batch.size()));
        double loss_value = static_cast<double>(tape.value(loss)(0, 0));
        if (!std::isfinite(loss_value))
            fail("NaN loss at epoch ", epoch_, ", step ", global_step_);
        model_.params().zero_grads();
        tape.backward(loss);
        model_.params().apply_freezes();
        clip_global_norm(model_.params(), cfg_.grad_clip);
        adam_.step(model_.params());
        ++global_step_;
        return loss_value;
    }

    struct FitResult {
        double best_dev_bleu4 = 0;
        int best_epoch = 0;
        int epochs_run = 0;
    };

    /// Full training loop with plateau LR reduction and early stopping. The
    /// best-dev parameters are restored into the model at the end.
    FitResult fit(const std::vector<QGExample> &train, const std::vector<QGExample> &dev,
                  const EpochCallback &callback = nullptr) {
        require(!train.empty(), "fit: empty training set");
        require(!dev.empty(), "fit: empty dev set");
        std::vector<Prepared> train_prep, dev_prep;
        for (const auto &ex : train) train_prep.push_back(model_.prepare(ex));
        for (const auto &ex : dev) dev_prep.push_back(model_.prepare(ex));

        FitResult result;
        std::vector<Mat<F>> best_values = snapshot();
        for (epoch_ = 1; epoch_ <= cfg_.max_epochs; ++epoch_) {
            auto start = std::chrono::steady_clock::now();
            std::vector<std::size_t> order(train_prep.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            shuffle(order);
            double loss_sum = 0;
            int batches = 0;
            for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg_.batch_size)) {
                std::vector<const Prepared *> batch;
                for (std::size_t i = b;
                     i < std::min(order.size(), b + static_cast<std::size_t>(cfg_.batch_size)); ++i)
                    batch.push_back(&train_prep[order[i]]);
                loss_sum += train_batch(batch);
                ++batches;
            }
            double dev_bleu = evaluate_bleu(dev_prep);
            auto decision = scheduler_.observe(dev_bleu);
            if (decision.improved) {
                best_values = snapshot();
                result.best_dev_bleu4 = dev_bleu;
                result.best_epoch = epoch_;
                if (!cfg_.checkpoint_dir.empty())
                    save_checkpoint(cfg_.checkpoint_dir + "/best.ckpt", model_, meta(dev_bleu));
            }
            if (decision.reduce_lr) adam_.set_lr(adam_.lr() * cfg_.lr_reduce_factor);
            if (!cfg_.checkpoint_dir.empty())
                save_checkpoint(cfg_.checkpoint_dir + "/last.ckpt", model_, meta(dev_bleu));
            EpochStats stats;
            stats.epoch = epoch_;
            stats.stage = cfg_.stage;
            stats.mean_loss = batches > 0 ? loss_sum / batches : 0;
            stats.dev_bleu4 = dev_bleu;
            stats.lr = adam_.lr();
            stats.improved = decision.improved;
            stats.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (callback) callback(stats);
            result.epochs_run = epoch_;
            if (decision.stop) break;
        }
        restore(best_values);
        if (!cfg_.checkpoint_dir.empty()) {
            CheckpointMeta best_meta = meta(result.best_dev_bleu4);
            best_meta.epoch = result.best_epoch;
            save_checkpoint(cfg_.checkpoint_dir + "/best.ckpt", model_, best_meta);
        }
        return result;
    }

    CheckpointMeta meta(double dev_bleu) const {
        CheckpointMeta m;
        m.config_hash = model_.config_hash();
        m.epoch = epoch_;
        m.best_dev_bleu4 = dev_bleu;
        m.stage = cfg_.stage;
        m.lr = adam_.lr();
        m.adam_steps = adam_.step_count();
        m.seed = cfg_.seed;
        m.rng_state = rng_.state();
        return m;
    }

  private:
    Graph2Seq<F> &model_;
    TrainConfig<F> cfg_;
    Rng rng_;
    Adam<F> adam_;
    EpochScheduler scheduler_;
    long global_step_ = 0;
    int epoch_ = 0;

    std::vector<Mat<F>> snapshot() const {
        std::vector<Mat<F>> vals;
        for (const auto *p : model_.params().all()) vals.push_back(p->value);
        return vals;
    }

    void restore(const std::vector<Mat<F>> &vals) {
        auto &all = model_.params().all();
        for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = vals[i];
    }

    void shuffle(std::vector<std::size_t> &order) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng_.index(i)]);
    }
};

} // namespace kgqg
