#pragma once

#include <cstring>
#include <deque>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "kgqg/tape.hpp"

namespace kgqg {

template <typename F>
struct Param {
    std::string name;
    Mat<F> value;
    Mat<F> grad;
    Mat<F> m, v; // Adam moments
    std::vector<std::uint8_t> row_trainable; // empty = all rows trainable

    bool row_is_trainable(int r) const {
        return row_trainable.empty() || row_trainable[static_cast<std::size_t>(r)] != 0;
    }
};

/// Owns all model parameters in registration order; registration order is
/// the serialization order. Movable but not copyable: handed-out Param
/// pointers stay valid across moves (deque storage), a copy would not.
template <typename F>
class ParamStore {
  public:
    ParamStore() = default;
    ParamStore(const ParamStore &) = delete;
    ParamStore &operator=(const ParamStore &) = delete;
    ParamStore(ParamStore &&) = default;
    ParamStore &operator=(ParamStore &&) = default;

    Param<F> *add(const std::string &name, int rows, int cols) {
        params_.push_back(Param<F>{name, Mat<F>(rows, cols), Mat<F>(rows, cols),
                                   Mat<F>(rows, cols), Mat<F>(rows, cols), {}});
        order_.push_back(&params_.back());
        return order_.back();
    }

    std::vector<Param<F> *> &all() { return order_; }
    const std::vector<Param<F> *> &all() const { return order_; }

    void zero_grads() {
        for (auto *p : order_) p->grad.zero();
    }

    /// Zero gradients of frozen rows so the optimizer never moves them.
    void apply_freezes() {
        for (auto *p : order_) {
            if (p->row_trainable.empty()) continue;
            for (int r = 0; r < p->value.rows; ++r)
                if (!p->row_is_trainable(r))
                    for (int c = 0; c < p->value.cols; ++c) p->grad(r, c) = F(0);
        }
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto *p : order_) n += static_cast<std::size_t>(p->value.size());
        return n;
    }

    void save(std::ostream &os, bool with_moments) const {
        write_u64(os, order_.size());
        write_u64(os, with_moments ? 1 : 0);
        for (const auto *p : order_) {
            write_str(os, p->name);
            write_u64(os, static_cast<std::uint64_t>(p->value.rows));
            write_u64(os, static_cast<std::uint64_t>(p->value.cols));
            write_mat(os, p->value);
            if (with_moments) {
                write_mat(os, p->m);
                write_mat(os, p->v);
            }
        }
    }

    void load(std::istream &is) {
        std::uint64_t n = read_u64(is);
        std::uint64_t with_moments = read_u64(is);
        require(n == order_.size(), "checkpoint has ", n, " tensors, model expects ", order_.size());
        for (auto *p : order_) {
            std::string name = read_str(is);
            require(name == p->name, "checkpoint tensor '", name, "' does not match model tensor '",
                    p->name, "'");
            auto rows = static_cast<int>(read_u64(is));
            auto cols = static_cast<int>(read_u64(is));
            require(rows == p->value.rows && cols == p->value.cols,
                    "checkpoint tensor '", name, "' shape mismatch");
            read_mat(is, p->value);
            if (with_moments) {
                read_mat(is, p->m);
                read_mat(is, p->v);
            }
        }
    }

  private:
    std::deque<Param<F>> params_;
    std::vector<Param<F> *> order_;

    static void write_u64(std::ostream &os, std::uint64_t v) {
        os.write(reinterpret_cast<const char *>(&v), sizeof v);
    }
    static std::uint64_t read_u64(std::istream &is) {
        std::uint64_t v = 0;
        is.read(reinterpret_cast<char *>(&v), sizeof v);
        require(bool(is), "truncated checkpoint");
        return v;
    }
    static void write_str(std::ostream &os, const std::string &s) {
        write_u64(os, s.size());
        os.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::string read_str(std::istream &is) {
        std::string s(read_u64(is), '\0');
        is.read(s.data(), static_cast<std::streamsize>(s.size()));
        require(bool(is), "truncated checkpoint");
        return s;
    }
    static void write_mat(std::ostream &os, const Mat<F> &m) {
        os.write(reinterpret_cast<const char *>(m.a.data()),
                 static_cast<std::streamsize>(m.a.size() * sizeof(F)));
    }
    static void read_mat(std::istream &is, Mat<F> &m) {
        is.read(reinterpret_cast<char *>(m.a.data()),
                static_cast<std::streamsize>(m.a.size() * sizeof(F)));
        require(bool(is), "truncated checkpoint");
    }
};

template <typename F>
void glorot_init(Param<F> *p, Rng &rng) {
    double r = std::sqrt(6.0 / (p->value.rows + p->value.cols));
    for (F &x : p->value.a) x = static_cast<F>(rng.uniform(-r, r));
}

template <typename F>
void uniform_init(Param<F> *p, Rng &rng, double r) {
    for (F &x : p->value.a) x = static_cast<F>(rng.uniform(-r, r));
}

/// Inverted-dropout mask row (entries 0 or 1/(1-rate)). One mask per
/// sequence, broadcast across its steps, gives variational dropout.
template <typename F>
typename Tape<F>::Var dropout_mask(Tape<F> &tape, int dim, F rate, Rng &rng) {
    Mat<F> mask(1, dim, F(1));
    if (rate > F(0)) {
        F keep = F(1) - rate;
        for (F &x : mask.a) x = rng.bernoulli(static_cast<double>(rate)) ? F(0) : F(1) / keep;
    }
    return tape.input(std::move(mask));
}

/// Single LSTM step. Gate layout along the 4H axis: input, forget, cell, output.
template <typename F>
struct LSTMCell {
    using Var = typename Tape<F>::Var;
    int input_dim = 0, hidden = 0;
    Param<F> *w = nullptr; // (input_dim + hidden) x 4*hidden
    Param<F> *b = nullptr; // 1 x 4*hidden

    void build(ParamStore<F> &store, const std::string &name, int in_dim, int hid, Rng &rng) {
        input_dim = in_dim;
        hidden = hid;
        w = store.add(name + ".w", in_dim + hid, 4 * hid);
        b = store.add(name + ".b", 1, 4 * hid);
        glorot_init(w, rng);
    }

    struct State {
        Var h, c;
    };

    State start(Tape<F> &tape) const {
        return {tape.input(Mat<F>(1, hidden)), tape.input(Mat<F>(1, hidden))};
    }

    State step(Tape<F> &tape, Var x, const State &prev, Var wv, Var bv) const {
        Var gates = tape.affine(tape.concat_cols({x, prev.h}), wv, bv);
        Var i = tape.sigmoid(tape.slice_cols(gates, 0, hidden));
        Var f = tape.sigmoid(tape.slice_cols(gates, hidden, 2 * hidden));
        Var g = tape.tanh_(tape.slice_cols(gates, 2 * hidden, 3 * hidden));
        Var o = tape.sigmoid(tape.slice_cols(gates, 3 * hidden, 4 * hidden));
        Var c = tape.add(tape.mul(f, prev.c), tape.mul(i, g));
        Var h = tape.mul(o, tape.tanh_(c));
        return {h, c};
    }

    struct Bound {
        Var w, b;
    };
    Bound bind(Tape<F> &tape) const { return {tape.leaf(w->value, &w->grad), tape.leaf(b->value, &b->grad)}; }
};

/// GRU over row-parallel inputs: x and h are N x d, updated per row.
/// h' = (1-z) * n + z * h with n = tanh(x Wxn + bxn + r * (h Whn + bhn)).
template <typename F>
struct GRUCell {
    using Var = typename Tape<F>::Var;
    int input_dim = 0, hidden = 0;
    Param<F> *wx = nullptr; // input_dim x 3*hidden (r, z, n)
    Param<F> *wh = nullptr; // hidden x 3*hidden
    Param<F> *bx = nullptr;
    Param<F> *bh = nullptr;

    void build(ParamStore<F> &store, const std::string &name, int in_dim, int hid, Rng &rng) {
        input_dim = in_dim;
        hidden = hid;
        wx = store.add(name + ".wx", in_dim, 3 * hid);
        wh = store.add(name + ".wh", hid, 3 * hid);
        bx = store.add(name + ".bx", 1, 3 * hid);
        bh = store.add(name + ".bh", 1, 3 * hid);
        glorot_init(wx, rng);
        glorot_init(wh, rng);
    }

    Var step(Tape<F> &tape, Var x, Var h) const {
        Var px = tape.affine(x, tape.leaf(wx->value, &wx->grad), tape.leaf(bx->value, &bx->grad));
        Var ph = tape.affine(h, tape.leaf(wh->value, &wh->grad), tape.leaf(bh->value, &bh->grad));
        int hd = hidden;
        Var r = tape.sigmoid(tape.add(tape.slice_cols(px, 0, hd), tape.slice_cols(ph, 0, hd)));
        Var z = tape.sigmoid(tape.add(tape.slice_cols(px, hd, 2 * hd), tape.slice_cols(ph, hd, 2 * hd)));
        Var n = tape.tanh_(tape.add(tape.slice_cols(px, 2 * hd, 3 * hd),
                                    tape.mul(r, tape.slice_cols(ph, 2 * hd, 3 * hd))));
        // (1-z)*n + z*h
        Var one = tape.input(Mat<F>(val_rows(tape, h), hd, F(1)));
        Var zn = tape.mul(tape.sub(one, z), n);
        return tape.add(zn, tape.mul(z, h));
    }

  private:
    static int val_rows(Tape<F> &tape, Var v) { return tape.value(v).rows; }
};

/// Bidirectional LSTM over a sequence of embedded rows; the sequence summary
/// is the concatenation of the last forward and last backward hidden states.
template <typename F>
struct BiLSTM {
    using Var = typename Tape<F>::Var;
    LSTMCell<F> fwd, bwd;
    int hidden = 0;

    void build(ParamStore<F> &store, const std::string &name, int in_dim, int hid, Rng &rng) {
        hidden = hid;
        fwd.build(store, name + ".fwd", in_dim, hid, rng);
        bwd.build(store, name + ".bwd", in_dim, hid, rng);
    }

    /// rows: k x in_dim (k >= 1). Returns 1 x 2*hidden.
    Var encode(Tape<F> &tape, Var rows) const {
        int k = tape.value(rows).rows;
        require(k >= 1, "BiLSTM over empty sequence");
        auto wf = fwd.bind(tape), wb = bwd.bind(tape);
        auto sf = fwd.start(tape);
        for (int t = 0; t < k; ++t) sf = fwd.step(tape, tape.pick_row(rows, t), sf, wf.w, wf.b);
        auto sb = bwd.start(tape);
        for (int t = k - 1; t >= 0; --t) sb = bwd.step(tape, tape.pick_row(rows, t), sb, wb.w, wb.b);
        return tape.concat_cols({sf.h, sb.h});
    }
};

template <typename F>
struct Linear {
    using Var = typename Tape<F>::Var;
    Param<F> *w = nullptr;
    Param<F> *b = nullptr;

    void build(ParamStore<F> &store, const std::string &name, int in_dim, int out_dim, Rng &rng) {
        w = store.add(name + ".w", in_dim, out_dim);
        b = store.add(name + ".b", 1, out_dim);
        glorot_init(w, rng);
    }

    struct Bound {
        Var w, b;
    };
    /// Bind once per tape when applied repeatedly (e.g. per decoder step).
    Bound bind(Tape<F> &tape) const {
        return {tape.leaf(w->value, &w->grad), tape.leaf(b->value, &b->grad)};
    }
    static Var apply_bound(Tape<F> &tape, const Bound &bound, Var x) {
        return tape.affine(x, bound.w, bound.b);
    }

    Var apply(Tape<F> &tape, Var x) const { return apply_bound(tape, bind(tape), x); }
};

/// Global-norm gradient clipping; returns the pre-clip norm.
template <typename F>
double clip_global_norm(ParamStore<F> &store, double max_norm) {
    double sq = 0;
    for (auto *p : store.all())
        for (F g : p->grad.a) sq += static_cast<double>(g) * static_cast<double>(g);
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        F scale = static_cast<F>(max_norm / norm);
        for (auto *p : store.all())
            for (F &g : p->grad.a) g *= scale;
    }
    return norm;
}

template <typename F>
class Adam {
  public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }

    void step(ParamStore<F> &store) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto *p : store.all()) {
            for (int i = 0; i < p->value.size(); ++i) {
                double g = static_cast<double>(p->grad.a[i]);
                double m = beta1_ * static_cast<double>(p->m.a[i]) + (1 - beta1_) * g;
                double v = beta2_ * static_cast<double>(p->v.a[i]) + (1 - beta2_) * g * g;
                p->m.a[i] = static_cast<F>(m);
                p->v.a[i] = static_cast<F>(v);
                double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
                p->value.a[i] -= static_cast<F>(update);
            }
        }
    }

  private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

} // namespace kgqg
