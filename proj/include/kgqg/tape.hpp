#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "kgqg/mat.hpp"

namespace kgqg {

/// Reverse-mode autodiff over Mat<F>. A Tape is built per forward pass;
/// backward() runs the recorded closures in reverse order. Leaves created
/// with an external gradient sink (parameters) accumulate into it, so one
/// tape per batch accumulates parameter gradients across examples.
template <typename F>
class Tape {
  public:
    using Var = int;

    Var input(Mat<F> v, bool needs_grad = false) {
        return push(std::move(v), needs_grad, nullptr);
    }

    /// Leaf whose gradient is accumulated into *sink on backward.
    Var leaf(const Mat<F> &v, Mat<F> *sink) {
        Var id = push(v, sink != nullptr, nullptr);
        if (sink) {
            require(sink->same_shape(v), "leaf gradient sink shape mismatch");
            nodes_[id].back = [id, sink](Tape &t) {
                const Mat<F> &g = t.nodes_[id].grad;
                for (int i = 0; i < g.size(); ++i) sink->a[i] += g.a[i];
            };
        }
        return id;
    }

    const Mat<F> &value(Var v) const { return nodes_[v].val; }
    const Mat<F> &grad(Var v) const { return nodes_[v].grad; }

    Var add(Var a, Var b) {
        const Mat<F> &x = val(a), &y = val(b);
        require(x.same_shape(y), "add shape mismatch");
        Mat<F> out = x;
        for (int i = 0; i < out.size(); ++i) out.a[i] += y.a[i];
        return unary_or_binary(std::move(out), a, b, [a, b](Tape &t, const Mat<F> &g) {
            t.accum(a, g);
            t.accum(b, g);
        });
    }

    Var sub(Var a, Var b) {
        const Mat<F> &x = val(a), &y = val(b);
        require(x.same_shape(y), "sub shape mismatch");
        Mat<F> out = x;
        for (int i = 0; i < out.size(); ++i) out.a[i] -= y.a[i];
        return unary_or_binary(std::move(out), a, b, [a, b](Tape &t, const Mat<F> &g) {
            t.accum(a, g);
            t.accum_scaled(b, g, F(-1));
        });
    }

    Var mul(Var a, Var b) {
        const Mat<F> &x = val(a), &y = val(b);
        require(x.same_shape(y), "mul shape mismatch");
        Mat<F> out = x;
        for (int i = 0; i < out.size(); ++i) out.a[i] *= y.a[i];
        return unary_or_binary(std::move(out), a, b, [a, b](Tape &t, const Mat<F> &g) {
            const Mat<F> &xv = t.val(a), &yv = t.val(b);
            if (t.needs(a)) {
                Mat<F> &ga = t.grad_of(a);
                for (int i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * yv.a[i];
            }
            if (t.needs(b)) {
                Mat<F> &gb = t.grad_of(b);
                for (int i = 0; i < g.size(); ++i) gb.a[i] += g.a[i] * xv.a[i];
            }
        });
    }

    /// Broadcast-add a 1 x d row to every row of a.
    Var add_row(Var a, Var row) {
        const Mat<F> &x = val(a), &r = val(row);
        require(r.rows == 1 && r.cols == x.cols, "add_row shape mismatch");
        Mat<F> out = x;
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) out(i, j) += r(0, j);
        return unary_or_binary(std::move(out), a, row, [a, row](Tape &t, const Mat<F> &g) {
            t.accum(a, g);
            if (t.needs(row)) {
                Mat<F> &gr = t.grad_of(row);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gr(0, j) += g(i, j);
            }
        });
    }

    /// Broadcast-multiply each row of a by a 1 x d row (dropout masks etc).
    Var mul_row(Var a, Var row) {
        const Mat<F> &x = val(a), &r = val(row);
        require(r.rows == 1 && r.cols == x.cols, "mul_row shape mismatch");
        Mat<F> out = x;
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) out(i, j) *= r(0, j);
        return unary_or_binary(std::move(out), a, row, [a, row](Tape &t, const Mat<F> &g) {
            const Mat<F> &xv = t.val(a), &rv = t.val(row);
            if (t.needs(a)) {
                Mat<F> &ga = t.grad_of(a);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) ga(i, j) += g(i, j) * rv(0, j);
            }
            if (t.needs(row)) {
                Mat<F> &gr = t.grad_of(row);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gr(0, j) += g(i, j) * xv(i, j);
            }
        });
    }

    Var cscale(Var a, F c) {
        Mat<F> out = val(a);
        for (F &x : out.a) x *= c;
        return unary(std::move(out), a, [a, c](Tape &t, const Mat<F> &g) {
            t.accum_scaled(a, g, c);
        });
    }

    Var matmul_(Var a, Var b) {
        Mat<F> out = matmul(val(a), val(b));
        return unary_or_binary(std::move(out), a, b, [a, b](Tape &t, const Mat<F> &g) {
            const Mat<F> &x = t.val(a), &y = t.val(b);
            if (t.needs(a)) { // dX = G * Y^T
                Mat<F> &ga = t.grad_of(a);
                for (int i = 0; i < x.rows; ++i)
                    for (int k = 0; k < x.cols; ++k) {
                        F s = 0;
                        for (int j = 0; j < y.cols; ++j) s += g(i, j) * y(k, j);
                        ga(i, k) += s;
                    }
            }
            if (t.needs(b)) { // dY = X^T * G
                Mat<F> &gb = t.grad_of(b);
                for (int i = 0; i < x.rows; ++i)
                    for (int k = 0; k < x.cols; ++k) {
                        F xv = x(i, k);
                        if (xv == F(0)) continue;
                        for (int j = 0; j < y.cols; ++j) gb(k, j) += xv * g(i, j);
                    }
            }
        });
    }

    Var concat_cols(const std::vector<Var> &parts) {
        require(!parts.empty(), "concat_cols: empty");
        int rows = val(parts[0]).rows, cols = 0;
        for (Var p : parts) {
            require(val(p).rows == rows, "concat_cols row mismatch");
            cols += val(p).cols;
        }
        Mat<F> out(rows, cols);
        int off = 0;
        for (Var p : parts) {
            const Mat<F> &m = val(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < m.cols; ++j) out(i, off + j) = m(i, j);
            off += m.cols;
        }
        bool ng = false;
        for (Var p : parts) ng = ng || needs(p);
        Var id = push(std::move(out), ng, nullptr);
        if (ng)
            nodes_[id].back = [id, parts](Tape &t) {
                const Mat<F> &g = t.nodes_[id].grad;
                int off2 = 0;
                for (Var p : parts) {
                    const Mat<F> &m = t.val(p);
                    if (t.needs(p)) {
                        Mat<F> &gp = t.grad_of(p);
                        for (int i = 0; i < g.rows; ++i)
                            for (int j = 0; j < m.cols; ++j) gp(i, j) += g(i, off2 + j);
                    }
                    off2 += m.cols;
                }
            };
        return id;
    }

    Var concat_rows(const std::vector<Var> &parts) {
        require(!parts.empty(), "concat_rows: empty");
        int cols = val(parts[0]).cols, rows = 0;
        for (Var p : parts) {
            require(val(p).cols == cols, "concat_rows col mismatch");
            rows += val(p).rows;
        }
        Mat<F> out(rows, cols);
        int off = 0;
        for (Var p : parts) {
            const Mat<F> &m = val(p);
            for (int i = 0; i < m.rows; ++i)
                for (int j = 0; j < cols; ++j) out(off + i, j) = m(i, j);
            off += m.rows;
        }
        bool ng = false;
        for (Var p : parts) ng = ng || needs(p);
        Var id = push(std::move(out), ng, nullptr);
        if (ng)
            nodes_[id].back = [id, parts](Tape &t) {
                const Mat<F> &g = t.nodes_[id].grad;
                int off2 = 0;
                for (Var p : parts) {
                    const Mat<F> &m = t.val(p);
                    if (t.needs(p)) {
                        Mat<F> &gp = t.grad_of(p);
                        for (int i = 0; i < m.rows; ++i)
                            for (int j = 0; j < g.cols; ++j) gp(i, j) += g(off2 + i, j);
                    }
                    off2 += m.rows;
                }
            };
        return id;
    }

    Var slice_cols(Var a, int c0, int c1) {
        const Mat<F> &x = val(a);
        require(0 <= c0 && c0 < c1 && c1 <= x.cols, "slice_cols out of range");
        Mat<F> out(x.rows, c1 - c0);
        for (int i = 0; i < x.rows; ++i)
            for (int j = c0; j < c1; ++j) out(i, j - c0) = x(i, j);
        return unary(std::move(out), a, [a, c0](Tape &t, const Mat<F> &g) {
            Mat<F> &ga = t.grad_of(a);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j) ga(i, c0 + j) += g(i, j);
        });
    }

    Var pick_row(Var a, int r) {
        const Mat<F> &x = val(a);
        require(0 <= r && r < x.rows, "pick_row out of range");
        Mat<F> out(1, x.cols);
        for (int j = 0; j < x.cols; ++j) out(0, j) = x(r, j);
        return unary(std::move(out), a, [a, r](Tape &t, const Mat<F> &g) {
            Mat<F> &ga = t.grad_of(a);
            for (int j = 0; j < g.cols; ++j) ga(r, j) += g(0, j);
        });
    }

    Var gather_rows(Var a, std::vector<int> idx) {
        const Mat<F> &x = val(a);
        Mat<F> out(static_cast<int>(idx.size()), x.cols);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            require(0 <= idx[i] && idx[i] < x.rows, "gather_rows index out of range");
            for (int j = 0; j < x.cols; ++j) out(static_cast<int>(i), j) = x(idx[i], j);
        }
        return unary(std::move(out), a, [a, idx = std::move(idx)](Tape &t, const Mat<F> &g) {
            Mat<F> &ga = t.grad_of(a);
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < g.cols; ++j) ga(idx[i], j) += g(static_cast<int>(i), j);
        });
    }

    /// Per node v: mean of the v-th row of h together with the rows of
    /// contrib listed in [offsets[v], offsets[v+1]). Implements the
    /// self-inclusive neighborhood average; nodes with no contributions
    /// reduce to their own row.
    Var group_mean_with_self(Var h, Var contrib, std::vector<int> offsets) {
        const Mat<F> &x = val(h), &c = val(contrib);
        require(static_cast<int>(offsets.size()) == x.rows + 1, "group_mean_with_self: bad offsets");
        require(offsets.back() == c.rows, "group_mean_with_self: offsets do not cover contrib");
        require(x.cols == c.cols, "group_mean_with_self col mismatch");
        Mat<F> out(x.rows, x.cols);
        for (int v = 0; v < x.rows; ++v) {
            int lo = offsets[v], hi = offsets[v + 1];
            F inv = F(1) / static_cast<F>(1 + (hi - lo));
            for (int j = 0; j < x.cols; ++j) {
                F s = x(v, j);
                for (int i = lo; i < hi; ++i) s += c(i, j);
                out(v, j) = s * inv;
            }
        }
        return unary_or_binary(std::move(out), h, contrib,
                               [h, contrib, offsets = std::move(offsets)](Tape &t, const Mat<F> &g) {
            for (int v = 0; v < g.rows; ++v) {
                int lo = offsets[v], hi = offsets[v + 1];
                F inv = F(1) / static_cast<F>(1 + (hi - lo));
                if (t.needs(h)) {
                    Mat<F> &gh = t.grad_of(h);
                    for (int j = 0; j < g.cols; ++j) gh(v, j) += g(v, j) * inv;
                }
                if (t.needs(contrib)) {
                    Mat<F> &gc = t.grad_of(contrib);
                    for (int i = lo; i < hi; ++i)
                        for (int j = 0; j < g.cols; ++j) gc(i, j) += g(v, j) * inv;
                }
            }
        });
    }

    Var sigmoid(Var a) {
        Mat<F> out = val(a);
        for (F &x : out.a) {
            double v = static_cast<double>(x);
            x = static_cast<F>(v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                      : std::exp(v) / (1.0 + std::exp(v)));
        }
        Var id = push(std::move(out), needs(a), nullptr);
        if (needs(a))
            nodes_[id].back = [id, a](Tape &t) {
                const Mat<F> &g = t.nodes_[id].grad;
                const Mat<F> &y = t.nodes_[id].val;
                Mat<F> &ga = t.grad_of(a);
                for (int i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * y.a[i] * (F(1) - y.a[i]);
            };
        return id;
    }

    Var tanh_(Var a) {
        Mat<F> out = val(a);
        for (F &x : out.a) x = static_cast<F>(std::tanh(static_cast<double>(x)));
        Var id = push(std::move(out), needs(a), nullptr);
        if (needs(a))
            nodes_[id].back = [id, a](Tape &t) {
                const Mat<F> &g = t.nodes_[id].grad;
                const Mat<F> &y = t.nodes_[id].val;
                Mat<F> &ga = t.grad_of(a);
                for (int i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * (F(1) - y.a[i] * y.a[i]);
            };
        return id;
    }

    Var relu(Var a) {
        Mat<F> out = val(a);
        for (F &x : out.a) x = x > F(0) ? x : F(0);
        return unary(std::move(out), a, [a](Tape &t, const Mat<F> &g) {
            const Mat<F> &x = t.val(a);
            Mat<F> &ga = t.grad_of(a);
            for (int i = 0; i < g.size(); ++i)
                if (x.a[i] > F(0)) ga.a[i] += g.a[i];
        });
    }

    /// Softmax over all entries of a (treated as one distribution).
    Var softmax(Var a) {
        const Mat<F> &x = val(a);
        require(x.size() > 0, "softmax of empty matrix");
        Mat<F> out = x;
        F mx = out.a[0];
        for (F v : out.a) mx = std::max(mx, v);
        double z = 0;
        for (F &v : out.a) {
            double e = std::exp(static_cast<double>(v - mx));
            v = static_cast<F>(e);
            z += e;
        }
        for (F &v : out.a) v = static_cast<F>(static_cast<double>(v) / z);
        Var id = push(std::move(out), needs(a), nullptr);
        if (needs(a))
            nodes_[id].back = [id, a](Tape &t) {
                const Mat<F> &g = t.nodes_[id].grad;
                const Mat<F> &y = t.nodes_[id].val;
                Mat<F> &ga = t.grad_of(a);
                F dotgy = 0;
                for (int i = 0; i < g.size(); ++i) dotgy += g.a[i] * y.a[i];
                for (int i = 0; i < g.size(); ++i) ga.a[i] += y.a[i] * (g.a[i] - dotgy);
            };
        return id;
    }

    /// log with a floor: entries <= 0 map to `floor` with zero gradient.
    Var logp(Var a, F floor = F(-1e9)) {
        const Mat<F> &x = val(a);
        Mat<F> out = x;
        for (F &v : out.a) v = v > F(0) ? static_cast<F>(std::log(static_cast<double>(v))) : floor;
        return unary(std::move(out), a, [a](Tape &t, const Mat<F> &g) {
            const Mat<F> &x2 = t.val(a);
            Mat<F> &ga = t.grad_of(a);
            for (int i = 0; i < g.size(); ++i)
                if (x2.a[i] > F(0)) ga.a[i] += g.a[i] / x2.a[i];
        });
    }

    Var sum(Var a) {
        const Mat<F> &x = val(a);
        Mat<F> out(1, 1);
        F s = 0;
        for (F v : x.a) s += v;
        out(0, 0) = s;
        return unary(std::move(out), a, [a](Tape &t, const Mat<F> &g) {
            Mat<F> &ga = t.grad_of(a);
            for (int i = 0; i < ga.size(); ++i) ga.a[i] += g(0, 0);
        });
    }

    /// Column-wise mean over rows -> 1 x d.
    Var mean_rows(Var a) {
        const Mat<F> &x = val(a);
        require(x.rows > 0, "mean_rows of empty matrix");
        Mat<F> out(1, x.cols);
        F inv = F(1) / static_cast<F>(x.rows);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) out(0, j) += x(i, j);
        for (int j = 0; j < x.cols; ++j) out(0, j) *= inv;
        return unary(std::move(out), a, [a, inv](Tape &t, const Mat<F> &g) {
            Mat<F> &ga = t.grad_of(a);
            for (int i = 0; i < ga.rows; ++i)
                for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(0, j) * inv;
        });
    }

    /// Column-wise max over rows -> 1 x d; gradient routes to the first
    /// attaining row per column.
    Var max_rows(Var a) {
        const Mat<F> &x = val(a);
        require(x.rows > 0, "max_rows of empty matrix");
        Mat<F> out(1, x.cols);
        std::vector<int> arg(static_cast<std::size_t>(x.cols), 0);
        for (int j = 0; j < x.cols; ++j) {
            F best = x(0, j);
            for (int i = 1; i < x.rows; ++i)
                if (x(i, j) > best) {
                    best = x(i, j);
                    arg[j] = i;
                }
            out(0, j) = best;
        }
        return unary(std::move(out), a, [a, arg = std::move(arg)](Tape &t, const Mat<F> &g) {
            Mat<F> &ga = t.grad_of(a);
            for (int j = 0; j < g.cols; ++j) ga(arg[j], j) += g(0, j);
        });
    }

    /// Multiply every entry of a by the scalar node s (1 x 1).
    Var scalar_mul(Var a, Var s) {
        const Mat<F> &x = val(a), &sv = val(s);
        require(sv.rows == 1 && sv.cols == 1, "scalar_mul: s must be 1x1");
        Mat<F> out = x;
        for (F &v : out.a) v *= sv(0, 0);
        return unary_or_binary(std::move(out), a, s, [a, s](Tape &t, const Mat<F> &g) {
            const Mat<F> &xv = t.val(a);
            F sval = t.val(s)(0, 0);
            if (t.needs(a)) t.accum_scaled(a, g, sval);
            if (t.needs(s)) {
                F acc = 0;
                for (int i = 0; i < g.size(); ++i) acc += g.a[i] * xv.a[i];
                t.grad_of(s)(0, 0) += acc;
            }
        });
    }

    Var scalar_div(Var a, Var s) {
        const Mat<F> &x = val(a), &sv = val(s);
        require(sv.rows == 1 && sv.cols == 1, "scalar_div: s must be 1x1");
        F inv = F(1) / sv(0, 0);
        Mat<F> out = x;
        for (F &v : out.a) v *= inv;
        Var id = push(std::move(out), needs(a) || needs(s), nullptr);
        if (nodes_[id].needs_grad)
            nodes_[id].back = [id, a, s](Tape &t) {
                const Mat<F> &g = t.nodes_[id].grad;
                const Mat<F> &y = t.nodes_[id].val;
                F sval = t.val(s)(0, 0);
                if (t.needs(a)) t.accum_scaled(a, g, F(1) / sval);
                if (t.needs(s)) {
                    F acc = 0;
                    for (int i = 0; i < g.size(); ++i) acc += g.a[i] * y.a[i];
                    t.grad_of(s)(0, 0) -= acc / sval;
                }
            };
        return id;
    }

    /// Scatter columns of a 1 x n row into a 1 x out_cols row, accumulating
    /// entries that land on the same column; col_map entries of -1 are dropped.
    Var scatter_cols(Var a, std::vector<int> col_map, int out_cols) {
        const Mat<F> &x = val(a);
        require(x.rows == 1, "scatter_cols expects a row vector");
        require(static_cast<int>(col_map.size()) == x.cols, "scatter_cols map size mismatch");
        Mat<F> out(1, out_cols);
        for (int j = 0; j < x.cols; ++j) {
            int c = col_map[j];
            if (c < 0) continue;
            require(c < out_cols, "scatter_cols target out of range");
            out(0, c) += x(0, j);
        }
        return unary(std::move(out), a, [a, col_map = std::move(col_map)](Tape &t, const Mat<F> &g) {
            Mat<F> &ga = t.grad_of(a);
            for (int j = 0; j < ga.cols; ++j)
                if (col_map[j] >= 0) ga(0, j) += g(0, col_map[j]);
        });
    }

    Var transpose(Var a) {
        const Mat<F> &x = val(a);
        Mat<F> out(x.cols, x.rows);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
        return unary(std::move(out), a, [a](Tape &t, const Mat<F> &g) {
            Mat<F> &ga = t.grad_of(a);
            for (int i = 0; i < ga.rows; ++i)
                for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(j, i);
        });
    }

    /// x*W + b with x: n x in, W: in x out, b: 1 x out.
    Var affine(Var x, Var w, Var b) { return add_row(matmul_(x, w), b); }

    void backward(Var loss) {
        const Mat<F> &lv = val(loss);
        require(lv.rows == 1 && lv.cols == 1, "backward: loss must be scalar");
        grad_of(loss)(0, 0) = F(1);
        for (int i = loss; i >= 0; --i) {
            Node &n = nodes_[i];
            if (n.needs_grad && n.grad.size() > 0 && n.back) n.back(*this);
        }
    }

    void check_finite(Var v, const std::string &context) const {
        if (!val(v).finite()) fail("non-finite value in ", context);
    }

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat<F> val;
        Mat<F> grad;
        bool needs_grad = false;
        std::function<void(Tape &)> back;
    };

    // deque: node references stay valid while later ops are recorded
    std::deque<Node> nodes_;

    const Mat<F> &val(Var v) const { return nodes_[v].val; }
    bool needs(Var v) const { return nodes_[v].needs_grad; }

    Mat<F> &grad_of(Var v) {
        Node &n = nodes_[v];
        if (n.grad.size() == 0) n.grad = Mat<F>(n.val.rows, n.val.cols);
        return n.grad;
    }

    void accum(Var v, const Mat<F> &g) {
        if (!needs(v)) return;
        Mat<F> &gv = grad_of(v);
        for (int i = 0; i < g.size(); ++i) gv.a[i] += g.a[i];
    }

    void accum_scaled(Var v, const Mat<F> &g, F c) {
        if (!needs(v)) return;
        Mat<F> &gv = grad_of(v);
        for (int i = 0; i < g.size(); ++i) gv.a[i] += g.a[i] * c;
    }

    Var push(Mat<F> v, bool needs_grad, std::function<void(Tape &)> back) {
        nodes_.push_back(Node{std::move(v), Mat<F>(), needs_grad, std::move(back)});
        return static_cast<Var>(nodes_.size() - 1);
    }

    template <typename Fn>
    Var unary(Mat<F> out, Var a, Fn fn) {
        bool ng = needs(a);
        Var id = push(std::move(out), ng, nullptr);
        if (ng)
            nodes_[id].back = [id, fn](Tape &t) { fn(t, t.nodes_[id].grad); };
        return id;
    }

    template <typename Fn>
    Var unary_or_binary(Mat<F> out, Var a, Var b, Fn fn) {
        bool ng = needs(a) || needs(b);
        Var id = push(std::move(out), ng, nullptr);
        if (ng)
            nodes_[id].back = [id, fn](Tape &t) { fn(t, t.nodes_[id].grad); };
        return id;
    }
};

} // namespace kgqg
