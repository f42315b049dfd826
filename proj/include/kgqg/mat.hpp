#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "kgqg/common.hpp"

namespace kgqg {

/// Dense row-major matrix. Row vectors are 1 x d.
template <typename F>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<F> a;

    Mat() = default;
    Mat(int r, int c, F fill = F(0)) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

    static Mat row(std::vector<F> v) {
        Mat m;
        m.rows = 1;
        m.cols = static_cast<int>(v.size());
        m.a = std::move(v);
        return m;
    }

    F &operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    F operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    int size() const { return rows * cols; }

    bool same_shape(const Mat &o) const { return rows == o.rows && cols == o.cols; }

    void zero() { std::fill(a.begin(), a.end(), F(0)); }

    bool finite() const {
        for (F x : a)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename G>
    Mat<G> cast() const {
        Mat<G> out(rows, cols);
        for (int i = 0; i < size(); ++i) out.a[i] = static_cast<G>(a[i]);
        return out;
    }
};

template <typename F>
Mat<F> matmul(const Mat<F> &x, const Mat<F> &y) {
    require(x.cols == y.rows, "matmul shape mismatch: ", x.rows, "x", x.cols, " * ", y.rows, "x", y.cols);
    Mat<F> out(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i) {
        for (int k = 0; k < x.cols; ++k) {
            F xv = x(i, k);
            if (xv == F(0)) continue;
            const F *yrow = &y.a[static_cast<std::size_t>(k) * y.cols];
            F *orow = &out.a[static_cast<std::size_t>(i) * out.cols];
            for (int j = 0; j < y.cols; ++j) orow[j] += xv * yrow[j];
        }
    }
    return out;
}

} // namespace kgqg
