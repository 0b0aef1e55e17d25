#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ffdc {

// Dense row-major 2D array of doubles. All model math runs on these.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {
        if (r < 0 || c < 0) throw std::invalid_argument("Tensor: negative shape");
    }
    Tensor(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
        if (v.size() != static_cast<size_t>(r) * static_cast<size_t>(c))
            throw std::invalid_argument("Tensor: data length does not match shape");
    }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

inline void require_shape(const Tensor& t, int r, int c, const std::string& what) {
    if (t.rows != r || t.cols != c)
        throw std::invalid_argument(what + ": expected " + std::to_string(r) + "x" + std::to_string(c) +
                                    ", got " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
}

// out = a * b (or out += a * b when accumulate). a: m x k, b: k x n.
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    if (!accumulate) {
        out = Tensor(a.rows, b.cols);
    } else if (out.rows != a.rows || out.cols != b.cols) {
        throw std::invalid_argument("matmul: accumulate target has wrong shape");
    }
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor out;
    matmul_into(a, b, out);
    return out;
}

// out += a^T * b. a: k x m, b: k x n, out: m x n.
inline void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: row counts differ");
    if (out.rows != a.cols || out.cols != b.cols) throw std::invalid_argument("matmul_tn: bad target shape");
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.row(i);
            for (int j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
}

// out += a * b^T. a: m x k, b: n x k, out: m x n.
inline void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: col counts differ");
    if (out.rows != a.rows || out.cols != b.rows) throw std::invalid_argument("matmul_nt: bad target shape");
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            orow[j] += s;
        }
    }
}

}  // namespace ffdc
