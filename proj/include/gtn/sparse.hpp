#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gtn {

/// Dense row-major matrix of doubles.
struct DenseMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<double> values; // row-major, length n_rows * n_cols

    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : n_rows(rows), n_cols(cols), values(rows * cols, fill) {}

    double& at(std::size_t i, std::size_t j) { return values[i * n_cols + j]; }
    double at(std::size_t i, std::size_t j) const { return values[i * n_cols + j]; }

    std::span<double> row(std::size_t i) { return {values.data() + i * n_cols, n_cols}; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * n_cols, n_cols}; }

    bool same_shape(const DenseMatrix& o) const { return n_rows == o.n_rows && n_cols == o.n_cols; }
};

/// Compressed sparse row matrix. Canonical form: column indices strictly
/// increasing within each row, no explicitly stored zeros.
struct CsrMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<std::size_t> row_offsets; // length n_rows + 1
    std::vector<std::size_t> col_indices; // length nnz
    std::vector<double> values;           // length nnz

    CsrMatrix() : row_offsets(1, 0) {}
    CsrMatrix(std::size_t rows, std::size_t cols)
        : n_rows(rows), n_cols(cols), row_offsets(rows + 1, 0) {}

    std::size_t nnz() const { return values.size(); }
    std::size_t row_begin(std::size_t i) const { return row_offsets[i]; }
    std::size_t row_end(std::size_t i) const { return row_offsets[i + 1]; }
};

/// Per-row sums of a sparse matrix.
struct DegreeVector {
    std::vector<double> values;
};

enum class NormalizeMode {
    inverse,  // D^-1 A
    symmetric // D^-1/2 A D^-1/2
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Builders and conversions
// ---------------------------------------------------------------------------

inline CsrMatrix csr_identity(std::size_t n) {
    CsrMatrix m(n, n);
    m.col_indices.resize(n);
    m.values.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        m.col_indices[i] = i;
        m.row_offsets[i + 1] = i + 1;
    }
    return m;
}

/// Builds a canonical CSR matrix from (row, col, value) triplets.
/// Duplicate coordinates are summed; exact zeros are dropped.
inline CsrMatrix csr_from_triplets(std::size_t rows, std::size_t cols,
                                   std::vector<std::tuple<std::size_t, std::size_t, double>> triplets) {
    for (const auto& [i, j, v] : triplets) {
        detail::require(i < rows && j < cols, "csr_from_triplets: index out of range");
        (void)v;
    }
    std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
        return std::get<0>(a) != std::get<0>(b) ? std::get<0>(a) < std::get<0>(b)
                                                : std::get<1>(a) < std::get<1>(b);
    });
    CsrMatrix m(rows, cols);
    std::vector<std::size_t> row_counts(rows, 0);
    std::size_t k = 0;
    while (k < triplets.size()) {
        auto [i, j, v] = triplets[k];
        ++k;
        while (k < triplets.size() && std::get<0>(triplets[k]) == i && std::get<1>(triplets[k]) == j) {
            v += std::get<2>(triplets[k]);
            ++k;
        }
        if (v == 0.0) continue;
        m.col_indices.push_back(j);
        m.values.push_back(v);
        ++row_counts[i];
    }
    for (std::size_t i = 0; i < rows; ++i) m.row_offsets[i + 1] = m.row_offsets[i] + row_counts[i];
    return m;
}

inline CsrMatrix csr_from_dense(const DenseMatrix& d) {
    CsrMatrix m(d.n_rows, d.n_cols);
    for (std::size_t i = 0; i < d.n_rows; ++i) {
        for (std::size_t j = 0; j < d.n_cols; ++j) {
            double v = d.at(i, j);
            if (v != 0.0) {
                m.col_indices.push_back(j);
                m.values.push_back(v);
            }
        }
        m.row_offsets[i + 1] = m.values.size();
    }
    return m;
}

inline DenseMatrix csr_to_dense(const CsrMatrix& a) {
    DenseMatrix d(a.n_rows, a.n_cols);
    for (std::size_t i = 0; i < a.n_rows; ++i)
        for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k)
            d.at(i, a.col_indices[k]) = a.values[k];
    return d;
}

/// Checks the CSR structural invariants (monotone offsets, sorted unique
/// in-range columns, no stored zeros). Throws on violation.
inline void csr_validate(const CsrMatrix& a) {
    detail::require(a.row_offsets.size() == a.n_rows + 1, "csr: bad row_offsets length");
    detail::require(a.row_offsets.front() == 0 && a.row_offsets.back() == a.nnz(),
                    "csr: offsets do not span nnz");
    detail::require(a.col_indices.size() == a.values.size(), "csr: index/value length mismatch");
    for (std::size_t i = 0; i < a.n_rows; ++i) {
        detail::require(a.row_offsets[i] <= a.row_offsets[i + 1], "csr: offsets not nondecreasing");
        for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k) {
            detail::require(a.col_indices[k] < a.n_cols, "csr: column index out of range");
            if (k > a.row_begin(i))
                detail::require(a.col_indices[k - 1] < a.col_indices[k], "csr: columns not strictly increasing");
            detail::require(a.values[k] != 0.0, "csr: explicitly stored zero");
        }
    }
}

// ---------------------------------------------------------------------------
// Sparse kernels
// ---------------------------------------------------------------------------

/// Sparse-sparse product a * b in canonical CSR form. Entries with
/// |value| <= prune_threshold are dropped (default drops exact zeros only).
inline CsrMatrix spmm_ss(const CsrMatrix& a, const CsrMatrix& b, double prune_threshold = 0.0) {
    detail::require(a.n_cols == b.n_rows, "spmm_ss: inner dimensions differ");
    CsrMatrix c(a.n_rows, b.n_cols);
    std::vector<double> acc(b.n_cols, 0.0);
    std::vector<bool> touched(b.n_cols, false);
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < a.n_rows; ++i) {
        cols.clear();
        for (std::size_t ka = a.row_begin(i); ka < a.row_end(i); ++ka) {
            const std::size_t m = a.col_indices[ka];
            const double va = a.values[ka];
            for (std::size_t kb = b.row_begin(m); kb < b.row_end(m); ++kb) {
                const std::size_t j = b.col_indices[kb];
                acc[j] += va * b.values[kb];
                if (!touched[j]) {
                    touched[j] = true;
                    cols.push_back(j);
                }
            }
        }
        std::sort(cols.begin(), cols.end());
        for (std::size_t j : cols) {
            if (std::abs(acc[j]) > prune_threshold) {
                c.col_indices.push_back(j);
                c.values.push_back(acc[j]);
            }
            acc[j] = 0.0;
            touched[j] = false;
        }
        c.row_offsets[i + 1] = c.values.size();
    }
    return c;
}

/// Sparse-dense product a * x.
inline DenseMatrix spmm_sd(const CsrMatrix& a, const DenseMatrix& x) {
    detail::require(a.n_cols == x.n_rows, "spmm_sd: inner dimensions differ");
    DenseMatrix y(a.n_rows, x.n_cols);
    for (std::size_t i = 0; i < a.n_rows; ++i) {
        double* out = y.values.data() + i * y.n_cols;
        for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k) {
            const double v = a.values[k];
            const double* in = x.values.data() + a.col_indices[k] * x.n_cols;
            for (std::size_t j = 0; j < x.n_cols; ++j) out[j] += v * in[j];
        }
    }
    return y;
}

inline DegreeVector row_degrees(const CsrMatrix& a) {
    DegreeVector d;
    d.values.resize(a.n_rows, 0.0);
    for (std::size_t i = 0; i < a.n_rows; ++i)
        for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k)
            d.values[i] += a.values[k];
    return d;
}

/// Degree normalization of a nonnegative matrix. Rows with degree zero are
/// left as all-zero rows.
inline CsrMatrix row_normalize(const CsrMatrix& a, NormalizeMode mode = NormalizeMode::inverse) {
    for (double v : a.values)
        if (v < 0.0) throw std::domain_error("row_normalize: negative entry");
    const DegreeVector deg = row_degrees(a);
    CsrMatrix out = a;
    if (mode == NormalizeMode::inverse) {
        for (std::size_t i = 0; i < a.n_rows; ++i) {
            const double d = deg.values[i];
            if (d == 0.0) continue;
            for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k) out.values[k] = a.values[k] / d;
        }
        return out;
    }
    // symmetric: scale entry (i,j) by 1/sqrt(d_i d_j); a zero degree on either
    // side zeroes the entry, which is then dropped to stay canonical.
    std::vector<double> inv_sqrt(a.n_rows);
    for (std::size_t i = 0; i < a.n_rows; ++i)
        inv_sqrt[i] = deg.values[i] > 0.0 ? 1.0 / std::sqrt(deg.values[i]) : 0.0;
    std::vector<std::tuple<std::size_t, std::size_t, double>> trips;
    for (std::size_t i = 0; i < a.n_rows; ++i)
        for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k) {
            const std::size_t j = a.col_indices[k];
            const double scale = j < a.n_rows ? inv_sqrt[i] * inv_sqrt[j] : 0.0;
            if (scale > 0.0) trips.emplace_back(i, j, a.values[k] * scale);
        }
    return csr_from_triplets(a.n_rows, a.n_cols, std::move(trips));
}

/// Weighted sum sum_k alpha[k] * mats[k] with alpha a convex combination.
/// The output pattern is the union of the input patterns; exact-zero sums are
/// dropped, so a one-hot alpha reproduces the selected matrix bit for bit.
inline CsrMatrix convex_combine(std::span<const CsrMatrix* const> mats, std::span<const double> alpha) {
    detail::require(!mats.empty(), "convex_combine: no matrices");
    detail::require(mats.size() == alpha.size(), "convex_combine: |alpha| != |mats|");
    const std::size_t rows = mats[0]->n_rows, cols = mats[0]->n_cols;
    double total = 0.0;
    for (double a : alpha) {
        detail::require(a >= 0.0, "convex_combine: negative weight");
        total += a;
    }
    detail::require(std::abs(total - 1.0) <= 1e-9, "convex_combine: weights do not sum to 1");
    for (const CsrMatrix* m : mats)
        detail::require(m->n_rows == rows && m->n_cols == cols, "convex_combine: shape mismatch");

    CsrMatrix out(rows, cols);
    std::vector<double> acc(cols, 0.0);
    std::vector<bool> touched(cols, false);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rows; ++i) {
        idx.clear();
        for (std::size_t k = 0; k < mats.size(); ++k) {
            const CsrMatrix& m = *mats[k];
            for (std::size_t p = m.row_begin(i); p < m.row_end(i); ++p) {
                const std::size_t j = m.col_indices[p];
                acc[j] += alpha[k] * m.values[p];
                if (!touched[j]) {
                    touched[j] = true;
                    idx.push_back(j);
                }
            }
        }
        std::sort(idx.begin(), idx.end());
        for (std::size_t j : idx) {
            if (acc[j] != 0.0) {
                out.col_indices.push_back(j);
                out.values.push_back(acc[j]);
            }
            acc[j] = 0.0;
            touched[j] = false;
        }
        out.row_offsets[i + 1] = out.values.size();
    }
    return out;
}

inline CsrMatrix convex_combine(const std::vector<CsrMatrix>& mats, std::span<const double> alpha) {
    std::vector<const CsrMatrix*> ptrs;
    ptrs.reserve(mats.size());
    for (const auto& m : mats) ptrs.push_back(&m);
    return convex_combine(std::span<const CsrMatrix* const>(ptrs), alpha);
}

inline CsrMatrix transpose(const CsrMatrix& a) {
    CsrMatrix t(a.n_cols, a.n_rows);
    t.col_indices.resize(a.nnz());
    t.values.resize(a.nnz());
    std::vector<std::size_t> counts(a.n_cols, 0);
    for (std::size_t j : a.col_indices) ++counts[j];
    for (std::size_t j = 0; j < a.n_cols; ++j) t.row_offsets[j + 1] = t.row_offsets[j] + counts[j];
    std::vector<std::size_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
    for (std::size_t i = 0; i < a.n_rows; ++i)
        for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k) {
            const std::size_t j = a.col_indices[k];
            t.col_indices[cursor[j]] = i;
            t.values[cursor[j]] = a.values[k];
            ++cursor[j];
        }
    return t;
}

/// a + I on a square matrix (self-connection trick). Union pattern.
inline CsrMatrix add_identity(const CsrMatrix& a) {
    detail::require(a.n_rows == a.n_cols, "add_identity: matrix not square");
    CsrMatrix out(a.n_rows, a.n_cols);
    out.col_indices.reserve(a.nnz() + a.n_rows);
    out.values.reserve(a.nnz() + a.n_rows);
    for (std::size_t i = 0; i < a.n_rows; ++i) {
        bool placed = false;
        for (std::size_t k = a.row_begin(i); k < a.row_end(i); ++k) {
            const std::size_t j = a.col_indices[k];
            if (!placed && j >= i) {
                out.col_indices.push_back(i);
                out.values.push_back(j == i ? a.values[k] + 1.0 : 1.0);
                placed = true;
                if (j == i) continue;
            }
            out.col_indices.push_back(j);
            out.values.push_back(a.values[k]);
        }
        if (!placed) {
            out.col_indices.push_back(i);
            out.values.push_back(1.0);
        }
        out.row_offsets[i + 1] = out.values.size();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense kernels
// ---------------------------------------------------------------------------

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    detail::require(a.n_cols == b.n_rows, "matmul: inner dimensions differ");
    DenseMatrix c(a.n_rows, b.n_cols);
    for (std::size_t i = 0; i < a.n_rows; ++i) {
        double* out = c.values.data() + i * c.n_cols;
        for (std::size_t k = 0; k < a.n_cols; ++k) {
            const double v = a.at(i, k);
            if (v == 0.0) continue;
            const double* in = b.values.data() + k * b.n_cols;
            for (std::size_t j = 0; j < b.n_cols; ++j) out[j] += v * in[j];
        }
    }
    return c;
}

inline DenseMatrix dense_transpose(const DenseMatrix& a) {
    DenseMatrix t(a.n_cols, a.n_rows);
    for (std::size_t i = 0; i < a.n_rows; ++i)
        for (std::size_t j = 0; j < a.n_cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

/// x + broadcast row bias (bias is 1 x n_cols).
inline DenseMatrix add_bias(const DenseMatrix& x, const DenseMatrix& bias) {
    detail::require(bias.n_rows == 1 && bias.n_cols == x.n_cols, "add_bias: bias shape mismatch");
    DenseMatrix y = x;
    for (std::size_t i = 0; i < x.n_rows; ++i)
        for (std::size_t j = 0; j < x.n_cols; ++j) y.at(i, j) += bias.at(0, j);
    return y;
}

inline DenseMatrix relu(const DenseMatrix& x) {
    DenseMatrix y = x;
    for (double& v : y.values) v = v > 0.0 ? v : 0.0;
    return y;
}

/// Numerically stable softmax applied to each row; rows sum to 1.
inline DenseMatrix row_softmax(const DenseMatrix& x) {
    detail::require(x.n_cols > 0, "row_softmax: empty rows");
    DenseMatrix y = x;
    for (std::size_t i = 0; i < x.n_rows; ++i) {
        auto r = y.row(i);
        const double m = *std::max_element(r.begin(), r.end());
        double total = 0.0;
        for (double& v : r) {
            v = std::exp(v - m);
            total += v;
        }
        for (double& v : r) v /= total;
    }
    return y;
}

/// Horizontal concatenation in argument order.
inline DenseMatrix concat_cols(const std::vector<const DenseMatrix*>& xs) {
    detail::require(!xs.empty(), "concat_cols: no inputs");
    const std::size_t rows = xs[0]->n_rows;
    std::size_t cols = 0;
    for (const DenseMatrix* x : xs) {
        detail::require(x->n_rows == rows, "concat_cols: row count mismatch");
        cols += x->n_cols;
    }
    DenseMatrix y(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t off = 0;
        for (const DenseMatrix* x : xs) {
            const double* in = x->values.data() + i * x->n_cols;
            std::copy(in, in + x->n_cols, y.values.data() + i * cols + off);
            off += x->n_cols;
        }
    }
    return y;
}

/// Softmax of a single logit vector.
inline std::vector<double> softmax_vec(std::span<const double> logits) {
    DenseMatrix m(1, logits.size());
    std::copy(logits.begin(), logits.end(), m.values.begin());
    return row_softmax(m).values;
}

} // namespace gtn
