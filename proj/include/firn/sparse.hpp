#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace firn {

/// Compressed-row sparse matrix, sorted column indices within each row.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(int nrows, int ncols) : nrows_(nrows), ncols_(ncols), rowptr_(nrows + 1, 0) {}

    int nrows() const { return nrows_; }
    int ncols() const { return ncols_; }
    std::int64_t nnz() const { return static_cast<std::int64_t>(colind_.size()); }

    const std::vector<std::int64_t>& rowptr() const { return rowptr_; }
    const std::vector<std::int32_t>& colind() const { return colind_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    void spmv(const double* x, double* y) const {
        for (int r = 0; r < nrows_; ++r) {
            double s = 0;
            for (std::int64_t p = rowptr_[r]; p < rowptr_[r + 1]; ++p) s += values_[p] * x[colind_[p]];
            y[r] = s;
        }
    }

    void spmv_add(const double* x, double* y, double alpha = 1.0) const {
        for (int r = 0; r < nrows_; ++r) {
            double s = 0;
            for (std::int64_t p = rowptr_[r]; p < rowptr_[r + 1]; ++p) s += values_[p] * x[colind_[p]];
            y[r] += alpha * s;
        }
    }

    std::vector<double> diagonal() const {
        std::vector<double> d(nrows_, 0.0);
        for (int r = 0; r < nrows_; ++r)
            for (std::int64_t p = rowptr_[r]; p < rowptr_[r + 1]; ++p)
                if (colind_[p] == r) d[r] = values_[p];
        return d;
    }

    double at(int r, int c) const {
        for (std::int64_t p = rowptr_[r]; p < rowptr_[r + 1]; ++p)
            if (colind_[p] == c) return values_[p];
        return 0.0;
    }

    SparseMatrix transpose() const {
        SparseMatrix t(ncols_, nrows_);
        std::vector<std::int64_t> count(ncols_ + 1, 0);
        for (auto c : colind_) ++count[c + 1];
        std::partial_sum(count.begin(), count.end(), count.begin());
        t.rowptr_ = count;
        t.colind_.resize(colind_.size());
        t.values_.resize(values_.size());
        std::vector<std::int64_t> next(t.rowptr_.begin(), t.rowptr_.end() - 1);
        for (int r = 0; r < nrows_; ++r)
            for (std::int64_t p = rowptr_[r]; p < rowptr_[r + 1]; ++p) {
                const std::int64_t q = next[colind_[p]]++;
                t.colind_[q] = r;
                t.values_[q] = values_[p];
            }
        return t;
    }

    bool is_symmetric(double tol = 0.0) const {
        const SparseMatrix t = transpose();
        if (t.colind_ != colind_ || t.rowptr_ != rowptr_) return false;
        for (size_t i = 0; i < values_.size(); ++i)
            if (std::abs(values_[i] - t.values_[i]) > tol) return false;
        return true;
    }

    /// C = this * B, rows built with a dense sparse-accumulator.
    SparseMatrix multiply(const SparseMatrix& B) const {
        if (ncols_ != B.nrows_) throw std::invalid_argument("multiply: dimension mismatch");
        SparseMatrix C(nrows_, B.ncols_);
        std::vector<double> acc(B.ncols_, 0.0);
        std::vector<std::int32_t> touched;
        std::vector<std::uint8_t> mark(B.ncols_, 0);
        for (int r = 0; r < nrows_; ++r) {
            touched.clear();
            for (std::int64_t p = rowptr_[r]; p < rowptr_[r + 1]; ++p) {
                const int kcol = colind_[p];
                const double av = values_[p];
                for (std::int64_t q = B.rowptr_[kcol]; q < B.rowptr_[kcol + 1]; ++q) {
                    const int c = B.colind_[q];
                    if (!mark[c]) {
                        mark[c] = 1;
                        touched.push_back(c);
                        acc[c] = 0.0;
                    }
                    acc[c] += av * B.values_[q];
                }
            }
            std::sort(touched.begin(), touched.end());
            for (int c : touched) {
                C.colind_.push_back(c);
                C.values_.push_back(acc[c]);
                mark[c] = 0;
            }
            C.rowptr_[r + 1] = static_cast<std::int64_t>(C.colind_.size());
        }
        return C;
    }

    /// Symmetric permutation PAP^T with row/col i moving to perm[i].
    SparseMatrix permuted(const std::vector<int>& perm) const {
        std::vector<int> inv(nrows_);
        for (int i = 0; i < nrows_; ++i) inv[perm[i]] = i;
        SparseMatrix out(nrows_, ncols_);
        out.colind_.reserve(colind_.size());
        out.values_.reserve(values_.size());
        std::vector<std::pair<std::int32_t, double>> row;
        for (int r = 0; r < nrows_; ++r) {
            const int src = inv[r];
            row.clear();
            for (std::int64_t p = rowptr_[src]; p < rowptr_[src + 1]; ++p)
                row.push_back({perm[colind_[p]], values_[p]});
            std::sort(row.begin(), row.end());
            for (auto& [c, v] : row) {
                out.colind_.push_back(c);
                out.values_.push_back(v);
            }
            out.rowptr_[r + 1] = static_cast<std::int64_t>(out.colind_.size());
        }
        return out;
    }

    /// Collapse variable-size node blocks to a scalar connection matrix with
    /// entry = max |a_ij| over the block.
    SparseMatrix block_collapse(const std::vector<std::int32_t>& dof_node, int n_nodes) const {
        SparseMatrix out;
        std::vector<std::vector<std::pair<std::int32_t, double>>> rows(n_nodes);
        for (int r = 0; r < nrows_; ++r) {
            const int nr = dof_node[r];
            auto& row = rows[nr];
            for (std::int64_t p = rowptr_[r]; p < rowptr_[r + 1]; ++p) {
                const int nc = dof_node[colind_[p]];
                const double v = std::abs(values_[p]);
                auto it = std::lower_bound(row.begin(), row.end(), std::pair<std::int32_t, double>{nc, -1.0},
                                           [](auto& a, auto& b) { return a.first < b.first; });
                if (it != row.end() && it->first == nc)
                    it->second = std::max(it->second, v);
                else
                    row.insert(it, {nc, v});
            }
        }
        out.nrows_ = out.ncols_ = n_nodes;
        out.rowptr_.assign(n_nodes + 1, 0);
        for (int r = 0; r < n_nodes; ++r) {
            for (auto& [c, v] : rows[r]) {
                out.colind_.push_back(c);
                out.values_.push_back(v);
            }
            out.rowptr_[r + 1] = static_cast<std::int64_t>(out.colind_.size());
        }
        return out;
    }

    static SparseMatrix identity(int n) {
        SparseMatrix m(n, n);
        m.colind_.resize(n);
        m.values_.assign(n, 1.0);
        for (int i = 0; i < n; ++i) {
            m.colind_[i] = i;
            m.rowptr_[i + 1] = i + 1;
        }
        return m;
    }

    friend class SparseBuilder;

private:
    int nrows_ = 0, ncols_ = 0;
    std::vector<std::int64_t> rowptr_;
    std::vector<std::int32_t> colind_;
    std::vector<double> values_;
};

/// Row-wise incremental builder. Rows stay sorted; batches from one element
/// are merged row-by-row so peak memory tracks the final pattern.
class SparseBuilder {
public:
    SparseBuilder(int nrows, int ncols) : nrows_(nrows), ncols_(ncols), rows_(nrows) {}

    void add(int r, int c, double v) {
        auto& row = rows_[r];
        auto it = std::lower_bound(row.begin(), row.end(), std::pair<std::int32_t, double>{c, 0.0},
                                   [](auto& a, auto& b) { return a.first < b.first; });
        if (it != row.end() && it->first == c)
            it->second += v;
        else
            row.insert(it, {static_cast<std::int32_t>(c), v});
    }

    /// Merge a batch of (row, col, value) triplets; the batch is sorted here.
    void add_batch(std::vector<std::array<double, 3>>&) = delete;
    void add_batch(std::vector<std::pair<std::pair<std::int32_t, std::int32_t>, double>>& batch) {
        std::sort(batch.begin(), batch.end(),
                  [](auto& a, auto& b) { return a.first < b.first; });
        size_t i = 0;
        std::vector<std::pair<std::int32_t, double>> seg, merged;
        while (i < batch.size()) {
            const int r = batch[i].first.first;
            seg.clear();
            while (i < batch.size() && batch[i].first.first == r) {
                const int c = batch[i].first.second;
                double v = batch[i].second;
                ++i;
                while (i < batch.size() && batch[i].first.first == r && batch[i].first.second == c) {
                    v += batch[i].second;
                    ++i;
                }
                seg.push_back({c, v});
            }
            auto& row = rows_[r];
            if (row.empty()) {
                row = seg;
                continue;
            }
            merged.clear();
            merged.reserve(row.size() + seg.size());
            size_t a = 0, b = 0;
            while (a < row.size() || b < seg.size()) {
                if (b == seg.size() || (a < row.size() && row[a].first < seg[b].first))
                    merged.push_back(row[a++]);
                else if (a == row.size() || seg[b].first < row[a].first)
                    merged.push_back(seg[b++]);
                else {
                    merged.push_back({row[a].first, row[a].second + seg[b].second});
                    ++a;
                    ++b;
                }
            }
            row.swap(merged);
        }
    }

    /// Finalize an upper-triangle accumulation (every stored entry has
    /// r <= c) into the full symmetric matrix.
    SparseMatrix finalize_mirrored() {
        SparseMatrix m(nrows_, ncols_);
        std::vector<std::int64_t> count(nrows_ + 1, 0);
        for (int r = 0; r < nrows_; ++r)
            for (auto& [c, v] : rows_[r]) {
                ++count[r + 1];
                if (c != r) ++count[c + 1];
            }
        std::partial_sum(count.begin(), count.end(), count.begin());
        m.rowptr_ = count;
        m.colind_.resize(count[nrows_]);
        m.values_.resize(count[nrows_]);
        std::vector<std::int64_t> next(m.rowptr_.begin(), m.rowptr_.end() - 1);
        // Lower part first (transposed uppers arrive in increasing row order,
        // which keeps each output row sorted since c < r <= following c's).
        for (int r = 0; r < nrows_; ++r)
            for (auto& [c, v] : rows_[r])
                if (c != r) {
                    const std::int64_t q = next[c]++;
                    m.colind_[q] = r;
                    m.values_[q] = v;
                }
        for (int r = 0; r < nrows_; ++r) {
            for (auto& [c, v] : rows_[r]) {
                const std::int64_t q = next[r]++;
                m.colind_[q] = c;
                m.values_[q] = v;
            }
            rows_[r].clear();
            rows_[r].shrink_to_fit();
        }
        return m;
    }

    SparseMatrix finalize(double drop_tol = 0.0) {
        SparseMatrix m(nrows_, ncols_);
        std::int64_t nnz = 0;
        for (auto& row : rows_) nnz += static_cast<std::int64_t>(row.size());
        m.colind_.reserve(nnz);
        m.values_.reserve(nnz);
        for (int r = 0; r < nrows_; ++r) {
            for (auto& [c, v] : rows_[r])
                if (std::abs(v) > drop_tol || c == r) {
                    m.colind_.push_back(c);
                    m.values_.push_back(v);
                }
            m.rowptr_[r + 1] = static_cast<std::int64_t>(m.colind_.size());
            rows_[r].clear();
            rows_[r].shrink_to_fit();
        }
        return m;
    }

private:
    int nrows_, ncols_;
    std::vector<std::vector<std::pair<std::int32_t, double>>> rows_;
};

/// Matrix Market exchange (coordinate real general).
inline void write_matrix_market(const SparseMatrix& m, std::ostream& os) {
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << m.nrows() << ' ' << m.ncols() << ' ' << m.nnz() << '\n';
    os << std::setprecision(17);
    for (int r = 0; r < m.nrows(); ++r)
        for (std::int64_t p = m.rowptr()[r]; p < m.rowptr()[r + 1]; ++p)
            os << r + 1 << ' ' << m.colind()[p] + 1 << ' ' << m.values()[p] << '\n';
}

inline SparseMatrix read_matrix_market(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.find("%%MatrixMarket") != 0)
        throw std::runtime_error("read_matrix_market: bad header");
    const bool symmetric = line.find("symmetric") != std::string::npos;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '%') break;
    std::istringstream hdr(line);
    int nr, nc;
    std::int64_t nnz;
    hdr >> nr >> nc >> nnz;
    SparseBuilder b(nr, nc);
    for (std::int64_t i = 0; i < nnz; ++i) {
        int r, c;
        double v;
        is >> r >> c >> v;
        b.add(r - 1, c - 1, v);
        if (symmetric && r != c) b.add(c - 1, r - 1, v);
    }
    return b.finalize();
}

} // namespace firn
