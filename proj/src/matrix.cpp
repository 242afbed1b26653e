#include "kdfp/matrix.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kdfp {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                    std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                    " vs " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols) + ")");
    }
}

}  // namespace

Matrix Matrix::full(int r, int c, double v) {
    Matrix m(r, c);
    for (double& x : m.data) x = v;
    return m;
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::row(std::initializer_list<double> vals) {
    Matrix m(1, static_cast<int>(vals.size()));
    int j = 0;
    for (double v : vals) m.at(0, j++) = v;
    return m;
}

Matrix Matrix::column(std::initializer_list<double> vals) {
    Matrix m(static_cast<int>(vals.size()), 1);
    int i = 0;
    for (double v : vals) m.at(i++, 0) = v;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rws) {
    const int r = static_cast<int>(rws.size());
    const int c = r > 0 ? static_cast<int>(rws.begin()->size()) : 0;
    Matrix m(r, c);
    int i = 0;
    for (const auto& rw : rws) {
        if (static_cast<int>(rw.size()) != c) {
            throw std::invalid_argument("from_rows: ragged rows");
        }
        int j = 0;
        for (double v : rw) m.at(i, j++) = v;
        ++i;
    }
    return m;
}

double Matrix::scalar() const {
    if (!is_scalar()) throw std::invalid_argument("scalar(): matrix is not 1x1");
    return data[0];
}

bool Matrix::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                    " vs " + std::to_string(b.rows) + ")");
    }
    Matrix c(a.rows, b.cols);
    // i-k-j order streams B and C rows; the inner loop auto-vectorizes.
    const int m = a.rows, k = a.cols, n = b.cols;
    for (int i = 0; i < m; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * k;
        double* crow = c.data.data() + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b.data.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    return c;
}

Matrix scale(const Matrix& a, double c) {
    Matrix r = a;
    for (double& v : r.data) v *= c;
    return r;
}

Matrix add_scalar(const Matrix& a, double c) {
    Matrix r = a;
    for (double& v : r.data) v += c;
    return r;
}

Matrix add_row_broadcast(const Matrix& a, const Matrix& row) {
    if (row.rows != 1 || row.cols != a.cols) {
        throw std::invalid_argument("add_row_broadcast: row must be 1x" + std::to_string(a.cols));
    }
    Matrix c = a;
    for (int i = 0; i < c.rows; ++i)
        for (int j = 0; j < c.cols; ++j) c.at(i, j) += row.at(0, j);
    return c;
}

Matrix relu(const Matrix& a) {
    Matrix r = a;
    for (double& v : r.data) v = v > 0.0 ? v : 0.0;
    return r;
}

Matrix pow_elem(const Matrix& a, double p) {
    Matrix r = a;
    for (double& v : r.data) {
        if (v < 0.0 && p != std::floor(p)) {
            throw std::invalid_argument("pow_elem: negative base with non-integer exponent");
        }
        v = std::pow(v, p);
    }
    return r;
}

Matrix mean_rows(const Matrix& a) {
    if (a.rows < 1) throw std::invalid_argument("mean_rows: empty matrix");
    Matrix m(1, a.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) m.at(0, j) += a.at(i, j);
    for (int j = 0; j < a.cols; ++j) m.at(0, j) /= a.rows;
    return m;
}

Matrix mean_all(const Matrix& a) {
    if (a.size() == 0) throw std::invalid_argument("mean_all: empty matrix");
    double s = 0.0;
    for (double v : a.data) s += v;
    Matrix m(1, 1);
    m.data[0] = s / static_cast<double>(a.size());
    return m;
}

Matrix l2_normalize_rows(const Matrix& a) {
    Matrix r = a;
    for (int i = 0; i < a.rows; ++i) {
        double sq = 0.0;
        for (int j = 0; j < a.cols; ++j) sq += a.at(i, j) * a.at(i, j);
        const double norm = std::max(std::sqrt(sq), kL2NormFloor);
        for (int j = 0; j < a.cols; ++j) r.at(i, j) = a.at(i, j) / norm;
    }
    return r;
}

Matrix squared_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "squared_diff");
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < c.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        c.data[i] = d * d;
    }
    return c;
}

Matrix col_sums(const Matrix& a) {
    Matrix m(1, a.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) m.at(0, j) += a.at(i, j);
    return m;
}

Matrix gem_pool_segments(const Matrix& a, const std::vector<std::pair<int, int>>& segments,
                         double p) {
    if (p < 1.0) throw std::invalid_argument("gem_pool_segments: p must be >= 1");
    for (double v : a.data) {
        if (v < 0.0) throw std::invalid_argument("gem_pool_segments: negative input feature");
    }
    Matrix out(static_cast<int>(segments.size()), a.cols);
    for (size_t s = 0; s < segments.size(); ++s) {
        const auto [start, len] = segments[s];
        if (len < 1 || start < 0 || start + len > a.rows) {
            throw std::invalid_argument("gem_pool_segments: bad segment");
        }
        for (int j = 0; j < a.cols; ++j) {
            double m = 0.0;
            for (int i = start; i < start + len; ++i) m += std::pow(a.at(i, j), p);
            m /= len;
            out.at(static_cast<int>(s), j) = std::pow(m, 1.0 / p);
        }
    }
    return out;
}

}  // namespace kdfp
