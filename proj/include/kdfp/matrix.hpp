#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace kdfp {

// Dense row-major matrix of doubles. The only tensor type in the project;
// vectors are 1xN or Nx1 matrices, scalars are 1x1.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    static Matrix zeros(int r, int c) { return Matrix(r, c); }
    static Matrix full(int r, int c, double v);
    static Matrix identity(int n);
    static Matrix row(std::initializer_list<double> vals);
    static Matrix column(std::initializer_list<double> vals);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rws);

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    double scalar() const;
    bool all_finite() const;
};

bool operator==(const Matrix& a, const Matrix& b);

// Value-level kernels. These back both the autodiff tape and the
// gradient-free evaluation paths, so the two produce bit-identical numbers.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix add_scalar(const Matrix& a, double c);
Matrix add_row_broadcast(const Matrix& a, const Matrix& row);  // [n x d] + [1 x d]
Matrix relu(const Matrix& a);
Matrix pow_elem(const Matrix& a, double p);
Matrix mean_rows(const Matrix& a);  // [n x d] -> [1 x d]
Matrix mean_all(const Matrix& a);   // -> [1 x 1]
Matrix l2_normalize_rows(const Matrix& a);
Matrix squared_diff(const Matrix& a, const Matrix& b);
Matrix col_sums(const Matrix& a);  // [n x d] -> [1 x d]

// Row-segment GEM pooling: out[b][j] = (mean_{i in segment b} a[i][j]^p)^(1/p).
// Segments are (start, length) pairs covering disjoint row ranges.
Matrix gem_pool_segments(const Matrix& a, const std::vector<std::pair<int, int>>& segments,
                         double p);

constexpr double kL2NormFloor = 1e-12;

}  // namespace kdfp
