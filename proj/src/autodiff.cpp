#include "kdfp/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kdfp {

namespace {

void accum(Matrix& dst, const Matrix& src) {
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

bool all_zero(const Matrix& m) {
    for (double v : m.data) {
        if (v != 0.0) return false;
    }
    return true;
}

double safe_pow_grad(double x, double p) {
    // d/dx x^p with the conventions used by the forward pass: exponent 0
    // yields 1, and the p < 1 branch is floored away from x = 0.
    if (p == 1.0) return 1.0;
    if (x == 0.0) {
        if (p > 1.0) return 0.0;
        x = 1e-12;
    }
    return p * std::pow(x, p - 1.0);
}

}  // namespace

Node* Tape::make_node(Matrix value, bool requires_grad) {
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    n->grad = Matrix(n->value.rows, n->value.cols);
    n->requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.back().get();
}

Value Tape::constant(Matrix m) { return wrap(make_node(std::move(m), false)); }

Value Tape::param(Parameter& p) {
    Node* n = make_node(p.value, true);
    n->bound = &p;
    n->backprop = [](Node& self) { accum(self.bound->grad, self.grad); };
    return wrap(n);
}

Value Tape::matmul(Value a, Value b) {
    Node* an = a.node_;
    Node* bn = b.node_;
    Node* n = make_node(kdfp::matmul(an->value, bn->value), an->requires_grad || bn->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, bn](Node& self) {
            if (an->requires_grad) accum(an->grad, kdfp::matmul(self.grad, kdfp::transpose(bn->value)));
            if (bn->requires_grad) accum(bn->grad, kdfp::matmul(kdfp::transpose(an->value), self.grad));
        };
    }
    return wrap(n);
}

Value Tape::transpose(Value a) {
    Node* an = a.node_;
    Node* n = make_node(kdfp::transpose(an->value), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an](Node& self) { accum(an->grad, kdfp::transpose(self.grad)); };
    }
    return wrap(n);
}

Value Tape::add(Value a, Value b) {
    Node* an = a.node_;
    Node* bn = b.node_;
    Node* n = make_node(kdfp::add(an->value, bn->value), an->requires_grad || bn->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, bn](Node& self) {
            if (an->requires_grad) accum(an->grad, self.grad);
            if (bn->requires_grad) accum(bn->grad, self.grad);
        };
    }
    return wrap(n);
}

Value Tape::sub(Value a, Value b) {
    Node* an = a.node_;
    Node* bn = b.node_;
    Node* n = make_node(kdfp::sub(an->value, bn->value), an->requires_grad || bn->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, bn](Node& self) {
            if (an->requires_grad) accum(an->grad, self.grad);
            if (bn->requires_grad) {
                for (size_t i = 0; i < bn->grad.data.size(); ++i)
                    bn->grad.data[i] -= self.grad.data[i];
            }
        };
    }
    return wrap(n);
}

Value Tape::hadamard(Value a, Value b) {
    Node* an = a.node_;
    Node* bn = b.node_;
    Node* n = make_node(kdfp::hadamard(an->value, bn->value), an->requires_grad || bn->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, bn](Node& self) {
            if (an->requires_grad) accum(an->grad, kdfp::hadamard(self.grad, bn->value));
            if (bn->requires_grad) accum(bn->grad, kdfp::hadamard(self.grad, an->value));
        };
    }
    return wrap(n);
}

Value Tape::add_row_broadcast(Value a, Value row) {
    Node* an = a.node_;
    Node* rn = row.node_;
    Node* n = make_node(kdfp::add_row_broadcast(an->value, rn->value),
                        an->requires_grad || rn->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, rn](Node& self) {
            if (an->requires_grad) accum(an->grad, self.grad);
            if (rn->requires_grad) accum(rn->grad, kdfp::col_sums(self.grad));
        };
    }
    return wrap(n);
}

Value Tape::relu(Value a) {
    Node* an = a.node_;
    Node* n = make_node(kdfp::relu(an->value), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an](Node& self) {
            for (size_t i = 0; i < an->grad.data.size(); ++i) {
                if (an->value.data[i] > 0.0) an->grad.data[i] += self.grad.data[i];
            }
        };
    }
    return wrap(n);
}

Value Tape::pow_elem(Value a, double p) {
    Node* an = a.node_;
    Node* n = make_node(kdfp::pow_elem(an->value, p), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, p](Node& self) {
            for (size_t i = 0; i < an->grad.data.size(); ++i) {
                an->grad.data[i] += self.grad.data[i] * safe_pow_grad(an->value.data[i], p);
            }
        };
    }
    return wrap(n);
}

Value Tape::mean_rows(Value a) {
    Node* an = a.node_;
    Node* n = make_node(kdfp::mean_rows(an->value), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an](Node& self) {
            const double inv = 1.0 / an->value.rows;
            for (int i = 0; i < an->value.rows; ++i)
                for (int j = 0; j < an->value.cols; ++j)
                    an->grad.at(i, j) += self.grad.at(0, j) * inv;
        };
    }
    return wrap(n);
}

Value Tape::mean_all(Value a) {
    Node* an = a.node_;
    Node* n = make_node(kdfp::mean_all(an->value), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an](Node& self) {
            const double g = self.grad.data[0] / static_cast<double>(an->value.size());
            for (double& v : an->grad.data) v += g;
        };
    }
    return wrap(n);
}

Value Tape::l2_normalize_rows(Value a) {
    Node* an = a.node_;
    Node* n = make_node(kdfp::l2_normalize_rows(an->value), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an](Node& self) {
            const int d = an->value.cols;
            for (int i = 0; i < an->value.rows; ++i) {
                double sq = 0.0;
                for (int j = 0; j < d; ++j) sq += an->value.at(i, j) * an->value.at(i, j);
                const double norm = std::sqrt(sq);
                if (norm > kL2NormFloor) {
                    double dot = 0.0;  // y . g for this row
                    for (int j = 0; j < d; ++j) dot += self.value.at(i, j) * self.grad.at(i, j);
                    for (int j = 0; j < d; ++j) {
                        an->grad.at(i, j) +=
                            (self.grad.at(i, j) - self.value.at(i, j) * dot) / norm;
                    }
                } else {
                    for (int j = 0; j < d; ++j)
                        an->grad.at(i, j) += self.grad.at(i, j) / kL2NormFloor;
                }
            }
        };
    }
    return wrap(n);
}

Value Tape::squared_diff(Value a, Value b) {
    Node* an = a.node_;
    Node* bn = b.node_;
    Node* n = make_node(kdfp::squared_diff(an->value, bn->value),
                        an->requires_grad || bn->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, bn](Node& self) {
            for (size_t i = 0; i < self.grad.data.size(); ++i) {
                const double t = 2.0 * (an->value.data[i] - bn->value.data[i]) * self.grad.data[i];
                if (an->requires_grad) an->grad.data[i] += t;
                if (bn->requires_grad) bn->grad.data[i] -= t;
            }
        };
    }
    return wrap(n);
}

Value Tape::scale(Value a, double c) {
    Node* an = a.node_;
    Node* n = make_node(kdfp::scale(an->value, c), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, c](Node& self) {
            for (size_t i = 0; i < an->grad.data.size(); ++i)
                an->grad.data[i] += c * self.grad.data[i];
        };
    }
    return wrap(n);
}

Value Tape::add_scalar(Value a, double c) {
    Node* an = a.node_;
    Node* n = make_node(kdfp::add_scalar(an->value, c), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an](Node& self) { accum(an->grad, self.grad); };
    }
    return wrap(n);
}

Value Tape::batchnorm_train(Value x, Value gamma, Value beta, BatchNormState& state) {
    Node* xn = x.node_;
    Node* gn = gamma.node_;
    Node* bn = beta.node_;
    const int nrows = xn->value.rows;
    const int d = xn->value.cols;
    if (nrows < 2) throw std::invalid_argument("batchnorm_train: batch size must be >= 2");
    if (gn->value.cols != d || bn->value.cols != d) {
        throw std::invalid_argument("batchnorm_train: affine parameter width mismatch");
    }

    Matrix mean(1, d), var(1, d);
    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int i = 0; i < nrows; ++i) s += xn->value.at(i, j);
        mean.at(0, j) = s / nrows;
    }
    for (int j = 0; j < d; ++j) {
        double s = 0.0;
        for (int i = 0; i < nrows; ++i) {
            const double c = xn->value.at(i, j) - mean.at(0, j);
            s += c * c;
        }
        var.at(0, j) = s / nrows;
    }

    auto xhat = std::make_shared<Matrix>(nrows, d);
    auto inv_std = std::make_shared<Matrix>(1, d);
    Matrix out(nrows, d);
    for (int j = 0; j < d; ++j) {
        inv_std->at(0, j) = 1.0 / std::sqrt(var.at(0, j) + state.eps);
        for (int i = 0; i < nrows; ++i) {
            const double h = (xn->value.at(i, j) - mean.at(0, j)) * inv_std->at(0, j);
            xhat->at(i, j) = h;
            out.at(i, j) = gn->value.at(0, j) * h + bn->value.at(0, j);
        }
    }

    // Running stats: batch mean and unbiased batch variance.
    const double m = state.momentum;
    for (int j = 0; j < d; ++j) {
        state.running_mean.at(0, j) = (1.0 - m) * state.running_mean.at(0, j) + m * mean.at(0, j);
        const double unbiased = var.at(0, j) * nrows / (nrows - 1.0);
        state.running_var.at(0, j) = (1.0 - m) * state.running_var.at(0, j) + m * unbiased;
    }
    state.batches_seen++;

    Node* n = make_node(std::move(out),
                        xn->requires_grad || gn->requires_grad || bn->requires_grad);
    if (n->requires_grad) {
        n->backprop = [xn, gn, bn, xhat, inv_std, nrows, d](Node& self) {
            for (int j = 0; j < d; ++j) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int i = 0; i < nrows; ++i) {
                    sum_g += self.grad.at(i, j);
                    sum_gx += self.grad.at(i, j) * xhat->at(i, j);
                }
                if (gn->requires_grad) gn->grad.at(0, j) += sum_gx;
                if (bn->requires_grad) bn->grad.at(0, j) += sum_g;
                if (xn->requires_grad) {
                    const double gscale = gn->value.at(0, j) * inv_std->at(0, j);
                    for (int i = 0; i < nrows; ++i) {
                        const double dxhat = self.grad.at(i, j);
                        xn->grad.at(i, j) +=
                            gscale * (dxhat - sum_g / nrows - xhat->at(i, j) * sum_gx / nrows);
                    }
                }
            }
        };
    }
    return wrap(n);
}

Value Tape::batchnorm_eval(Value x, Value gamma, Value beta, const BatchNormState& state) {
    Node* xn = x.node_;
    Node* gn = gamma.node_;
    Node* bn = beta.node_;
    const int nrows = xn->value.rows;
    const int d = xn->value.cols;
    if (gn->value.cols != d || bn->value.cols != d) {
        throw std::invalid_argument("batchnorm_eval: affine parameter width mismatch");
    }

    auto inv_std = std::make_shared<Matrix>(1, d);
    auto xhat = std::make_shared<Matrix>(nrows, d);
    Matrix out(nrows, d);
    for (int j = 0; j < d; ++j) {
        inv_std->at(0, j) = 1.0 / std::sqrt(state.running_var.at(0, j) + state.eps);
        for (int i = 0; i < nrows; ++i) {
            const double h = (xn->value.at(i, j) - state.running_mean.at(0, j)) * inv_std->at(0, j);
            xhat->at(i, j) = h;
            out.at(i, j) = gn->value.at(0, j) * h + bn->value.at(0, j);
        }
    }

    Node* n = make_node(std::move(out),
                        xn->requires_grad || gn->requires_grad || bn->requires_grad);
    if (n->requires_grad) {
        n->backprop = [xn, gn, bn, xhat, inv_std, nrows, d](Node& self) {
            for (int j = 0; j < d; ++j) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int i = 0; i < nrows; ++i) {
                    sum_g += self.grad.at(i, j);
                    sum_gx += self.grad.at(i, j) * xhat->at(i, j);
                }
                if (gn->requires_grad) gn->grad.at(0, j) += sum_gx;
                if (bn->requires_grad) bn->grad.at(0, j) += sum_g;
                if (xn->requires_grad) {
                    const double gscale = gn->value.at(0, j) * inv_std->at(0, j);
                    for (int i = 0; i < nrows; ++i)
                        xn->grad.at(i, j) += gscale * self.grad.at(i, j);
                }
            }
        };
    }
    return wrap(n);
}

Value Tape::gather(Value a, std::vector<std::pair<int, int>> idx) {
    Node* an = a.node_;
    Matrix out(static_cast<int>(idx.size()), 1);
    for (size_t t = 0; t < idx.size(); ++t) {
        const auto [i, j] = idx[t];
        if (i < 0 || i >= an->value.rows || j < 0 || j >= an->value.cols) {
            throw std::invalid_argument("gather: index out of range");
        }
        out.at(static_cast<int>(t), 0) = an->value.at(i, j);
    }
    Node* n = make_node(std::move(out), an->requires_grad);
    if (n->requires_grad) {
        auto indices = std::make_shared<std::vector<std::pair<int, int>>>(std::move(idx));
        n->backprop = [an, indices](Node& self) {
            for (size_t t = 0; t < indices->size(); ++t) {
                an->grad.at((*indices)[t].first, (*indices)[t].second) +=
                    self.grad.at(static_cast<int>(t), 0);
            }
        };
    }
    return wrap(n);
}

Value Tape::concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const int cols = parts[0].cols();
    int total = 0;
    bool rg = false;
    for (const Value& p : parts) {
        if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        total += p.rows();
        rg = rg || p.node_->requires_grad;
    }
    Matrix out(total, cols);
    int off = 0;
    std::vector<Node*> srcs;
    srcs.reserve(parts.size());
    for (const Value& p : parts) {
        const Matrix& v = p.node_->value;
        std::copy(v.data.begin(), v.data.end(),
                  out.data.begin() + static_cast<size_t>(off) * cols);
        off += v.rows;
        srcs.push_back(p.node_);
    }
    Node* n = make_node(std::move(out), rg);
    if (rg) {
        n->backprop = [srcs, cols](Node& self) {
            int row = 0;
            for (Node* s : srcs) {
                if (s->requires_grad) {
                    for (int i = 0; i < s->value.rows; ++i)
                        for (int j = 0; j < cols; ++j)
                            s->grad.at(i, j) += self.grad.at(row + i, j);
                }
                row += s->value.rows;
            }
        };
    }
    return wrap(n);
}

Value Tape::slice_rows(Value a, int start, int count) {
    Node* an = a.node_;
    if (start < 0 || count < 1 || start + count > an->value.rows) {
        throw std::invalid_argument("slice_rows: range out of bounds");
    }
    const int cols = an->value.cols;
    Matrix out(count, cols);
    std::copy(an->value.data.begin() + static_cast<size_t>(start) * cols,
              an->value.data.begin() + static_cast<size_t>(start + count) * cols,
              out.data.begin());
    Node* n = make_node(std::move(out), an->requires_grad);
    if (n->requires_grad) {
        n->backprop = [an, start, count, cols](Node& self) {
            for (int i = 0; i < count; ++i)
                for (int j = 0; j < cols; ++j) an->grad.at(start + i, j) += self.grad.at(i, j);
        };
    }
    return wrap(n);
}

Value Tape::gem_pool_segments(Value a, std::vector<std::pair<int, int>> segments, double p) {
    Node* an = a.node_;
    Matrix out = kdfp::gem_pool_segments(an->value, segments, p);
    const int d = an->value.cols;

    // Per-segment means of x^p, needed by the backward pass.
    auto means = std::make_shared<Matrix>(static_cast<int>(segments.size()), d);
    for (size_t s = 0; s < segments.size(); ++s) {
        const auto [start, len] = segments[s];
        for (int j = 0; j < d; ++j) {
            double m = 0.0;
            for (int i = start; i < start + len; ++i) m += std::pow(an->value.at(i, j), p);
            means->at(static_cast<int>(s), j) = m / len;
        }
    }

    Node* n = make_node(std::move(out), an->requires_grad);
    if (n->requires_grad) {
        auto segs = std::make_shared<std::vector<std::pair<int, int>>>(std::move(segments));
        n->backprop = [an, segs, means, p, d](Node& self) {
            for (size_t s = 0; s < segs->size(); ++s) {
                const auto [start, len] = (*segs)[s];
                for (int j = 0; j < d; ++j) {
                    const double m = means->at(static_cast<int>(s), j);
                    if (m <= 1e-300) continue;  // flat at zero
                    const double outer =
                        self.grad.at(static_cast<int>(s), j) * std::pow(m, 1.0 / p - 1.0) / len;
                    if (outer == 0.0) continue;
                    for (int i = start; i < start + len; ++i) {
                        const double x = an->value.at(i, j);
                        const double xp = (p == 1.0) ? 1.0 : std::pow(x, p - 1.0);
                        an->grad.at(i, j) += outer * xp;
                    }
                }
            }
        };
    }
    return wrap(n);
}

Value Tape::gem_pool(Value a, double p) {
    if (a.rows() < 1) throw std::invalid_argument("gem_pool: empty input");
    return gem_pool_segments(a, {{0, a.rows()}}, p);
}

Value Tape::ranking_hinge(Value sim_new, const Matrix& sim_old, double delta) {
    Node* sn = sim_new.node_;
    const int b = sn->value.rows;
    if (sn->value.cols != b) throw std::invalid_argument("ranking_hinge: similarity must be square");
    if (!sim_old.same_shape(sn->value)) {
        throw std::invalid_argument("ranking_hinge: shape mismatch with reference similarities");
    }
    if (b < 3) throw std::invalid_argument("ranking_hinge: needs at least 3 rows");

    // Count ordered pairs where the reference ranks i above j and penalize
    // the live similarities for flipping that order by more than delta.
    long long count = 0;
    double total = 0.0;
    for (int a = 0; a < b; ++a) {
        for (int i = 0; i < b; ++i) {
            if (i == a) continue;
            for (int j = i + 1; j < b; ++j) {
                if (j == a) continue;
                const double oi = sim_old.at(a, i), oj = sim_old.at(a, j);
                if (oi == oj) continue;
                const int hi = oi > oj ? i : j;
                const int lo = oi > oj ? j : i;
                ++count;
                const double viol = sn->value.at(a, lo) - sn->value.at(a, hi) + delta;
                if (viol > 0.0) total += viol;
            }
        }
    }
    Matrix out(1, 1);
    out.data[0] = count > 0 ? total / count : 0.0;

    Node* n = make_node(std::move(out), sn->requires_grad);
    if (n->requires_grad && count > 0) {
        auto ref = std::make_shared<Matrix>(sim_old);
        n->backprop = [sn, ref, delta, b, count](Node& self) {
            const double g = self.grad.data[0] / count;
            if (g == 0.0) return;
            for (int a = 0; a < b; ++a) {
                for (int i = 0; i < b; ++i) {
                    if (i == a) continue;
                    for (int j = i + 1; j < b; ++j) {
                        if (j == a) continue;
                        const double oi = ref->at(a, i), oj = ref->at(a, j);
                        if (oi == oj) continue;
                        const int hi = oi > oj ? i : j;
                        const int lo = oi > oj ? j : i;
                        if (sn->value.at(a, lo) - sn->value.at(a, hi) + delta > 0.0) {
                            sn->grad.at(a, lo) += g;
                            sn->grad.at(a, hi) -= g;
                        }
                    }
                }
            }
        };
    }
    return wrap(n);
}

void Tape::backward(Value loss) {
    Node* ln = loss.node_;
    if (ln == nullptr) throw std::invalid_argument("backward: invalid value");
    if (!ln->value.is_scalar()) throw std::invalid_argument("backward: loss must be 1x1");

    for (auto& n : nodes_) {
        std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
    }
    ln->grad.data[0] = 1.0;

    // Parents always precede children on the tape, so one reverse sweep
    // suffices; nodes recorded after the loss cannot feed it.
    size_t start = nodes_.size();
    for (size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].get() == ln) {
            start = i;
            break;
        }
    }
    for (size_t i = start + 1; i-- > 0;) {
        Node& n = *nodes_[i];
        if (!n.requires_grad || !n.backprop) continue;
        if (all_zero(n.grad)) continue;
        n.backprop(n);
    }
}

}  // namespace kdfp
