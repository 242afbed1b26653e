#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "kdfp/matrix.hpp"

namespace kdfp {

class Tape;

// Trainable tensor. Lives outside any tape; gradients accumulate here across
// backward() calls until zero_grad().
struct Parameter {
    Matrix value;
    Matrix grad;

    Parameter() = default;
    explicit Parameter(Matrix v) : value(std::move(v)), grad(value.rows, value.cols) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Running statistics for 1d batch norm. Owned by the layer, updated by
// train-mode forwards, read by eval-mode forwards.
struct BatchNormState {
    Matrix running_mean;  // 1 x d
    Matrix running_var;   // 1 x d, starts at 1
    double momentum = 0.1;
    double eps = 1e-5;
    long long batches_seen = 0;

    BatchNormState() = default;
    explicit BatchNormState(int d)
        : running_mean(1, d), running_var(Matrix::full(1, d, 1.0)) {}
};

struct Node {
    Matrix value;
    Matrix grad;  // same shape, zero until backward touches it
    bool requires_grad = false;
    Parameter* bound = nullptr;  // set on parameter leaves
    // Pushes this node's grad into its parents' grads.
    std::function<void(Node&)> backprop;
};

// Handle to a node on a tape. Cheap to copy; invalidated by Tape::clear().
class Value {
  public:
    Value() = default;
    const Matrix& val() const { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    int rows() const { return node_->value.rows; }
    int cols() const { return node_->value.cols; }
    bool valid() const { return node_ != nullptr; }

  private:
    friend class Tape;
    explicit Value(Node* n) : node_(n) {}
    Node* node_ = nullptr;
};

// Records a computation graph and runs reverse-mode differentiation over it.
// A tape and its nodes are confined to a single thread; independent tapes may
// run concurrently.
class Tape {
  public:
    Value constant(Matrix m);
    Value param(Parameter& p);

    Value matmul(Value a, Value b);
    Value transpose(Value a);
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value hadamard(Value a, Value b);
    Value add_row_broadcast(Value a, Value row);
    Value relu(Value a);
    Value hinge(Value a) { return relu(a); }  // max(0, x)
    Value pow_elem(Value a, double p);
    Value mean_rows(Value a);
    Value mean_all(Value a);
    Value l2_normalize_rows(Value a);
    Value squared_diff(Value a, Value b);
    Value scale(Value a, double c);
    Value add_scalar(Value a, double c);
    Value batchnorm_train(Value x, Value gamma, Value beta, BatchNormState& state);
    Value batchnorm_eval(Value x, Value gamma, Value beta, const BatchNormState& state);
    // y[t] = x[idx[t].first][idx[t].second], as a k x 1 column.
    Value gather(Value a, std::vector<std::pair<int, int>> idx);
    Value concat_rows(const std::vector<Value>& parts);
    Value slice_rows(Value a, int start, int count);
    Value gem_pool_segments(Value a, std::vector<std::pair<int, int>> segments, double p);
    // GEM pooling over a full n x d feature block -> 1 x d.
    Value gem_pool(Value a, double p);
    // Ranking-order distillation hinge over cosine-similarity matrices; see
    // losses module for semantics. sim_old is a constant reference matrix.
    Value ranking_hinge(Value sim_new, const Matrix& sim_old, double delta);

    // Reverse sweep from a scalar loss. Parameter gradients accumulate into
    // their Parameter::grad; node-local grads are reset at the start of each
    // call, so repeated backward() over one tape is deterministic.
    void backward(Value loss);

    size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    Node* make_node(Matrix value, bool requires_grad);
    Value wrap(Node* n) { return Value(n); }

    std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace kdfp
