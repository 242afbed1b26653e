#include "kdfp/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace kdfp {

namespace {

Matrix xavier_uniform(int in, int out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(in, out);
    for (double& v : w.data) v = dist(rng);
    return w;
}

}  // namespace

void EncoderConfig::validate() const {
    if (point_dim < 1) throw std::invalid_argument("EncoderConfig: point_dim must be >= 1");
    if (mlp_widths.empty()) throw std::invalid_argument("EncoderConfig: mlp_widths empty");
    for (int w : mlp_widths) {
        if (w < 1) throw std::invalid_argument("EncoderConfig: mlp widths must be >= 1");
    }
    if (descriptor_dim < 2) throw std::invalid_argument("EncoderConfig: descriptor_dim must be >= 2");
    if (gem_p < 1.0) throw std::invalid_argument("EncoderConfig: gem_p must be >= 1");
    if (head_hidden < 1) throw std::invalid_argument("EncoderConfig: head_hidden must be >= 1");
}

LinearLayer::LinearLayer(int in, int out, std::mt19937_64& rng)
    : weight(xavier_uniform(in, out, rng)), bias(Matrix(1, out)) {}

Encoder::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg.validate();
    int in = cfg.point_dim;
    for (int w : cfg.mlp_widths) {
        mlp_.emplace_back(in, w, rng);
        in = w;
    }
    projection_ = LinearLayer(in, cfg.descriptor_dim, rng);
}

namespace {

// Stacks all submaps' points into one block so the per-point MLP runs as a
// few large matmuls; GEM then pools each submap's row segment.
std::pair<Matrix, std::vector<std::pair<int, int>>> stack_points(
    const std::vector<const Matrix*>& point_sets, int point_dim) {
    if (point_sets.empty()) throw std::invalid_argument("embed: empty batch");
    int total = 0;
    for (const Matrix* p : point_sets) {
        if (p == nullptr || p->rows < 1) throw std::invalid_argument("embed: empty point set");
        if (p->cols != point_dim) throw std::invalid_argument("embed: point dimension mismatch");
        total += p->rows;
    }
    Matrix stacked(total, point_dim);
    std::vector<std::pair<int, int>> segments;
    segments.reserve(point_sets.size());
    int off = 0;
    for (const Matrix* p : point_sets) {
        std::copy(p->data.begin(), p->data.end(),
                  stacked.data.begin() + static_cast<size_t>(off) * point_dim);
        segments.emplace_back(off, p->rows);
        off += p->rows;
    }
    return {std::move(stacked), std::move(segments)};
}

}  // namespace

Encoder::TapeEmbed Encoder::embed_batch(Tape& tape, const std::vector<const Matrix*>& point_sets) {
    auto [stacked, segments] = stack_points(point_sets, cfg_.point_dim);
    Value x = tape.constant(std::move(stacked));
    for (LinearLayer& layer : mlp_) {
        x = tape.relu(tape.add_row_broadcast(tape.matmul(x, tape.param(layer.weight)),
                                             tape.param(layer.bias)));
    }
    Value pooled = tape.gem_pool_segments(x, segments, cfg_.gem_p);
    Value projected = tape.add_row_broadcast(tape.matmul(pooled, tape.param(projection_.weight)),
                                             tape.param(projection_.bias));
    return {tape.l2_normalize_rows(projected), pooled};
}

Encoder::EvalEmbed Encoder::embed_batch_eval(const std::vector<const Matrix*>& point_sets) const {
    auto [stacked, segments] = stack_points(point_sets, cfg_.point_dim);
    Matrix x = std::move(stacked);
    for (const LinearLayer& layer : mlp_) {
        x = relu(add_row_broadcast(matmul(x, layer.weight.value), layer.bias.value));
    }
    Matrix pooled = gem_pool_segments(x, segments, cfg_.gem_p);
    Matrix projected =
        add_row_broadcast(matmul(pooled, projection_.weight.value), projection_.bias.value);
    return {l2_normalize_rows(projected), std::move(pooled)};
}

Encoder::EvalEmbed Encoder::embed_eval(const Matrix& points) const {
    return embed_batch_eval({&points});
}

std::vector<Parameter*> Encoder::parameters() {
    std::vector<Parameter*> out;
    for (LinearLayer& layer : mlp_) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    out.push_back(&projection_.weight);
    out.push_back(&projection_.bias);
    return out;
}

LossPredictionHead::LossPredictionHead(int pool_dim, int hidden, std::mt19937_64& rng)
    : linear1_(pool_dim, hidden, rng),
      bn_gamma_(Matrix::full(1, hidden, 1.0)),
      bn_beta_(Matrix(1, hidden)),
      bn_state_(hidden),
      linear2_(hidden, 1, rng),
      pool_dim_(pool_dim),
      hidden_(hidden) {
    // Start at the zero-loss baseline; the output layer learns deviations.
    // Loss targets are tiny compared to a Xavier-scale initial output.
    std::fill(linear2_.weight.value.data.begin(), linear2_.weight.value.data.end(), 0.0);
}

Value LossPredictionHead::predict_tape(Tape& tape, const Matrix& pooled) {
    return predict_tape_attached(tape, tape.constant(pooled));
}

Value LossPredictionHead::predict_tape_attached(Tape& tape, Value pooled) {
    if (pooled.cols() != pool_dim_) {
        throw std::invalid_argument("predict_loss: pooled feature width mismatch");
    }
    if (pooled.rows() < 2) {
        throw std::invalid_argument("predict_loss: train mode needs batch size >= 2");
    }
    Value h = tape.add_row_broadcast(tape.matmul(pooled, tape.param(linear1_.weight)),
                                     tape.param(linear1_.bias));
    h = tape.batchnorm_train(h, tape.param(bn_gamma_), tape.param(bn_beta_), bn_state_);
    h = tape.relu(h);
    return tape.add_row_broadcast(tape.matmul(h, tape.param(linear2_.weight)),
                                  tape.param(linear2_.bias));
}

Matrix LossPredictionHead::predict_eval(const Matrix& pooled) const {
    if (pooled.cols != pool_dim_) {
        throw std::invalid_argument("predict_loss: pooled feature width mismatch");
    }
    if (pooled.rows < 1) throw std::invalid_argument("predict_loss: empty batch");
    Matrix h = add_row_broadcast(matmul(pooled, linear1_.weight.value), linear1_.bias.value);
    for (int i = 0; i < h.rows; ++i) {
        for (int j = 0; j < h.cols; ++j) {
            h.at(i, j) = bn_gamma_.value.at(0, j) *
                             (h.at(i, j) - bn_state_.running_mean.at(0, j)) /
                             std::sqrt(bn_state_.running_var.at(0, j) + bn_state_.eps) +
                         bn_beta_.value.at(0, j);
        }
    }
    h = relu(h);
    return add_row_broadcast(matmul(h, linear2_.weight.value), linear2_.bias.value);
}

std::vector<Parameter*> LossPredictionHead::parameters() {
    return {&linear1_.weight, &linear1_.bias, &bn_gamma_, &bn_beta_, &linear2_.weight,
            &linear2_.bias};
}

size_t LossPredictionHead::parameter_count() const {
    size_t n = 0;
    n += linear1_.weight.value.size() + linear1_.bias.value.size();
    n += bn_gamma_.value.size() + bn_beta_.value.size();
    n += linear2_.weight.value.size() + linear2_.bias.value.size();
    return n;
}

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    const auto& d = j.at("data");
    if (d.size() != m.data.size()) throw std::runtime_error("checkpoint: data length mismatch");
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = d[i].get<double>();
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Encoder& encoder,
                     const LossPredictionHead& head) {
    json j;
    j["config"] = {{"point_dim", encoder.cfg_.point_dim},
                   {"mlp_widths", encoder.cfg_.mlp_widths},
                   {"gem_p", encoder.cfg_.gem_p},
                   {"descriptor_dim", encoder.cfg_.descriptor_dim},
                   {"head_hidden", encoder.cfg_.head_hidden}};
    json layers = json::array();
    for (const LinearLayer& l : encoder.mlp_) {
        layers.push_back({{"weight", matrix_to_json(l.weight.value)},
                          {"bias", matrix_to_json(l.bias.value)}});
    }
    j["mlp"] = layers;
    j["projection"] = {{"weight", matrix_to_json(encoder.projection_.weight.value)},
                       {"bias", matrix_to_json(encoder.projection_.bias.value)}};
    j["head"] = {{"linear1_weight", matrix_to_json(head.linear1_.weight.value)},
                 {"linear1_bias", matrix_to_json(head.linear1_.bias.value)},
                 {"bn_gamma", matrix_to_json(head.bn_gamma_.value)},
                 {"bn_beta", matrix_to_json(head.bn_beta_.value)},
                 {"linear2_weight", matrix_to_json(head.linear2_.weight.value)},
                 {"linear2_bias", matrix_to_json(head.linear2_.bias.value)},
                 {"bn_running_mean", matrix_to_json(head.bn_state_.running_mean)},
                 {"bn_running_var", matrix_to_json(head.bn_state_.running_var)},
                 {"bn_batches_seen", head.bn_state_.batches_seen}};

    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << j.dump() << "\n";
}

void load_checkpoint(const std::string& path, Encoder& encoder, LossPredictionHead& head) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    json j;
    in >> j;

    EncoderConfig cfg;
    cfg.point_dim = j.at("config").at("point_dim").get<int>();
    cfg.mlp_widths = j.at("config").at("mlp_widths").get<std::vector<int>>();
    cfg.gem_p = j.at("config").at("gem_p").get<double>();
    cfg.descriptor_dim = j.at("config").at("descriptor_dim").get<int>();
    cfg.head_hidden = j.at("config").at("head_hidden").get<int>();
    cfg.validate();

    encoder.cfg_ = cfg;
    encoder.mlp_.clear();
    for (const auto& layer : j.at("mlp")) {
        LinearLayer l;
        l.weight = Parameter(matrix_from_json(layer.at("weight")));
        l.bias = Parameter(matrix_from_json(layer.at("bias")));
        encoder.mlp_.push_back(std::move(l));
    }
    encoder.projection_.weight = Parameter(matrix_from_json(j.at("projection").at("weight")));
    encoder.projection_.bias = Parameter(matrix_from_json(j.at("projection").at("bias")));

    const auto& h = j.at("head");
    head.linear1_.weight = Parameter(matrix_from_json(h.at("linear1_weight")));
    head.linear1_.bias = Parameter(matrix_from_json(h.at("linear1_bias")));
    head.bn_gamma_ = Parameter(matrix_from_json(h.at("bn_gamma")));
    head.bn_beta_ = Parameter(matrix_from_json(h.at("bn_beta")));
    head.linear2_.weight = Parameter(matrix_from_json(h.at("linear2_weight")));
    head.linear2_.bias = Parameter(matrix_from_json(h.at("linear2_bias")));
    head.bn_state_ = BatchNormState(head.bn_gamma_.value.cols);
    head.bn_state_.running_mean = matrix_from_json(h.at("bn_running_mean"));
    head.bn_state_.running_var = matrix_from_json(h.at("bn_running_var"));
    head.bn_state_.batches_seen = h.at("bn_batches_seen").get<long long>();
    head.pool_dim_ = head.linear1_.weight.value.rows;
    head.hidden_ = head.linear1_.weight.value.cols;
}

}  // namespace kdfp
