#include "kdfp/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace kdfp {

using nlohmann::json;

void RunConfig::validate() const {
    protocol.validate();
    encoder.validate();
    strategy.validate();
    optim.validate();
    losses.validate();
    if (memory_capacity < 1) throw std::invalid_argument("RunConfig: memory_capacity < 1");
    if (seeds.empty()) throw std::invalid_argument("RunConfig: no seeds");
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.protocol.pos_threshold_train = 10.0;
    cfg.protocol.neg_threshold_train = 50.0;
    cfg.protocol.pos_threshold_test = 25.0;
    for (int i = 0; i < 4; ++i) {
        DomainSpec d;
        d.domain_id = i;
        d.num_places = 200;
        d.area_side = 1000.0;
        d.landmarks_per_place = 8;
        d.points_per_submap = 128;
        d.noise_sigma = 0.4 + 0.04 * i;
        d.rotation = 1.1 * i;
        d.dropout_rate = 0.03 * i;
        d.clutter_rate = 0.01 + 0.005 * i;
        d.seed = 1001 + 97 * static_cast<uint64_t>(i);
        cfg.protocol.domains.push_back(d);
    }
    // Desk-scale schedule; the type defaults carry the full-scale settings.
    cfg.optim.learning_rate = 3e-3;
    cfg.optim.epochs_per_step = 20;
    cfg.memory_capacity = 64;
    cfg.losses.lambda = 2.0;
    return cfg;
}

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void read_domain(const json& j, DomainSpec& d) {
    read_if(j, "domain_id", d.domain_id);
    read_if(j, "num_places", d.num_places);
    read_if(j, "area_side", d.area_side);
    read_if(j, "landmarks_per_place", d.landmarks_per_place);
    read_if(j, "points_per_submap", d.points_per_submap);
    read_if(j, "noise_sigma", d.noise_sigma);
    read_if(j, "rotation", d.rotation);
    read_if(j, "dropout_rate", d.dropout_rate);
    read_if(j, "clutter_rate", d.clutter_rate);
    read_if(j, "seed", d.seed);
}

json domain_to_json(const DomainSpec& d) {
    return json{{"domain_id", d.domain_id},
                {"num_places", d.num_places},
                {"area_side", d.area_side},
                {"landmarks_per_place", d.landmarks_per_place},
                {"points_per_submap", d.points_per_submap},
                {"noise_sigma", d.noise_sigma},
                {"rotation", d.rotation},
                {"dropout_rate", d.dropout_rate},
                {"clutter_rate", d.clutter_rate},
                {"seed", d.seed}};
}

}  // namespace

json to_json(const RunConfig& cfg) {
    json domains = json::array();
    for (const DomainSpec& d : cfg.protocol.domains) domains.push_back(domain_to_json(d));
    return json{
        {"protocol",
         {{"domains", std::move(domains)},
          {"pos_threshold_train", cfg.protocol.pos_threshold_train},
          {"neg_threshold_train", cfg.protocol.neg_threshold_train},
          {"pos_threshold_test", cfg.protocol.pos_threshold_test}}},
        {"encoder",
         {{"point_dim", cfg.encoder.point_dim},
          {"mlp_widths", cfg.encoder.mlp_widths},
          {"gem_p", cfg.encoder.gem_p},
          {"descriptor_dim", cfg.encoder.descriptor_dim},
          {"head_hidden", cfg.encoder.head_hidden}}},
        {"strategy",
         {{"method", to_string(cfg.strategy.method)},
          {"sampling", to_string(cfg.strategy.sampling)},
          {"rehearsal_enabled", cfg.strategy.rehearsal_enabled},
          {"replay_mode", to_string(cfg.strategy.replay_mode)},
          {"memory_policy", to_string(cfg.strategy.memory_policy)},
          {"kd_variant", to_string(cfg.strategy.kd_variant)},
          {"select_with_true_loss", cfg.strategy.select_with_true_loss},
          {"head_grad_to_encoder", cfg.strategy.head_grad_to_encoder},
          {"replay_ratio", cfg.strategy.replay_ratio}}},
        {"optim",
         {{"learning_rate", cfg.optim.learning_rate},
          {"lr_drop_factor", cfg.optim.lr_drop_factor},
          {"weight_decay", cfg.optim.weight_decay},
          {"adam_beta1", cfg.optim.adam_beta1},
          {"adam_beta2", cfg.optim.adam_beta2},
          {"adam_eps", cfg.optim.adam_eps},
          {"head_lr_ratio", cfg.optim.head_lr_ratio},
          {"epochs_per_step", cfg.optim.epochs_per_step},
          {"batch_start", cfg.optim.batch_start},
          {"batch_growth", cfg.optim.batch_growth},
          {"batch_cap", cfg.optim.batch_cap},
          {"expansion_threshold", cfg.optim.expansion_threshold}}},
        {"losses",
         {{"triplet_margin", cfg.losses.triplet_margin},
          {"rehearsal_margin", cfg.losses.rehearsal_margin},
          {"lambda", cfg.losses.lambda},
          {"lambda_schedule",
           cfg.losses.lambda_schedule == LambdaSchedule::constant ? "constant" : "linear_decay"},
          {"omega", cfg.losses.omega},
          {"kd_variant", to_string(cfg.losses.kd_variant)},
          {"ranking_delta", cfg.losses.ranking_delta}}},
        {"memory_capacity", cfg.memory_capacity},
        {"data_dir", cfg.data_dir},
        {"out_dir", cfg.out_dir},
        {"seeds", cfg.seeds},
        {"convention", to_string(cfg.convention)}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg = default_run_config();
    if (j.contains("protocol")) {
        const json& p = j.at("protocol");
        read_if(p, "pos_threshold_train", cfg.protocol.pos_threshold_train);
        read_if(p, "neg_threshold_train", cfg.protocol.neg_threshold_train);
        read_if(p, "pos_threshold_test", cfg.protocol.pos_threshold_test);
        if (p.contains("domains")) {
            cfg.protocol.domains.clear();
            for (const json& dj : p.at("domains")) {
                DomainSpec d;
                read_domain(dj, d);
                cfg.protocol.domains.push_back(d);
            }
        }
    }
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        read_if(e, "point_dim", cfg.encoder.point_dim);
        read_if(e, "mlp_widths", cfg.encoder.mlp_widths);
        read_if(e, "gem_p", cfg.encoder.gem_p);
        read_if(e, "descriptor_dim", cfg.encoder.descriptor_dim);
        read_if(e, "head_hidden", cfg.encoder.head_hidden);
    }
    if (j.contains("losses")) {
        const json& l = j.at("losses");
        read_if(l, "triplet_margin", cfg.losses.triplet_margin);
        read_if(l, "rehearsal_margin", cfg.losses.rehearsal_margin);
        read_if(l, "lambda", cfg.losses.lambda);
        if (l.contains("lambda_schedule")) {
            const std::string s = l.at("lambda_schedule").get<std::string>();
            if (s == "constant") {
                cfg.losses.lambda_schedule = LambdaSchedule::constant;
            } else if (s == "linear_decay") {
                cfg.losses.lambda_schedule = LambdaSchedule::linear_decay;
            } else {
                throw std::invalid_argument("unknown lambda_schedule: " + s);
            }
        }
        read_if(l, "omega", cfg.losses.omega);
        if (l.contains("kd_variant")) {
            cfg.losses.kd_variant = kd_variant_from_string(l.at("kd_variant").get<std::string>());
        }
        read_if(l, "ranking_delta", cfg.losses.ranking_delta);
    }
    // The strategy mirrors the loss module's distillation variant unless it
    // names its own.
    cfg.strategy.kd_variant = cfg.losses.kd_variant;
    if (j.contains("strategy")) {
        const json& s = j.at("strategy");
        if (s.contains("method")) {
            cfg.strategy.method = method_from_string(s.at("method").get<std::string>());
        }
        if (s.contains("sampling")) {
            cfg.strategy.sampling = sampling_from_string(s.at("sampling").get<std::string>());
        }
        read_if(s, "rehearsal_enabled", cfg.strategy.rehearsal_enabled);
        if (s.contains("replay_mode")) {
            cfg.strategy.replay_mode =
                replay_mode_from_string(s.at("replay_mode").get<std::string>());
        }
        if (s.contains("memory_policy")) {
            cfg.strategy.memory_policy =
                memory_policy_from_string(s.at("memory_policy").get<std::string>());
        }
        if (s.contains("kd_variant")) {
            cfg.strategy.kd_variant = kd_variant_from_string(s.at("kd_variant").get<std::string>());
        }
        read_if(s, "select_with_true_loss", cfg.strategy.select_with_true_loss);
        read_if(s, "head_grad_to_encoder", cfg.strategy.head_grad_to_encoder);
        read_if(s, "replay_ratio", cfg.strategy.replay_ratio);
    }
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        read_if(o, "learning_rate", cfg.optim.learning_rate);
        read_if(o, "lr_drop_factor", cfg.optim.lr_drop_factor);
        read_if(o, "weight_decay", cfg.optim.weight_decay);
        read_if(o, "adam_beta1", cfg.optim.adam_beta1);
        read_if(o, "adam_beta2", cfg.optim.adam_beta2);
        read_if(o, "adam_eps", cfg.optim.adam_eps);
        read_if(o, "head_lr_ratio", cfg.optim.head_lr_ratio);
        read_if(o, "epochs_per_step", cfg.optim.epochs_per_step);
        read_if(o, "batch_start", cfg.optim.batch_start);
        read_if(o, "batch_growth", cfg.optim.batch_growth);
        read_if(o, "batch_cap", cfg.optim.batch_cap);
        read_if(o, "expansion_threshold", cfg.optim.expansion_threshold);
    }
    read_if(j, "memory_capacity", cfg.memory_capacity);
    read_if(j, "data_dir", cfg.data_dir);
    read_if(j, "out_dir", cfg.out_dir);
    read_if(j, "seeds", cfg.seeds);
    if (j.contains("convention")) {
        cfg.convention = convention_from_string(j.at("convention").get<std::string>());
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_run_config: cannot open " + path);
    json j;
    in >> j;
    return run_config_from_json(j);
}

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string fnv1a64_hex(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

std::string domain_file_name(int domain_index) {
    return "domain_" + std::to_string(domain_index) + ".jsonl";
}

}  // namespace kdfp
