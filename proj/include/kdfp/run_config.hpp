#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kdfp/data.hpp"
#include "kdfp/eval.hpp"
#include "kdfp/losses.hpp"
#include "kdfp/model.hpp"
#include "kdfp/trainer.hpp"

namespace kdfp {

// One experiment definition: protocol, model, strategy, optimization and
// loss settings, plus run plumbing. Serialized as a single JSON document
// whose key paths follow the config types.
struct RunConfig {
    ProtocolSpec protocol;
    EncoderConfig encoder;
    StrategyConfig strategy;
    OptimConfig optim;
    LossConfig losses;
    int memory_capacity = 64;
    std::string data_dir = "data";
    std::string out_dir = "runs";
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
    ForgettingConvention convention = ForgettingConvention::eq8_literal;

    void validate() const;
};

// Desk-scale default: a learnable 4-domain synthetic protocol with
// escalating domain shift (rotation, noise, dropout, clutter).
RunConfig default_run_config();

nlohmann::json to_json(const RunConfig& cfg);
// Merge semantics: missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

// Dataset file name for one domain, relative to data_dir.
std::string domain_file_name(int domain_index);

}  // namespace kdfp
