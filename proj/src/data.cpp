#include "kdfp/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace kdfp {

using nlohmann::json;

bool same_serialized(const Submap& a, const Submap& b) {
    return a.id == b.id && a.domain_id == b.domain_id && a.split == b.split && a.pass == b.pass &&
           a.x == b.x && a.y == b.y && a.points == b.points;
}

void DomainSpec::validate() const {
    if (num_places < 2) throw std::invalid_argument("DomainSpec: num_places must be >= 2");
    if (area_side <= 0.0) throw std::invalid_argument("DomainSpec: area_side must be positive");
    if (landmarks_per_place < 1) throw std::invalid_argument("DomainSpec: landmarks_per_place < 1");
    if (points_per_submap < 16) throw std::invalid_argument("DomainSpec: points_per_submap < 16");
    if (noise_sigma < 0.0) throw std::invalid_argument("DomainSpec: noise_sigma < 0");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("DomainSpec: dropout_rate outside [0, 1)");
    }
    if (clutter_rate < 0.0 || clutter_rate >= 1.0) {
        throw std::invalid_argument("DomainSpec: clutter_rate outside [0, 1)");
    }
}

void ProtocolSpec::validate() const {
    if (domains.empty()) throw std::invalid_argument("ProtocolSpec: no domains");
    for (const DomainSpec& d : domains) d.validate();
    if (pos_threshold_train >= neg_threshold_train) {
        throw std::invalid_argument("ProtocolSpec: pos_threshold must be below neg_threshold");
    }
    if (pos_threshold_test <= 0.0) throw std::invalid_argument("ProtocolSpec: bad test threshold");
}

namespace {

// Landmark scatter is deliberately anisotropic (corridor-like scenes): a
// domain's rotation then moves the occupied volume, not just relabels it.
constexpr double kLandmarkRadiusX = 12.0;
constexpr double kLandmarkRadiusY = 4.0;
constexpr double kLandmarkHeight = 4.0;
constexpr double kClutterRadius = 16.0;  // clutter box half-side
constexpr double kClutterHeight = 6.0;

struct Place {
    double x, y;
    double difficulty;  // in [0.4, 1.6]; scales this place's noise and clutter
    std::vector<std::array<double, 3>> landmarks;  // local offsets
};

}  // namespace

std::vector<Submap> generate_domain(const DomainSpec& spec) {
    return generate_domain_debug(spec).submaps;
}

GeneratedDomain generate_domain_debug(const DomainSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.num_places))));
    const double cell = spec.area_side / grid;

    std::vector<Place> places(spec.num_places);
    for (int k = 0; k < spec.num_places; ++k) {
        const int row = k / grid, col = k % grid;
        places[k].x = (col + 0.5) * cell + (unit(rng) - 0.5) * 0.5 * cell;
        places[k].y = (row + 0.5) * cell + (unit(rng) - 0.5) * 0.5 * cell;
        // Per-place difficulty spreads the domain's noise/clutter budget, so
        // sample hardness is a property of the scan itself. Squaring skews
        // the mass toward easy places while keeping the scale graded.
        const double u = unit(rng);
        places[k].difficulty = std::pow(u, 2.5);
        places[k].landmarks.resize(spec.landmarks_per_place);
        for (auto& lm : places[k].landmarks) {
            lm[0] = (unit(rng) * 2.0 - 1.0) * kLandmarkRadiusX;
            lm[1] = (unit(rng) * 2.0 - 1.0) * kLandmarkRadiusY;
            lm[2] = unit(rng) * kLandmarkHeight;
        }
    }

    // Split by place, 80/20.
    std::vector<int> order(spec.num_places);
    for (int i = 0; i < spec.num_places; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const int n_train = spec.num_places * 4 / 5;
    std::vector<Split> split_of(spec.num_places, Split::test);
    for (int i = 0; i < n_train; ++i) split_of[order[i]] = Split::train;

    const double cr = std::cos(spec.rotation), sr = std::sin(spec.rotation);
    std::normal_distribution<double> noise(0.0, 1.0);  // scaled per place

    GeneratedDomain gen;
    gen.landmarks_by_place.resize(spec.num_places);
    for (int k = 0; k < spec.num_places; ++k) {
        for (const auto& lm : places[k].landmarks) {
            gen.landmarks_by_place[k].push_back(
                {cr * lm[0] - sr * lm[1], sr * lm[0] + cr * lm[1], lm[2]});
        }
    }

    std::vector<Submap> out;
    out.reserve(static_cast<size_t>(spec.num_places) * 2);
    for (int k = 0; k < spec.num_places; ++k) {
        const double d_k = places[k].difficulty;
        const double sigma_k = spec.noise_sigma * (0.5 + 1.5 * d_k);
        const double clutter_k = std::min(0.35, spec.clutter_rate * (1.0 + 20.0 * d_k));
        const double dropout_k = std::min(0.7, spec.dropout_rate + 0.3 * d_k);
        for (int pass = 0; pass < 2; ++pass) {
            // Per-pass landmark visibility.
            std::vector<int> visible;
            for (int l = 0; l < spec.landmarks_per_place; ++l) {
                if (unit(rng) >= dropout_k) visible.push_back(l);
            }
            if (visible.empty()) visible.push_back(0);

            Matrix pts(spec.points_per_submap, 3);
            for (int i = 0; i < spec.points_per_submap; ++i) {
                double px, py, pz;
                if (unit(rng) < clutter_k) {
                    px = (unit(rng) * 2.0 - 1.0) * kClutterRadius;
                    py = (unit(rng) * 2.0 - 1.0) * kClutterRadius;
                    pz = unit(rng) * kClutterHeight;
                } else {
                    const int l = visible[static_cast<size_t>(unit(rng) * visible.size()) %
                                          visible.size()];
                    const auto& lm = places[k].landmarks[l];
                    px = lm[0] + sigma_k * noise(rng);
                    py = lm[1] + sigma_k * noise(rng);
                    pz = lm[2] + sigma_k * noise(rng);
                }
                pts.at(i, 0) = cr * px - sr * py;
                pts.at(i, 1) = sr * px + cr * py;
                pts.at(i, 2) = pz;
            }

            Submap s;
            s.id = spec.domain_id * 100000 + k * 2 + pass;
            s.domain_id = spec.domain_id;
            s.split = split_of[k];
            s.pass = pass == 0 ? Pass::A : Pass::B;
            s.x = places[k].x;
            s.y = places[k].y;
            s.points = std::move(pts);
            s.place_label = static_cast<long long>(spec.domain_id) * 1000000 + k;
            out.push_back(std::move(s));
        }
    }
    gen.submaps = std::move(out);
    return gen;
}

double place_distance(const Submap& a, const Submap& b) {
    if (a.domain_id != b.domain_id) return std::numeric_limits<double>::infinity();
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

PairSet build_training_pairs(const std::vector<Submap>& submaps, double pos_threshold,
                             double neg_threshold) {
    if (pos_threshold >= neg_threshold) {
        throw std::invalid_argument("build_training_pairs: pos_threshold must be below neg_threshold");
    }
    const int n = static_cast<int>(submaps.size());
    PairSet out;
    out.n = n;
    out.neg_eligible.assign(static_cast<size_t>(n) * n, 0);

    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double d = place_distance(submaps[i], submaps[j]);
            if (d > neg_threshold) {
                out.neg_eligible[static_cast<size_t>(i) * n + j] = 1;
                out.neg_eligible[static_cast<size_t>(j) * n + i] = 1;
            }
            if (d <= pos_threshold && submaps[i].pass != submaps[j].pass) {
                const bool i_is_a = submaps[i].pass == Pass::A;
                out.pairs.push_back({i_is_a ? i : j, i_is_a ? j : i});
            }
        }
    }

    // Flag places with no cross-pass positive; they cannot anchor a pair.
    std::map<long long, int> pair_count;
    for (const Submap& s : submaps) pair_count.emplace(s.place_label, 0);
    for (const TrainingPair& p : out.pairs) pair_count[submaps[p.anchor_index].place_label]++;
    for (const auto& [label, count] : pair_count) {
        if (count == 0) {
            std::cerr << "warning: place " << label << " has no cross-pass positive; excluded\n";
        }
    }
    return out;
}

namespace {

json submap_to_json(const Submap& s) {
    json pts = json::array();
    for (int i = 0; i < s.points.rows; ++i) {
        pts.push_back({s.points.at(i, 0), s.points.at(i, 1), s.points.at(i, 2)});
    }
    return json{{"id", s.id},
                {"domain", s.domain_id},
                {"split", s.split == Split::train ? "train" : "test"},
                {"pass", s.pass == Pass::A ? "A" : "B"},
                {"x", s.x},
                {"y", s.y},
                {"points", std::move(pts)}};
}

Submap submap_from_json(const json& j) {
    Submap s;
    s.id = j.at("id").get<int>();
    s.domain_id = j.at("domain").get<int>();
    const std::string split = j.at("split").get<std::string>();
    if (split == "train") {
        s.split = Split::train;
    } else if (split == "test") {
        s.split = Split::test;
    } else {
        throw std::runtime_error("bad split value '" + split + "'");
    }
    const std::string pass = j.at("pass").get<std::string>();
    if (pass == "A") {
        s.pass = Pass::A;
    } else if (pass == "B") {
        s.pass = Pass::B;
    } else {
        throw std::runtime_error("bad pass value '" + pass + "'");
    }
    s.x = j.at("x").get<double>();
    s.y = j.at("y").get<double>();
    const auto& pts = j.at("points");
    if (pts.empty()) throw std::runtime_error("empty point list");
    s.points = Matrix(static_cast<int>(pts.size()), 3);
    for (size_t i = 0; i < pts.size(); ++i) {
        if (pts[i].size() != 3) throw std::runtime_error("point is not 3d");
        for (int c = 0; c < 3; ++c) s.points.at(static_cast<int>(i), c) = pts[i][c].get<double>();
    }
    return s;
}

}  // namespace

void save_dataset(const std::string& path, const std::vector<Submap>& submaps) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    for (const Submap& s : submaps) out << submap_to_json(s).dump() << "\n";
}

std::vector<Submap> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
    std::vector<Submap> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(submap_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error("load_dataset: " + path + " line " + std::to_string(lineno) +
                                     ": " + e.what());
        }
    }

    // Rebuild place labels by exact ground-truth coordinates, in first
    // appearance order per domain (matches the generator's numbering).
    std::map<std::pair<int, std::pair<double, double>>, long long> label_of;
    std::map<int, long long> next_in_domain;
    for (Submap& s : out) {
        const auto key = std::make_pair(s.domain_id, std::make_pair(s.x, s.y));
        auto it = label_of.find(key);
        if (it == label_of.end()) {
            const long long label =
                static_cast<long long>(s.domain_id) * 1000000 + next_in_domain[s.domain_id]++;
            it = label_of.emplace(key, label).first;
        }
        s.place_label = it->second;
    }
    return out;
}

std::vector<Submap> filter_split(const std::vector<Submap>& submaps, Split split) {
    std::vector<Submap> out;
    for (const Submap& s : submaps) {
        if (s.split == split) out.push_back(s);
    }
    return out;
}

std::vector<const Submap*> filter_pass(const std::vector<Submap>& submaps, Pass pass) {
    std::vector<const Submap*> out;
    for (const Submap& s : submaps) {
        if (s.pass == pass) out.push_back(&s);
    }
    return out;
}

}  // namespace kdfp
