#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kdfp/matrix.hpp"

namespace kdfp {

enum class Split { train, test };
enum class Pass { A, B };

// One synthetic "scan": a local point cloud with ground-truth place
// coordinates. Pass A submaps form the database/revisit set, pass B the
// queries. place_label groups cross-pass submaps of the same place and is
// reconstructed, not serialized.
struct Submap {
    int id = 0;
    int domain_id = 0;
    Split split = Split::train;
    Pass pass = Pass::A;
    double x = 0.0;
    double y = 0.0;
    Matrix points;  // n x 3 local coordinates
    long long place_label = 0;
};

bool same_serialized(const Submap& a, const Submap& b);

struct DomainSpec {
    int domain_id = 0;
    int num_places = 200;
    double area_side = 1000.0;
    int landmarks_per_place = 8;
    int points_per_submap = 128;
    double noise_sigma = 0.4;
    double rotation = 0.0;        // radians, about z
    double dropout_rate = 0.0;    // [0, 1)
    double clutter_rate = 0.0;    // [0, 1)
    uint64_t seed = 0;

    void validate() const;
};

struct ProtocolSpec {
    std::vector<DomainSpec> domains;
    double pos_threshold_train = 10.0;
    double neg_threshold_train = 50.0;
    double pos_threshold_test = 25.0;

    void validate() const;
};

// Deterministic synthetic domain: places on a jittered grid, fixed landmark
// sets per place, two passes with independent noise/dropout/clutter draws,
// 80/20 train/test split by place.
std::vector<Submap> generate_domain(const DomainSpec& spec);

// Same generation, additionally returning each place's landmark coordinates
// in the submaps' (rotated) frame. Used to validate the sampling law.
struct GeneratedDomain {
    std::vector<Submap> submaps;
    std::vector<std::vector<std::array<double, 3>>> landmarks_by_place;
};
GeneratedDomain generate_domain_debug(const DomainSpec& spec);

// Ground-truth place distance. Submaps of different domains are distinct
// environments and never match.
double place_distance(const Submap& a, const Submap& b);

struct TrainingPair {
    int anchor_index;    // index into the submap vector handed in
    int positive_index;
};

// Pairs plus the negative-eligibility map over the same index space:
// eligible(i, j) is true when the two submaps are farther apart than the
// negative threshold (cross-domain pairs always are). Same-place cross-pass
// submaps within the positive threshold become (anchor, positive) pairs;
// anything between the thresholds is neither.
struct PairSet {
    std::vector<TrainingPair> pairs;
    std::vector<uint8_t> neg_eligible;  // n*n row-major
    int n = 0;

    bool eligible(int i, int j) const { return neg_eligible[static_cast<size_t>(i) * n + j] != 0; }
};

PairSet build_training_pairs(const std::vector<Submap>& submaps, double pos_threshold,
                             double neg_threshold);

// JSON Lines round trip, one record per submap:
//   {"id", "domain", "split", "pass", "x", "y", "points": [[x,y,z], ...]}
void save_dataset(const std::string& path, const std::vector<Submap>& submaps);
std::vector<Submap> load_dataset(const std::string& path);

std::vector<Submap> filter_split(const std::vector<Submap>& submaps, Split split);
std::vector<const Submap*> filter_pass(const std::vector<Submap>& submaps, Pass pass);

}  // namespace kdfp
