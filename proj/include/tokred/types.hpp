#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokred {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Library errors carry a kind so the CLI can map them to exit codes
// (usage -> 2, data -> 3).
class Error : public std::runtime_error {
public:
    enum class Kind { usage, data };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

    static Error usage(const std::string& what) { return Error(Kind::usage, what); }
    static Error data(const std::string& what) { return Error(Kind::data, what); }

private:
    Kind kind_;
};

struct Grid {
    int h = 0;
    int w = 0;

    bool is_set() const { return h > 0 && w > 0; }
    int count() const { return h * w; }
    bool operator==(const Grid&) const = default;
};

// P spatial token feature vectors plus one CLS vector. When the grid is
// set it describes the raster layout of the P positions (row-major);
// reduced token sets leave it unset.
struct TokenSet {
    Matrix spatial;  // P x D
    Vector cls;      // D
    Grid grid;

    int count() const { return static_cast<int>(spatial.rows()); }
    int dim() const { return static_cast<int>(spatial.cols()); }
    void validate() const;
};

// Keep rate r with per-stage budgets K_s = floor(P * r^s), computed from
// the initial spatial token count. stage_blocks are 1-indexed transformer
// blocks; the reduction runs on the output of each listed block.
struct KeepSchedule {
    double keep_rate = 1.0;
    std::vector<int> stage_blocks;
    int total_blocks = 12;
    std::vector<int> budgets;
    int initial_tokens = 0;

    int stages() const { return static_cast<int>(stage_blocks.size()); }
};

KeepSchedule make_schedule(int tokens, double keep_rate,
                           std::vector<int> stage_blocks = {4, 7, 10},
                           int total_blocks = 12);

enum class StageKind { pruned, hard_merged, soft_merged };

std::string stage_kind_name(StageKind kind);
StageKind stage_kind_from_name(const std::string& name);

// One reduction stage expressed over the original P token positions.
//  - pruned:      kept = surviving original indices.
//  - hard_merged: kept = cluster-center original indices; assignment maps
//                 every original index to its cluster id.
//  - soft_merged: weights is the composed C x P assignment; kept lists the
//                 surviving representative original indices.
struct StageRecord {
    StageKind kind = StageKind::pruned;
    std::vector<int> kept;
    std::vector<int> assignment;
    Matrix weights;
    int clusters = 0;
};

struct ReductionRecord {
    int sample_id = 0;
    std::string method;
    double keep_rate = 1.0;
    Grid grid;
    int total_blocks = 12;
    std::vector<int> stage_blocks;
    std::vector<StageRecord> stages;

    int tokens() const { return grid.count(); }
};

// Per-token survival depth: tokens in every stage's kept set were processed
// by all blocks; a token first missing from stage s stopped at
// stage_blocks[s] blocks.
std::vector<int> record_depth(const ReductionRecord& record);
std::vector<int> record_depth(const ReductionRecord& record, const KeepSchedule& schedule);

// Dataset-averaged survival depth per grid position.
struct DepthMap {
    Grid grid;
    Vector mean_depth;  // grid.count() entries, row-major
    int total_blocks = 12;
};

} // namespace tokred
