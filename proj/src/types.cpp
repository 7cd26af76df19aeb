#include "tokred/types.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace tokred {

void TokenSet::validate() const {
    if (spatial.rows() < 1 || spatial.cols() < 1)
        throw Error::data("token set needs at least one token and one feature dimension");
    if (cls.size() != spatial.cols())
        throw Error::data("CLS dimension does not match spatial token dimension");
    if (grid.is_set() && grid.count() != count())
        throw Error::data("grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                          " does not cover " + std::to_string(count()) + " tokens");
    if (!spatial.allFinite() || !cls.allFinite())
        throw Error::data("token features must be finite");
}

KeepSchedule make_schedule(int tokens, double keep_rate, std::vector<int> stage_blocks,
                           int total_blocks) {
    if (tokens < 1) throw Error::data("token count must be positive");
    if (!(keep_rate > 0.0) || keep_rate > 1.0)
        throw Error::data("keep rate must lie in (0, 1]");
    if (stage_blocks.empty()) throw Error::data("stage block list must not be empty");
    for (std::size_t i = 0; i < stage_blocks.size(); ++i) {
        if (stage_blocks[i] < 1 || stage_blocks[i] >= total_blocks)
            throw Error::data("stage blocks must lie in [1, total_blocks)");
        if (i > 0 && stage_blocks[i] <= stage_blocks[i - 1])
            throw Error::data("stage blocks must be strictly increasing");
    }

    KeepSchedule schedule;
    schedule.keep_rate = keep_rate;
    schedule.stage_blocks = std::move(stage_blocks);
    schedule.total_blocks = total_blocks;
    schedule.initial_tokens = tokens;
    schedule.budgets.reserve(schedule.stage_blocks.size());
    for (int s = 1; s <= schedule.stages(); ++s) {
        const int budget = static_cast<int>(std::floor(tokens * std::pow(keep_rate, s)));
        schedule.budgets.push_back(budget);
    }
    if (schedule.budgets.back() < 1)
        throw Error::data("final stage budget is below one token (P=" + std::to_string(tokens) +
                          ", r=" + std::to_string(keep_rate) + ")");
    return schedule;
}

std::string stage_kind_name(StageKind kind) {
    switch (kind) {
        case StageKind::pruned: return "pruned";
        case StageKind::hard_merged: return "hard-merged";
        case StageKind::soft_merged: return "soft-merged";
    }
    throw Error::data("unknown stage kind");
}

StageKind stage_kind_from_name(const std::string& name) {
    if (name == "pruned") return StageKind::pruned;
    if (name == "hard-merged") return StageKind::hard_merged;
    if (name == "soft-merged") return StageKind::soft_merged;
    throw Error::data("unknown stage kind '" + name + "'");
}

std::vector<int> record_depth(const ReductionRecord& record) {
    const int stages = static_cast<int>(record.stage_blocks.size());
    if (static_cast<int>(record.stages.size()) != stages || stages == 0)
        throw Error::data("reduction record is incomplete: expected " + std::to_string(stages) +
                          " stages, have " + std::to_string(record.stages.size()));
    const int tokens = record.tokens();
    if (tokens < 1) throw Error::data("reduction record has no grid");

    std::vector<int> depth(static_cast<std::size_t>(tokens), record.total_blocks);
    std::vector<char> alive(static_cast<std::size_t>(tokens), 1);
    for (int s = 0; s < stages; ++s) {
        std::unordered_set<int> kept(record.stages[s].kept.begin(), record.stages[s].kept.end());
        for (int i = 0; i < tokens; ++i) {
            if (alive[i] && !kept.count(i)) {
                alive[i] = 0;
                depth[i] = record.stage_blocks[s];
            }
        }
    }
    return depth;
}

std::vector<int> record_depth(const ReductionRecord& record, const KeepSchedule& schedule) {
    if (schedule.stage_blocks != record.stage_blocks ||
        schedule.total_blocks != record.total_blocks)
        throw Error::data("schedule does not match the record's stage layout");
    return record_depth(record);
}

} // namespace tokred
