#pragma once

#include "tokred/types.hpp"

#include <cstdint>
#include <vector>

namespace tokred::prune {

// CLS-to-spatial attention averaged over heads. The harness constructs
// these so they sum to at most one (CLS self-attention excluded); the ops
// only require nonnegative finite entries.
struct AttentionSummary {
    Vector scores;

    int count() const { return static_cast<int>(scores.size()); }
    void validate() const;
};

struct KeepProbabilities {
    Vector probs;

    int count() const { return static_cast<int>(probs.size()); }
    void validate() const;
};

enum class LpNorm { l1, l2, linf };

LpNorm lp_norm_from_name(const std::string& name);

// Radial pattern around the (fractional) grid center: keeps the tokens
// inside the distance threshold whose kept count is closest to target.
// Shells are kept or dropped whole; when under- and over-shoot tie, the
// smaller set is topped up with shell tokens by lowest index to hit the
// target exactly.
std::vector<int> lp_fixed_pattern(Grid grid, LpNorm norm, int target);

// Indices of the budget largest scores, ties to the lowest index, sorted.
std::vector<int> topk_prune(const AttentionSummary& att, int budget);

struct EvitResult {
    TokenSet tokens;        // budget kept rows + one fused row (unless budget == P)
    std::vector<int> kept;
    bool has_fused = false;
    Vector fused;
};

// Top-K keep plus a fused token: the attention-weighted average of the
// pruned tokens (plain average when their scores sum to zero).
EvitResult evit_reduce(const TokenSet& tokens, const AttentionSummary& att, int budget);

std::vector<int> dynamicvit_select(const KeepProbabilities& probs, int budget);

// Per-token keep mask from 2-class (keep, drop) logits with seeded Gumbel
// noise; hard masks snap to the argmax class. Value semantics only —
// straight-through gradients are out of scope.
Vector gumbel_softmax_mask(const Matrix& logits, double temperature, bool hard,
                           std::uint64_t seed);

enum class AtsMode { fixed_quantile, seeded_uniform };

// Inverse transform sampling over the CDF of the normalized scores. Draws
// max_keep quantiles, maps each to the first index whose CDF covers it,
// and deduplicates, so the result can be smaller than max_keep.
std::vector<int> ats_sample(const AttentionSummary& att, int max_keep, AtsMode mode,
                            std::uint64_t seed);

} // namespace tokred::prune
