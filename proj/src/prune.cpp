#include "tokred/prune.hpp"

#include "tokred/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tokred::prune {

namespace {

// Largest-score selection shared by topk_prune and dynamicvit_select.
std::vector<int> select_top(const Vector& values, int budget) {
    const int count = static_cast<int>(values.size());
    if (budget < 1 || budget > count)
        throw Error::data("budget " + std::to_string(budget) + " out of range for " +
                          std::to_string(count) + " tokens");
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return values(a) > values(b); });
    order.resize(budget);
    std::sort(order.begin(), order.end());
    return order;
}

} // namespace

void AttentionSummary::validate() const {
    if (scores.size() < 1) throw Error::data("attention summary is empty");
    if (!scores.allFinite()) throw Error::data("attention scores must be finite");
    if ((scores.array() < 0.0).any()) throw Error::data("attention scores must be nonnegative");
}

void KeepProbabilities::validate() const {
    if (probs.size() < 1) throw Error::data("keep probabilities are empty");
    if (!probs.allFinite() || (probs.array() < 0.0).any() || (probs.array() > 1.0).any())
        throw Error::data("keep probabilities must lie in [0, 1]");
}

LpNorm lp_norm_from_name(const std::string& name) {
    if (name == "l1") return LpNorm::l1;
    if (name == "l2") return LpNorm::l2;
    if (name == "linf") return LpNorm::linf;
    throw Error::usage("unknown norm '" + name + "' (expected l1, l2, or linf)");
}

std::vector<int> lp_fixed_pattern(Grid grid, LpNorm norm, int target) {
    if (!grid.is_set()) throw Error::data("lp pattern needs a grid");
    const int count = grid.count();
    if (target < 1 || target > count)
        throw Error::data("target " + std::to_string(target) + " out of range for " +
                          std::to_string(count) + " grid positions");

    const double center_row = (grid.h - 1) / 2.0;
    const double center_col = (grid.w - 1) / 2.0;
    std::vector<double> dist(count);
    for (int i = 0; i < count; ++i) {
        const double dr = std::abs(i / grid.w - center_row);
        const double dc = std::abs(i % grid.w - center_col);
        switch (norm) {
            case LpNorm::l1: dist[i] = dr + dc; break;
            case LpNorm::l2: dist[i] = std::hypot(dr, dc); break;
            case LpNorm::linf: dist[i] = std::max(dr, dc); break;
        }
    }

    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dist[a] < dist[b]; });

    // Prefix sizes at complete distance shells, plus the empty prefix so a
    // tie can start from it.
    std::vector<int> shells{0};
    for (int i = 0; i < count; ++i)
        if (i + 1 == count || dist[order[i + 1]] > dist[order[i]]) shells.push_back(i + 1);

    int best = shells.back();
    for (int size : shells) {
        if (size == 0) continue;
        if (std::abs(size - target) < std::abs(best - target)) best = size;
    }
    int kept_count = best;
    int topped_up = 0;
    // Equidistant under/over shoot: start from the smaller set and include
    // shell tokens by lowest original index until the target is hit.
    for (std::size_t s = 0; s + 1 < shells.size(); ++s) {
        const int under = shells[s];
        const int over = shells[s + 1];
        if (under < target && target < over && target - under == over - target) {
            kept_count = under;
            topped_up = target - under;
            break;
        }
    }

    std::vector<int> kept(order.begin(), order.begin() + kept_count);
    if (topped_up > 0) {
        const auto next = std::find_if(shells.begin(), shells.end(),
                                       [&](int s) { return s > kept_count; });
        std::vector<int> shell(order.begin() + kept_count, order.begin() + *next);
        std::sort(shell.begin(), shell.end());
        kept.insert(kept.end(), shell.begin(), shell.begin() + topped_up);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

std::vector<int> topk_prune(const AttentionSummary& att, int budget) {
    att.validate();
    return select_top(att.scores, budget);
}

EvitResult evit_reduce(const TokenSet& tokens, const AttentionSummary& att, int budget) {
    tokens.validate();
    att.validate();
    const int count = tokens.count();
    if (att.count() != count) throw Error::data("attention length does not match token count");
    if (budget < 1 || budget > count)
        throw Error::data("budget " + std::to_string(budget) + " out of range for " +
                          std::to_string(count) + " tokens");

    EvitResult result;
    result.kept = select_top(att.scores, budget);
    if (budget == count) {
        result.tokens = tokens;
        result.tokens.grid = Grid{};
        return result;
    }

    std::vector<char> is_kept(count, 0);
    for (int i : result.kept) is_kept[i] = 1;
    std::vector<int> pruned;
    for (int i = 0; i < count; ++i)
        if (!is_kept[i]) pruned.push_back(i);

    double mass = 0.0;
    for (int i : pruned) mass += att.scores(i);
    Vector fused = Vector::Zero(tokens.dim());
    if (mass > 0.0) {
        for (int i : pruned) fused += (att.scores(i) / mass) * tokens.spatial.row(i).transpose();
    } else {
        for (int i : pruned) fused += tokens.spatial.row(i).transpose();
        fused /= double(pruned.size());
    }

    result.has_fused = true;
    result.fused = fused;
    result.tokens.spatial.resize(budget + 1, tokens.dim());
    for (int k = 0; k < budget; ++k)
        result.tokens.spatial.row(k) = tokens.spatial.row(result.kept[k]);
    result.tokens.spatial.row(budget) = fused.transpose();
    result.tokens.cls = tokens.cls;
    return result;
}

std::vector<int> dynamicvit_select(const KeepProbabilities& probs, int budget) {
    probs.validate();
    return select_top(probs.probs, budget);
}

Vector gumbel_softmax_mask(const Matrix& logits, double temperature, bool hard,
                           std::uint64_t seed) {
    if (logits.cols() != 2) throw Error::data("gumbel mask expects per-token (keep, drop) logits");
    if (!logits.allFinite()) throw Error::data("logits must be finite");
    if (!(temperature > 0.0)) throw Error::data("temperature must be positive");

    Rng rng(seed);
    const int count = static_cast<int>(logits.rows());
    Vector mask(count);
    for (int i = 0; i < count; ++i) {
        double perturbed[2];
        for (int c = 0; c < 2; ++c) {
            const double gumbel = -std::log(-std::log(rng.uniform_pos()));
            perturbed[c] = (logits(i, c) + gumbel) / temperature;
        }
        if (hard) {
            mask(i) = perturbed[0] >= perturbed[1] ? 1.0 : 0.0;
        } else {
            const double hi = std::max(perturbed[0], perturbed[1]);
            const double keep = std::exp(perturbed[0] - hi);
            const double drop = std::exp(perturbed[1] - hi);
            mask(i) = keep / (keep + drop);
        }
    }
    return mask;
}

std::vector<int> ats_sample(const AttentionSummary& att, int max_keep, AtsMode mode,
                            std::uint64_t seed) {
    att.validate();
    const int count = att.count();
    if (max_keep < 1 || max_keep > count)
        throw Error::data("max_keep " + std::to_string(max_keep) + " out of range for " +
                          std::to_string(count) + " tokens");
    const double total = att.scores.sum();
    if (!(total > 0.0)) throw Error::data("attention scores are all zero");

    std::vector<double> cdf(count);
    double run = 0.0;
    for (int i = 0; i < count; ++i) {
        run += att.scores(i) / total;
        cdf[i] = run;
    }
    cdf[count - 1] = 1.0;

    Rng rng(seed);
    std::vector<char> taken(count, 0);
    for (int k = 1; k <= max_keep; ++k) {
        const double q = mode == AtsMode::fixed_quantile ? (k - 0.5) / max_keep : rng.uniform();
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), q);
        taken[std::min<int>(int(it - cdf.begin()), count - 1)] = 1;
    }
    std::vector<int> kept;
    for (int i = 0; i < count; ++i)
        if (taken[i]) kept.push_back(i);
    return kept;
}

} // namespace tokred::prune
