#include "tokred/prune.hpp"
#include "tokred/rng.hpp"

#include "oracle_helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace tokred;
using namespace tokred::prune;

namespace {

AttentionSummary att_of(std::vector<double> scores) {
    AttentionSummary att;
    att.scores = Eigen::Map<Vector>(scores.data(), scores.size());
    return att;
}

// independent route: sort positions by distance and cut at the boundary
std::vector<int> lp_sort_cut_oracle(Grid grid, LpNorm norm, int target) {
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < grid.count(); ++i) {
        const double dr = std::abs(i / grid.w - (grid.h - 1) / 2.0);
        const double dc = std::abs(i % grid.w - (grid.w - 1) / 2.0);
        double d = 0;
        if (norm == LpNorm::l1) d = dr + dc;
        if (norm == LpNorm::l2) d = std::sqrt(dr * dr + dc * dc);
        if (norm == LpNorm::linf) d = std::max(dr, dc);
        order.push_back({d, i});
    }
    std::sort(order.begin(), order.end());
    std::vector<int> kept;
    for (int k = 0; k < target; ++k) kept.push_back(order[k].second);
    std::sort(kept.begin(), kept.end());
    return kept;
}

} // namespace

TEST_CASE("lp pattern keeps the central block on a 4x4 grid") {
    // ring structure makes the 2x2 center an exact shell
    CHECK(lp_fixed_pattern({4, 4}, LpNorm::linf, 4) == std::vector<int>{5, 6, 9, 10});
    CHECK(lp_fixed_pattern({4, 4}, LpNorm::linf, 4) == lp_sort_cut_oracle({4, 4}, LpNorm::linf, 4));
}

TEST_CASE("lp pattern trivial cases") {
    CHECK(lp_fixed_pattern({3, 3}, LpNorm::l1, 1) == std::vector<int>{4});
    const auto all = lp_fixed_pattern({14, 14}, LpNorm::l2, 196);
    CHECK(static_cast<int>(all.size()) == 196);
    CHECK_THROWS_AS(lp_fixed_pattern({4, 4}, LpNorm::l2, 0), Error);
    CHECK_THROWS_AS(lp_fixed_pattern({4, 4}, LpNorm::l2, 17), Error);
}

TEST_CASE("lp pattern minimizes the kept-count gap over whole shells") {
    // 3x3 l-inf shells: center (1), ring (8). target 5 ties 1 vs 9, so the
    // smaller set is topped up by lowest index to exactly 5
    const auto kept = lp_fixed_pattern({3, 3}, LpNorm::linf, 5);
    CHECK(kept.size() == 5);
    CHECK(std::find(kept.begin(), kept.end(), 4) != kept.end());
    // top-up picks the lowest ring indices
    CHECK(kept == std::vector<int>{0, 1, 2, 3, 4});

    // target 4: |1-4| = 3 vs |9-4| = 5, the center alone wins
    CHECK(lp_fixed_pattern({3, 3}, LpNorm::linf, 4) == std::vector<int>{4});
    // target 6: |1-6| = 5 vs |9-6| = 3, the full grid wins
    CHECK(lp_fixed_pattern({3, 3}, LpNorm::linf, 6).size() == 9);
}

TEST_CASE("lp pattern is symmetric under grid rotation away from the cut shell") {
    const Grid grid{6, 6};
    for (const LpNorm norm : {LpNorm::l1, LpNorm::l2, LpNorm::linf}) {
        for (int target = 1; target <= 36; ++target) {
            const auto kept = lp_fixed_pattern(grid, norm, target);
            std::set<int> set(kept.begin(), kept.end());
            // 90-degree rotation of the square grid
            std::set<int> rotated;
            for (int i : kept) {
                const int r = i / 6, c = i % 6;
                rotated.insert(c * 6 + (5 - r));
            }
            if (rotated == set) continue;
            // any asymmetry must be confined to the outermost kept shell
            std::vector<int> diff;
            std::set_symmetric_difference(set.begin(), set.end(), rotated.begin(), rotated.end(),
                                          std::back_inserter(diff));
            double max_kept = 0;
            auto dist = [&](int i) {
                const double dr = std::abs(i / 6 - 2.5), dc = std::abs(i % 6 - 2.5);
                if (norm == LpNorm::l1) return dr + dc;
                if (norm == LpNorm::l2) return std::sqrt(dr * dr + dc * dc);
                return std::max(dr, dc);
            };
            for (int i : kept) max_kept = std::max(max_kept, dist(i));
            for (int i : diff) CHECK(dist(i) == doctest::Approx(max_kept));
        }
    }
}

TEST_CASE("topk selects the largest scores with lowest-index ties") {
    CHECK(topk_prune(att_of({0.4, 0.3, 0.2, 0.1}), 2) == std::vector<int>{0, 1});
    CHECK(topk_prune(att_of({0.25, 0.25, 0.25, 0.25}), 2) == std::vector<int>{0, 1});
    CHECK(topk_prune(att_of({0.1, 0.4, 0.3, 0.2}), 3) == std::vector<int>{1, 2, 3});
    CHECK_THROWS_AS(topk_prune(att_of({0.5, 0.5}), 0), Error);
    CHECK_THROWS_AS(topk_prune(att_of({0.5, 0.5}), 3), Error);
    CHECK_THROWS_AS(topk_prune(att_of({0.5, -0.1}), 1), Error);
}

TEST_CASE("topk nesting and monotone-transform invariance") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const int p = 5 + static_cast<int>(rng.below(12));
        Vector scores(p);
        for (int i = 0; i < p; ++i) scores(i) = rng.uniform();
        AttentionSummary att{scores};
        const int k1 = 1 + static_cast<int>(rng.below(p));
        const int k2 = 1 + static_cast<int>(rng.below(k1));
        const auto big = topk_prune(att, k1);
        const auto small = topk_prune(att, k2);
        CHECK(std::includes(big.begin(), big.end(), small.begin(), small.end()));

        AttentionSummary transformed{scores.array().exp().matrix()};
        CHECK(topk_prune(transformed, k1) == big);
    }
}

TEST_CASE("topk matches exhaustive max-sum subsets for small P") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const int p = 3 + static_cast<int>(rng.below(6));
        std::vector<double> scores(p);
        Vector v(p);
        for (int i = 0; i < p; ++i) {
            scores[i] = rng.uniform();
            v(i) = scores[i];
        }
        const int k = 1 + static_cast<int>(rng.below(p));
        CHECK(topk_prune(AttentionSummary{v}, k) == oracle::brute_force_topk(scores, k));
    }
}

TEST_CASE("evit fuses pruned tokens by attention weight") {
    TokenSet tokens;
    tokens.spatial.resize(4, 2);
    tokens.spatial << 5, 5, 6, 6, 1, 0, 0, 1;
    tokens.cls = Vector::Zero(2);
    const auto att = att_of({0.3, 0.3, 0.2, 0.2});

    const EvitResult result = evit_reduce(tokens, att, 2);
    CHECK(result.kept == std::vector<int>{0, 1});
    REQUIRE(result.has_fused);
    CHECK(result.fused(0) == doctest::Approx(0.5));
    CHECK(result.fused(1) == doctest::Approx(0.5));
    CHECK(result.tokens.count() == 3);  // K kept + 1 fused
}

TEST_CASE("evit zero-score fallback and single-prune identity") {
    TokenSet tokens;
    tokens.spatial.resize(3, 2);
    tokens.spatial << 9, 9, 2, 0, 0, 4;
    tokens.cls = Vector::Zero(2);

    const EvitResult mean = evit_reduce(tokens, att_of({0.5, 0.0, 0.0}), 1);
    CHECK(mean.fused(0) == doctest::Approx(1.0));
    CHECK(mean.fused(1) == doctest::Approx(2.0));

    const EvitResult single = evit_reduce(tokens, att_of({0.4, 0.4, 0.1}), 2);
    CHECK(single.fused(0) == doctest::Approx(0.0));
    CHECK(single.fused(1) == doctest::Approx(4.0));

    const EvitResult identity = evit_reduce(tokens, att_of({0.4, 0.4, 0.1}), 3);
    CHECK_FALSE(identity.has_fused);
    CHECK(identity.tokens.count() == 3);
}

TEST_CASE("evit fused token stays inside the pruned tokens' bounds") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        TokenSet tokens;
        const int p = 4 + static_cast<int>(rng.below(6));
        tokens.spatial.resize(p, 3);
        Vector scores(p);
        for (int i = 0; i < p; ++i) {
            scores(i) = rng.uniform();
            for (int d = 0; d < 3; ++d) tokens.spatial(i, d) = rng.normal();
        }
        tokens.cls = Vector::Zero(3);
        const int k = 1 + static_cast<int>(rng.below(p - 1));
        const EvitResult result = evit_reduce(tokens, AttentionSummary{scores}, k);
        REQUIRE(result.has_fused);
        CHECK(result.tokens.count() == k + 1);
        std::set<int> kept(result.kept.begin(), result.kept.end());
        for (int d = 0; d < 3; ++d) {
            double lo = 1e300, hi = -1e300;
            for (int i = 0; i < p; ++i) {
                if (kept.count(i)) continue;
                lo = std::min(lo, tokens.spatial(i, d));
                hi = std::max(hi, tokens.spatial(i, d));
            }
            CHECK(result.fused(d) >= lo - 1e-12);
            CHECK(result.fused(d) <= hi + 1e-12);
        }
    }
}

TEST_CASE("dynamicvit keeps the most probable tokens") {
    KeepProbabilities probs;
    probs.probs.resize(4);
    probs.probs << 0.9, 0.1, 0.8, 0.2;
    CHECK(dynamicvit_select(probs, 2) == std::vector<int>{0, 2});

    probs.probs = Vector::Constant(5, 0.5);
    CHECK(dynamicvit_select(probs, 3) == std::vector<int>{0, 1, 2});

    probs.probs.resize(2);
    probs.probs << 0.0, 1.0;
    CHECK(dynamicvit_select(probs, 1) == std::vector<int>{1});
    CHECK_THROWS_AS(dynamicvit_select(probs, 3), Error);
}

TEST_CASE("gumbel mask saturates, repeats, and stays fair") {
    Matrix logits(1, 2);
    logits << 1000.0, 0.0;
    const Vector saturated = gumbel_softmax_mask(logits, 1.0, false, 3);
    CHECK(saturated(0) == doctest::Approx(1.0).epsilon(1e-9));

    Matrix symmetric(1, 2);
    symmetric << 0.0, 0.0;
    int keeps = 0;
    for (int seed = 0; seed < 10000; ++seed)
        keeps += gumbel_softmax_mask(symmetric, 1.0, true, seed)(0) > 0.5 ? 1 : 0;
    CHECK(keeps / 10000.0 == doctest::Approx(0.5).epsilon(0.04));  // 0.5 +/- 0.02

    const Vector a = gumbel_softmax_mask(symmetric, 0.7, false, 99);
    const Vector b = gumbel_softmax_mask(symmetric, 0.7, false, 99);
    CHECK(a == b);

    CHECK_THROWS_AS(gumbel_softmax_mask(symmetric, 0.0, false, 1), Error);
    CHECK_THROWS_AS(gumbel_softmax_mask(symmetric, -1.0, false, 1), Error);
}

TEST_CASE("ats maps fixed quantiles through the score CDF") {
    // CDF [0.5, 0.75, 1.0]; quantiles 0.25, 0.75 land on tokens 0 and 1
    CHECK(ats_sample(att_of({0.5, 0.25, 0.25}), 2, AtsMode::fixed_quantile, 0) ==
          std::vector<int>{0, 1});
    // all mass on one token collapses the sample to a single index
    CHECK(ats_sample(att_of({0.0, 1.0, 0.0, 0.0, 0.0}), 5, AtsMode::fixed_quantile, 0) ==
          std::vector<int>{1});
    // uniform scores, quantiles 0.125..0.875 hit each quarter
    CHECK(ats_sample(att_of({0.25, 0.25, 0.25, 0.25}), 4, AtsMode::fixed_quantile, 0) ==
          std::vector<int>{0, 1, 2, 3});
    CHECK_THROWS_AS(ats_sample(att_of({0.0, 0.0}), 1, AtsMode::fixed_quantile, 0), Error);
    CHECK_THROWS_AS(ats_sample(att_of({0.5, 0.5}), 3, AtsMode::fixed_quantile, 0), Error);
}

TEST_CASE("ats never exceeds its budget and repeats under a fixed seed") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const int p = 2 + static_cast<int>(rng.below(30));
        Vector scores(p);
        for (int i = 0; i < p; ++i) scores(i) = rng.uniform();
        const int budget = 1 + static_cast<int>(rng.below(p));
        const auto mode = trial % 2 == 0 ? AtsMode::fixed_quantile : AtsMode::seeded_uniform;
        const auto kept = ats_sample(AttentionSummary{scores}, budget, mode, trial);
        CHECK(static_cast<int>(kept.size()) <= budget);
        CHECK(std::is_sorted(kept.begin(), kept.end()));
        CHECK(ats_sample(AttentionSummary{scores}, budget, mode, trial) == kept);
    }
}
