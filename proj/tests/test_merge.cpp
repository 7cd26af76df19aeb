#include "tokred/merge.hpp"
#include "tokred/rng.hpp"

#include "oracle_helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace tokred;
using namespace tokred::merge;

namespace {

TokenSet tokens_from(std::initializer_list<std::initializer_list<double>> rows) {
    TokenSet tokens;
    const int p = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows.begin()->size());
    tokens.spatial.resize(p, d);
    int i = 0;
    for (const auto& row : rows) {
        int j = 0;
        for (double v : row) tokens.spatial(i, j++) = v;
        ++i;
    }
    tokens.cls = Vector::Zero(d);
    return tokens;
}

prune::AttentionSummary uniform_att(int p) {
    return prune::AttentionSummary{Vector::Constant(p, 1.0 / p)};
}

// recompute cluster features from the assignment and compare
void check_hard_merge_means(const TokenSet& input, const MergeResult& result) {
    for (int c = 0; c < result.assignment.clusters; ++c) {
        Vector mean = Vector::Zero(input.dim());
        int count = 0;
        for (int i = 0; i < input.count(); ++i) {
            if (result.assignment.cluster_of[i] != c) continue;
            mean += input.spatial.row(i).transpose();
            ++count;
        }
        if (count == 0) continue;
        mean /= count;
        CHECK((result.tokens.spatial.row(c).transpose() - mean).norm() ==
              doctest::Approx(0.0).epsilon(1e-12));
    }
}

// two tight blobs of three tokens each, far apart in feature space
TokenSet two_blobs() {
    return tokens_from({{0.0, 0.1}, {0.1, 0.0}, {0.05, 0.05},
                        {10.0, 10.1}, {10.1, 10.0}, {10.05, 10.05}});
}

} // namespace

TEST_CASE("tome merges identical pairs first") {
    // tokens a, a, b, b with a orthogonal to b
    const TokenSet tokens = tokens_from({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
    const MergeResult result = tome_merge(tokens, 2);
    CHECK(result.assignment.clusters == 2);
    CHECK(result.tokens.count() == 2);
    // representatives take the lower original index
    CHECK(result.assignment.centers == std::vector<int>{0, 2});
    CHECK(result.tokens.spatial.row(0) == tokens.spatial.row(0));
    CHECK(result.tokens.spatial.row(1) == tokens.spatial.row(2));
}

TEST_CASE("tome identity and degenerate inputs") {
    const TokenSet tokens = tokens_from({{1, 0}, {0, 1}, {1, 1}, {2, 1}});
    const MergeResult identity = tome_merge(tokens, 0);
    CHECK(identity.assignment.clusters == 4);
    CHECK(identity.tokens.spatial == tokens.spatial);

    const TokenSet same = tokens_from({{3, 4}, {3, 4}, {3, 4}, {3, 4}});
    const MergeResult merged = tome_merge(same, 2);
    CHECK(merged.tokens.count() == 2);
    for (int c = 0; c < 2; ++c)
        CHECK(merged.tokens.spatial.row(c) == same.spatial.row(0));

    CHECK_THROWS_AS(tome_merge(tokens, 3), Error);  // above floor(P/2)
    CHECK_THROWS_AS(tome_merge(tokens_from({{1, 0}}), 0), Error);
}

TEST_CASE("tome output count and bipartite structure") {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const int p = 2 + static_cast<int>(rng.below(12));
        TokenSet tokens;
        tokens.spatial.resize(p, 4);
        for (int i = 0; i < p; ++i)
            for (int d = 0; d < 4; ++d) tokens.spatial(i, d) = rng.normal();
        tokens.cls = Vector::Zero(4);
        const int merges = static_cast<int>(rng.below(p / 2 + 1));
        const MergeResult result = tome_merge(tokens, merges);
        CHECK(result.tokens.count() == p - merges);
        // every multi-member cluster holds exactly one B-partition (even) node
        for (int c = 0; c < result.assignment.clusters; ++c) {
            int even = 0, members = 0;
            for (int i = 0; i < p; ++i) {
                if (result.assignment.cluster_of[i] != c) continue;
                ++members;
                if (i % 2 == 0) ++even;
            }
            if (members > 1) CHECK(even == 1);
        }
        check_hard_merge_means(tokens, result);
    }
}

TEST_CASE("kmedoids recovers tight blobs and matches the brute-force medoid pair") {
    const TokenSet tokens = two_blobs();
    // attention seeds one center per blob, as CLS attention does in the harness
    prune::AttentionSummary att{Vector(6)};
    att.scores << 0.3, 0.1, 0.1, 0.3, 0.1, 0.1;
    const MergeResult result = kmedoids_cluster(tokens, att, 2);

    // brute force: best 2-medoid set by summed within-cluster distance
    double best = 1e300;
    std::pair<int, int> best_pair{0, 0};
    for (int a = 0; a < 6; ++a) {
        for (int b = a + 1; b < 6; ++b) {
            double total = 0.0;
            for (int i = 0; i < 6; ++i)
                total += std::min((tokens.spatial.row(i) - tokens.spatial.row(a)).norm(),
                                  (tokens.spatial.row(i) - tokens.spatial.row(b)).norm());
            if (total < best) {
                best = total;
                best_pair = {a, b};
            }
        }
    }
    CHECK(result.assignment.centers ==
          std::vector<int>{best_pair.first, best_pair.second});
    // one blob per cluster
    for (int i = 0; i < 3; ++i) {
        CHECK(result.assignment.cluster_of[i] == result.assignment.cluster_of[0]);
        CHECK(result.assignment.cluster_of[3 + i] == result.assignment.cluster_of[3]);
    }
}

TEST_CASE("kmedoids trivial cases") {
    const TokenSet tokens = two_blobs();
    const MergeResult identity = kmedoids_cluster(tokens, uniform_att(6), 6);
    CHECK(identity.tokens.spatial == tokens.spatial);

    // all tokens identical: medoids stay at the top-attention seeds
    const TokenSet same = tokens_from({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
    prune::AttentionSummary att{Vector(4)};
    att.scores << 0.1, 0.2, 0.4, 0.3;
    const MergeResult degenerate = kmedoids_cluster(same, att, 2);
    CHECK(degenerate.assignment.centers == std::vector<int>{2, 3});
    // ties assign every token to the lowest-index center's cluster
    for (int i = 0; i < 4; ++i) CHECK(degenerate.assignment.cluster_of[i] == 0);

    CHECK_THROWS_AS(kmedoids_cluster(tokens, uniform_att(6), 0), Error);
    CHECK_THROWS_AS(kmedoids_cluster(tokens, uniform_att(6), 7), Error);
}

TEST_CASE("kmedoids objective is non-increasing and replays exactly") {
    Rng rng(31);
    for (int trial = 0; trial < 25; ++trial) {
        const int p = 4 + static_cast<int>(rng.below(4));  // P <= 7
        const int k = 1 + static_cast<int>(rng.below(3));
        TokenSet tokens;
        tokens.spatial.resize(p, 2);
        for (int i = 0; i < p; ++i)
            for (int d = 0; d < 2; ++d) tokens.spatial(i, d) = rng.normal();
        tokens.cls = Vector::Zero(2);
        Vector scores(p);
        for (int i = 0; i < p; ++i) scores(i) = rng.uniform();
        const prune::AttentionSummary att{scores};

        // independent replay of the exact iterative rule
        std::vector<int> medoids = prune::topk_prune(att, k);
        std::vector<double> objectives;
        std::vector<int> assign(p);
        for (int it = 0; it < 3; ++it) {
            for (int i = 0; i < p; ++i) {
                double best = 1e300;
                for (int c = 0; c < k; ++c) {
                    const double d = (tokens.spatial.row(i) - tokens.spatial.row(medoids[c])).norm();
                    if (d < best) {
                        best = d;
                        assign[i] = c;
                    }
                }
            }
            double objective = 0.0;
            for (int i = 0; i < p; ++i)
                objective += (tokens.spatial.row(i) - tokens.spatial.row(medoids[assign[i]])).norm();
            objectives.push_back(objective);
            for (int c = 0; c < k; ++c) {
                std::vector<int> members;
                for (int i = 0; i < p; ++i)
                    if (assign[i] == c) members.push_back(i);
                if (members.empty()) continue;
                const auto sum_for = [&](int cand) {
                    double s = 0.0;
                    for (int other : members)
                        s += (tokens.spatial.row(cand) - tokens.spatial.row(other)).norm();
                    return s;
                };
                int arg = members.front();
                double best = sum_for(arg);
                for (int cand : members) {
                    const double s = sum_for(cand);
                    if (s < best) {
                        best = s;
                        arg = cand;
                    }
                }
                const bool incumbent_in =
                    std::find(members.begin(), members.end(), medoids[c]) != members.end();
                if (!(incumbent_in && sum_for(medoids[c]) <= best)) medoids[c] = arg;
            }
        }
        for (std::size_t i = 1; i < objectives.size(); ++i)
            CHECK(objectives[i] <= objectives[i - 1] + 1e-12);

        std::vector<int> sorted_medoids = medoids;
        std::sort(sorted_medoids.begin(), sorted_medoids.end());
        const MergeResult result = kmedoids_cluster(tokens, att, k);
        CHECK(result.assignment.centers == sorted_medoids);
    }
}

TEST_CASE("dpcknn centers match a by-hand density-separation computation") {
    const TokenSet tokens = two_blobs();
    const MergeResult result = dpcknn_cluster(tokens, 2, 2);

    // independent straight-line recomputation
    const int p = 6;
    Matrix dist(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
            dist(i, j) = (tokens.spatial.row(i) - tokens.spatial.row(j)).norm();
    Vector density(p);
    for (int i = 0; i < p; ++i) {
        std::vector<double> row;
        for (int j = 0; j < p; ++j)
            if (j != i) row.push_back(dist(i, j));
        std::sort(row.begin(), row.end());
        density(i) = std::exp(-(row[0] * row[0] + row[1] * row[1]) / 2.0);
    }
    Vector sep(p);
    for (int i = 0; i < p; ++i) {
        double best = 1e300;
        for (int j = 0; j < p; ++j)
            if (density(j) > density(i)) best = std::min(best, dist(i, j));
        sep(i) = best == 1e300 ? dist.maxCoeff() : best;
    }
    std::vector<int> order(p);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return density(a) * sep(a) > density(b) * sep(b);
    });
    std::vector<int> expected{order[0], order[1]};
    std::sort(expected.begin(), expected.end());
    CHECK(result.assignment.centers == expected);

    // one center per blob
    const bool split = (expected[0] < 3) != (expected[1] < 3);
    CHECK(split);
    check_hard_merge_means(tokens, result);
}

TEST_CASE("dpcknn trivial cases") {
    const TokenSet tokens = two_blobs();
    const MergeResult identity = dpcknn_cluster(tokens, 6, 2);
    CHECK(identity.tokens.spatial == tokens.spatial);

    const Vector uniform = Vector::Constant(6, 0.25);
    const MergeResult weighted = dpcknn_cluster(tokens, 2, 2, uniform);
    const MergeResult plain = dpcknn_cluster(tokens, 2, 2);
    CHECK((weighted.tokens.spatial - plain.tokens.spatial).norm() ==
          doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(dpcknn_cluster(tokens, 0, 2), Error);
    CHECK_THROWS_AS(dpcknn_cluster(tokens, 2, 6), Error);
}

TEST_CASE("sit with zero weights averages all tokens into every cluster") {
    const TokenSet tokens = tokens_from({{1, 2, 2}, {3, 2, 4}, {5, 0, 0}, {-1, 0, 2}});
    const SoftMergeResult result = sit_merge(tokens, LinearPredictor::zeros(2, 3));
    const Vector mean = tokens.spatial.colwise().mean().transpose();
    for (int c = 0; c < 2; ++c) {
        CHECK((result.tokens.spatial.row(c).transpose() - mean).norm() ==
              doctest::Approx(0.0).epsilon(1e-12));
        for (int j = 0; j < 4; ++j)
            CHECK(result.assignment.weights(c, j) == doctest::Approx(0.5));
    }
    result.assignment.validate();
}

TEST_CASE("sit with saturated logits forms exact cluster means") {
    const TokenSet tokens = tokens_from({{1000, 0}, {1000, 0}, {0, 1000}, {0, 1000}});
    // predictor routes the first feature to cluster 0, the second to cluster 1
    LinearPredictor predictor = LinearPredictor::zeros(2, 2);
    predictor.weight << 1.0, 0.0, 0.0, 1.0;
    const SoftMergeResult result = sit_merge(tokens, predictor);
    CHECK(result.tokens.spatial(0, 0) == doctest::Approx(1000.0));
    CHECK(result.tokens.spatial(1, 1) == doctest::Approx(1000.0));
}

TEST_CASE("sit matches a straight-line dense recomputation") {
    const auto predictor = LinearPredictor::seeded(2, 3, 77);
    TokenSet tokens;
    tokens.spatial = oracle::random_matrix(4, 3, 78);
    tokens.cls = Vector::Zero(3);
    const SoftMergeResult result = sit_merge(tokens, predictor);

    Matrix weights(2, 4);
    for (int j = 0; j < 4; ++j) {
        double z0 = 0, z1 = 0;
        for (int d = 0; d < 3; ++d) {
            z0 += predictor.weight(0, d) * tokens.spatial(j, d);
            z1 += predictor.weight(1, d) * tokens.spatial(j, d);
        }
        const double e0 = std::exp(z0), e1 = std::exp(z1);
        weights(0, j) = e0 / (e0 + e1);
        weights(1, j) = e1 / (e0 + e1);
    }
    for (int c = 0; c < 2; ++c) {
        Vector feature = Vector::Zero(3);
        double mass = 0;
        for (int j = 0; j < 4; ++j) {
            feature += weights(c, j) * tokens.spatial.row(j).transpose();
            mass += weights(c, j);
        }
        feature /= mass;
        CHECK((result.tokens.spatial.row(c).transpose() - feature).norm() ==
              doctest::Approx(0.0).epsilon(1e-6));
    }
}

TEST_CASE("sinkhorn kernel fixes marginals") {
    SUBCASE("constant similarities give the uniform plan") {
        const Matrix sim = Matrix::Constant(3, 4, 0.7);
        const auto result = sinkhorn_knopp(sim, 1.0, 10, Vector::Constant(3, 4.0 / 3),
                                           Vector::Ones(4));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(result.transport(i, j) == doctest::Approx(1.0 / 3).epsilon(1e-9));
    }
    SUBCASE("a dominant diagonal converges to a scaled permutation") {
        Matrix sim = Matrix::Zero(3, 3);
        sim.diagonal().array() += 100.0;
        const auto result = sinkhorn_knopp(sim, 1.0, 50, Vector::Constant(3, 1.0 / 3),
                                           Vector::Constant(3, 1.0 / 3));
        // reference loop run far beyond the requested iterations
        Matrix reference = ((sim.array() - 100.0) / 1.0).exp();
        reference *= 1.0 / reference.sum();
        for (int it = 0; it < 5000; ++it) {
            for (int i = 0; i < 3; ++i) reference.row(i) *= (1.0 / 3) / reference.row(i).sum();
            for (int j = 0; j < 3; ++j) reference.col(j) *= (1.0 / 3) / reference.col(j).sum();
        }
        CHECK((result.transport - reference).cwiseAbs().maxCoeff() < 1e-6);
        for (int i = 0; i < 3; ++i)
            CHECK(result.transport(i, i) == doctest::Approx(1.0 / 3).epsilon(1e-6));
    }
    SUBCASE("zero iterations return the normalized kernel with residuals") {
        Matrix sim(2, 2);
        sim << 1.0, 0.0, 0.0, 1.0;
        const auto result = sinkhorn_knopp(sim, 1.0, 0, Vector::Ones(2), Vector::Ones(2));
        CHECK(result.transport.sum() == doctest::Approx(2.0));
        CHECK(result.row_residual >= 0.0);
        const Matrix kernel = (sim.array() - 1.0).exp();
        const Matrix expected = kernel * (2.0 / kernel.sum());
        CHECK((result.transport - expected).cwiseAbs().maxCoeff() ==
              doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("long runs on random inputs hit 1e-6 residuals") {
        const Matrix sim = oracle::random_matrix(8, 8, 5);
        const auto result = sinkhorn_knopp(sim, 1.0, 50, Vector::Ones(8), Vector::Ones(8));
        CHECK(result.row_residual < 1e-6);
        CHECK(result.col_residual < 1e-6);
        CHECK((result.transport.array() >= 0.0).all());
    }
    SUBCASE("argument validation") {
        const Matrix sim = Matrix::Zero(2, 2);
        CHECK_THROWS_AS(sinkhorn_knopp(sim, 0.0, 3, Vector::Ones(2), Vector::Ones(2)), Error);
        CHECK_THROWS_AS(sinkhorn_knopp(sim, 1.0, 3, Vector::Ones(3), Vector::Ones(2)), Error);
        CHECK_THROWS_AS(sinkhorn_knopp(sim, 1.0, 3, Vector::Zero(2), Vector::Ones(2)), Error);
        Matrix bad = sim;
        bad(0, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(sinkhorn_knopp(bad, 1.0, 3, Vector::Ones(2), Vector::Ones(2)), Error);
    }
}

TEST_CASE("sinkhorn merge approaches hard matching at small entropy") {
    TokenSet tokens;
    tokens.spatial = Matrix::Identity(3, 3) * 2.0;  // three orthogonal tokens
    tokens.cls = Vector::Zero(3);
    QueryBank queries;
    queries.queries = Matrix::Identity(3, 3);
    const SoftMergeResult result = sinkhorn_merge(tokens, queries, 0.01, 50);
    for (int c = 0; c < 3; ++c)
        CHECK((result.tokens.spatial.row(c) - tokens.spatial.row(c)).norm() < 1e-6);

    SUBCASE("single cluster absorbs the mean") {
        QueryBank one;
        one.queries = Matrix::Ones(1, 3);
        const SoftMergeResult merged = sinkhorn_merge(tokens, one, 1.0, 3);
        const Vector mean = tokens.spatial.colwise().mean().transpose();
        CHECK((merged.tokens.spatial.row(0).transpose() - mean).norm() < 1e-9);
    }
    SUBCASE("determinism") {
        const SoftMergeResult again = sinkhorn_merge(tokens, queries, 0.01, 50);
        CHECK(again.tokens.spatial == result.tokens.spatial);
    }
    SUBCASE("zero-norm inputs are named in the error") {
        TokenSet bad = tokens;
        bad.spatial.row(1).setZero();
        try {
            sinkhorn_merge(bad, queries, 1.0, 3);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("token 1") != std::string::npos);
        }
    }
}

TEST_CASE("patchmerger forms convex combinations via row softmax") {
    const TokenSet tokens = tokens_from({{1, 0}, {0, 1}, {2, 2}});

    SUBCASE("zero queries average all tokens") {
        QueryBank zero;
        zero.queries = Matrix::Zero(2, 2);
        const SoftMergeResult result = patchmerger_merge(tokens, zero);
        const Vector mean = tokens.spatial.colwise().mean().transpose();
        for (int c = 0; c < 2; ++c)
            CHECK((result.tokens.spatial.row(c).transpose() - mean).norm() ==
                  doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("a saturated query snaps to the token maximizing the dot product") {
        QueryBank hot;
        hot.queries = Matrix::Zero(1, 2);
        hot.queries.row(0) = 1000.0 * tokens.spatial.row(2);  // largest-norm token
        const SoftMergeResult result = patchmerger_merge(tokens, hot);
        CHECK((result.tokens.spatial.row(0) - tokens.spatial.row(2)).norm() < 1e-6);
    }
    SUBCASE("small integer case matches hand-computed softmax weights") {
        QueryBank queries;
        queries.queries.resize(2, 2);
        queries.queries << 1, 0, 0, 1;
        const SoftMergeResult result = patchmerger_merge(tokens, queries);
        // scores row 0: <q0, x_j> = [1, 0, 2]
        const double e1 = std::exp(1.0), e0 = std::exp(0.0), e2 = std::exp(2.0);
        const double z = e1 + e0 + e2;
        Vector expected = (e1 * tokens.spatial.row(0) + e0 * tokens.spatial.row(1) +
                           e2 * tokens.spatial.row(2))
                              .transpose() /
                          z;
        CHECK((result.tokens.spatial.row(0).transpose() - expected).norm() ==
              doctest::Approx(0.0).epsilon(1e-9));
        result.assignment.validate();  // rows sum to one
    }
}

TEST_CASE("soft merge outputs stay inside the token hull") {
    Rng rng(61);
    for (int trial = 0; trial < 15; ++trial) {
        TokenSet tokens;
        const int p = 4 + static_cast<int>(rng.below(6));
        tokens.spatial.resize(p, 3);
        for (int i = 0; i < p; ++i)
            for (int d = 0; d < 3; ++d) tokens.spatial(i, d) = rng.normal();
        tokens.cls = Vector::Zero(3);
        const int clusters = 1 + static_cast<int>(rng.below(p));

        const auto check_hull = [&](const Matrix& features) {
            for (int d = 0; d < 3; ++d) {
                const double lo = tokens.spatial.col(d).minCoeff() - 1e-9;
                const double hi = tokens.spatial.col(d).maxCoeff() + 1e-9;
                for (int c = 0; c < features.rows(); ++c) {
                    CHECK(features(c, d) >= lo);
                    CHECK(features(c, d) <= hi);
                }
            }
        };
        check_hull(sit_merge(tokens, LinearPredictor::seeded(clusters, 3, trial)).tokens.spatial);
        check_hull(patchmerger_merge(tokens, QueryBank::seeded(clusters, 3, trial)).tokens.spatial);
        check_hull(sinkhorn_merge(tokens, QueryBank::seeded(clusters, 3, trial + 100), 1.0, 3)
                       .tokens.spatial);
    }
}
