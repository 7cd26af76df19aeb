#pragma once

#include "tokred/prune.hpp"
#include "tokred/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace tokred::merge {

struct HardAssignment {
    std::vector<int> cluster_of;  // per input token, id in [0, clusters)
    std::vector<int> centers;     // input-token index per cluster id
    int clusters = 0;

    void validate(int token_count) const;
};

enum class WeightAxis { token_columns, cluster_rows };

// C x P weight matrix. SiT and Sinkhorn columns sum to one per token;
// PatchMerger rows sum to one per cluster (the axis records which).
struct SoftAssignment {
    Matrix weights;
    WeightAxis normalized = WeightAxis::token_columns;
    std::vector<int> zero_mass;  // clusters that received no assignment mass

    int clusters() const { return static_cast<int>(weights.rows()); }
    void validate() const;
};

// Learnable cluster-center vectors, seeded i.i.d. normal with variance 1/D.
struct QueryBank {
    Matrix queries;  // C x D

    static QueryBank seeded(int clusters, int dim, std::uint64_t seed);
    int clusters() const { return static_cast<int>(queries.rows()); }
};

// Bias-free linear map D -> C used as the SiT assignment predictor.
struct LinearPredictor {
    Matrix weight;  // C x D

    static LinearPredictor seeded(int clusters, int dim, std::uint64_t seed);
    static LinearPredictor zeros(int clusters, int dim);
    int clusters() const { return static_cast<int>(weight.rows()); }
};

struct MergeResult {
    TokenSet tokens;
    HardAssignment assignment;
};

struct SoftMergeResult {
    TokenSet tokens;
    SoftAssignment assignment;
};

// Bipartite merging: partition A = odd original indices, B = even (the
// extra token of an odd-length set lands in B). Each A node proposes its
// max-cosine B node; the `merges` best edges are contracted by feature
// averaging. merges may not exceed floor(P/2), i.e. the stage keep rate
// may not drop below 50%. Pass alternate features (e.g. attention keys)
// to score similarity on something other than the raw tokens.
MergeResult tome_merge(const TokenSet& tokens, int merges,
                       const Matrix* similarity_features = nullptr);

// Iterative K-Medoids seeded from the top-K attended tokens. Each
// iteration assigns tokens to the nearest medoid (ties to the lowest
// cluster id) and recomputes each cluster's medoid (ties keep the
// incumbent, then lowest index); a final assignment pass aligns members
// with the reported medoids.
MergeResult kmedoids_cluster(const TokenSet& tokens, const prune::AttentionSummary& att,
                             int clusters, int iters = 3);

// Density-peak clustering: density from the mean squared distance to the
// k nearest neighbours, separation from the closest higher-density token
// (global diameter for the densest), centers = top density*separation.
MergeResult dpcknn_cluster(const TokenSet& tokens, int clusters, int k_nn = 5,
                           const std::optional<Vector>& importance = std::nullopt);

SoftMergeResult sit_merge(const TokenSet& tokens, const LinearPredictor& predictor);

struct SinkhornResult {
    Matrix transport;
    double row_residual = 0.0;
    double col_residual = 0.0;
};

// Entropic scaling of exp(sim/eps) toward the given marginals, alternating
// row-then-column scalings for `iters` rounds after one global mass
// normalization. iters = 0 returns the normalized kernel with its
// residuals; no convergence is implied at small iteration counts.
SinkhornResult sinkhorn_knopp(const Matrix& sim, double eps, int iters,
                              const Vector& row_marginals, const Vector& col_marginals);

SoftMergeResult sinkhorn_merge(const TokenSet& tokens, const QueryBank& queries,
                               double eps = 1.0, int iters = 3);

SoftMergeResult patchmerger_merge(const TokenSet& tokens, const QueryBank& queries);

} // namespace tokred::merge
