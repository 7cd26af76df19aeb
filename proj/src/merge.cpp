#include "tokred/merge.hpp"

#include "tokred/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tokred::merge {

namespace {

Matrix seeded_normal(int rows, int cols, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = sigma * rng.normal();
    return m;
}

double cosine(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    const double denom = a.norm() * b.norm();
    if (denom == 0.0) return 0.0;
    return a.dot(b) / denom;
}

// Weighted cluster features with per-cluster renormalization so every
// output is a convex combination of the input tokens. Zero-mass clusters
// become zero vectors and are flagged.
SoftMergeResult soft_features(const TokenSet& tokens, Matrix weights, WeightAxis axis) {
    const int clusters = static_cast<int>(weights.rows());
    SoftMergeResult result;
    result.tokens.cls = tokens.cls;
    result.tokens.spatial = Matrix::Zero(clusters, tokens.dim());
    result.assignment.normalized = axis;
    for (int c = 0; c < clusters; ++c) {
        const double mass = weights.row(c).sum();
        if (mass > 0.0) {
            result.tokens.spatial.row(c) = (weights.row(c) / mass) * tokens.spatial;
        } else {
            result.assignment.zero_mass.push_back(c);
        }
    }
    result.assignment.weights = std::move(weights);
    return result;
}

// Nearest-center assignment with lowest-cluster-id tie breaking; centers
// are token indices ordered by cluster id.
std::vector<int> assign_nearest(const Matrix& features, const std::vector<int>& centers) {
    const int count = static_cast<int>(features.rows());
    std::vector<int> cluster_of(count, 0);
    for (int i = 0; i < count; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_cluster = 0;
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const double d = (features.row(i) - features.row(centers[c])).norm();
            if (d < best) {
                best = d;
                best_cluster = static_cast<int>(c);
            }
        }
        cluster_of[i] = best_cluster;
    }
    return cluster_of;
}

Matrix cluster_means(const TokenSet& tokens, const std::vector<int>& cluster_of,
                     const std::vector<int>& centers, const std::optional<Vector>& importance) {
    const int clusters = static_cast<int>(centers.size());
    Matrix features = Matrix::Zero(clusters, tokens.dim());
    Vector mass = Vector::Zero(clusters);
    for (int i = 0; i < tokens.count(); ++i) {
        const double w = importance ? (*importance)(i) : 1.0;
        features.row(cluster_of[i]) += w * tokens.spatial.row(i);
        mass(cluster_of[i]) += w;
    }
    for (int c = 0; c < clusters; ++c) {
        if (mass(c) > 0.0) {
            features.row(c) /= mass(c);
        } else {
            // no members (or zero total weight): fall back to the center token
            features.row(c) = tokens.spatial.row(centers[c]);
        }
    }
    return features;
}

} // namespace

void HardAssignment::validate(int token_count) const {
    if (static_cast<int>(cluster_of.size()) != token_count)
        throw Error::data("assignment does not cover every token");
    for (int c : cluster_of)
        if (c < 0 || c >= clusters) throw Error::data("cluster id out of range");
    if (!centers.empty() && static_cast<int>(centers.size()) != clusters)
        throw Error::data("center list does not match cluster count");
}

void SoftAssignment::validate() const {
    if (weights.rows() < 1 || weights.cols() < 1) throw Error::data("empty soft assignment");
    if ((weights.array() < 0.0).any() || !weights.allFinite())
        throw Error::data("soft assignment weights must be finite and nonnegative");
    if (normalized == WeightAxis::token_columns) {
        for (int j = 0; j < weights.cols(); ++j) {
            const double sum = weights.col(j).sum();
            if (std::abs(sum - 1.0) > 1e-9)
                throw Error::data("token column " + std::to_string(j) + " sums to " +
                                  std::to_string(sum) + ", expected 1");
        }
    } else {
        for (int i = 0; i < weights.rows(); ++i) {
            const double sum = weights.row(i).sum();
            if (std::abs(sum - 1.0) > 1e-9)
                throw Error::data("cluster row " + std::to_string(i) + " sums to " +
                                  std::to_string(sum) + ", expected 1");
        }
    }
}

QueryBank QueryBank::seeded(int clusters, int dim, std::uint64_t seed) {
    if (clusters < 1 || dim < 1) throw Error::data("query bank needs positive shape");
    return QueryBank{seeded_normal(clusters, dim, 1.0 / std::sqrt(double(dim)), seed)};
}

LinearPredictor LinearPredictor::seeded(int clusters, int dim, std::uint64_t seed) {
    if (clusters < 1 || dim < 1) throw Error::data("predictor needs positive shape");
    return LinearPredictor{seeded_normal(clusters, dim, 1.0 / std::sqrt(double(dim)), seed)};
}

LinearPredictor LinearPredictor::zeros(int clusters, int dim) {
    if (clusters < 1 || dim < 1) throw Error::data("predictor needs positive shape");
    return LinearPredictor{Matrix::Zero(clusters, dim)};
}

MergeResult tome_merge(const TokenSet& tokens, int merges, const Matrix* similarity_features) {
    tokens.validate();
    const int count = tokens.count();
    if (count < 2) throw Error::data("bipartite merging needs at least two tokens");
    if (merges < 0 || merges > count / 2)
        throw Error::data("requested " + std::to_string(merges) + " merges exceeds floor(P/2) = " +
                          std::to_string(count / 2) + "; the stage keep rate may not drop below 50%");
    const Matrix& sim_features = similarity_features ? *similarity_features : tokens.spatial;
    if (sim_features.rows() != count)
        throw Error::data("similarity feature count does not match token count");

    std::vector<int> part_a;  // odd indices
    std::vector<int> part_b;  // even indices; holds the extra token when P is odd
    for (int i = 0; i < count; ++i) (i % 2 == 1 ? part_a : part_b).push_back(i);

    struct Edge {
        double sim;
        int a;
        int b;
    };
    std::vector<Edge> edges;
    edges.reserve(part_a.size());
    for (int a : part_a) {
        double best = -std::numeric_limits<double>::infinity();
        int best_b = part_b.front();
        for (int b : part_b) {
            const double s = cosine(sim_features.row(a).transpose(), sim_features.row(b).transpose());
            if (s > best) {
                best = s;
                best_b = b;
            }
        }
        edges.push_back({best, a, best_b});
    }
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
        if (x.sim != y.sim) return x.sim > y.sim;
        return x.a < y.a;
    });
    edges.resize(merges);

    // Cluster = B node plus every A node whose kept edge points at it.
    std::vector<int> partner(count, -1);
    for (const Edge& e : edges) partner[e.a] = e.b;

    std::vector<int> representative;  // lowest original index per cluster
    std::vector<int> cluster_of(count, -1);
    for (int i = 0; i < count; ++i) {
        if (cluster_of[i] >= 0) continue;
        const int root = partner[i] >= 0 ? partner[i] : i;
        if (cluster_of[root] < 0) {
            cluster_of[root] = static_cast<int>(representative.size());
            representative.push_back(root);
        }
        cluster_of[i] = cluster_of[root];
        representative[cluster_of[i]] = std::min(representative[cluster_of[i]], i);
    }

    // report clusters in representative-index order
    const int cluster_count = static_cast<int>(representative.size());
    std::vector<int> order(cluster_count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return representative[a] < representative[b]; });
    std::vector<int> rank(cluster_count);
    for (int c = 0; c < cluster_count; ++c) rank[order[c]] = c;

    MergeResult result;
    result.assignment.clusters = cluster_count;
    result.assignment.centers.resize(cluster_count);
    for (int c = 0; c < cluster_count; ++c)
        result.assignment.centers[rank[c]] = representative[c];
    result.assignment.cluster_of.resize(count);
    for (int i = 0; i < count; ++i) result.assignment.cluster_of[i] = rank[cluster_of[i]];
    result.tokens.cls = tokens.cls;
    result.tokens.spatial = cluster_means(tokens, result.assignment.cluster_of,
                                          result.assignment.centers, std::nullopt);
    return result;
}

MergeResult kmedoids_cluster(const TokenSet& tokens, const prune::AttentionSummary& att,
                             int clusters, int iters) {
    tokens.validate();
    const int count = tokens.count();
    if (att.count() != count) throw Error::data("attention length does not match token count");
    if (clusters < 1 || clusters > count)
        throw Error::data("cluster count " + std::to_string(clusters) + " out of range");
    if (iters < 0) throw Error::data("iteration count must be nonnegative");

    std::vector<int> medoids = prune::topk_prune(att, clusters);
    std::vector<int> cluster_of(count, 0);
    for (int it = 0; it < iters; ++it) {
        cluster_of = assign_nearest(tokens.spatial, medoids);
        for (int c = 0; c < clusters; ++c) {
            std::vector<int> members;
            for (int i = 0; i < count; ++i)
                if (cluster_of[i] == c) members.push_back(i);
            if (members.empty()) continue;  // keep the incumbent medoid
            const auto objective = [&](int candidate) {
                double sum = 0.0;
                for (int other : members)
                    sum += (tokens.spatial.row(candidate) - tokens.spatial.row(other)).norm();
                return sum;
            };
            // members ascend, so the first strict minimizer is the lowest
            // index; the incumbent keeps its seat on an exact tie
            double best = std::numeric_limits<double>::infinity();
            int best_token = members.front();
            for (int candidate : members) {
                const double sum = objective(candidate);
                if (sum < best) {
                    best = sum;
                    best_token = candidate;
                }
            }
            const bool incumbent_member =
                std::find(members.begin(), members.end(), medoids[c]) != members.end();
            if (!(incumbent_member && objective(medoids[c]) <= best)) medoids[c] = best_token;
        }
    }
    cluster_of = assign_nearest(tokens.spatial, medoids);

    // clusters reported in medoid-index order
    std::vector<int> order(clusters);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return medoids[a] < medoids[b]; });
    std::vector<int> rank(clusters);
    for (int c = 0; c < clusters; ++c) rank[order[c]] = c;

    MergeResult result;
    result.assignment.clusters = clusters;
    result.assignment.centers.resize(clusters);
    for (int c = 0; c < clusters; ++c) result.assignment.centers[rank[c]] = medoids[c];
    result.assignment.cluster_of.resize(count);
    for (int i = 0; i < count; ++i) result.assignment.cluster_of[i] = rank[cluster_of[i]];
    result.tokens.cls = tokens.cls;
    result.tokens.spatial.resize(clusters, tokens.dim());
    for (int c = 0; c < clusters; ++c)
        result.tokens.spatial.row(c) = tokens.spatial.row(result.assignment.centers[c]);
    return result;
}

MergeResult dpcknn_cluster(const TokenSet& tokens, int clusters, int k_nn,
                           const std::optional<Vector>& importance) {
    tokens.validate();
    const int count = tokens.count();
    if (clusters < 1 || clusters > count)
        throw Error::data("cluster count " + std::to_string(clusters) + " out of range");
    if (k_nn < 1 || k_nn >= count)
        throw Error::data("neighbour count " + std::to_string(k_nn) + " must lie in [1, P)");
    if (importance && static_cast<int>(importance->size()) != count)
        throw Error::data("importance length does not match token count");

    Matrix dist(count, count);
    for (int i = 0; i < count; ++i) {
        dist(i, i) = 0.0;
        for (int j = i + 1; j < count; ++j) {
            const double d = (tokens.spatial.row(i) - tokens.spatial.row(j)).norm();
            dist(i, j) = d;
            dist(j, i) = d;
        }
    }

    // density: exp(-mean squared distance to the k nearest neighbours)
    Vector density(count);
    std::vector<double> row(count - 1);
    for (int i = 0; i < count; ++i) {
        int n = 0;
        for (int j = 0; j < count; ++j)
            if (j != i) row[n++] = dist(i, j);
        std::nth_element(row.begin(), row.begin() + (k_nn - 1), row.end());
        double sum = 0.0;
        for (int k = 0; k < k_nn; ++k) sum += row[k] * row[k];
        density(i) = std::exp(-sum / k_nn);
    }

    const double diameter = dist.maxCoeff();
    Vector separation(count);
    for (int i = 0; i < count; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < count; ++j)
            if (density(j) > density(i)) best = std::min(best, dist(i, j));
        separation(i) = std::isinf(best) ? diameter : best;
    }

    prune::AttentionSummary combined{density.cwiseProduct(separation)};
    std::vector<int> centers = prune::topk_prune(combined, clusters);
    std::vector<int> cluster_of = assign_nearest(tokens.spatial, centers);

    MergeResult result;
    result.assignment.clusters = clusters;
    result.assignment.centers = centers;
    result.assignment.cluster_of = cluster_of;
    result.tokens.cls = tokens.cls;
    result.tokens.spatial = cluster_means(tokens, cluster_of, centers, importance);
    return result;
}

SoftMergeResult sit_merge(const TokenSet& tokens, const LinearPredictor& predictor) {
    tokens.validate();
    if (predictor.weight.cols() != tokens.dim())
        throw Error::data("predictor input dimension does not match tokens");
    const int clusters = predictor.clusters();
    const int count = tokens.count();

    Matrix weights(clusters, count);
    for (int j = 0; j < count; ++j) {
        Vector logits = predictor.weight * tokens.spatial.row(j).transpose();
        const double hi = logits.maxCoeff();
        Vector ex = (logits.array() - hi).exp();
        weights.col(j) = ex / ex.sum();
    }
    return soft_features(tokens, std::move(weights), WeightAxis::token_columns);
}

SinkhornResult sinkhorn_knopp(const Matrix& sim, double eps, int iters,
                              const Vector& row_marginals, const Vector& col_marginals) {
    if (!(eps > 0.0)) throw Error::data("entropy regularization must be positive");
    if (!sim.allFinite()) throw Error::data("similarity matrix must be finite");
    if (row_marginals.size() != sim.rows() || col_marginals.size() != sim.cols())
        throw Error::data("marginal lengths do not match the similarity matrix");
    if ((row_marginals.array() <= 0.0).any() || (col_marginals.array() <= 0.0).any())
        throw Error::data("marginals must be positive");
    const double total = row_marginals.sum();
    if (std::abs(total - col_marginals.sum()) > 1e-9 * std::max(1.0, total))
        throw Error::data("row and column marginals must sum to the same total");
    if (iters < 0) throw Error::data("iteration count must be nonnegative");

    // subtract the max before exponentiating; the global normalization
    // absorbs the constant
    Matrix transport = ((sim.array() - sim.maxCoeff()) / eps).exp();
    transport *= total / transport.sum();
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < transport.rows(); ++i) {
            const double sum = transport.row(i).sum();
            if (sum > 0.0) transport.row(i) *= row_marginals(i) / sum;
        }
        for (int j = 0; j < transport.cols(); ++j) {
            const double sum = transport.col(j).sum();
            if (sum > 0.0) transport.col(j) *= col_marginals(j) / sum;
        }
    }

    SinkhornResult result;
    result.row_residual =
        (transport.rowwise().sum() - row_marginals).cwiseAbs().maxCoeff();
    result.col_residual =
        (transport.colwise().sum().transpose() - col_marginals).cwiseAbs().maxCoeff();
    result.transport = std::move(transport);
    return result;
}

SoftMergeResult sinkhorn_merge(const TokenSet& tokens, const QueryBank& queries, double eps,
                               int iters) {
    tokens.validate();
    if (queries.queries.cols() != tokens.dim())
        throw Error::data("query dimension does not match tokens");
    const int clusters = queries.clusters();
    const int count = tokens.count();
    for (int j = 0; j < count; ++j)
        if (tokens.spatial.row(j).norm() == 0.0)
            throw Error::data("token " + std::to_string(j) + " has zero norm; cosine undefined");
    for (int i = 0; i < clusters; ++i)
        if (queries.queries.row(i).norm() == 0.0)
            throw Error::data("query " + std::to_string(i) + " has zero norm; cosine undefined");

    Matrix sim(clusters, count);
    for (int i = 0; i < clusters; ++i)
        for (int j = 0; j < count; ++j)
            sim(i, j) = cosine(queries.queries.row(i).transpose(),
                               tokens.spatial.row(j).transpose());

    const Vector row_marginals = Vector::Constant(clusters, double(count) / clusters);
    const Vector col_marginals = Vector::Ones(count);
    SinkhornResult transport = sinkhorn_knopp(sim, eps, iters, row_marginals, col_marginals);

    Matrix weights = std::move(transport.transport);
    for (int j = 0; j < count; ++j) {
        const double sum = weights.col(j).sum();
        if (sum > 0.0) weights.col(j) /= sum;
    }
    return soft_features(tokens, std::move(weights), WeightAxis::token_columns);
}

SoftMergeResult patchmerger_merge(const TokenSet& tokens, const QueryBank& queries) {
    tokens.validate();
    if (queries.queries.cols() != tokens.dim())
        throw Error::data("query dimension does not match tokens");
    const int clusters = queries.clusters();
    const int count = tokens.count();

    Matrix weights(clusters, count);
    for (int i = 0; i < clusters; ++i) {
        Vector scores = tokens.spatial * queries.queries.row(i).transpose();
        const double hi = scores.maxCoeff();
        Vector ex = (scores.array() - hi).exp();
        weights.row(i) = ex.transpose() / ex.sum();
    }
    return soft_features(tokens, std::move(weights), WeightAxis::cluster_rows);
}

} // namespace tokred::merge
