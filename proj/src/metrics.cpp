#include "tokred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace tokred::metrics {

namespace {

std::set<int> as_set(const std::vector<int>& v) { return std::set<int>(v.begin(), v.end()); }

int intersection_size(const std::set<int>& a, const std::set<int>& b) {
    int n = 0;
    for (int x : a) n += b.count(x);
    return n;
}

// Contingency counts over compacted labels.
struct Contingency {
    std::vector<std::vector<int>> counts;  // classes x clusters
    std::vector<int> class_totals;
    std::vector<int> cluster_totals;
    int n = 0;
};

std::vector<int> compact_labels(const std::vector<int>& labels) {
    std::map<int, int> ids;
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto [it, inserted] = ids.emplace(labels[i], static_cast<int>(ids.size()));
        out[i] = it->second;
    }
    return out;
}

Contingency contingency(const std::vector<int>& classes, const std::vector<int>& clusters) {
    if (classes.size() != clusters.size() || classes.empty())
        throw Error::data("labelings must cover the same non-empty element set");
    const std::vector<int> c = compact_labels(classes);
    const std::vector<int> k = compact_labels(clusters);
    Contingency table;
    table.n = static_cast<int>(c.size());
    const int nc = *std::max_element(c.begin(), c.end()) + 1;
    const int nk = *std::max_element(k.begin(), k.end()) + 1;
    table.counts.assign(nc, std::vector<int>(nk, 0));
    table.class_totals.assign(nc, 0);
    table.cluster_totals.assign(nk, 0);
    for (int i = 0; i < table.n; ++i) {
        table.counts[c[i]][k[i]] += 1;
        table.class_totals[c[i]] += 1;
        table.cluster_totals[k[i]] += 1;
    }
    return table;
}

double entropy(const std::vector<int>& totals, int n) {
    double h = 0.0;
    for (int t : totals)
        if (t > 0) h -= (double(t) / n) * std::log(double(t) / n);
    return h;
}

std::vector<double> lower_bounds(int tokens, double r1, double r2, int stages, bool over_union) {
    if (tokens < 1) throw Error::data("token count must be positive");
    if (!(r2 > 0.0) || r2 > r1 || r1 > 1.0)
        throw Error::data("rates must satisfy 0 < r2 <= r1 <= 1");
    if (static_cast<int>(std::floor(tokens * std::pow(r2, stages))) < 1)
        throw Error::data("floor(P * r2^" + std::to_string(stages) + ") must be at least 1");
    std::vector<double> bounds;
    bounds.reserve(stages);
    for (int s = 1; s <= stages; ++s) {
        const int a = static_cast<int>(std::floor(tokens * std::pow(r1, s)));
        const int b = static_cast<int>(std::floor(tokens * std::pow(r2, s)));
        const int overlap = a + b - tokens;
        if (overlap >= 0)
            bounds.push_back(double(overlap) / double(over_union ? tokens : b));
        else
            bounds.push_back(0.0);
    }
    return bounds;
}

std::vector<double> normalized_distribution(const DepthMap& map) {
    std::vector<double> p(map.mean_depth.data(), map.mean_depth.data() + map.mean_depth.size());
    double total = 0.0;
    for (double v : p) {
        if (v < 0.0 || !std::isfinite(v)) throw Error::data("depth map has invalid mass");
        total += v;
    }
    if (!(total > 0.0)) throw Error::data("depth map has zero mass");
    for (double& v : p) v /= total;
    return p;
}

std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = (double(i) + double(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double ioa(const std::vector<int>& m1, const std::vector<int>& m2) {
    const auto a = as_set(m1);
    const auto b = as_set(m2);
    if (b.empty()) throw Error::data("IoA needs a non-empty second pattern");
    return double(intersection_size(a, b)) / double(b.size());
}

double iou(const std::vector<int>& m1, const std::vector<int>& m2) {
    const auto a = as_set(m1);
    const auto b = as_set(m2);
    const int inter = intersection_size(a, b);
    const int uni = static_cast<int>(a.size() + b.size()) - inter;
    if (uni == 0) throw Error::data("IoU needs at least one token across the patterns");
    return double(inter) / double(uni);
}

std::vector<double> ioa_lower_bound(int tokens, double r1, double r2, int stages) {
    return lower_bounds(tokens, r1, r2, stages, false);
}

std::vector<double> iou_lower_bound(int tokens, double r1, double r2, int stages) {
    return lower_bounds(tokens, r1, r2, stages, true);
}

double homogeneity(const std::vector<int>& reference, const std::vector<int>& candidate) {
    const Contingency table = contingency(reference, candidate);
    const double h_c = entropy(table.class_totals, table.n);
    double h_joint = 0.0;
    double h_c_given_k = 0.0;
    for (std::size_t c = 0; c < table.counts.size(); ++c) {
        for (std::size_t k = 0; k < table.counts[c].size(); ++k) {
            const int n_ck = table.counts[c][k];
            if (n_ck == 0) continue;
            const double p = double(n_ck) / table.n;
            h_joint -= p * std::log(p);
            h_c_given_k -= p * std::log(double(n_ck) / table.cluster_totals[k]);
        }
    }
    if (h_joint == 0.0) return 1.0;
    if (h_c == 0.0) return 1.0;  // a single reference class is trivially pure
    return 1.0 - h_c_given_k / h_c;
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    const Contingency table = contingency(a, b);
    const double h_a = entropy(table.class_totals, table.n);
    const double h_b = entropy(table.cluster_totals, table.n);
    if (h_a + h_b == 0.0) return 1.0;  // both trivial, hence identical partitions
    double info = 0.0;
    for (std::size_t c = 0; c < table.counts.size(); ++c) {
        for (std::size_t k = 0; k < table.counts[c].size(); ++k) {
            const int n_ck = table.counts[c][k];
            if (n_ck == 0) continue;
            info += (double(n_ck) / table.n) *
                    std::log(double(table.n) * n_ck /
                             (double(table.class_totals[c]) * table.cluster_totals[k]));
        }
    }
    return info / ((h_a + h_b) / 2.0);
}

std::vector<int> harden_soft_assignment(const Matrix& weights) {
    if (weights.rows() < 1 || weights.cols() < 1) throw Error::data("empty soft assignment");
    std::vector<int> cluster_of(weights.cols());
    for (int j = 0; j < weights.cols(); ++j) {
        int best = 0;
        for (int i = 1; i < weights.rows(); ++i)
            if (weights(i, j) > weights(best, j)) best = i;
        cluster_of[j] = best;
    }
    return cluster_of;
}

DepthMap averaged_depth_map(const std::vector<ReductionRecord>& records) {
    if (records.empty()) throw Error::data("cannot average an empty record collection");
    const Grid grid = records.front().grid;
    if (!grid.is_set()) throw Error::data("records lack a grid");
    DepthMap map;
    map.grid = grid;
    map.total_blocks = records.front().total_blocks;
    map.mean_depth = Vector::Zero(grid.count());
    for (const ReductionRecord& record : records) {
        if (!(record.grid == grid))
            throw Error::data("record grids differ; cannot average depth maps");
        const std::vector<int> depth = record_depth(record);
        for (int i = 0; i < grid.count(); ++i) map.mean_depth(i) += depth[i];
    }
    map.mean_depth /= double(records.size());
    return map;
}

MapMetric map_metric_from_name(const std::string& name) {
    if (name == "pearson") return MapMetric::pearson;
    if (name == "spearman") return MapMetric::spearman;
    if (name == "jsd") return MapMetric::jsd;
    if (name == "emd") return MapMetric::emd;
    if (name == "histogram") return MapMetric::histogram;
    throw Error::usage("unknown depth-map metric '" + name + "'");
}

std::string map_metric_name(MapMetric metric) {
    switch (metric) {
        case MapMetric::pearson: return "pearson";
        case MapMetric::spearman: return "spearman";
        case MapMetric::jsd: return "jsd";
        case MapMetric::emd: return "emd";
        case MapMetric::histogram: return "histogram";
    }
    throw Error::data("unknown metric");
}

double depth_map_similarity(const DepthMap& a, const DepthMap& b, MapMetric metric) {
    if (!(a.grid == b.grid)) throw Error::data("depth maps live on different grids");
    switch (metric) {
        case MapMetric::pearson:
        case MapMetric::spearman: {
            std::vector<double> x(a.mean_depth.data(), a.mean_depth.data() + a.mean_depth.size());
            std::vector<double> y(b.mean_depth.data(), b.mean_depth.data() + b.mean_depth.size());
            return metric == MapMetric::pearson ? pearson(x, y) : rank_correlation(x, y);
        }
        case MapMetric::jsd: {
            const auto p = normalized_distribution(a);
            const auto q = normalized_distribution(b);
            double jsd = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double m = 0.5 * (p[i] + q[i]);
                if (p[i] > 0.0) jsd += 0.5 * p[i] * std::log(p[i] / m);
                if (q[i] > 0.0) jsd += 0.5 * q[i] * std::log(q[i] / m);
            }
            return jsd;
        }
        case MapMetric::emd: {
            const auto p = normalized_distribution(a);
            const auto q = normalized_distribution(b);
            return emd(Eigen::Map<const Vector>(p.data(), p.size()),
                       Eigen::Map<const Vector>(q.data(), q.size()),
                       grid_ground_distance(a.grid));
        }
        case MapMetric::histogram: {
            const auto p = normalized_distribution(a);
            const auto q = normalized_distribution(b);
            double overlap = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) overlap += std::min(p[i], q[i]);
            return overlap;
        }
    }
    throw Error::data("unknown metric");
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw Error::data("correlation needs two equal-length series");
    const double n = double(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw Error::data("correlation undefined for constant input");
    return sxy / std::sqrt(sxx * syy);
}

double rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3)
        throw Error::data("rank correlation needs at least three paired values");
    return pearson(average_ranks(x), average_ranks(y));
}

Matrix grid_ground_distance(Grid grid) {
    if (!grid.is_set()) throw Error::data("ground distance needs a grid");
    const int n = grid.count();
    Matrix dist(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double dr = i / grid.w - j / grid.w;
            const double dc = i % grid.w - j % grid.w;
            dist(i, j) = std::hypot(dr, dc);
        }
    }
    return dist;
}

} // namespace tokred::metrics
