#pragma once

#include "tokred/types.hpp"

#include <vector>

namespace tokred::metrics {

// |M1 ∩ M2| / |M2|; callers compare patterns with r1 >= r2.
double ioa(const std::vector<int>& m1, const std::vector<int>& m2);

// |M1 ∩ M2| / |M1 ∪ M2|.
double iou(const std::vector<int>& m1, const std::vector<int>& m2);

// Per-stage minimum achievable IoA/IoU for static keep rates:
// with a = floor(P r1^s), b = floor(P r2^s), the floor of the overlap is
// max(0, a + b - P), divided by b for IoA and by P for IoU.
std::vector<double> ioa_lower_bound(int tokens, double r1, double r2, int stages = 3);
std::vector<double> iou_lower_bound(int tokens, double r1, double r2, int stages = 3);

// Entropy-based agreement between two labelings of the same elements,
// natural log. homogeneity(reference C, candidate K) is 1 when every
// K-cluster stays inside one C-class; nmi normalizes mutual information
// by the arithmetic mean of the two entropies.
double homogeneity(const std::vector<int>& reference, const std::vector<int>& candidate);
double nmi(const std::vector<int>& a, const std::vector<int>& b);

// Token-to-cluster hardening of a soft assignment: per-token argmax over
// clusters, lowest cluster id on ties.
std::vector<int> harden_soft_assignment(const Matrix& weights);

DepthMap averaged_depth_map(const std::vector<ReductionRecord>& records);

enum class MapMetric { pearson, spearman, jsd, emd, histogram };

MapMetric map_metric_from_name(const std::string& name);
std::string map_metric_name(MapMetric metric);

// Correlations act on the flattened maps; jsd/emd/histogram first
// L1-normalize them into distributions. emd uses the exact transportation
// solve over Euclidean grid distances.
double depth_map_similarity(const DepthMap& a, const DepthMap& b, MapMetric metric);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Spearman's rho: Pearson correlation of average ranks.
double rank_correlation(const std::vector<double>& x, const std::vector<double>& y);

// Exact optimal transport cost between two nonnegative mass vectors of
// equal total under the given ground-distance matrix (transportation
// simplex; supports up to 1024 bins per side).
double emd(const Vector& supply, const Vector& demand, const Matrix& ground_distance);

Matrix grid_ground_distance(Grid grid);

} // namespace tokred::metrics
