#include "tokred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

namespace tokred::metrics {

namespace {

// Transportation simplex over the dense bipartite problem. The basis is a
// spanning tree of row and column nodes; pivots follow the most-negative
// reduced cost and fall back to Bland's rule after a pivot budget so
// degenerate problems cannot cycle.
class TransportSolver {
public:
    TransportSolver(std::vector<double> supply, std::vector<double> demand, const Matrix& cost)
        : supply_(std::move(supply)), demand_(std::move(demand)), cost_(cost),
          rows_(static_cast<int>(supply_.size())), cols_(static_cast<int>(demand_.size())) {}

    double solve() {
        northwest_corner();
        const double scale = std::max(1.0, cost_.cwiseAbs().maxCoeff());
        const double tol = 1e-12 * scale;
        const long fast_budget = 256 + 64L * (rows_ + cols_);
        const long hard_cap = 4'000'000;
        for (long pivot = 0;; ++pivot) {
            if (pivot > hard_cap) throw Error::data("transportation solve did not terminate");
            compute_potentials();
            int enter_i = -1, enter_j = -1;
            if (pivot < fast_budget) {
                double most_negative = -tol;
                for (int i = 0; i < rows_; ++i) {
                    for (int j = 0; j < cols_; ++j) {
                        if (in_basis_(i, j)) continue;
                        const double reduced = cost_(i, j) - u_[i] - v_[j];
                        if (reduced < most_negative) {
                            most_negative = reduced;
                            enter_i = i;
                            enter_j = j;
                        }
                    }
                }
            } else {
                for (int i = 0; i < rows_ && enter_i < 0; ++i)
                    for (int j = 0; j < cols_; ++j)
                        if (!in_basis_(i, j) && cost_(i, j) - u_[i] - v_[j] < -tol) {
                            enter_i = i;
                            enter_j = j;
                            break;
                        }
            }
            if (enter_i < 0) break;
            pivot_step(enter_i, enter_j);
        }
        double total = 0.0;
        for (int i = 0; i < rows_; ++i)
            for (int j = 0; j < cols_; ++j)
                if (in_basis_(i, j)) total += flow_(i, j) * cost_(i, j);
        return total;
    }

private:
    void northwest_corner() {
        flow_ = Matrix::Zero(rows_, cols_);
        in_basis_ = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(rows_, cols_,
                                                                                  false);
        std::vector<double> a = supply_;
        std::vector<double> b = demand_;
        int i = 0, j = 0;
        while (true) {
            const double f = std::min(a[i], b[j]);
            flow_(i, j) = f;
            in_basis_(i, j) = true;
            a[i] -= f;
            b[j] -= f;
            if (i == rows_ - 1 && j == cols_ - 1) break;
            if (i < rows_ - 1 && (a[i] <= 0.0 || j == cols_ - 1))
                ++i;
            else
                ++j;
        }
    }

    // u_i + v_j = c_ij over the basis tree, anchored at u_0 = 0.
    void compute_potentials() {
        u_.assign(rows_, 0.0);
        v_.assign(cols_, 0.0);
        std::vector<char> row_done(rows_, 0), col_done(cols_, 0);
        std::deque<int> queue;  // rows as i, cols as rows_ + j
        row_done[0] = 1;
        queue.push_back(0);
        while (!queue.empty()) {
            const int node = queue.front();
            queue.pop_front();
            if (node < rows_) {
                for (int j = 0; j < cols_; ++j)
                    if (in_basis_(node, j) && !col_done[j]) {
                        v_[j] = cost_(node, j) - u_[node];
                        col_done[j] = 1;
                        queue.push_back(rows_ + j);
                    }
            } else {
                const int j = node - rows_;
                for (int i = 0; i < rows_; ++i)
                    if (in_basis_(i, j) && !row_done[i]) {
                        u_[i] = cost_(i, j) - v_[j];
                        row_done[i] = 1;
                        queue.push_back(i);
                    }
            }
        }
    }

    void pivot_step(int enter_i, int enter_j) {
        // unique tree path from row enter_i to column enter_j
        const int nodes = rows_ + cols_;
        std::vector<int> parent(nodes, -2);
        std::deque<int> queue;
        parent[enter_i] = -1;
        queue.push_back(enter_i);
        const int goal = rows_ + enter_j;
        while (!queue.empty() && parent[goal] == -2) {
            const int node = queue.front();
            queue.pop_front();
            if (node < rows_) {
                for (int j = 0; j < cols_; ++j)
                    if (in_basis_(node, j) && parent[rows_ + j] == -2) {
                        parent[rows_ + j] = node;
                        queue.push_back(rows_ + j);
                    }
            } else {
                const int j = node - rows_;
                for (int i = 0; i < rows_; ++i)
                    if (in_basis_(i, j) && parent[i] == -2) {
                        parent[i] = rows_ + j;
                        queue.push_back(i);
                    }
            }
        }
        if (parent[goal] == -2) throw Error::data("transportation basis lost connectivity");

        // path edges from enter_i outward alternate -theta, +theta, ...
        struct Cell {
            int i;
            int j;
        };
        std::vector<Cell> path;
        for (int node = goal; parent[node] != -1; node = parent[node]) {
            const int p = parent[node];
            if (node < rows_)
                path.push_back({node, p - rows_});
            else
                path.push_back({p, node - rows_});
        }
        std::reverse(path.begin(), path.end());

        double theta = std::numeric_limits<double>::infinity();
        int leave = -1;
        for (std::size_t e = 0; e < path.size(); e += 2) {
            const double f = flow_(path[e].i, path[e].j);
            if (f < theta) {
                theta = f;
                leave = static_cast<int>(e);
            }
        }
        for (std::size_t e = 0; e < path.size(); ++e) {
            double& f = flow_(path[e].i, path[e].j);
            f += (e % 2 == 0) ? -theta : theta;
        }
        in_basis_(path[leave].i, path[leave].j) = false;
        flow_(path[leave].i, path[leave].j) = 0.0;
        in_basis_(enter_i, enter_j) = true;
        flow_(enter_i, enter_j) = theta;
    }

    std::vector<double> supply_;
    std::vector<double> demand_;
    const Matrix& cost_;
    int rows_;
    int cols_;
    Matrix flow_;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> in_basis_;
    std::vector<double> u_;
    std::vector<double> v_;
};

} // namespace

double emd(const Vector& supply, const Vector& demand, const Matrix& ground_distance) {
    if (supply.size() != ground_distance.rows() || demand.size() != ground_distance.cols())
        throw Error::data("ground distance shape does not match the mass vectors");
    if ((supply.array() < 0.0).any() || (demand.array() < 0.0).any())
        throw Error::data("mass vectors must be nonnegative");
    const double total_supply = supply.sum();
    const double total_demand = demand.sum();
    if (!(total_supply > 0.0) || !(total_demand > 0.0))
        throw Error::data("mass vectors must carry positive total mass");
    if (std::abs(total_supply - total_demand) > 1e-9 * std::max(total_supply, total_demand))
        throw Error::data("supply and demand totals differ");

    // drop zero-mass bins; they cannot carry flow
    std::vector<int> rows, cols;
    for (int i = 0; i < supply.size(); ++i)
        if (supply(i) > 0.0) rows.push_back(i);
    for (int j = 0; j < demand.size(); ++j)
        if (demand(j) > 0.0) cols.push_back(j);
    if (rows.size() > 1024 || cols.size() > 1024)
        throw Error::data("exact transport solve supports at most 1024 bins per side");

    std::vector<double> a(rows.size()), b(cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) a[i] = supply(rows[i]);
    const double rebalance = total_supply / total_demand;
    for (std::size_t j = 0; j < cols.size(); ++j) b[j] = demand(cols[j]) * rebalance;

    Matrix cost(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            cost(i, j) = ground_distance(rows[i], cols[j]);

    TransportSolver solver(std::move(a), std::move(b), cost);
    return solver.solve();
}

} // namespace tokred::metrics
