#include "tokred/align.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>

namespace tokred::align {

namespace {

Matrix center_columns(const Matrix& m) {
    if (m.rows() < 2 || m.cols() < 1) throw Error::data("alignment needs at least two samples");
    if (!m.allFinite()) throw Error::data("feature matrix must be finite");
    return m.rowwise() - m.colwise().mean();
}

// Inverse square root of a symmetric PSD matrix with relative truncation
// of near-null directions.
Matrix inverse_sqrt(const Matrix& sym, int* rank_out) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    const Vector values = eig.eigenvalues();
    const double cutoff = values.maxCoeff() * 1e-12;
    int rank = 0;
    for (int i = 0; i < values.size(); ++i)
        if (values(i) > cutoff) ++rank;
    if (rank == 0) throw Error::data("degenerate covariance: no usable components");
    Matrix result(sym.rows(), rank);
    int k = 0;
    for (int i = 0; i < values.size(); ++i) {
        if (values(i) <= cutoff) continue;
        result.col(k++) = eig.eigenvectors().col(i) / std::sqrt(values(i));
    }
    if (rank_out) *rank_out = rank;
    return result;
}

} // namespace

double procrustes_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error::data("procrustes needs matrices of identical shape");
    Matrix ca = center_columns(a);
    Matrix cb = center_columns(b);
    const double na = ca.norm();
    const double nb = cb.norm();
    if (na == 0.0 || nb == 0.0) throw Error::data("zero matrix after centering");
    ca /= na;
    cb /= nb;
    const Eigen::BDCSVD<Matrix> svd(ca.transpose() * cb);
    return 2.0 - 2.0 * svd.singularValues().sum();
}

double linear_cka(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw Error::data("cka needs matching sample counts");
    const Matrix ca = center_columns(a);
    const Matrix cb = center_columns(b);
    const double cross = (cb.transpose() * ca).squaredNorm();
    const double norm_a = (ca.transpose() * ca).norm();
    const double norm_b = (cb.transpose() * cb).norm();
    if (norm_a == 0.0 || norm_b == 0.0) throw Error::data("zero-variance input");
    return cross / (norm_a * norm_b);
}

double pwcca(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw Error::data("pwcca needs matching sample counts");
    const int n = static_cast<int>(a.rows());
    if (n <= std::max(a.cols(), b.cols()))
        throw Error::data("pwcca needs more samples than feature dimensions");
    const Matrix ca = center_columns(a);
    const Matrix cb = center_columns(b);

    const double ridge = 1e-10;
    const double denom = double(n - 1);
    Matrix cov_aa = (ca.transpose() * ca) / denom;
    Matrix cov_bb = (cb.transpose() * cb) / denom;
    cov_aa.diagonal().array() += ridge;
    cov_bb.diagonal().array() += ridge;
    const Matrix cov_ab = (ca.transpose() * cb) / denom;

    const Matrix whiten_a = inverse_sqrt(cov_aa, nullptr);
    const Matrix whiten_b = inverse_sqrt(cov_bb, nullptr);

    const Eigen::BDCSVD<Matrix> svd(whiten_a.transpose() * cov_ab * whiten_b,
                                    Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector correlations = svd.singularValues().cwiseMin(1.0).cwiseMax(0.0);
    const int components = static_cast<int>(correlations.size());

    // canonical variates of a, weighted by the mass of a's columns they carry
    const Matrix variates = ca * (whiten_a * svd.matrixU());  // n x components
    Vector weights(components);
    for (int k = 0; k < components; ++k)
        weights(k) = (variates.col(k).transpose() * ca).cwiseAbs().sum();
    const double total = weights.sum();
    if (!(total > 0.0)) throw Error::data("degenerate canonical components");
    return (weights / total).dot(correlations);
}

} // namespace tokred::align
