#pragma once

#include "tokred/types.hpp"

namespace tokred::align {

// Orthogonal Procrustes distance between column-centered, Frobenius-
// normalized matrices: 2 - 2 * nuclear_norm(A^T B). Symmetric, in [0, 2],
// zero for any orthogonal rotation of the same features.
double procrustes_distance(const Matrix& a, const Matrix& b);

// Linear centered kernel alignment ||B^T A||_F^2 / (||A^T A||_F ||B^T B||_F)
// on column-centered inputs; invariant to isotropic scaling and orthogonal
// transforms of either argument.
double linear_cka(const Matrix& a, const Matrix& b);

// Projection-weighted CCA: canonical correlations of (a, b) weighted by
// how much of a's columns the canonical components explain. Asymmetric;
// call with arguments swapped for the reverse direction.
double pwcca(const Matrix& a, const Matrix& b);

} // namespace tokred::align
