#pragma once

#include <Eigen/Dense>
#include <vector>

namespace riemobs {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Cholesky succeeds and the diagonal is strictly positive.
bool is_positive_definite(const Mat& m);

double min_eig(const Mat& sym);
double max_eig(const Mat& sym);

// extreme eigenvalues of the pencil (A, B) with B positive definite
double gen_min_eig(const Mat& a, const Mat& b);
double gen_max_eig(const Mat& a, const Mat& b);

// packed lower triangle, row-major: (0,0), (1,0), (1,1), (2,0), ...
std::vector<double> pack_lower(const Mat& sym);
Mat unpack_lower(const double* v, int n);

// orthonormal basis of ker(m) via QR of m^T; m is p x n with full row rank p
Mat kernel_basis(const Mat& m);


}  // namespace riemobs
