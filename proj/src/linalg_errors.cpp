#include "riemobs/errors.hpp"
#include "riemobs/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace riemobs {

const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::DomainExit: return "DomainExit";
    case ErrorCode::StepFailure: return "StepFailure";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::SingularMetric: return "SingularMetric";
    case ErrorCode::PartialsUnavailable: return "PartialsUnavailable";
    case ErrorCode::ShootingDiverged: return "ShootingDiverged";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::BlowUp: return "BlowUp";
    case ErrorCode::SingularBeta: return "SingularBeta";
    case ErrorCode::LieOutputsMissing: return "LieOutputsMissing";
    case ErrorCode::ImmersionDegenerate: return "ImmersionDegenerate";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::NuMismatch: return "NuMismatch";
    case ErrorCode::WeightsInvalid: return "WeightsInvalid";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::IntegrationFailure: return "IntegrationFailure";
    case ErrorCode::SingularPi: return "SingularPi";
    case ErrorCode::SingularGrammian: return "SingularGrammian";
    case ErrorCode::OriginSingularity: return "OriginSingularity";
    case ErrorCode::GridOutOfRange: return "GridOutOfRange";
    case ErrorCode::GridBuildFailed: return "GridBuildFailed";
    case ErrorCode::EmptyKernel: return "EmptyKernel";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

bool is_positive_definite(const Mat& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!m.allFinite()) return false;
  Eigen::LLT<Mat> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) return false;
  return (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all();
}

double min_eig(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double max_eig(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(sym), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

double gen_min_eig(const Mat& a, const Mat& b) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(symmetrize(a), symmetrize(b),
                                                   Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  return es.eigenvalues()(0);
}

double gen_max_eig(const Mat& a, const Mat& b) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(symmetrize(a), symmetrize(b),
                                                   Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

std::vector<double> pack_lower(const Mat& sym) {
  std::vector<double> out;
  const int n = static_cast<int>(sym.rows());
  out.reserve(n * (n + 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) out.push_back(sym(i, j));
  return out;
}

Mat unpack_lower(const double* v, int n) {
  Mat m(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      m(i, j) = v[k];
      m(j, i) = v[k];
      ++k;
    }
  return m;
}

Mat kernel_basis(const Mat& m) {
  const int n = static_cast<int>(m.cols());
  const int p = static_cast<int>(m.rows());
  if (p >= n) return Mat(n, 0);
  Eigen::HouseholderQR<Mat> qr(m.transpose());
  Mat q = qr.householderQ() * Mat::Identity(n, n);
  return q.rightCols(n - p);
}

}  // namespace riemobs
