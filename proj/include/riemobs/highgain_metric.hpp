#pragma once

#include <json.hpp>
#include <vector>

#include "riemobs/linalg.hpp"
#include "riemobs/metric_field.hpp"
#include "riemobs/system_model.hpp"

namespace riemobs {

struct ImmersionData {
  int order = 0;     // number of stacked Lie outputs
  int out_dim = 0;   // m
  int state_dim = 0;
  SystemModel system;
  double h_lower = 0.0, h_upper = 0.0;  // extreme eigenvalues of dH^T dH over samples
  double nu_sampled = 0.0;              // before the safety factor
  double nu = 0.0;
  double safety = 2.0;
  std::size_t sample_count = 0;

  Vec H(const Vec& x) const;
  Mat dH(const Vec& x) const;
  Vec top(const Vec& x) const;   // L_f^{order} h
  Mat dtop(const Vec& x) const;  // its Jacobian
  Mat dLfH(const Vec& x) const;  // Jacobian of L_f H (stack of orders 1..order)
};

// nu is the smallest sampled ratio |dH v| / |dL v| (generalized eigenvalue),
// divided by `safety`.
ImmersionData build_immersion(const SystemModel& sys, int order, const std::vector<Vec>& samples,
                              double safety = 2.0);

// L_f H - A H - B L_f^{order} h
Vec structural_residual(const ImmersionData& imm, const Vec& x);

// chain-of-integrators triple for `order` blocks of width m
struct ChainMatrices {
  Mat a, b, c;
};
ChainMatrices chain_matrices(int order, int m);

struct LmiCertificate {
  int order = 0, out_dim = 0;
  Mat p_nu;
  Mat k_nu;
  double q_margin = 0.0;
  double nu = 0.0;
  double gain = 0.0;
  double residual_max_eig = 0.0;      // equilibrated (unit diagonal) residual
  double residual_max_eig_raw = 0.0;  // accurate largest eigenvalue of the raw residual
  bool negative_definite = false;     // Cholesky of minus the residual succeeded

  nlohmann::json to_json() const;
};

Mat lmi_residual(const Mat& p, const Mat& k, double q, double nu, int order, int m);

struct ResidualCheck {
  double max_eig_equilibrated = 0.0;
  double max_eig_raw = 0.0;
  bool negative_definite = false;
};
// inertia-preserving checks that stay reliable for strongly graded matrices
ResidualCheck check_negative(const Mat& m);

LmiCertificate solve_lmi(int order, int m, double nu);
ResidualCheck verify_certificate(const LmiCertificate& cert);

MetricField immersion_metric(const ImmersionData& imm, const LmiCertificate& cert);
// dLfH^T P dH + dH^T P dLfH
Mat immersion_lie_derivative(const ImmersionData& imm, const LmiCertificate& cert, const Vec& x);
// q h_lower / (lambda_max(P) h_upper)
double decay_margin(const ImmersionData& imm, const LmiCertificate& cert);

}  // namespace riemobs
