#pragma once

#include <stdexcept>
#include <string>

namespace riemobs {

enum class ErrorCode {
  DomainExit,
  StepFailure,
  DomainError,
  SingularMetric,
  PartialsUnavailable,
  ShootingDiverged,
  SingularJacobian,
  NotConverged,
  BlowUp,
  SingularBeta,
  LieOutputsMissing,
  ImmersionDegenerate,
  Infeasible,
  NuMismatch,
  WeightsInvalid,
  RankDeficient,
  IntegrationFailure,
  SingularPi,
  SingularGrammian,
  OriginSingularity,
  GridOutOfRange,
  GridBuildFailed,
  EmptyKernel,
  Config,
};

const char* error_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code), detail_(what) {}
  ErrorCode code() const { return code_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace riemobs
