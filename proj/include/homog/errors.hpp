#pragma once
#include <stdexcept>
#include <string>

namespace homog {

struct HomogError : std::runtime_error {
  explicit HomogError(const std::string& msg) : std::runtime_error(msg) {}
};

#define HOMOG_ERROR_TYPE(NAME)                                         \
  struct NAME : HomogError {                                           \
    explicit NAME(const std::string& msg) : HomogError(#NAME ": " + msg) {} \
  }

HOMOG_ERROR_TYPE(DegenerateKernel);
HOMOG_ERROR_TYPE(NoSpectralGap);
HOMOG_ERROR_TYPE(SolveFailure);
HOMOG_ERROR_TYPE(DegenerateGerm);
HOMOG_ERROR_TYPE(BranchTrackingFailure);
HOMOG_ERROR_TYPE(CoefficientZero);
HOMOG_ERROR_TYPE(IdentityViolation);
HOMOG_ERROR_TYPE(SingularBasis);
HOMOG_ERROR_TYPE(RankDeficientSymbol);
HOMOG_ERROR_TYPE(SingularPointValue);
HOMOG_ERROR_TYPE(VoigtReussViolation);
HOMOG_ERROR_TYPE(SolvabilityViolation);
HOMOG_ERROR_TYPE(ClusterResolutionFailure);
HOMOG_ERROR_TYPE(ConfigError);
HOMOG_ERROR_TYPE(IoError);

#undef HOMOG_ERROR_TYPE

}  // namespace homog
