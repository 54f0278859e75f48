#pragma once

#include "tma/types.hpp"

#include <json.hpp>

namespace tma {

/// f(s) = 1 / (1 + exp(A s + B)). A < 0 makes f increasing in the score.
struct PlattCalibrator {
  double A = -1.0;
  double B = 0.0;

  double operator()(double s) const;
};

void to_json(nlohmann::json& j, const PlattCalibrator& c);
void from_json(const nlohmann::json& j, PlattCalibrator& c);

/// Maximum-likelihood sigmoid fit with the (N+ + 1)/(N+ + 2), 1/(N- + 2)
/// target smoothing, solved by damped Newton iterations.
///
/// Throws CalibrationUnavailable when only one class is present or when the
/// fit comes out non-increasing (A >= 0); callers keep the default A=-1, B=0.
PlattCalibrator platt_fit(std::span<const double> scores, std::span<const int> labels);

}  // namespace tma
