#include "tma/platt.hpp"

#include <cmath>

namespace tma {

double PlattCalibrator::operator()(double s) const {
  const double z = A * s + B;
  // Evaluate on the side that cannot overflow. Clamp away from exact 0 and 1
  // so graph weights stay strictly positive.
  const double f = z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
  constexpr double lo = 1e-300;
  if (f < lo) return lo;
  if (f >= 1.0) return std::nextafter(1.0, 0.0);
  return f;
}

void to_json(nlohmann::json& j, const PlattCalibrator& c) { j = {{"A", c.A}, {"B", c.B}}; }

void from_json(const nlohmann::json& j, PlattCalibrator& c) {
  c.A = j.at("A").get<double>();
  c.B = j.at("B").get<double>();
}

PlattCalibrator platt_fit(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw InvalidArgument("platt_fit: scores and labels differ in length");
  double npos = 0, nneg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) ++npos;
    else if (labels[i] == -1) ++nneg;
    else throw InvalidArgument("platt_fit: labels must be -1 or +1");
    if (!std::isfinite(scores[i])) throw InvalidArgument("platt_fit: non-finite score");
  }
  if (npos == 0 || nneg == 0)
    throw CalibrationUnavailable("platt_fit: need both positive and negative labels");

  const double hi = (npos + 1.0) / (npos + 2.0);
  const double lo = 1.0 / (nneg + 2.0);
  const std::size_t n = scores.size();
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = labels[i] == 1 ? hi : lo;

  auto nll = [&](double a, double b) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = scores[i] * a + b;
      f += z >= 0.0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  double A = 0.0, B = std::log((nneg + 1.0) / (npos + 1.0));
  double fval = nll(A, B);
  constexpr int max_iter = 100;
  constexpr double min_step = 1e-10, sigma = 1e-12, tol = 1e-5;
  for (int it = 0; it < max_iter; ++it) {
    double h11 = sigma, h22 = sigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = scores[i] * A + B;
      double p, q;
      if (z >= 0.0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += scores[i] * scores[i] * d2;
      h22 += d2;
      h21 += scores[i] * d2;
      const double d1 = t[i] - p;
      g1 += scores[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < tol && std::abs(g2) < tol) break;
    const double det = h11 * h22 - h21 * h21;
    const double dA = -(h22 * g1 - h21 * g2) / det;
    const double dB = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * dA + g2 * dB;
    double step = 1.0;
    while (step >= min_step) {
      const double nA = A + step * dA, nB = B + step * dB;
      const double nf = nll(nA, nB);
      if (nf < fval + 1e-4 * step * gd) {
        A = nA;
        B = nB;
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < min_step) break;
  }
  if (!(A < 0.0) || !std::isfinite(A) || !std::isfinite(B))
    throw CalibrationUnavailable("platt_fit: fitted sigmoid is not increasing in the score");
  return {A, B};
}

}  // namespace tma
