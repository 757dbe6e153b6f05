#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntr/grpo.hpp"
#include "ntr/jsonl.hpp"

namespace ntr {

struct ScalingPoint {
  double compute = 0.0;
  double accuracy = 0.0;
  std::size_t step = 0;
};

/// P(C) = A * C^-alpha + P*.
template <typename Scalar>
Scalar power_law(Scalar compute, Scalar a, Scalar alpha, Scalar p_star) {
  return a * std::pow(compute, -alpha) + p_star;
}

struct ScalingFit {
  double a = 0.0;
  double alpha = 0.0;
  double p_star = 0.0;
  double r_squared = 0.0;
  double objective = 0.0;  // residual sum of squares
  std::vector<ScalingPoint> points;

  double predict(double compute) const { return power_law(compute, a, alpha, p_star); }
};

struct FitOptions {
  double alpha_min = 0.01;
  double alpha_max = 2.0;
  std::size_t grid_points = 200;
};

// Probed log records become points with C = tokens_processed * flops_per_token.
// When `steps` is given only those steps are kept. Decreasing token counts are
// a log-corruption error.
std::vector<ScalingPoint> steps_to_compute(std::span<const TrainLogRecord> log, double flops_per_token,
                                           const std::optional<std::vector<std::size_t>>& steps = {});

// Log-spaced alpha grid used by the fitter.
std::vector<double> alpha_grid(const FitOptions& options = {});

struct LinearFit {
  double a = 0.0;
  double p_star = 0.0;
  double objective = 0.0;
};

// Least-squares (A, P*) for a fixed alpha.
LinearFit fit_linear_at(std::span<const ScalingPoint> points, double alpha);

/// Least-squares power-law fit: grid over alpha with closed-form (A, P*) at
/// each candidate, then golden-section refinement between the neighbours of
/// the best grid point. Deterministic.
ScalingFit fit_power_law(std::span<const ScalingPoint> points, const FitOptions& options = {});

// 1 - SS_res / SS_tot; 1 when the accuracies have zero variance.
double r_squared(const ScalingFit& fit, std::span<const ScalingPoint> points);

std::vector<ScalingPoint> read_points(const std::string& path);
void write_points(const std::string& path, std::span<const ScalingPoint> points);
OrderedJson fit_to_json(const ScalingFit& fit);

}  // namespace ntr
