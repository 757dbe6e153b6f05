#include "ntr/scaling.hpp"

#include <algorithm>
#include <set>

#include <Eigen/Dense>

#include "ntr/error.hpp"

namespace ntr {

std::vector<ScalingPoint> steps_to_compute(std::span<const TrainLogRecord> log, double flops_per_token,
                                           const std::optional<std::vector<std::size_t>>& steps) {
  if (!(flops_per_token > 0.0)) {
    throw Error(ErrorCode::configuration, "flops per token must be positive");
  }
  std::vector<ScalingPoint> out;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (i > 0 && log[i].tokens_processed < log[i - 1].tokens_processed) {
      throw Error(ErrorCode::log_corruption, "tokens_processed decreases at step " +
                                                 std::to_string(log[i].step));
    }
    const auto& r = log[i];
    if (!r.probed || r.tokens_processed == 0) continue;
    if (steps && std::find(steps->begin(), steps->end(), r.step) == steps->end()) continue;
    out.push_back({static_cast<double>(r.tokens_processed) * flops_per_token, r.accuracy_on_eval_probe,
                   r.step});
  }
  return out;
}

std::vector<double> alpha_grid(const FitOptions& options) {
  std::vector<double> grid(options.grid_points);
  const double lo = std::log(options.alpha_min);
  const double hi = std::log(options.alpha_max);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double f = grid.size() == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(grid.size() - 1);
    grid[i] = std::exp(lo + f * (hi - lo));
  }
  return grid;
}

LinearFit fit_linear_at(std::span<const ScalingPoint> points, double alpha) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd design(n, 2);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = std::pow(points[static_cast<std::size_t>(i)].compute, -alpha);
    design(i, 1) = 1.0;
    target(i) = points[static_cast<std::size_t>(i)].accuracy;
  }
  // Centering the regressor makes the 2x2 system well conditioned.
  const double mean_x = design.col(0).mean();
  const double mean_y = target.mean();
  const Eigen::VectorXd dx = design.col(0).array() - mean_x;
  const double sxx = dx.squaredNorm();
  if (!(sxx > 0.0) || sxx <= 1e-24 * mean_x * mean_x * static_cast<double>(n)) {
    throw Error(ErrorCode::collinearity, "C^-alpha is constant across points at alpha=" +
                                             std::to_string(alpha));
  }
  LinearFit fit;
  fit.a = dx.dot(target.array().matrix() - Eigen::VectorXd::Constant(n, mean_y)) / sxx;
  fit.p_star = mean_y - fit.a * mean_x;
  fit.objective = (target - design * Eigen::Vector2d(fit.a, fit.p_star)).squaredNorm();
  return fit;
}

double r_squared(const ScalingFit& fit, std::span<const ScalingPoint> points) {
  if (points.empty()) {
    throw Error(ErrorCode::insufficient_data, "R^2 over no points");
  }
  double mean = 0.0;
  for (const auto& p : points) mean += p.accuracy;
  mean /= static_cast<double>(points.size());
  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (const auto& p : points) {
    ss_tot += (p.accuracy - mean) * (p.accuracy - mean);
    const double e = p.accuracy - fit.predict(p.compute);
    ss_res += e * e;
  }
  // Equal accuracies still leave rounding residue in ss_tot; treat that as zero variance.
  const double floor = static_cast<double>(points.size()) * std::pow(1e-12 * std::max(1.0, std::abs(mean)), 2);
  if (ss_tot <= floor) return 1.0;
  return 1.0 - ss_res / ss_tot;
}

ScalingFit fit_power_law(std::span<const ScalingPoint> points, const FitOptions& options) {
  std::set<double> distinct;
  for (const auto& p : points) {
    if (!(p.compute > 0.0) || !std::isfinite(p.compute) || !std::isfinite(p.accuracy)) {
      throw Error(ErrorCode::insufficient_data, "points need positive compute and finite accuracy");
    }
    distinct.insert(p.compute);
  }
  if (points.size() < 4 || distinct.size() < 3) {
    throw Error(ErrorCode::insufficient_data, "need at least 4 points with 3 distinct compute values");
  }
  if (options.grid_points < 3 || !(options.alpha_min > 0.0) || !(options.alpha_max > options.alpha_min)) {
    throw Error(ErrorCode::configuration, "invalid alpha grid");
  }

  // Fit on C / C_ref with C_ref the geometric mean so C^-alpha stays O(1) for
  // large compute; A converts back as A' * C_ref^alpha.
  double log_ref = 0.0;
  for (const auto& p : points) log_ref += std::log(p.compute);
  const double ref = std::exp(log_ref / static_cast<double>(points.size()));
  std::vector<ScalingPoint> scaled(points.begin(), points.end());
  for (auto& p : scaled) p.compute /= ref;

  const auto grid = alpha_grid(options);
  std::size_t best = 0;
  LinearFit best_fit = fit_linear_at(scaled, grid[0]);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const auto f = fit_linear_at(scaled, grid[i]);
    if (f.objective < best_fit.objective) {
      best = i;
      best_fit = f;
    }
  }

  double lo = grid[best == 0 ? 0 : best - 1];
  double hi = grid[std::min(best + 1, grid.size() - 1)];
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  auto objective = [&](double alpha) { return fit_linear_at(scaled, alpha).objective; };
  double c = hi - ratio * (hi - lo);
  double d = lo + ratio * (hi - lo);
  double fc = objective(c);
  double fd = objective(d);
  for (int iter = 0; iter < 200 && hi - lo > 1e-14 * hi; ++iter) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - ratio * (hi - lo);
      fc = objective(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + ratio * (hi - lo);
      fd = objective(d);
    }
  }
  double alpha = 0.5 * (lo + hi);
  LinearFit refined = fit_linear_at(scaled, alpha);
  if (!(refined.objective <= best_fit.objective)) {
    alpha = grid[best];
    refined = best_fit;
  }

  ScalingFit fit;
  fit.a = refined.a * std::pow(ref, alpha);
  fit.alpha = alpha;
  fit.p_star = refined.p_star;
  fit.objective = refined.objective;
  fit.points.assign(points.begin(), points.end());
  fit.r_squared = r_squared(fit, points);
  return fit;
}

std::vector<ScalingPoint> read_points(const std::string& path) {
  std::vector<ScalingPoint> out;
  read_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
    out.push_back({j.at("compute").get<double>(), j.at("accuracy").get<double>(),
                   j.value("step", std::size_t{0})});
  });
  return out;
}

void write_points(const std::string& path, std::span<const ScalingPoint> points) {
  std::vector<OrderedJson> records;
  for (const auto& p : points) {
    OrderedJson j;
    j["step"] = p.step;
    j["compute"] = p.compute;
    j["accuracy"] = p.accuracy;
    records.push_back(std::move(j));
  }
  write_jsonl(path, records);
}

OrderedJson fit_to_json(const ScalingFit& fit) {
  OrderedJson j;
  j["A"] = fit.a;
  j["alpha"] = fit.alpha;
  j["P_star"] = fit.p_star;
  j["r_squared"] = fit.r_squared;
  return j;
}

}  // namespace ntr
