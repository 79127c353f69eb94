#pragma once

#include <functional>

#include <Eigen/Core>

namespace mammoforge {

struct NelderMeadOptions {
  int max_iterations = 200;
  /// Converged once the largest pairwise vertex distance falls below this.
  double tolerance = 1e-4;
};

struct NelderMeadResult {
  Eigen::VectorXd best;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Derivative-free downhill simplex minimisation.
///
/// The initial simplex is `start` plus one vertex per coordinate displaced by
/// `steps[i]`. Standard coefficients: reflection 1, expansion 2, contraction
/// 0.5, shrink 0.5. Fully deterministic.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& start, const Eigen::VectorXd& steps,
                             const NelderMeadOptions& options);

}  // namespace mammoforge
