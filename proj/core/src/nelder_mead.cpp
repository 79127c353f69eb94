#include "mammoforge/nelder_mead.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "mammoforge/error.hpp"

namespace mammoforge {
namespace {

double diameter(const std::vector<Eigen::VectorXd>& simplex) {
  double d = 0.0;
  for (std::size_t i = 0; i < simplex.size(); ++i) {
    for (std::size_t j = i + 1; j < simplex.size(); ++j) d = std::max(d, (simplex[i] - simplex[j]).norm());
  }
  return d;
}

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& start, const Eigen::VectorXd& steps,
                             const NelderMeadOptions& options) {
  const auto n = start.size();
  if (steps.size() != n || n == 0) throw ValidationError("nelder_mead: steps must match the start vector");

  std::vector<Eigen::VectorXd> simplex(n + 1, start);
  for (Eigen::Index i = 0; i < n; ++i) simplex[i + 1][i] += steps[i];
  std::vector<double> values(n + 1);
  for (Eigen::Index i = 0; i <= n; ++i) values[i] = objective(simplex[i]);

  std::vector<std::size_t> order(n + 1);
  NelderMeadResult result;
  const auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<Eigen::VectorXd> s(n + 1);
    std::vector<double> v(n + 1);
    for (std::size_t i = 0; i < order.size(); ++i) {
      s[i] = simplex[order[i]];
      v[i] = values[order[i]];
    }
    simplex.swap(s);
    values.swap(v);
  };

  sort_simplex();
  while (result.iterations < options.max_iterations) {
    if (diameter(simplex) < options.tolerance) {
      result.converged = true;
      break;
    }
    ++result.iterations;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) centroid += simplex[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd& worst = simplex[n];
    const Eigen::VectorXd reflected = centroid + (centroid - worst);
    const double fr = objective(reflected);

    if (fr < values[0]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - worst);
      const double fe = objective(expanded);
      if (fe < fr) {
        simplex[n] = expanded;
        values[n] = fe;
      } else {
        simplex[n] = reflected;
        values[n] = fr;
      }
    } else if (fr < values[n - 1]) {
      simplex[n] = reflected;
      values[n] = fr;
    } else {
      const bool outside = fr < values[n];
      const Eigen::VectorXd contracted =
          outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                  : Eigen::VectorXd(centroid + 0.5 * (worst - centroid));
      const double fc = objective(contracted);
      if (fc < (outside ? fr : values[n])) {
        simplex[n] = contracted;
        values[n] = fc;
      } else {
        for (Eigen::Index i = 1; i <= n; ++i) {
          simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
          values[i] = objective(simplex[i]);
        }
      }
    }
    sort_simplex();
  }
  if (!result.converged && diameter(simplex) < options.tolerance) result.converged = true;
  result.best = simplex[0];
  result.value = values[0];
  return result;
}

}  // namespace mammoforge
