#pragma once
#include <Eigen/Dense>
#include <vector>

#include "core/error.hpp"

namespace gom {

struct FlowProblem {
  Eigen::VectorXd supply;   // m sources
  Eigen::VectorXd demand;   // n sinks; sums must match within 1e-9 relative
  Eigen::MatrixXd cost;     // m x n
};

struct FlowSolution {
  struct Arc {
    int i, j;
    double flow;
  };
  std::vector<Arc> arcs;
  double objective = 0.0;
  Eigen::VectorXd u, v;  // optimal duals: u_i + v_j <= c_ij, equality on support
  int pivots = 0;
};

// Balanced transportation problem via the transportation (network) simplex.
// Deterministic pivoting (most-negative reduced cost, lexicographic ties,
// Bland fallback); basic solutions are integral in the input unit.
FlowSolution solve_transport(const FlowProblem& p);

struct AssignSolution {
  std::vector<int> match;  // per row: column index
  double objective = 0.0;  // sum (capacity_one) or max-independent semantics per caller
};

// capacity_one=true: optimal 1:1 assignment (rows m <= cols n), Hungarian.
// capacity_one=false: per-row argmin with lowest-index ties.
AssignSolution solve_assignment(const Eigen::MatrixXd& cost, bool capacity_one);

struct BottleneckSolution {
  std::vector<int> match;
  double value = 0.0;  // minimal achievable maximum matched cost
};

// capacity_one=true: min over perfect matchings of the max edge (threshold search
// + augmenting paths, deterministic lowest-index matching). false: per-row nearest.
BottleneckSolution solve_bottleneck(const Eigen::MatrixXd& cost, bool capacity_one);

// Minimal threshold t such that a feasible transportation plan exists using only
// arcs with cost <= t (supplies/demands as in FlowProblem). Max-flow feasibility.
double bottleneck_transport_value(const FlowProblem& p);

}  // namespace gom
