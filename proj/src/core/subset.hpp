#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace gom {

// Result of minimizing a set function over subsets of {0, ..., n0-1}.
struct SubsetResult {
  std::vector<int> subset;  // chosen indices, ascending
  double objective = 0.0;
  bool exact = false;       // search proved global optimality
  long long evaluated = 0;  // candidate subsets scored
};

struct SubsetOptions {
  int min_size = 1;
  int max_size = -1;          // -1 means n0
  int enum_limit = 20;        // exhaustive enumeration up to this many elements
  int bb_limit = 30;          // branch and bound up to this many elements
  long long node_budget = 200000;  // branch-and-bound node cap before falling back
};

// Minimizes f(S) = c0 + (1/|S|) sum_{i in S} b_i + (1/|S|^2) sum_{i,j in S} Q_ij
// over nonempty subsets with |S| in [min_size, max_size]. This is the uniform-weight
// objective W = e_S/|S| for a quadratic criterion c0 + b'W + W'QW. Q must be
// symmetric positive semidefinite for the branch-and-bound bounds to be valid.
SubsetResult subset_search_quadratic(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b,
                                     double c0, const SubsetOptions& opts = {});

// Minimizes an arbitrary set function given by a value callback. Exhaustive for
// n0 <= enum_limit, greedy growth plus swap descent beyond (exact = false).
SubsetResult subset_search_generic(int n0, const std::function<double(const std::vector<int>&)>& value,
                                   const SubsetOptions& opts = {});

}  // namespace gom
