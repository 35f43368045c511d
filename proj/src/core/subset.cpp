#include "core/subset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <queue>

#include "core/error.hpp"
#include "core/qp.hpp"

namespace gom {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Incremental bookkeeping for the uniform-weight quadratic objective:
// f(S) = c0 + lin/|S| + quad/|S|^2 with lin = sum b_i, quad = sum_{i,j} Q_ij over S.
struct QuadState {
  const Eigen::MatrixXd* Q = nullptr;
  const Eigen::VectorXd* b = nullptr;
  double c0 = 0.0;
  Eigen::VectorXd rowsum;  // rowsum[k] = sum_{j in S} Q_kj for every k
  double lin = 0.0;
  double quad = 0.0;
  std::vector<int> members;  // ascending during enumeration

  QuadState(const Eigen::MatrixXd& Qm, const Eigen::VectorXd& bv, double c)
      : Q(&Qm), b(&bv), c0(c), rowsum(Eigen::VectorXd::Zero(bv.size())) {}

  int size() const { return static_cast<int>(members.size()); }

  double value() const {
    const double s = static_cast<double>(members.size());
    return c0 + lin / s + quad / (s * s);
  }

  // Objective if k were added, without mutating state.
  double value_if_added(int k) const {
    const double s = static_cast<double>(members.size()) + 1.0;
    const double l = lin + (*b)[k];
    const double q = quad + (*Q)(k, k) + 2.0 * rowsum[k];
    return c0 + l / s + q / (s * s);
  }

  void add(int k) {
    quad += (*Q)(k, k) + 2.0 * rowsum[k];
    lin += (*b)[k];
    rowsum += Q->col(k);
    members.push_back(k);
  }

  void remove(int k) {
    rowsum -= Q->col(k);
    quad -= (*Q)(k, k) + 2.0 * rowsum[k];
    lin -= (*b)[k];
    members.erase(std::find(members.begin(), members.end(), k));
  }
};

void record(const QuadState& st, SubsetResult& best) {
  ++best.evaluated;
  const double v = st.value();
  if (v < best.objective) {
    best.objective = v;
    best.subset = st.members;
    std::sort(best.subset.begin(), best.subset.end());
  }
}

// Depth-first take/skip enumeration. Each subset is scored exactly once, at the
// moment its largest element is taken. Take is explored before skip so that
// among equal objectives the lexicographically earliest subset is kept.
void enumerate(QuadState& st, int next, int n0, int smin, int smax, SubsetResult& best) {
  if (next == n0) return;
  if (st.size() + (n0 - next) < smin) return;  // cannot reach the minimum size
  if (st.size() < smax) {
    st.add(next);
    if (st.size() >= smin) record(st, best);
    enumerate(st, next + 1, n0, smin, smax, best);
    st.remove(next);
  }
  enumerate(st, next + 1, n0, smin, smax, best);
}

// Greedy growth to each admissible size followed by single-swap descent.
void greedy_and_swaps(QuadState& st, int n0, int smin, int smax, SubsetResult& best) {
  std::vector<char> in(static_cast<size_t>(n0), 0);
  for (int target = 1; target <= smax; ++target) {
    // grow by the element with the best resulting objective (lowest index on ties)
    int pick = -1;
    double pv = kInf;
    for (int k = 0; k < n0; ++k) {
      if (in[static_cast<size_t>(k)]) continue;
      const double v = st.value_if_added(k);
      if (v < pv) {
        pv = v;
        pick = k;
      }
    }
    st.add(pick);
    in[static_cast<size_t>(pick)] = 1;
    if (target < smin) continue;
    record(st, best);
    // swap descent at this size
    for (int sweep = 0; sweep < 50; ++sweep) {
      bool improved = false;
      for (int i = 0; i < n0; ++i) {
        if (!in[static_cast<size_t>(i)]) continue;
        st.remove(i);
        int rep = i;
        double rv = st.value_if_added(i);
        for (int j = 0; j < n0; ++j) {
          if (in[static_cast<size_t>(j)] && j != i) continue;
          if (j == i) continue;
          const double v = st.value_if_added(j);
          if (v < rv - 1e-13) {
            rv = v;
            rep = j;
          }
        }
        st.add(rep);
        if (rep != i) {
          in[static_cast<size_t>(i)] = 0;
          in[static_cast<size_t>(rep)] = 1;
          improved = true;
          record(st, best);
        }
      }
      if (!improved) break;
    }
  }
  // restore empty state for the caller
  for (int k = 0; k < n0; ++k) {
    if (in[static_cast<size_t>(k)]) st.remove(k);
  }
}

struct BbNode {
  std::vector<int8_t> fixed;  // -1 free, 0 out, 1 in
  double bound = -kInf;
};

struct BbOrder {
  bool operator()(const std::shared_ptr<BbNode>& a, const std::shared_ptr<BbNode>& b) const {
    return a->bound > b->bound;  // min-heap on bound
  }
};

// Continuous relaxation of the fixed-size problem at a node: minimize
// z'(Q/s^2)z + (b/s)'z over z in [0,1]^n0 with sum z = s and the decided
// coordinates pinned. Returns the relaxation value and solution.
double node_relaxation(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b, int s,
                       const std::vector<int8_t>& fixed, Eigen::VectorXd* zstar) {
  const int n0 = static_cast<int>(b.size());
  QpProblem prob;
  prob.init(n0);
  prob.set_Q_dense(2.0 * Q / (static_cast<double>(s) * s));
  prob.c = b / static_cast<double>(s);
  Eigen::SparseMatrix<double> A(1, n0);
  A.reserve(Eigen::VectorXi::Constant(n0, 1));
  for (int k = 0; k < n0; ++k) A.insert(0, k) = 1.0;
  A.makeCompressed();
  prob.Aeq = A;
  prob.beq = Eigen::VectorXd::Constant(1, static_cast<double>(s));
  prob.lb = Eigen::VectorXd::Zero(n0);
  prob.ub = Eigen::VectorXd::Ones(n0);
  for (int k = 0; k < n0; ++k) {
    if (fixed[static_cast<size_t>(k)] == 0) prob.ub[k] = 0.0;
    if (fixed[static_cast<size_t>(k)] == 1) prob.lb[k] = 1.0;
  }
  QpOptions qo;
  qo.eps_abs = 1e-8;
  qo.eps_rel = 1e-8;
  qo.polish = false;
  const QpSolution sol = solve_qp(prob, qo);
  *zstar = sol.x;
  return sol.objective;
}

// Best-first branch and bound for one target size. Bounds come from the convex
// relaxation; a safety margin on pruning absorbs solver tolerance.
bool branch_and_bound_size(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b, double c0,
                           int s, long long* budget, QuadState& st, SubsetResult& best) {
  const int n0 = static_cast<int>(b.size());
  std::priority_queue<std::shared_ptr<BbNode>, std::vector<std::shared_ptr<BbNode>>, BbOrder> open;
  auto root = std::make_shared<BbNode>();
  root->fixed.assign(static_cast<size_t>(n0), -1);
  open.push(root);
  while (!open.empty()) {
    if (--(*budget) < 0) return false;
    auto node = open.top();
    open.pop();
    const double margin = 1e-6 * (1.0 + std::abs(best.objective));
    if (best.objective < kInf && node->bound >= best.objective + margin) continue;

    int nin = 0, nout = 0;
    for (int k = 0; k < n0; ++k) {
      if (node->fixed[static_cast<size_t>(k)] == 1) ++nin;
      if (node->fixed[static_cast<size_t>(k)] == 0) ++nout;
    }
    if (nin > s || n0 - nout < s) continue;  // infeasible for this size

    Eigen::VectorXd z;
    double bound;
    try {
      bound = c0 + node_relaxation(Q, b, s, node->fixed, &z);
    } catch (const Error&) {
      continue;  // relaxation infeasible under the pins
    }
    if (best.objective < kInf && bound >= best.objective + margin) continue;

    // round: take the s largest coordinates (pins included automatically)
    std::vector<int> order(static_cast<size_t>(n0));
    for (int k = 0; k < n0; ++k) order[static_cast<size_t>(k)] = k;
    std::stable_sort(order.begin(), order.end(), [&](int a, int bb) { return z[a] > z[bb]; });
    {
      std::vector<int> cand(order.begin(), order.begin() + s);
      for (int k : cand) st.add(k);
      record(st, best);
      for (int k : cand) st.remove(k);
    }

    // branch on the most fractional free coordinate
    int pick = -1;
    double frac = -1.0;
    for (int k = 0; k < n0; ++k) {
      if (node->fixed[static_cast<size_t>(k)] != -1) continue;
      const double f = 0.5 - std::abs(z[k] - 0.5);
      if (f > frac + 1e-12) {
        frac = f;
        pick = k;
      }
    }
    if (pick < 0 || frac < 1e-9) continue;  // integral relaxation: bound equals best achievable here
    for (int val = 1; val >= 0; --val) {
      auto child = std::make_shared<BbNode>(*node);
      child->fixed[static_cast<size_t>(pick)] = static_cast<int8_t>(val);
      child->bound = bound;
      open.push(child);
    }
  }
  return true;
}

}  // namespace

SubsetResult subset_search_quadratic(const Eigen::MatrixXd& Q, const Eigen::VectorXd& b,
                                     double c0, const SubsetOptions& opts) {
  const int n0 = static_cast<int>(b.size());
  require(n0 >= 1, Errc::invalid_argument, "subset search needs at least one element");
  require(Q.rows() == n0 && Q.cols() == n0, Errc::dimension, "subset Q must be n0 x n0");
  const int smin = std::max(1, opts.min_size);
  const int smax = opts.max_size < 0 ? n0 : std::min(opts.max_size, n0);
  require(smin <= smax, Errc::invalid_argument, "subset size window is empty");

  SubsetResult best;
  best.objective = kInf;
  QuadState st(Q, b, c0);

  if (n0 <= opts.enum_limit) {
    enumerate(st, 0, n0, smin, smax, best);
    best.exact = true;
    return best;
  }

  greedy_and_swaps(st, n0, smin, smax, best);
  if (n0 <= opts.bb_limit) {
    long long budget = opts.node_budget;
    bool complete = true;
    for (int s = smin; s <= smax && complete; ++s) {
      complete = branch_and_bound_size(Q, b, c0, s, &budget, st, best);
    }
    best.exact = complete;
  }
  return best;
}

SubsetResult subset_search_generic(int n0,
                                   const std::function<double(const std::vector<int>&)>& value,
                                   const SubsetOptions& opts) {
  require(n0 >= 1, Errc::invalid_argument, "subset search needs at least one element");
  const int smin = std::max(1, opts.min_size);
  const int smax = opts.max_size < 0 ? n0 : std::min(opts.max_size, n0);
  require(smin <= smax, Errc::invalid_argument, "subset size window is empty");

  SubsetResult best;
  best.objective = kInf;
  auto record_set = [&](std::vector<int> s) {
    ++best.evaluated;
    std::sort(s.begin(), s.end());
    const double v = value(s);
    if (v < best.objective) {
      best.objective = v;
      best.subset = std::move(s);
    }
  };

  if (n0 <= opts.enum_limit) {
    std::vector<int> cur;
    // take/skip recursion mirroring the quadratic enumerator
    std::function<void(int)> rec = [&](int next) {
      if (next == n0) return;
      if (static_cast<int>(cur.size()) + (n0 - next) < smin) return;
      if (static_cast<int>(cur.size()) < smax) {
        cur.push_back(next);
        if (static_cast<int>(cur.size()) >= smin) record_set(cur);
        rec(next + 1);
        cur.pop_back();
      }
      rec(next + 1);
    };
    rec(0);
    best.exact = true;
    return best;
  }

  // greedy growth with swap descent on the callback
  std::vector<char> in(static_cast<size_t>(n0), 0);
  std::vector<int> cur;
  for (int target = 1; target <= smax; ++target) {
    int pick = -1;
    double pv = kInf;
    for (int k = 0; k < n0; ++k) {
      if (in[static_cast<size_t>(k)]) continue;
      cur.push_back(k);
      const double v = value(cur);
      cur.pop_back();
      if (v < pv) {
        pv = v;
        pick = k;
      }
    }
    cur.push_back(pick);
    std::sort(cur.begin(), cur.end());
    in[static_cast<size_t>(pick)] = 1;
    if (target < smin) continue;
    record_set(cur);
    for (int sweep = 0; sweep < 20; ++sweep) {
      bool improved = false;
      for (int i = 0; i < n0 && !improved; ++i) {
        if (!in[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < n0; ++j) {
          if (in[static_cast<size_t>(j)]) continue;
          std::vector<int> trial = cur;
          std::replace(trial.begin(), trial.end(), i, j);
          std::sort(trial.begin(), trial.end());
          const double v = value(trial);
          ++best.evaluated;
          if (v < best.objective - 1e-13) {
            best.objective = v;
            best.subset = trial;
            cur = trial;
            in[static_cast<size_t>(i)] = 0;
            in[static_cast<size_t>(j)] = 1;
            improved = true;
            break;
          }
        }
      }
      if (!improved) break;
    }
  }
  return best;
}

}  // namespace gom
