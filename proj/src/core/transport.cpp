#include "core/transport.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>

namespace gom {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Basis {
  // spanning tree over m+n nodes (sources 0..m-1, sinks m..m+n-1)
  int m, n;
  std::vector<std::vector<int>> adj;  // node -> arc ids
  std::vector<int> arc_i, arc_j;      // arc id -> (source row, sink col)
  std::vector<double> flow;

  int node_of_sink(int j) const { return m + j; }
};

}  // namespace

FlowSolution solve_transport(const FlowProblem& p) {
  const int m0 = static_cast<int>(p.supply.size());
  const int n0 = static_cast<int>(p.demand.size());
  require(p.cost.rows() == m0 && p.cost.cols() == n0, Errc::dimension, "transport: cost shape");
  double sa = p.supply.sum(), sb = p.demand.sum();
  require(std::abs(sa - sb) <= 1e-9 * std::max({1.0, std::abs(sa), std::abs(sb)}),
          Errc::invalid_argument, "transport: unbalanced supplies/demands");
  for (int i = 0; i < m0; ++i)
    require(p.supply(i) >= -1e-12, Errc::invalid_argument, "transport: negative supply");
  for (int j = 0; j < n0; ++j)
    require(p.demand(j) >= -1e-12, Errc::invalid_argument, "transport: negative demand");

  // compact away zero supplies/demands; their flows are zero
  std::vector<int> rows, cols;
  for (int i = 0; i < m0; ++i)
    if (p.supply(i) > 0) rows.push_back(i);
  for (int j = 0; j < n0; ++j)
    if (p.demand(j) > 0) cols.push_back(j);
  const int m = static_cast<int>(rows.size());
  const int n = static_cast<int>(cols.size());
  FlowSolution out;
  out.u = Eigen::VectorXd::Zero(m0);
  out.v = Eigen::VectorXd::Zero(n0);
  if (m == 0 || n == 0) return out;

  Eigen::VectorXd a(m), b(n);
  for (int i = 0; i < m; ++i) a(i) = p.supply(rows[i]);
  for (int j = 0; j < n; ++j) b(j) = p.demand(cols[j]);
  b *= a.sum() / b.sum();
  Eigen::MatrixXd C(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) C(i, j) = p.cost(rows[i], cols[j]);

  Basis bs;
  bs.m = m;
  bs.n = n;
  bs.adj.assign(m + n, {});
  auto add_arc = [&](int i, int j, double f) {
    int id = static_cast<int>(bs.arc_i.size());
    bs.arc_i.push_back(i);
    bs.arc_j.push_back(j);
    bs.flow.push_back(f);
    bs.adj[i].push_back(id);
    bs.adj[bs.node_of_sink(j)].push_back(id);
  };

  {  // northwest-corner initial basic feasible solution
    Eigen::VectorXd ar = a, br = b;
    int i = 0, j = 0;
    while (i < m && j < n) {
      double f = std::min(ar(i), br(j));
      add_arc(i, j, f);
      ar(i) -= f;
      br(j) -= f;
      bool row_done = ar(i) <= 0.0;
      bool col_done = br(j) <= 0.0;
      if (i == m - 1 && j == n - 1) break;
      if (row_done && col_done) {
        // degenerate: keep tree connected with a zero arc
        if (j < n - 1)
          ++j;
        else
          ++i;
      } else if (row_done) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  const int total_nodes = m + n;
  std::vector<double> pu(m), pv(n);
  std::vector<int> parent_node(total_nodes), parent_arc(total_nodes), order(total_nodes);

  auto compute_potentials = [&]() {
    std::vector<char> seen(total_nodes, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    pu[0] = 0.0;
    while (!q.empty()) {
      int node = q.front();
      q.pop();
      for (int id : bs.adj[node]) {
        int i = bs.arc_i[id], sj = bs.node_of_sink(bs.arc_j[id]);
        int other = (node == i) ? sj : i;
        if (seen[other]) continue;
        seen[other] = 1;
        if (other == sj)
          pv[bs.arc_j[id]] = C(i, bs.arc_j[id]) - pu[i];
        else
          pu[other] = C(other, bs.arc_j[id]) - pv[bs.arc_j[id]];
        q.push(other);
      }
    }
  };

  auto find_path = [&](int from, int to) {
    std::fill(parent_node.begin(), parent_node.end(), -1);
    std::fill(parent_arc.begin(), parent_arc.end(), -1);
    std::queue<int> q;
    q.push(from);
    parent_node[from] = from;
    while (!q.empty()) {
      int node = q.front();
      q.pop();
      if (node == to) return true;
      for (int id : bs.adj[node]) {
        int i = bs.arc_i[id], sj = bs.node_of_sink(bs.arc_j[id]);
        int other = (node == i) ? sj : i;
        if (parent_node[other] == -1) {
          parent_node[other] = node;
          parent_arc[other] = id;
          q.push(other);
        }
      }
    }
    return false;
  };

  const double tol = 1e-11 * std::max(1.0, C.cwiseAbs().maxCoeff());
  const int bland_after = 60 * (m + n);
  int pivots = 0;
  const int pivot_cap = 2000 * (m + n) + 10000;

  while (true) {
    compute_potentials();
    int ei = -1, ej = -1;
    double best = -tol;
    if (pivots < bland_after) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double rc = C(i, j) - pu[i] - pv[j];
          if (rc < best) {
            best = rc;
            ei = i;
            ej = j;
          }
        }
    } else {
      for (int i = 0; i < m && ei < 0; ++i)
        for (int j = 0; j < n; ++j) {
          double rc = C(i, j) - pu[i] - pv[j];
          if (rc < -tol) {
            ei = i;
            ej = j;
            break;
          }
        }
    }
    if (ei < 0) break;
    require(++pivots <= pivot_cap, Errc::numeric, "transport: pivot limit exceeded");

    bool ok = find_path(ei, bs.node_of_sink(ej));
    require(ok, Errc::numeric, "transport: basis tree disconnected");
    // cycle: entering arc (ei,ej) forward; walk back from sink to source.
    // Arcs traversed sink->source along the path are "forward" (gain flow)
    // if oriented source->sink in walk direction; classify by parity.
    double theta = kInf;
    int leave_id = -1;
    {
      int node = bs.node_of_sink(ej);
      bool incoming_forward = true;  // entering arc carries +theta into the sink
      (void)incoming_forward;
      // walk path, alternating: arcs pointing in the direction source->sink of
      // travel get -theta when travel goes sink->source etc. Determine sign per
      // arc: traveling from 'node' to parent; arc (i,j): if node == sink(j) and
      // parent == i, the arc is traversed sink->source => it LOSES theta when the
      // cycle is oriented to push +theta through the entering arc.
      while (parent_node[node] != node) {
        int par = parent_node[node];
        int id = parent_arc[node];
        bool arc_from_par_to_node = (par == bs.arc_i[id]);
        // cycle orientation: entering arc pushes flow source ei -> sink ej, so
        // travel direction node->par continues the cycle; arc aligned with
        // travel gains flow, opposed loses.
        bool gains = !arc_from_par_to_node;  // arc node->par means node is source
        // node->par travel: if arc goes par->node (par source), cycle moves
        // against arc => arc loses theta.
        if (!gains) {
          if (bs.flow[id] < theta || (bs.flow[id] == theta && (leave_id < 0 || id < leave_id))) {
            theta = bs.flow[id];
            leave_id = id;
          }
        }
        node = par;
      }
    }
    require(leave_id >= 0, Errc::numeric, "transport: no leaving arc");
    // apply theta along path
    {
      int node = bs.node_of_sink(ej);
      while (parent_node[node] != node) {
        int par = parent_node[node];
        int id = parent_arc[node];
        bool arc_from_par_to_node = (par == bs.arc_i[id]);
        bool gains = !arc_from_par_to_node;
        bs.flow[id] += gains ? theta : -theta;
        node = par;
      }
    }
    // replace leaving arc with entering arc
    {
      int li = bs.arc_i[leave_id], lj = bs.arc_j[leave_id];
      auto& ai = bs.adj[li];
      ai.erase(std::find(ai.begin(), ai.end(), leave_id));
      auto& aj = bs.adj[bs.node_of_sink(lj)];
      aj.erase(std::find(aj.begin(), aj.end(), leave_id));
      bs.arc_i[leave_id] = ei;
      bs.arc_j[leave_id] = ej;
      bs.flow[leave_id] = theta;
      bs.adj[ei].push_back(leave_id);
      bs.adj[bs.node_of_sink(ej)].push_back(leave_id);
    }
  }

  compute_potentials();
  out.pivots = pivots;
  out.objective = 0.0;
  for (size_t id = 0; id < bs.arc_i.size(); ++id) {
    if (bs.flow[id] <= 0.0) continue;
    FlowSolution::Arc arc;
    arc.i = rows[bs.arc_i[id]];
    arc.j = cols[bs.arc_j[id]];
    arc.flow = bs.flow[id];
    out.objective += arc.flow * p.cost.coeff(arc.i, arc.j);
    out.arcs.push_back(arc);
  }
  std::sort(out.arcs.begin(), out.arcs.end(), [](const auto& x, const auto& y) {
    return x.i != y.i ? x.i < y.i : x.j < y.j;
  });
  for (int i = 0; i < m; ++i) out.u(rows[i]) = pu[i];
  for (int j = 0; j < n; ++j) out.v(cols[j]) = pv[j];
  return out;
}

AssignSolution solve_assignment(const Eigen::MatrixXd& cost, bool capacity_one) {
  const int m = static_cast<int>(cost.rows());
  const int n = static_cast<int>(cost.cols());
  require(m >= 1 && n >= 1, Errc::dimension, "assignment: empty cost matrix");
  AssignSolution out;
  out.match.assign(m, -1);

  if (!capacity_one) {
    for (int i = 0; i < m; ++i) {
      int best = 0;
      for (int j = 1; j < n; ++j)
        if (cost(i, j) < cost(i, best)) best = j;
      out.match[i] = best;
      out.objective += cost(i, best);
    }
    return out;
  }

  require(m <= n, Errc::invalid_argument, "assignment: more rows than columns");
  // Hungarian (shortest augmenting paths with potentials), 1-based scratch
  std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p_match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= m; ++i) {
    p_match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p_match[j0], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j)
        if (!used[j]) {
          double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= n; ++j)
        if (used[j]) {
          u[p_match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p_match[j0] != 0);
    do {
      int j1 = way[j0];
      p_match[j0] = p_match[j1];
      j0 = j1;
    } while (j0);
  }
  for (int j = 1; j <= n; ++j)
    if (p_match[j] > 0) out.match[p_match[j] - 1] = j - 1;
  for (int i = 0; i < m; ++i) out.objective += cost(i, out.match[i]);
  return out;
}

namespace {

// Kuhn's augmenting paths restricted to edges with cost <= t; deterministic
// (rows in order, columns ascending).
bool threshold_matching(const Eigen::MatrixXd& cost, double t, std::vector<int>& match_row) {
  const int m = static_cast<int>(cost.rows());
  const int n = static_cast<int>(cost.cols());
  std::vector<int> match_col(n, -1);
  match_row.assign(m, -1);
  std::vector<char> used;
  std::function<bool(int)> try_row = [&](int i) {
    for (int j = 0; j < n; ++j) {
      if (cost(i, j) > t || used[j]) continue;
      used[j] = 1;
      if (match_col[j] < 0 || try_row(match_col[j])) {
        match_col[j] = i;
        match_row[i] = j;
        return true;
      }
    }
    return false;
  };
  for (int i = 0; i < m; ++i) {
    used.assign(n, 0);
    if (!try_row(i)) return false;
  }
  return true;
}

}  // namespace

BottleneckSolution solve_bottleneck(const Eigen::MatrixXd& cost, bool capacity_one) {
  const int m = static_cast<int>(cost.rows());
  const int n = static_cast<int>(cost.cols());
  require(m >= 1 && n >= 1, Errc::dimension, "bottleneck: empty cost matrix");
  BottleneckSolution out;

  if (!capacity_one) {
    out.match.assign(m, -1);
    for (int i = 0; i < m; ++i) {
      int best = 0;
      for (int j = 1; j < n; ++j)
        if (cost(i, j) < cost(i, best)) best = j;
      out.match[i] = best;
      out.value = std::max(out.value, cost(i, best));
    }
    return out;
  }

  require(m <= n, Errc::invalid_argument, "bottleneck: more rows than columns");
  std::vector<double> vals(cost.data(), cost.data() + m * n);
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  int lo = 0, hi = static_cast<int>(vals.size()) - 1;
  std::vector<int> match;
  require(threshold_matching(cost, vals[hi], match), Errc::infeasible,
          "bottleneck: no perfect matching exists");
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    if (threshold_matching(cost, vals[mid], match))
      hi = mid;
    else
      lo = mid + 1;
  }
  threshold_matching(cost, vals[hi], match);
  out.match = match;
  out.value = vals[hi];
  return out;
}

namespace {

// Dinic max-flow with real capacities on the bipartite transportation graph.
struct Dinic {
  struct Edge {
    int to;
    double cap;
    int rev;
  };
  std::vector<std::vector<Edge>> g;
  std::vector<int> level, iter;

  explicit Dinic(int n) : g(n), level(n), iter(n) {}

  void add_edge(int from, int to, double cap) {
    g[from].push_back({to, cap, static_cast<int>(g[to].size())});
    g[to].push_back({from, 0.0, static_cast<int>(g[from].size()) - 1});
  }

  bool bfs(int s, int t) {
    std::fill(level.begin(), level.end(), -1);
    std::queue<int> q;
    level[s] = 0;
    q.push(s);
    while (!q.empty()) {
      int v = q.front();
      q.pop();
      for (const auto& e : g[v])
        if (e.cap > 1e-14 && level[e.to] < 0) {
          level[e.to] = level[v] + 1;
          q.push(e.to);
        }
    }
    return level[t] >= 0;
  }

  double dfs(int v, int t, double f) {
    if (v == t) return f;
    for (int& i = iter[v]; i < static_cast<int>(g[v].size()); ++i) {
      Edge& e = g[v][i];
      if (e.cap > 1e-14 && level[v] < level[e.to]) {
        double d = dfs(e.to, t, std::min(f, e.cap));
        if (d > 0) {
          e.cap -= d;
          g[e.to][e.rev].cap += d;
          return d;
        }
      }
    }
    return 0.0;
  }

  double max_flow(int s, int t) {
    double flow = 0.0;
    while (bfs(s, t)) {
      std::fill(iter.begin(), iter.end(), 0);
      double f;
      while ((f = dfs(s, t, kInf)) > 0) flow += f;
    }
    return flow;
  }
};

bool transport_feasible_under(const FlowProblem& p, double t) {
  const int m = static_cast<int>(p.supply.size());
  const int n = static_cast<int>(p.demand.size());
  Dinic d(m + n + 2);
  int src = m + n, snk = m + n + 1;
  double total = 0.0;
  for (int i = 0; i < m; ++i)
    if (p.supply(i) > 0) {
      d.add_edge(src, i, p.supply(i));
      total += p.supply(i);
    }
  for (int j = 0; j < n; ++j)
    if (p.demand(j) > 0) d.add_edge(m + j, snk, p.demand(j));
  for (int i = 0; i < m; ++i)
    if (p.supply(i) > 0)
      for (int j = 0; j < n; ++j)
        if (p.demand(j) > 0 && p.cost(i, j) <= t) d.add_edge(i, m + j, kInf);
  return d.max_flow(src, snk) >= total - 1e-9 * std::max(1.0, total);
}

}  // namespace

double bottleneck_transport_value(const FlowProblem& p) {
  const int m = static_cast<int>(p.supply.size());
  const int n = static_cast<int>(p.demand.size());
  require(p.cost.rows() == m && p.cost.cols() == n, Errc::dimension,
          "bottleneck_transport: cost shape");
  std::vector<double> vals;
  vals.reserve(m * n);
  for (int i = 0; i < m; ++i)
    if (p.supply(i) > 0)
      for (int j = 0; j < n; ++j)
        if (p.demand(j) > 0) vals.push_back(p.cost(i, j));
  if (vals.empty()) return 0.0;
  std::sort(vals.begin(), vals.end());
  vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
  int lo = 0, hi = static_cast<int>(vals.size()) - 1;
  require(transport_feasible_under(p, vals[hi]), Errc::infeasible,
          "bottleneck_transport: infeasible even with all arcs");
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    if (transport_feasible_under(p, vals[mid]))
      hi = mid;
    else
      lo = mid + 1;
  }
  return vals[hi];
}

}  // namespace gom
