#pragma once

#include "cgmot/entropic_ot.hpp"
#include "cgmot/tree_cgm.hpp"
#include "cgmot/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace cgmot {

template <typename Scalar = double>
struct TreeSolution {
  /// z_u, in the order of TreeCGM::nodes().
  std::vector<Histogram<Scalar>> node_marginals;
  /// z_uv, in the order of TreeCGM::edges(); rows index the state of edge.u.
  std::vector<TransportPlan<Scalar>> edge_plans;
  SolveReport report;
  /// Dual objective after each sweep (with SolverOptions::record_trace). It is
  /// per unit mass: sum_u <log lambda_u, a_u / F> - log Z(lambda).
  std::vector<double> dual_trace;
};

/// sum_e sum_ij z_uv (log z_uv - log phi_uv) - sum_u (nu_u - 1) sum_i z_u log z_u,
/// with 0 log 0 = 0.
template <typename Scalar>
Scalar tree_objective(const TreeSolution<Scalar>& solution, const TreeCGM<Scalar>& problem) {
  using std::log;
  if (solution.node_marginals.size() != problem.nodes().size() ||
      solution.edge_plans.size() != problem.edges().size())
    throw DomainError("solution does not match the tree");
  Scalar value = 0;
  for (std::size_t e = 0; e < problem.edges().size(); ++e) {
    const auto& plan = solution.edge_plans[e];
    const Matrix<Scalar> phi = problem.edges()[e].kernel.to_dense();
    if (plan.rows() != phi.rows() || plan.cols() != phi.cols())
      throw DomainError(detail::concat("edge ", e, " plan shape does not match its kernel"));
    for (Index j = 0; j < phi.cols(); ++j) {
      for (Index i = 0; i < phi.rows(); ++i) {
        const Scalar t = plan(i, j);
        if (t == Scalar(0)) continue;
        if (!(phi(i, j) > Scalar(0))) return std::numeric_limits<Scalar>::infinity();
        value += t * (log(t) - log(phi(i, j)));
      }
    }
  }
  for (std::size_t u = 0; u < problem.nodes().size(); ++u) {
    const auto& z = solution.node_marginals[u].values();
    if (z.size() != problem.states()) throw DomainError(detail::concat("node ", u, " marginal has the wrong size"));
    const Scalar exponent = Scalar(problem.degree(static_cast<Index>(u)) - 1);
    if (exponent == Scalar(0)) continue;
    Scalar ent = 0;
    for (Index i = 0; i < z.size(); ++i) ent += xlogx(z[i]);
    value -= exponent * ent;
  }
  return value;
}

namespace detail {

/// Message-passing state for one tree. Messages are kept normalised to unit
/// sum; node scalings lambda_u carry the observation constraints.
template <typename Scalar>
class TreeMessages {
 public:
  explicit TreeMessages(const TreeCGM<Scalar>& problem, double floor)
      : problem_(problem), floor_(floor), n_(problem.states()) {
    const Index nodes = static_cast<Index>(problem.nodes().size());
    lambda_.assign(static_cast<std::size_t>(nodes), Vector<Scalar>::Ones(n_));
    for (const auto& e : problem.edges()) kernels_.push_back(e.kernel.to_dense());
    // messages_[e][0]: edge.u -> edge.v, messages_[e][1]: edge.v -> edge.u.
    messages_.assign(problem.edges().size(), {Vector<Scalar>::Ones(n_), Vector<Scalar>::Ones(n_)});
    edge_u_.resize(problem.edges().size());
    for (std::size_t e = 0; e < problem.edges().size(); ++e) edge_u_[e] = problem.index_of(problem.edges()[e].u);

    // Root: lowest observed node id.
    root_ = -1;
    NodeId best = 0;
    for (Index v = 0; v < nodes; ++v) {
      if (problem.observed(v) && (root_ < 0 || problem.nodes()[v] < best)) {
        root_ = v;
        best = problem.nodes()[v];
      }
    }
    if (root_ < 0) throw DomainError("tree propagation needs at least one observed node");

    parent_edge_.assign(static_cast<std::size_t>(nodes), -1);
    std::vector<char> seen(static_cast<std::size_t>(nodes), 0);
    std::vector<Index> stack{root_};
    seen[static_cast<std::size_t>(root_)] = 1;
    while (!stack.empty()) {
      const Index x = stack.back();
      stack.pop_back();
      preorder_.push_back(x);
      const auto& inc = problem.incident(x);
      for (auto it = inc.rbegin(); it != inc.rend(); ++it) {
        if (seen[static_cast<std::size_t>(it->neighbor)]) continue;
        seen[static_cast<std::size_t>(it->neighbor)] = 1;
        parent_edge_[static_cast<std::size_t>(it->neighbor)] = it->edge;
        stack.push_back(it->neighbor);
      }
    }
  }

  Index root() const { return root_; }

  /// Messages towards the root, then away from it.
  void full_pass() {
    for (auto it = preorder_.rbegin(); it != preorder_.rend(); ++it)
      if (*it != root_) send(*it, parent_edge_[static_cast<std::size_t>(*it)]);
    for (const Index x : preorder_)
      if (x != root_) send(other(parent_edge_[static_cast<std::size_t>(x)], x), parent_edge_[static_cast<std::size_t>(x)]);
  }

  /// One Euler tour from the root. Each observed node rescales lambda_u so its
  /// belief equals the observation, on arrival and after every child subtree
  /// returns; messages along the traversed edge are refreshed in both
  /// directions. Returns the largest violation seen before a rescale, relative
  /// to F.
  Scalar sweep() {
    Scalar worst = 0;
    struct Frame {
      Index node;
      std::size_t next;
    };
    std::vector<Frame> stack{{root_, 0}};
    worst = std::max(worst, fit(root_));
    while (!stack.empty()) {
      Frame& top = stack.back();
      const auto& inc = problem_.incident(top.node);
      if (top.next < inc.size()) {
        const auto edge = inc[top.next++];
        if (edge.edge == parent_edge_[static_cast<std::size_t>(top.node)]) continue;
        send(top.node, edge.edge);
        stack.push_back({edge.neighbor, 0});
        worst = std::max(worst, fit(edge.neighbor));
      } else {
        const Index done = top.node;
        stack.pop_back();
        if (stack.empty()) break;
        const Index up = parent_edge_[static_cast<std::size_t>(done)];
        send(done, up);
        worst = std::max(worst, fit(stack.back().node));
      }
    }
    return worst;
  }

  /// Belief at a node from lambda and every incoming message (unnormalised).
  Vector<Scalar> belief(Index node, Index skip_edge = -1) const {
    Vector<Scalar> h = lambda_[static_cast<std::size_t>(node)];
    for (const auto& inc : problem_.incident(node))
      if (inc.edge != skip_edge) h = h.cwiseProduct(incoming(node, inc.edge));
    return h;
  }

  TreeSolution<Scalar> solution() const {
    TreeSolution<Scalar> out;
    const Scalar mass = problem_.mass();
    for (Index v = 0; v < static_cast<Index>(problem_.nodes().size()); ++v) {
      const Vector<Scalar> b = belief(v);
      const Scalar total = b.sum();
      if (!(total > Scalar(0))) throw InfeasibleError(detail::concat("belief at node ", problem_.nodes()[v], " vanishes"));
      out.node_marginals.emplace_back(Vector<Scalar>(b * (mass / total)));
    }
    for (std::size_t e = 0; e < problem_.edges().size(); ++e) {
      const Index u = edge_u_[e];
      const Index v = other(static_cast<Index>(e), u);
      const Vector<Scalar> hu = belief(u, static_cast<Index>(e));
      const Vector<Scalar> hv = belief(v, static_cast<Index>(e));
      Matrix<Scalar> plan = hu.asDiagonal() * kernels_[e] * hv.asDiagonal();
      const Scalar total = plan.sum();
      if (!(total > Scalar(0))) throw InfeasibleError(detail::concat("edge ", e, " carries no mass"));
      plan *= mass / total;
      out.edge_plans.emplace_back(std::move(plan));
    }
    return out;
  }

  /// sum_u <log lambda_u, a_u / F> - log Z(lambda), by a fresh upward pass.
  Scalar dual() const {
    using std::log;
    std::vector<Vector<Scalar>> up(problem_.edges().size());
    Scalar log_norm = 0;
    auto product_below = [&](Index x) {
      Vector<Scalar> h = lambda_[static_cast<std::size_t>(x)];
      for (const auto& inc : problem_.incident(x))
        if (inc.edge != parent_edge_[static_cast<std::size_t>(x)]) h = h.cwiseProduct(up[static_cast<std::size_t>(inc.edge)]);
      return h;
    };
    for (auto it = preorder_.rbegin(); it != preorder_.rend(); ++it) {
      const Index x = *it;
      if (x == root_) continue;
      const Index e = parent_edge_[static_cast<std::size_t>(x)];
      Vector<Scalar> m = oriented(e, x).transpose() * product_below(x);
      const Scalar s = m.sum();
      log_norm += log(s);
      up[static_cast<std::size_t>(e)] = m / s;
    }
    Scalar value = -(log_norm + log(product_below(root_).sum()));
    for (Index v = 0; v < static_cast<Index>(problem_.nodes().size()); ++v) {
      if (!problem_.observed(v)) continue;
      const Vector<Scalar> alpha = problem_.observation(v).values() / problem_.mass();
      value += weighted_log_sum<Scalar>(alpha, safe_log<Scalar>(lambda_[static_cast<std::size_t>(v)]));
    }
    return value;
  }

  /// Max violation of the observation constraints, relative to F.
  Scalar observation_residual() const {
    Scalar worst = 0;
    for (Index v = 0; v < static_cast<Index>(problem_.nodes().size()); ++v)
      if (problem_.observed(v)) worst = std::max(worst, violation(v, belief(v)));
    return worst;
  }

 private:
  Index other(Index edge, Index node) const {
    const Index u = edge_u_[static_cast<std::size_t>(edge)];
    return u == node ? problem_.index_of(problem_.edges()[static_cast<std::size_t>(edge)].v) : u;
  }

  /// Kernel of `edge` with rows indexing the state of `from`.
  Matrix<Scalar> oriented(Index edge, Index from) const {
    const auto& k = kernels_[static_cast<std::size_t>(edge)];
    return edge_u_[static_cast<std::size_t>(edge)] == from ? k : Matrix<Scalar>(k.transpose());
  }

  const Vector<Scalar>& incoming(Index node, Index edge) const {
    // Direction 0 flows into edge.v, direction 1 into edge.u.
    return messages_[static_cast<std::size_t>(edge)][edge_u_[static_cast<std::size_t>(edge)] == node ? 1 : 0];
  }

  void send(Index from, Index edge) {
    const Vector<Scalar> h = belief(from, edge);
    const auto& k = kernels_[static_cast<std::size_t>(edge)];
    const bool forward = edge_u_[static_cast<std::size_t>(edge)] == from;
    Vector<Scalar> m = forward ? Vector<Scalar>(k.transpose() * h) : Vector<Scalar>(k * h);
    const Scalar s = m.sum();
    if (!(s > Scalar(0)))
      throw InfeasibleError(detail::concat("message from node ", problem_.nodes()[static_cast<std::size_t>(from)],
                                           " vanishes; observations are incompatible with the kernel support"));
    messages_[static_cast<std::size_t>(edge)][forward ? 0 : 1] = m / s;
  }

  Scalar violation(Index node, const Vector<Scalar>& b) const {
    const Scalar total = b.sum();
    const auto& a = problem_.observation(node).values();
    const Scalar mass = problem_.mass();
    if (!(total > Scalar(0))) return std::numeric_limits<Scalar>::infinity();
    return max_abs_diff<Scalar>(Vector<Scalar>(b * (mass / total)), a) / mass;
  }

  /// Rescales lambda at an observed node so its belief matches the observation.
  Scalar fit(Index node) {
    if (!problem_.observed(node)) return Scalar(0);
    const Scalar before = violation(node, belief(node));
    Vector<Scalar> m = Vector<Scalar>::Ones(n_);
    for (const auto& inc : problem_.incident(node)) m = m.cwiseProduct(incoming(node, inc.edge));
    try {
      Vector<Scalar> next = guarded_divide<Scalar>(problem_.observation(node).values(), m, floor_);
      // Keep lambda at unit scale; only ratios matter.
      const Scalar top = next.maxCoeff();
      if (top > Scalar(0)) next /= top;
      lambda_[static_cast<std::size_t>(node)] = std::move(next);
    } catch (const DivisionGuardError& e) {
      throw InfeasibleError(detail::concat("observation at node ", problem_.nodes()[static_cast<std::size_t>(node)],
                                           " puts mass on state ", e.index(), " which no kernel path reaches"));
    }
    return before;
  }

  const TreeCGM<Scalar>& problem_;
  double floor_;
  Index n_;
  std::vector<Vector<Scalar>> lambda_;
  std::vector<Matrix<Scalar>> kernels_;
  std::vector<std::array<Vector<Scalar>, 2>> messages_;
  std::vector<Index> edge_u_;
  std::vector<Index> parent_edge_;
  std::vector<Index> preorder_;
  Index root_;
};

}  // namespace detail

/// MAP node and edge tables of a tree CGM with noiseless node observations.
///
/// The optimum is the tree model phi reweighted by one scaling vector per
/// observed node; the scalings are fitted by repeated Euler-tour sweeps from
/// the root (the observed node with the lowest id), refreshing messages along
/// each traversed edge. Stops when the largest observation violation in a
/// sweep is within tolerance * F.
template <typename Scalar>
TreeSolution<Scalar> solve_tree(const TreeCGM<Scalar>& problem, const SolverOptions& opts = {}) {
  opts.validate();
  detail::TreeMessages<Scalar> state(problem, opts.epsilon_floor);
  state.full_pass();
  TreeSolution<Scalar> out;
  SolveReport report;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Scalar worst = state.sweep();
    report.iterations = it;
    if (opts.record_trace) out.dual_trace.push_back(static_cast<double>(state.dual()));
    if (worst <= Scalar(opts.tolerance)) break;
  }
  state.full_pass();
  TreeSolution<Scalar> solved = state.solution();
  solved.dual_trace = std::move(out.dual_trace);
  report.residual = static_cast<double>(state.observation_residual());
  report.converged = report.residual <= opts.tolerance;
  report.objective = static_cast<double>(tree_objective(solved, problem));
  solved.report = report;
  return solved;
}

}  // namespace cgmot
