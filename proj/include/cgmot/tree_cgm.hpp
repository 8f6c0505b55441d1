#pragma once

#include "cgmot/types.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>

namespace cgmot {

using NodeId = std::int64_t;

template <typename Scalar = double>
struct TreeEdge {
  NodeId u;
  NodeId v;
  /// Potential phi_uv(x_u, x_v); rows index the state of u.
  Kernel<Scalar> kernel;
};

/// Collective graphical model on a tree with noiseless node observations.
template <typename Scalar = double>
class TreeCGM {
 public:
  struct Incidence {
    Index neighbor;
    Index edge;
  };

  TreeCGM(std::vector<NodeId> nodes, std::vector<TreeEdge<Scalar>> edges,
          std::map<NodeId, Histogram<Scalar>> observations, Scalar mass)
      : nodes_(std::move(nodes)), edges_(std::move(edges)), observations_(std::move(observations)), mass_(mass) {
    validate();
  }

  const std::vector<NodeId>& nodes() const { return nodes_; }
  const std::vector<TreeEdge<Scalar>>& edges() const { return edges_; }
  const std::map<NodeId, Histogram<Scalar>>& observations() const { return observations_; }
  Scalar mass() const { return mass_; }
  Index states() const { return states_; }

  Index index_of(NodeId id) const {
    const auto it = std::lower_bound(sorted_ids_.begin(), sorted_ids_.end(), std::make_pair(id, Index{0}),
                                     [](const auto& x, const auto& y) { return x.first < y.first; });
    if (it == sorted_ids_.end() || it->first != id) throw DomainError(detail::concat("unknown node id ", id));
    return it->second;
  }

  /// nu_u: number of incident edges.
  Index degree(Index node) const { return static_cast<Index>(adjacency_[node].size()); }
  const std::vector<Incidence>& incident(Index node) const { return adjacency_[node]; }

  bool observed(Index node) const { return observations_.count(nodes_[node]) > 0; }
  const Histogram<Scalar>& observation(Index node) const { return observations_.at(nodes_[node]); }

  /// Potential of `edge` oriented so that rows index the state of `from`.
  Matrix<Scalar> oriented_kernel(Index edge, Index from) const {
    const auto& e = edges_[edge];
    Matrix<Scalar> k = e.kernel.to_dense();
    if (index_of(e.u) == from) return k;
    return k.transpose();
  }

 private:
  void validate() {
    using std::abs;
    using std::max;
    if (nodes_.empty()) throw DomainError("tree has no nodes");
    sorted_ids_.clear();
    for (Index i = 0; i < static_cast<Index>(nodes_.size()); ++i) sorted_ids_.emplace_back(nodes_[i], i);
    std::sort(sorted_ids_.begin(), sorted_ids_.end());
    for (std::size_t i = 1; i < sorted_ids_.size(); ++i)
      if (sorted_ids_[i].first == sorted_ids_[i - 1].first)
        throw DomainError(detail::concat("duplicate node id ", sorted_ids_[i].first));

    if (edges_.size() + 1 != nodes_.size())
      throw DomainError(detail::concat("a tree on ", nodes_.size(), " nodes needs ", nodes_.size() - 1,
                                       " edges, got ", edges_.size(), " (graph has a cycle or is disconnected)"));

    adjacency_.assign(nodes_.size(), {});
    states_ = -1;
    for (Index e = 0; e < static_cast<Index>(edges_.size()); ++e) {
      const Index u = index_of(edges_[e].u);
      const Index v = index_of(edges_[e].v);
      if (u == v) throw DomainError(detail::concat("self loop at node ", edges_[e].u));
      const Index n = edges_[e].kernel.size();
      if (states_ < 0) states_ = n;
      if (n != states_) throw DomainError(detail::concat("edge ", e, " kernel has ", n, " states, expected ", states_));
      adjacency_[u].push_back({v, e});
      adjacency_[v].push_back({u, e});
    }

    // Connectivity: with |E| = |V| - 1 a connected graph is acyclic.
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<Index> stack{0};
    seen[0] = 1;
    std::size_t reached = 1;
    while (!stack.empty()) {
      const Index x = stack.back();
      stack.pop_back();
      for (const auto& inc : adjacency_[x]) {
        if (!seen[inc.neighbor]) {
          seen[inc.neighbor] = 1;
          ++reached;
          stack.push_back(inc.neighbor);
        }
      }
    }
    if (reached != nodes_.size()) throw DomainError("graph is disconnected (and therefore contains a cycle)");

    if (!(mass_ > Scalar(0))) throw DomainError("tree mass F must be positive");
    for (const auto& [id, h] : observations_) {
      (void)index_of(id);
      if (states_ >= 0 && h.size() != states_)
        throw DomainError(detail::concat("observation at node ", id, " has ", h.size(), " states, expected ", states_));
      if (abs(h.mass() - mass_) > Scalar(1e-9) * max(abs(mass_), Scalar(1)))
        throw DomainError(detail::concat("observation at node ", id, " has mass ", static_cast<double>(h.mass()),
                                         ", expected ", static_cast<double>(mass_)));
    }
    if (states_ < 0) {
      // Single node without edges: the state count comes from its observation.
      if (observations_.empty()) throw DomainError("single-node tree needs an observation");
      states_ = observations_.begin()->second.size();
    }
  }

  std::vector<NodeId> nodes_;
  std::vector<TreeEdge<Scalar>> edges_;
  std::map<NodeId, Histogram<Scalar>> observations_;
  Scalar mass_;
  Index states_ = -1;
  std::vector<std::pair<NodeId, Index>> sorted_ids_;
  std::vector<std::vector<Incidence>> adjacency_;
};

}  // namespace cgmot
