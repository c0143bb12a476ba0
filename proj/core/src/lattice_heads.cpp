#include "exlm/lattice_heads.hpp"

#include <cmath>
#include <stdexcept>

#include "exlm/numeric.hpp"

namespace exlm {

std::size_t AdjacencyMask::edge_count() const {
  std::size_t count = 0;
  for (std::uint8_t a : allowed) count += a;
  return count;
}

AdjacencyMask build_adjacency(const LatticeLayout& layout, DagVariant variant) {
  const int L = layout.num_nodes();
  const int M = layout.num_groups;
  const int total = L + 2;
  const int bos = layout.bos_index();
  const int eos = layout.eos_index();

  AdjacencyMask adj;
  adj.total = total;
  adj.variant = variant;
  adj.allowed.assign(static_cast<std::size_t>(total) * total, 0);
  auto set_edge = [&](int v, int u) {
    adj.allowed[static_cast<std::size_t>(v) * total + static_cast<std::size_t>(u)] = 1;
  };

  // Emitting node i (1-based in lattice indexing) can emit target rank r
  // only when r-1 targets fit before it and M-r after it. Keeping exactly
  // the edges on some complete M-emission path makes every row reachable
  // and single-successor rows forced.
  if (variant == DagVariant::dense) {
    for (int u = 1; u <= L; ++u) {
      if (u <= L - M + 1) set_edge(bos, u);
      if (u >= M) set_edge(u, eos);
    }
    for (int v = 1; v <= L; ++v) {
      for (int u = v + 1; u <= L; ++u) {
        if (M >= 2 && u - v <= L - M + 1) set_edge(v, u);
      }
    }
  } else {
    // One node per group in group order; skipping a group would strand it.
    for (int v = 1; v <= L; ++v) {
      const int gv = layout.group_of_node[static_cast<std::size_t>(v - 1)];
      if (gv == 0) set_edge(bos, v);
      if (gv == M - 1) set_edge(v, eos);
      for (int u = v + 1; u <= L; ++u) {
        const int gu = layout.group_of_node[static_cast<std::size_t>(u - 1)];
        if (gu == gv + 1) set_edge(v, u);
      }
    }
  }

  adj.successors.assign(static_cast<std::size_t>(total), {});
  adj.predecessors.assign(static_cast<std::size_t>(total), {});
  for (int v = 0; v < total; ++v) {
    for (int u = 0; u < total; ++u) {
      if (adj.is_allowed(v, u)) {
        adj.successors[static_cast<std::size_t>(v)].push_back(u);
        adj.predecessors[static_cast<std::size_t>(u)].push_back(v);
      }
    }
  }
  return adj;
}

Eigen::MatrixXd gather_node_features(const HiddenStates& hidden, const LatticeLayout& layout,
                                     const ModelWeights& w) {
  const int L = layout.num_nodes();
  Eigen::MatrixXd features(L + 2, w.config.model_dim);
  features.row(0) = w.bos_state.transpose();
  for (int u = 1; u <= L; ++u) {
    features.row(u) =
        hidden.row(layout.node_origin[static_cast<std::size_t>(u - 1)].expanded_index);
  }
  features.row(L + 1) = w.eos_state.transpose();
  return features;
}

void masked_row_softmax(const Eigen::MatrixXd& logits, const AdjacencyMask& adj,
                        Eigen::MatrixXd& out, Eigen::MatrixXd& log_out) {
  const int total = adj.total;
  out = Eigen::MatrixXd::Zero(total, total);
  log_out = Eigen::MatrixXd::Constant(total, total, kNegInf);
  for (int v = 0; v < total; ++v) {
    const auto& succ = adj.successors[static_cast<std::size_t>(v)];
    if (succ.empty()) {
      if (v != total - 1) throw std::runtime_error("dead-end node " + std::to_string(v));
      continue;  // EOS row stays empty
    }
    double hi = kNegInf;
    for (int u : succ) hi = std::max(hi, logits(v, u));
    double sum = 0.0;
    for (int u : succ) sum += std::exp(logits(v, u) - hi);
    const double log_norm = hi + std::log(sum);
    for (int u : succ) {
      log_out(v, u) = logits(v, u) - log_norm;
      out(v, u) = std::exp(log_out(v, u));
    }
  }
}

void row_softmax(const Eigen::MatrixXd& logits, Eigen::MatrixXd& out,
                 Eigen::MatrixXd& log_out) {
  out.resize(logits.rows(), logits.cols());
  log_out.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double hi = logits.row(r).maxCoeff();
    const double log_norm = hi + std::log((logits.row(r).array() - hi).exp().sum());
    log_out.row(r) = logits.row(r).array() - log_norm;
    out.row(r) = log_out.row(r).array().exp();
  }
}

void compute_transitions(const Eigen::MatrixXd& node_features, const Eigen::MatrixXd& w_q,
                         const Eigen::MatrixXd& w_k, const AdjacencyMask& adj,
                         Eigen::MatrixXd& transition, Eigen::MatrixXd& log_transition) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(node_features.cols()));
  const Eigen::MatrixXd q = node_features * w_q.transpose();
  const Eigen::MatrixXd k = node_features * w_k.transpose();
  const Eigen::MatrixXd logits = q * k.transpose() * scale;
  masked_row_softmax(logits, adj, transition, log_transition);
}

void compute_emissions(const Eigen::MatrixXd& node_features, const Eigen::MatrixXd& w_p,
                       Eigen::MatrixXd& emission, Eigen::MatrixXd& log_emission) {
  const Eigen::Index L = node_features.rows() - 2;
  const Eigen::MatrixXd logits =
      node_features.middleRows(1, L) * w_p.transpose();  // L x V
  row_softmax(logits, emission, log_emission);
}

LatticeHeadsOut compute_lattice_heads(const HiddenStates& hidden, const LatticeLayout& layout,
                                      const ModelWeights& w, const AdjacencyMask& adj) {
  LatticeHeadsOut out;
  const Eigen::MatrixXd features = gather_node_features(hidden, layout, w);
  compute_transitions(features, w.head_q, w.head_k, adj, out.transition, out.log_transition);
  compute_emissions(features, w.head_p, out.emission, out.log_emission);
  return out;
}

void lattice_heads_backward(const Eigen::MatrixXd& node_features, const LatticeLayout& layout,
                            const ModelWeights& w, const Eigen::MatrixXd& d_transition_logits,
                            const Eigen::MatrixXd& d_emission_logits, ModelWeights& grads,
                            Eigen::MatrixXd& d_hidden) {
  const int L = layout.num_nodes();
  const double scale = 1.0 / std::sqrt(static_cast<double>(node_features.cols()));

  const Eigen::MatrixXd q = node_features * w.head_q.transpose();
  const Eigen::MatrixXd k = node_features * w.head_k.transpose();

  const Eigen::MatrixXd d_q = d_transition_logits * k * scale;
  const Eigen::MatrixXd d_k = d_transition_logits.transpose() * q * scale;
  grads.head_q += d_q.transpose() * node_features;
  grads.head_k += d_k.transpose() * node_features;

  Eigen::MatrixXd d_features = d_q * w.head_q + d_k * w.head_k;
  d_features.middleRows(1, L) += d_emission_logits * w.head_p;
  grads.head_p += d_emission_logits.transpose() * node_features.middleRows(1, L);

  grads.bos_state += d_features.row(0).transpose();
  grads.eos_state += d_features.row(L + 1).transpose();
  for (int u = 1; u <= L; ++u) {
    d_hidden.row(layout.node_origin[static_cast<std::size_t>(u - 1)].expanded_index) +=
        d_features.row(u);
  }
}

}  // namespace exlm
