#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "exlm/expansion.hpp"

namespace exlm {

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ffn_dim = 128;
  int vocab_size = 0;
  double rope_base = 10000.0;
  double dropout = 0.0;  // reserved; must stay 0 at desk scale

  int head_dim() const { return model_dim / heads; }

  // Throws std::invalid_argument when the shape constraints do not hold
  // (head_dim must be divisible by 4 so both rotary axes get even halves).
  void validate() const;
};

struct LayerWeights {
  Eigen::MatrixXd attn_q, attn_k, attn_v, attn_out;          // (d x d), out x in
  Eigen::VectorXd attn_q_bias, attn_k_bias, attn_v_bias, attn_out_bias;
  Eigen::VectorXd ln1_scale, ln1_offset, ln2_scale, ln2_offset;
  Eigen::MatrixXd ffn_in;    // (ffn x d)
  Eigen::VectorXd ffn_in_bias;
  Eigen::MatrixXd ffn_out;   // (d x ffn)
  Eigen::VectorXd ffn_out_bias;
};

// Every learnable tensor of the model, lattice-head weights included.
// The same struct doubles as the gradient accumulator (see zeros_like).
struct ModelWeights {
  EncoderConfig config;
  Eigen::MatrixXd token_embedding;  // (V x d)
  std::vector<LayerWeights> layers;
  Eigen::VectorXd final_ln_scale, final_ln_offset;
  Eigen::MatrixXd head_q, head_k;   // (d x d) transition projections
  Eigen::MatrixXd head_p;           // (V x d) emission head
  Eigen::VectorXd bos_state, eos_state;  // learned virtual-node features

  // Seeded init: matrices ~ N(0, 0.02), biases and LN offsets 0, LN scales 1.
  static ModelWeights init(const EncoderConfig& cfg, std::uint64_t seed);
};

ModelWeights zeros_like(const ModelWeights& w);

// Hidden-state matrix H, one row per expanded-sequence slot.
using HiddenStates = Eigen::MatrixXd;

// Visits every parameter tensor in a stable order; fn is called with
// (name, Eigen::MatrixXd&) or (name, Eigen::VectorXd&). Checkpointing, the
// optimizer and the gradient checker all iterate through this single list.
template <class Weights, class Fn>
void visit_params(Weights& w, Fn&& fn) {
  fn("token_embedding", w.token_embedding);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& l = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    fn(p + "attn_q", l.attn_q);
    fn(p + "attn_q_bias", l.attn_q_bias);
    fn(p + "attn_k", l.attn_k);
    fn(p + "attn_k_bias", l.attn_k_bias);
    fn(p + "attn_v", l.attn_v);
    fn(p + "attn_v_bias", l.attn_v_bias);
    fn(p + "attn_out", l.attn_out);
    fn(p + "attn_out_bias", l.attn_out_bias);
    fn(p + "ln1_scale", l.ln1_scale);
    fn(p + "ln1_offset", l.ln1_offset);
    fn(p + "ln2_scale", l.ln2_scale);
    fn(p + "ln2_offset", l.ln2_offset);
    fn(p + "ffn_in", l.ffn_in);
    fn(p + "ffn_in_bias", l.ffn_in_bias);
    fn(p + "ffn_out", l.ffn_out);
    fn(p + "ffn_out_bias", l.ffn_out_bias);
  }
  fn("final_ln_scale", w.final_ln_scale);
  fn("final_ln_offset", w.final_ln_offset);
  fn("head_q", w.head_q);
  fn("head_k", w.head_k);
  fn("head_p", w.head_p);
  fn("bos_state", w.bos_state);
  fn("eos_state", w.eos_state);
}

struct ParamView {
  std::string name;
  double* data;
  Eigen::Index rows, cols;
  Eigen::Index size() const { return rows * cols; }
};

std::vector<ParamView> parameters(ModelWeights& w);
Eigen::Index parameter_count(const ModelWeights& w);

// Rotates a head-sized vector by the 2D rotary embedding at pos: the first
// half of the head dimension turns with seq_pos, the second half with
// clone_idx, both with frequencies base^(-2t/half_dim). The rotation is an
// isometry; inverse=true applies the transpose. The Ref stride lets this
// bind rows of column-major matrices in place.
using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;
void rope2d_inplace(RowRef vec, Pos2d pos, double base, bool inverse = false);
Eigen::VectorXd rope2d(const Eigen::VectorXd& vec, Pos2d pos, double base);

struct LayerCache {
  Eigen::MatrixXd x_in;
  Eigen::MatrixXd ln1_xhat, ln1_out;
  Eigen::ArrayXd ln1_rstd;
  Eigen::MatrixXd q, k, v;         // post-projection, pre-rotation
  Eigen::MatrixXd q_rot, k_rot;
  std::vector<Eigen::MatrixXd> attn;  // per-head softmax rows (n x n)
  Eigen::MatrixXd attn_concat;
  Eigen::MatrixXd x_mid;
  Eigen::MatrixXd ln2_xhat, ln2_out;
  Eigen::ArrayXd ln2_rstd;
  Eigen::MatrixXd ffn_pre, ffn_act;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Eigen::MatrixXd final_in, final_xhat;
  Eigen::ArrayXd final_rstd;
};

// Pre-norm transformer stack with full bidirectional attention; rope2d is
// applied to queries and keys of every head. Deterministic given weights
// and input. Throws on non-finite intermediates ("numeric overflow at
// layer N").
HiddenStates encoder_forward(const ExpandedSequence& es, const ModelWeights& w,
                             ForwardCache* cache = nullptr);

// Reverse-mode pass. cache must come from encoder_forward on the same
// inputs; gradient contributions are accumulated into grads.
void encoder_backward(const ExpandedSequence& es, const ModelWeights& w,
                      const ForwardCache& cache, const Eigen::MatrixXd& d_hidden,
                      ModelWeights& grads);

}  // namespace exlm
