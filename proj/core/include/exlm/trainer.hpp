#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "exlm/alignment_dp.hpp"
#include "exlm/checkpoint.hpp"
#include "exlm/corpus.hpp"
#include "exlm/encoder.hpp"
#include "exlm/lattice_heads.hpp"

namespace exlm {

enum class Objective { exlm, mlm };

struct TrainConfig {
  std::uint64_t seed = 0;
  int steps = 200;
  int batch_size = 32;
  double mask_ratio = 0.15;
  int expansion = 4;  // states per [MASK]
  DagVariant variant = DagVariant::dense;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double weight_decay = 0.01;
  double clip_norm = 0.0;
  int eval_every = 10;
  Objective objective = Objective::exlm;
  std::string mask_policy = "mask_only";  // reserved; only value supported
  EncoderConfig model;                    // vocab_size is filled from the vocabulary

  void validate() const;
  static TrainConfig from_json_file(const std::filesystem::path& path);
};

struct MetricsRow {
  int step = 0;
  double loss = 0.0;
  double acc = 0.0;
  double entropy_bits = 0.0;
  double wall_ms = 0.0;
};

// One sample pushed through the full ExLM pipeline: expansion, encoder,
// lattice heads, forward/backward DP. loss_sum is -log Z (not yet averaged
// per masked token).
struct ExlmForwardResult {
  ExpandedSequence es;
  LatticeLayout layout;
  AdjacencyMask adj;
  ForwardCache cache;
  HiddenStates hidden;
  Eigen::MatrixXd node_features;
  LatticeHeadsOut heads;
  AlignmentLattice lattice;
  double loss_sum = 0.0;
};

ExlmForwardResult exlm_forward(const MaskedSample& ms, const ModelWeights& w, int k,
                               DagVariant variant, bool need_cache);

// Accumulates d(scale * -logZ)/dtheta into grads.
void exlm_backward(const ExlmForwardResult& f, const ModelWeights& w, double scale,
                   ModelWeights& grads);

// Mean negative log-likelihood of the targets under softmax(H W_P^T) at the
// masked rows. This is the vanilla objective; with k = 1 the states
// alignment reduces to it exactly (sa_loss = M * mlm_loss).
double mlm_loss(const HiddenStates& hidden, std::span<const int> masked_positions,
                const Eigen::MatrixXd& w_p, std::span<const int> targets);

struct BatchStats {
  double loss = 0.0;          // per-masked-token mean over the batch
  double acc = 0.0;           // best-path recovery (ExLM) / argmax (MLM)
  double entropy_bits = 0.0;  // mean node entropy (ExLM) / masked-row entropy (MLM)
  int masked_tokens = 0;
};

// Forward (and backward when grads != nullptr) over a batch. Per-sample
// work runs in parallel; gradients reduce in sample order so results do
// not depend on the thread budget.
BatchStats batch_forward_backward(std::span<const MaskedSample> batch, const ModelWeights& w,
                                  const TrainConfig& cfg, ModelWeights* grads);

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
};

AdamState make_adam_state(const ModelWeights& w);

// One optimizer step: global-norm clipping when clip_norm > 0, Adam with
// bias correction, decoupled weight decay.
void adam_update(ModelWeights& w, const ModelWeights& grads, AdamState& opt,
                 const TrainConfig& cfg);

// Forward + backward + update. Throws when the loss goes non-finite,
// naming the step.
BatchStats train_step(std::span<const MaskedSample> batch, ModelWeights& w, AdamState& opt,
                      const TrainConfig& cfg, int step_index);

struct GradCheckRow {
  std::string tensor;
  Eigen::Index flat_index;
  double analytic;
  double numeric;
  double rel_err;
};

// Central finite differences of the batch loss against the analytic
// gradients on a seeded coordinate subset (at least min_coords, covering
// every tensor). Returns the max relative error; per-coordinate rows go to
// out_rows when non-null.
double gradient_check(const ModelWeights& w, std::span<const MaskedSample> batch,
                      const TrainConfig& cfg, double epsilon, int min_coords,
                      std::uint64_t seed, std::vector<GradCheckRow>* out_rows = nullptr);

// Deterministic batch construction for step `step`: sequences drawn from
// the corpus and masked with streams derived from (cfg.seed, step, slot).
std::vector<MaskedSample> make_batch(std::span<const TokenSequence> corpus,
                                     const TrainConfig& cfg, int step);

struct EvalStats {
  double loss = 0.0;
  double acc = 0.0;
  double entropy_bits = 0.0;
};

// Masks each sequence with a stream derived from eval_seed and scores the
// model without updating it.
EvalStats evaluate(std::span<const TokenSequence> seqs, const ModelWeights& w,
                   const TrainConfig& cfg, std::uint64_t eval_seed);

struct TrainResult {
  std::vector<MetricsRow> metrics;
  ModelWeights weights;
  AdamState opt;
};

// Runs the training loop over an encoded corpus. Metrics are recorded at
// step 1, every eval_every steps and at the final step. When out_dir is
// non-empty, metrics.tsv and checkpoint.{json,bin} (weights + optimizer
// state + step) land there atomically. resume_prefix continues a previous
// run bit-exactly. on_row, when set, observes each metrics row as it is
// produced.
TrainResult run_training(const TrainConfig& cfg, std::span<const TokenSequence> corpus,
                         const std::filesystem::path& out_dir,
                         const std::filesystem::path* resume_prefix = nullptr,
                         const std::function<void(const MetricsRow&)>& on_row = {});

std::string metrics_to_tsv(std::span<const MetricsRow> rows);

}  // namespace exlm
