// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_TINYLM_HPP_
#define BALMIX_TINYLM_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "balmix/datasets.hpp"
#include "balmix/instances.hpp"
#include "balmix/vocab.hpp"

namespace balmix {

// Desk-scale BERT-style encoder. All math in double precision; forward,
// loss and gradients are deterministic given the seeds.
struct TinyLMConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  int ffn = 256;
  int max_seq_len = 128;
  int vocab_size = 0;
  double dropout = 0.1;

  void validate() const;  // hidden % heads == 0, vocab_size > specials, ...
};

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t warmup_steps = 0;  // linear warmup, then constant
  int batch_size = 8;
  std::uint64_t seed = 0;
  // Fine-tuning only: update just the multi-label head, leaving embeddings,
  // encoder and pooler frozen (linear probing). Ignored by pretrain().
  bool classifier_only = false;

  void validate() const;
};

// Every tensor is an Eigen::MatrixXd (vectors as 1xN) so optimizer state,
// serialization and gradient checks can traverse them uniformly.
struct ParameterSet {
  TinyLMConfig config;

  Eigen::MatrixXd tok_emb, pos_emb, seg_emb;  // VxH, SxH, 2xH
  Eigen::MatrixXd emb_ln_g, emb_ln_b;         // 1xH

  struct Layer {
    Eigen::MatrixXd wq, wk, wv, wo;      // HxH
    Eigen::MatrixXd bq, bk, bv, bo;      // 1xH
    Eigen::MatrixXd ln1_g, ln1_b;        // 1xH
    Eigen::MatrixXd w1, b1;              // HxF, 1xF
    Eigen::MatrixXd w2, b2;              // FxH, 1xH
    Eigen::MatrixXd ln2_g, ln2_b;        // 1xH
  };
  std::vector<Layer> layers;

  Eigen::MatrixXd mlm_w, mlm_b;          // HxH, 1xH
  Eigen::MatrixXd mlm_ln_g, mlm_ln_b;    // 1xH
  Eigen::MatrixXd mlm_out_bias;          // 1xV (decoder weights tied to tok_emb)
  Eigen::MatrixXd pool_w, pool_b;        // HxH, 1xH
  Eigen::MatrixXd nsp_w, nsp_b;          // Hx2, 1x2
  Eigen::MatrixXd cls_w, cls_b;          // Hx13, 1x13

  static ParameterSet zeros(const TinyLMConfig& config);
  // Truncated normal sigma=0.02 for weights, LayerNorm gains at 1.
  static ParameterSet init(const TinyLMConfig& config, std::uint64_t seed);
};

// Stable traversal order shared by Adam state, checkpoints and grad checks.
std::vector<Eigen::MatrixXd*> tensor_list(ParameterSet& p);
std::vector<const Eigen::MatrixXd*> tensor_list(const ParameterSet& p);
std::vector<std::string> tensor_names(const TinyLMConfig& config);

struct InstanceOutput {
  Eigen::MatrixXd mlm_logits;    // one row per weight-1 masked slot, V cols
  std::vector<int> slots;        // indices into masked_positions
  Eigen::Vector2d nsp_logits;
  Eigen::VectorXd pooled;        // H
};

// Evaluation-mode forward (no dropout).
std::vector<InstanceOutput> forward(const ParameterSet& params,
                                    const std::vector<PretrainInstance>& batch);

struct LossParts {
  double mlm = 0.0;
  double nsp = 0.0;
  double total() const { return mlm + nsp; }
};

// mlm = sum of weighted CE over masked slots / max(total weight, 1);
// nsp = mean CE over the batch.
LossParts pretrain_loss(const std::vector<InstanceOutput>& outputs,
                        const std::vector<PretrainInstance>& batch);

// Accumulates gradients into `grads` (caller zeroes). Dropout only when
// `train` is set; all masks derive from dropout_seed.
LossParts pretrain_loss_and_grad(const ParameterSet& params,
                                 const std::vector<PretrainInstance>& batch,
                                 ParameterSet& grads, bool train = false,
                                 std::uint64_t dropout_seed = 0);

// Central finite differences vs analytic gradients on `coords` sampled
// coordinates; returns the max relative error with a 1e-3 denominator floor
// for coordinates near the finite-difference noise floor.
double grad_check(const ParameterSet& params,
                  const std::vector<PretrainInstance>& batch, double epsilon,
                  int coords = 200, std::uint64_t seed = 1);

struct AdamState {
  ParameterSet m, v;
  std::uint64_t step = 0;

  static AdamState fresh(const TinyLMConfig& config);
};

struct LossPoint {
  std::uint64_t step = 0;
  double mlm = 0.0;
  double nsp = 0.0;
  double total = 0.0;
};

// Adam with linear warmup then constant rate. Batches are drawn per step
// without replacement from a per-step seeded shuffle; batch_size >= dataset
// uses every instance each step. Loss is recorded before each update.
std::vector<LossPoint> pretrain(ParameterSet& params, AdamState& opt_state,
                                const std::vector<PretrainInstance>& instances,
                                const OptimizerConfig& opt,
                                std::uint64_t steps);

std::string loss_curve_csv(const std::vector<LossPoint>& curve);

struct EncodedReport {
  std::string id;
  std::vector<std::int32_t> input_ids, attention_mask, segment_ids;
  std::array<std::int8_t, kNumLabels> labels{};
};

// [CLS] tokens [SEP], truncated then padded to max_seq_len.
EncodedReport encode_report(const LabeledReport& report, const Vocabulary& v,
                            int max_seq_len);

// 13 sigmoid outputs on the pooled representation; summed binary
// cross-entropy, averaged over the batch.
double finetune_loss_and_grad(const ParameterSet& params,
                              const std::vector<EncodedReport>& batch,
                              ParameterSet& grads, bool train = false,
                              std::uint64_t dropout_seed = 0);

std::vector<LossPoint> fine_tune_multilabel(
    ParameterSet& params, AdamState& opt_state,
    const std::vector<EncodedReport>& train_set, const OptimizerConfig& opt,
    int epochs);

std::vector<Prediction> predict(const ParameterSet& params,
                                const std::vector<EncodedReport>& reports);

struct Checkpoint {
  ParameterSet params;
  AdamState opt;
  bool has_opt = false;
  std::uint64_t vocab_hash = 0;
  std::uint64_t step = 0;
};

// Versioned binary ("BLMX"): config, vocab hash, tensors, optional Adam
// state. Loading validates magic, version and tensor shapes.
void save_checkpoint(const std::string& path, const ParameterSet& params,
                     std::uint64_t vocab_hash,
                     const AdamState* opt_state = nullptr,
                     std::uint64_t step = 0);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace balmix

#endif  // BALMIX_TINYLM_HPP_
