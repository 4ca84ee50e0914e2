// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include "balmix/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "balmix/error.hpp"
#include "balmix/rng.hpp"

namespace balmix {

namespace {

constexpr double kLnEps = 1e-12;
constexpr double kMaskAdd = -1e9;

using Eigen::MatrixXd;
using Eigen::VectorXd;

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
  return cdf + x * pdf;
}

MatrixXd gelu(const MatrixXd& x) { return x.unaryExpr(&gelu_scalar); }
MatrixXd gelu_grad(const MatrixXd& x) { return x.unaryExpr(&gelu_grad_scalar); }

struct LnCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

MatrixXd layer_norm(const MatrixXd& x, const MatrixXd& g, const MatrixXd& b,
                    LnCache& cache) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  cache.xhat.resize(rows, cols);
  cache.inv_std.resize(rows);
  MatrixXd y(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    Eigen::RowVectorXd centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / double(cols);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std(r) = inv;
    cache.xhat.row(r) = centered * inv;
    y.row(r) =
        (cache.xhat.row(r).array() * g.row(0).array() + b.row(0).array());
  }
  return y;
}

MatrixXd layer_norm_backward(const MatrixXd& dy, const LnCache& cache,
                             const MatrixXd& g, MatrixXd& dg, MatrixXd& db) {
  const auto rows = dy.rows();
  const auto cols = dy.cols();
  MatrixXd dx(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Eigen::RowVectorXd dxhat = dy.row(r).array() * g.row(0).array();
    const double m1 = dxhat.mean();
    const double m2 =
        (dxhat.array() * cache.xhat.row(r).array()).mean();
    dx.row(r) = (dxhat.array() - m1 - cache.xhat.row(r).array() * m2) *
                cache.inv_std(r);
    dg.row(0).array() += dy.row(r).array() * cache.xhat.row(r).array();
    db.row(0).array() += dy.row(r).array();
  }
  return dx;
}

MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                      Rng& rng) {
  const double keep = 1.0 - rate;
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    }
  }
  return m;
}

struct LayerCache {
  MatrixXd x_in, q, k, v;
  std::vector<MatrixXd> probs;
  MatrixXd context, att_out, att_drop;
  MatrixXd h1, ffn_pre, ffn_act, ffn_out, ffn_drop;
  LnCache ln1, ln2;
  MatrixXd h_out;
};

struct EncCache {
  Eigen::Index len = 0;
  std::vector<std::int32_t> ids, segs;
  VectorXd mask_add;
  MatrixXd emb_sum, emb_norm, emb_drop, h0;
  LnCache emb_ln;
  std::vector<LayerCache> layers;

  const MatrixXd& top() const { return layers.back().h_out; }
};

void check_sequence(const TinyLMConfig& cfg,
                    const std::vector<std::int32_t>& ids,
                    const std::vector<std::int32_t>& attn,
                    const std::vector<std::int32_t>& segs) {
  if (ids.empty() || ids.size() != attn.size() || ids.size() != segs.size()) {
    throw ModelError("input_ids/attention_mask/segment_ids shape mismatch");
  }
  if (ids.size() > std::size_t(cfg.max_seq_len)) {
    throw ModelError("sequence longer than max_seq_len");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg.vocab_size) {
      throw ModelError("token id out of vocabulary range");
    }
    if (attn[i] != 0 && attn[i] != 1) {
      throw ModelError("attention_mask values must be 0/1");
    }
    if (segs[i] != 0 && segs[i] != 1) {
      throw ModelError("segment_ids values must be 0/1");
    }
  }
}

// Positions past the last attended one are provably inert, so the encoder
// runs on the attended prefix only.
void encoder_forward(const ParameterSet& p,
                     const std::vector<std::int32_t>& ids,
                     const std::vector<std::int32_t>& attn,
                     const std::vector<std::int32_t>& segs, bool train,
                     Rng* drop_rng, EncCache& c) {
  const TinyLMConfig& cfg = p.config;
  check_sequence(cfg, ids, attn, segs);

  std::size_t len = 0;
  for (std::size_t i = 0; i < attn.size(); ++i) {
    if (attn[i] == 1) len = i + 1;
  }
  if (len == 0) throw ModelError("attention mask is all zero");

  const auto L = Eigen::Index(len);
  const auto H = Eigen::Index(cfg.hidden);
  const int heads = cfg.heads;
  const auto dh = Eigen::Index(cfg.hidden / cfg.heads);
  const double scale = 1.0 / std::sqrt(double(dh));
  const bool dropping = train && cfg.dropout > 0.0;

  c.len = L;
  c.ids.assign(ids.begin(), ids.begin() + long(len));
  c.segs.assign(segs.begin(), segs.begin() + long(len));
  c.mask_add.resize(L);
  for (Eigen::Index i = 0; i < L; ++i) {
    c.mask_add(i) = attn[std::size_t(i)] == 1 ? 0.0 : kMaskAdd;
  }

  c.emb_sum.resize(L, H);
  for (Eigen::Index i = 0; i < L; ++i) {
    c.emb_sum.row(i) = p.tok_emb.row(c.ids[std::size_t(i)]) +
                       p.pos_emb.row(i) + p.seg_emb.row(c.segs[std::size_t(i)]);
  }
  c.emb_norm = layer_norm(c.emb_sum, p.emb_ln_g, p.emb_ln_b, c.emb_ln);
  if (dropping) {
    c.emb_drop = dropout_mask(L, H, cfg.dropout, *drop_rng);
    c.h0 = c.emb_norm.cwiseProduct(c.emb_drop);
  } else {
    c.h0 = c.emb_norm;
  }

  c.layers.assign(std::size_t(cfg.layers), LayerCache{});
  const MatrixXd* x = &c.h0;
  for (int l = 0; l < cfg.layers; ++l) {
    LayerCache& lc = c.layers[std::size_t(l)];
    const auto& w = p.layers[std::size_t(l)];
    lc.x_in = *x;
    lc.q = (lc.x_in * w.wq).rowwise() + w.bq.row(0);
    lc.k = (lc.x_in * w.wk).rowwise() + w.bk.row(0);
    lc.v = (lc.x_in * w.wv).rowwise() + w.bv.row(0);
    lc.context.resize(L, H);
    lc.probs.assign(std::size_t(heads), MatrixXd());
    for (int h = 0; h < heads; ++h) {
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      MatrixXd scores = (qh * kh.transpose()) * scale;
      scores.rowwise() += c.mask_add.transpose();
      MatrixXd& probs = lc.probs[std::size_t(h)];
      probs.resize(L, L);
      for (Eigen::Index r = 0; r < L; ++r) {
        const double mx = scores.row(r).maxCoeff();
        Eigen::RowVectorXd e = (scores.row(r).array() - mx).exp();
        probs.row(r) = e / e.sum();
      }
      lc.context.middleCols(h * dh, dh) = probs * vh;
    }
    lc.att_out = (lc.context * w.wo).rowwise() + w.bo.row(0);
    MatrixXd att_final;
    if (dropping) {
      lc.att_drop = dropout_mask(L, H, cfg.dropout, *drop_rng);
      att_final = lc.att_out.cwiseProduct(lc.att_drop);
    } else {
      att_final = lc.att_out;
    }
    lc.h1 = layer_norm(lc.x_in + att_final, w.ln1_g, w.ln1_b, lc.ln1);

    lc.ffn_pre = (lc.h1 * w.w1).rowwise() + w.b1.row(0);
    lc.ffn_act = gelu(lc.ffn_pre);
    lc.ffn_out = (lc.ffn_act * w.w2).rowwise() + w.b2.row(0);
    MatrixXd ffn_final;
    if (dropping) {
      lc.ffn_drop = dropout_mask(L, H, cfg.dropout, *drop_rng);
      ffn_final = lc.ffn_out.cwiseProduct(lc.ffn_drop);
    } else {
      ffn_final = lc.ffn_out;
    }
    lc.h_out = layer_norm(lc.h1 + ffn_final, w.ln2_g, w.ln2_b, lc.ln2);
    x = &lc.h_out;
  }
}

void encoder_backward(const ParameterSet& p, const EncCache& c, MatrixXd dh,
                      ParameterSet& g) {
  const TinyLMConfig& cfg = p.config;
  const auto L = c.len;
  const auto dhd = Eigen::Index(cfg.hidden / cfg.heads);
  const double scale = 1.0 / std::sqrt(double(dhd));
  const bool dropping = c.emb_drop.size() > 0;

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const LayerCache& lc = c.layers[std::size_t(l)];
    const auto& w = p.layers[std::size_t(l)];
    auto& gw = g.layers[std::size_t(l)];

    MatrixXd dres2 = layer_norm_backward(dh, lc.ln2, w.ln2_g, gw.ln2_g,
                                         gw.ln2_b);
    MatrixXd dh1 = dres2;
    MatrixXd dffn_out = dropping ? dres2.cwiseProduct(lc.ffn_drop) : dres2;
    gw.w2 += lc.ffn_act.transpose() * dffn_out;
    gw.b2.row(0) += dffn_out.colwise().sum();
    MatrixXd dact = dffn_out * w.w2.transpose();
    MatrixXd dpre = dact.cwiseProduct(gelu_grad(lc.ffn_pre));
    gw.w1 += lc.h1.transpose() * dpre;
    gw.b1.row(0) += dpre.colwise().sum();
    dh1 += dpre * w.w1.transpose();

    MatrixXd dres1 = layer_norm_backward(dh1, lc.ln1, w.ln1_g, gw.ln1_g,
                                         gw.ln1_b);
    MatrixXd dx = dres1;
    MatrixXd datt = dropping ? dres1.cwiseProduct(lc.att_drop) : dres1;
    gw.wo += lc.context.transpose() * datt;
    gw.bo.row(0) += datt.colwise().sum();
    MatrixXd dcontext = datt * w.wo.transpose();

    MatrixXd dq(L, cfg.hidden), dk(L, cfg.hidden), dv(L, cfg.hidden);
    for (int h = 0; h < cfg.heads; ++h) {
      auto kh = lc.k.middleCols(h * dhd, dhd);
      auto qh = lc.q.middleCols(h * dhd, dhd);
      auto vh = lc.v.middleCols(h * dhd, dhd);
      const MatrixXd& probs = lc.probs[std::size_t(h)];
      MatrixXd dctx_h = dcontext.middleCols(h * dhd, dhd);
      MatrixXd dprobs = dctx_h * vh.transpose();
      dv.middleCols(h * dhd, dhd) = probs.transpose() * dctx_h;
      VectorXd rowdot = (dprobs.cwiseProduct(probs)).rowwise().sum();
      MatrixXd dscores =
          probs.cwiseProduct(dprobs.colwise() - rowdot) * scale;
      dq.middleCols(h * dhd, dhd) = dscores * kh;
      dk.middleCols(h * dhd, dhd) = dscores.transpose() * qh;
    }
    gw.wq += lc.x_in.transpose() * dq;
    gw.bq.row(0) += dq.colwise().sum();
    gw.wk += lc.x_in.transpose() * dk;
    gw.bk.row(0) += dk.colwise().sum();
    gw.wv += lc.x_in.transpose() * dv;
    gw.bv.row(0) += dv.colwise().sum();
    dx += dq * w.wq.transpose() + dk * w.wk.transpose() +
          dv * w.wv.transpose();
    dh = std::move(dx);
  }

  MatrixXd demb_norm = dropping ? dh.cwiseProduct(c.emb_drop) : dh;
  MatrixXd demb_sum = layer_norm_backward(demb_norm, c.emb_ln, p.emb_ln_g,
                                          g.emb_ln_g, g.emb_ln_b);
  for (Eigen::Index i = 0; i < L; ++i) {
    g.tok_emb.row(c.ids[std::size_t(i)]) += demb_sum.row(i);
    g.pos_emb.row(i) += demb_sum.row(i);
    g.seg_emb.row(c.segs[std::size_t(i)]) += demb_sum.row(i);
  }
}

struct MlmSlotCache {
  int position = 0;
  std::int32_t label = 0;
  Eigen::RowVectorXd t0, t1;
  LnCache ln;
  Eigen::RowVectorXd t2;
  Eigen::RowVectorXd logits;
};

struct PoolCache {
  Eigen::RowVectorXd pooled;  // post-tanh
};

MlmSlotCache mlm_head_forward(const ParameterSet& p, const MatrixXd& h,
                              int position, std::int32_t label) {
  MlmSlotCache s;
  s.position = position;
  s.label = label;
  s.t0 = h.row(position) * p.mlm_w + p.mlm_b.row(0);
  s.t1 = s.t0.unaryExpr(&gelu_scalar);
  MatrixXd t1m = s.t1;
  s.t2 = layer_norm(t1m, p.mlm_ln_g, p.mlm_ln_b, s.ln).row(0);
  s.logits = s.t2 * p.tok_emb.transpose() + p.mlm_out_bias.row(0);
  return s;
}

void mlm_head_backward(const ParameterSet& p, const MatrixXd& h,
                       const MlmSlotCache& s,
                       const Eigen::RowVectorXd& dlogits, ParameterSet& g,
                       MatrixXd& dh) {
  g.mlm_out_bias.row(0) += dlogits;
  g.tok_emb += dlogits.transpose() * s.t2;
  Eigen::RowVectorXd dt2 = dlogits * p.tok_emb;
  MatrixXd dt2m = dt2;
  MatrixXd dt1 =
      layer_norm_backward(dt2m, s.ln, p.mlm_ln_g, g.mlm_ln_g, g.mlm_ln_b);
  Eigen::RowVectorXd dt0 =
      dt1.row(0).cwiseProduct(s.t0.unaryExpr(&gelu_grad_scalar));
  g.mlm_w += h.row(s.position).transpose() * dt0;
  g.mlm_b.row(0) += dt0;
  dh.row(s.position) += dt0 * p.mlm_w.transpose();
}

PoolCache pool_forward(const ParameterSet& p, const MatrixXd& h) {
  PoolCache c;
  Eigen::RowVectorXd pre = h.row(0) * p.pool_w + p.pool_b.row(0);
  c.pooled = pre.array().tanh();
  return c;
}

void pool_backward(const ParameterSet& p, const MatrixXd& h,
                   const PoolCache& c, const Eigen::RowVectorXd& dpooled,
                   ParameterSet& g, MatrixXd& dh) {
  Eigen::RowVectorXd dpre =
      dpooled.array() * (1.0 - c.pooled.array().square());
  g.pool_w += h.row(0).transpose() * dpre;
  g.pool_b.row(0) += dpre;
  dh.row(0) += dpre * p.pool_w.transpose();
}

double softmax_ce(const Eigen::RowVectorXd& logits, Eigen::Index label,
                  Eigen::RowVectorXd* dlogits) {
  const double mx = logits.maxCoeff();
  Eigen::RowVectorXd e = (logits.array() - mx).exp();
  const double z = e.sum();
  if (dlogits) {
    *dlogits = e / z;
    (*dlogits)(label) -= 1.0;
  }
  return std::log(z) + mx - logits(label);
}

void check_instance(const TinyLMConfig& cfg, const PretrainInstance& inst) {
  check_sequence(cfg, inst.input_ids, inst.attention_mask, inst.segment_ids);
  if (inst.masked_positions.size() != inst.masked_label_ids.size() ||
      inst.masked_positions.size() != inst.masked_weights.size()) {
    throw ModelError("masked field lengths disagree");
  }
  if (inst.next_sentence_label != 0 && inst.next_sentence_label != 1) {
    throw ModelError("next_sentence_label must be 0/1");
  }
  for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
    if (inst.masked_weights[k] == 0) continue;
    const auto pos = inst.masked_positions[k];
    if (pos < 0 || std::size_t(pos) >= inst.input_ids.size() ||
        inst.attention_mask[std::size_t(pos)] != 1) {
      throw ModelError("masked position outside the attended sequence");
    }
    const auto label = inst.masked_label_ids[k];
    if (label < 0 || label >= cfg.vocab_size) {
      throw ModelError("masked label id out of vocabulary range");
    }
  }
}

void check_finite(const ParameterSet& g) {
  for (const auto* t : tensor_list(const_cast<ParameterSet&>(g))) {
    if (!t->allFinite()) throw ModelError("non-finite gradient");
  }
}

}  // namespace

void TinyLMConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) {
    throw ConfigError("hidden must be a positive multiple of heads");
  }
  if (ffn < 1) throw ConfigError("ffn must be >= 1");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
  if (vocab_size <= Vocabulary::kNumSpecials) {
    throw ConfigError("vocab_size must exceed the special tokens");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must be in [0, 1)");
  }
}

void OptimizerConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
    throw ConfigError("betas must lie in (0, 1)");
  }
  if (epsilon <= 0.0) throw ConfigError("epsilon must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

ParameterSet ParameterSet::zeros(const TinyLMConfig& config) {
  config.validate();
  ParameterSet p;
  p.config = config;
  const auto V = Eigen::Index(config.vocab_size);
  const auto H = Eigen::Index(config.hidden);
  const auto F = Eigen::Index(config.ffn);
  const auto S = Eigen::Index(config.max_seq_len);
  p.tok_emb = MatrixXd::Zero(V, H);
  p.pos_emb = MatrixXd::Zero(S, H);
  p.seg_emb = MatrixXd::Zero(2, H);
  p.emb_ln_g = MatrixXd::Zero(1, H);
  p.emb_ln_b = MatrixXd::Zero(1, H);
  p.layers.resize(std::size_t(config.layers));
  for (auto& l : p.layers) {
    l.wq = MatrixXd::Zero(H, H);
    l.wk = MatrixXd::Zero(H, H);
    l.wv = MatrixXd::Zero(H, H);
    l.wo = MatrixXd::Zero(H, H);
    l.bq = MatrixXd::Zero(1, H);
    l.bk = MatrixXd::Zero(1, H);
    l.bv = MatrixXd::Zero(1, H);
    l.bo = MatrixXd::Zero(1, H);
    l.ln1_g = MatrixXd::Zero(1, H);
    l.ln1_b = MatrixXd::Zero(1, H);
    l.w1 = MatrixXd::Zero(H, F);
    l.b1 = MatrixXd::Zero(1, F);
    l.w2 = MatrixXd::Zero(F, H);
    l.b2 = MatrixXd::Zero(1, H);
    l.ln2_g = MatrixXd::Zero(1, H);
    l.ln2_b = MatrixXd::Zero(1, H);
  }
  p.mlm_w = MatrixXd::Zero(H, H);
  p.mlm_b = MatrixXd::Zero(1, H);
  p.mlm_ln_g = MatrixXd::Zero(1, H);
  p.mlm_ln_b = MatrixXd::Zero(1, H);
  p.mlm_out_bias = MatrixXd::Zero(1, V);
  p.pool_w = MatrixXd::Zero(H, H);
  p.pool_b = MatrixXd::Zero(1, H);
  p.nsp_w = MatrixXd::Zero(H, 2);
  p.nsp_b = MatrixXd::Zero(1, 2);
  p.cls_w = MatrixXd::Zero(H, kNumLabels);
  p.cls_b = MatrixXd::Zero(1, kNumLabels);
  return p;
}

ParameterSet ParameterSet::init(const TinyLMConfig& config,
                                std::uint64_t seed) {
  ParameterSet p = zeros(config);
  Rng rng(derive_seed(seed, "init"));
  auto fill = [&](MatrixXd& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        m(r, c) = rng.next_trunc_normal(0.02);
      }
    }
  };
  fill(p.tok_emb);
  fill(p.pos_emb);
  fill(p.seg_emb);
  p.emb_ln_g.setOnes();
  for (auto& l : p.layers) {
    fill(l.wq);
    fill(l.wk);
    fill(l.wv);
    fill(l.wo);
    l.ln1_g.setOnes();
    fill(l.w1);
    fill(l.w2);
    l.ln2_g.setOnes();
  }
  fill(p.mlm_w);
  p.mlm_ln_g.setOnes();
  fill(p.pool_w);
  fill(p.nsp_w);
  fill(p.cls_w);
  return p;
}

std::vector<MatrixXd*> tensor_list(ParameterSet& p) {
  std::vector<MatrixXd*> out = {&p.tok_emb,  &p.pos_emb, &p.seg_emb,
                                &p.emb_ln_g, &p.emb_ln_b};
  for (auto& l : p.layers) {
    out.insert(out.end(),
               {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                &l.ln1_g, &l.ln1_b, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_g,
                &l.ln2_b});
  }
  out.insert(out.end(),
             {&p.mlm_w, &p.mlm_b, &p.mlm_ln_g, &p.mlm_ln_b, &p.mlm_out_bias,
              &p.pool_w, &p.pool_b, &p.nsp_w, &p.nsp_b, &p.cls_w, &p.cls_b});
  return out;
}

std::vector<const MatrixXd*> tensor_list(const ParameterSet& p) {
  auto mut = tensor_list(const_cast<ParameterSet&>(p));
  return std::vector<const MatrixXd*>(mut.begin(), mut.end());
}

std::vector<std::string> tensor_names(const TinyLMConfig& config) {
  std::vector<std::string> out = {"tok_emb", "pos_emb", "seg_emb", "emb_ln_g",
                                  "emb_ln_b"};
  for (int l = 0; l < config.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (const char* n : {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                          "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g",
                          "ln2_b"}) {
      out.push_back(prefix + n);
    }
  }
  for (const char* n : {"mlm_w", "mlm_b", "mlm_ln_g", "mlm_ln_b",
                        "mlm_out_bias", "pool_w", "pool_b", "nsp_w", "nsp_b",
                        "cls_w", "cls_b"}) {
    out.emplace_back(n);
  }
  return out;
}

std::vector<InstanceOutput> forward(const ParameterSet& params,
                                    const std::vector<PretrainInstance>& batch) {
  params.config.validate();
  std::vector<InstanceOutput> out;
  out.reserve(batch.size());
  for (const auto& inst : batch) {
    check_instance(params.config, inst);
    EncCache cache;
    encoder_forward(params, inst.input_ids, inst.attention_mask,
                    inst.segment_ids, false, nullptr, cache);
    const MatrixXd& h = cache.top();

    InstanceOutput o;
    for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
      if (inst.masked_weights[k] == 1) o.slots.push_back(int(k));
    }
    o.mlm_logits.resize(Eigen::Index(o.slots.size()),
                        Eigen::Index(params.config.vocab_size));
    for (std::size_t r = 0; r < o.slots.size(); ++r) {
      auto slot = mlm_head_forward(
          params, h, inst.masked_positions[std::size_t(o.slots[r])],
          inst.masked_label_ids[std::size_t(o.slots[r])]);
      o.mlm_logits.row(Eigen::Index(r)) = slot.logits;
    }
    PoolCache pool = pool_forward(params, h);
    o.pooled = pool.pooled.transpose();
    Eigen::RowVectorXd nsp = pool.pooled * params.nsp_w + params.nsp_b.row(0);
    o.nsp_logits = nsp.transpose();
    out.push_back(std::move(o));
  }
  return out;
}

LossParts pretrain_loss(const std::vector<InstanceOutput>& outputs,
                        const std::vector<PretrainInstance>& batch) {
  if (outputs.size() != batch.size()) {
    throw ModelError("outputs and batch sizes disagree");
  }
  LossParts parts;
  double total_weight = 0.0;
  double mlm_sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& inst = batch[b];
    const auto& o = outputs[b];
    for (std::size_t r = 0; r < o.slots.size(); ++r) {
      const auto k = std::size_t(o.slots[r]);
      Eigen::RowVectorXd logits = o.mlm_logits.row(Eigen::Index(r));
      mlm_sum += softmax_ce(logits, inst.masked_label_ids[k], nullptr);
      total_weight += 1.0;
    }
    Eigen::RowVectorXd nsp = o.nsp_logits.transpose();
    parts.nsp +=
        softmax_ce(nsp, inst.next_sentence_label, nullptr) / double(batch.size());
  }
  parts.mlm = mlm_sum / std::max(total_weight, 1.0);
  return parts;
}

LossParts pretrain_loss_and_grad(const ParameterSet& params,
                                 const std::vector<PretrainInstance>& batch,
                                 ParameterSet& grads, bool train,
                                 std::uint64_t dropout_seed) {
  params.config.validate();
  if (batch.empty()) throw ModelError("empty batch");

  struct PerInstance {
    EncCache enc;
    std::vector<MlmSlotCache> slots;
    PoolCache pool;
    Eigen::RowVectorXd nsp_logits;
  };
  std::vector<PerInstance> caches(batch.size());

  Rng drop_rng(derive_seed(dropout_seed, "dropout"));
  double total_weight = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& inst = batch[b];
    check_instance(params.config, inst);
    auto& pc = caches[b];
    encoder_forward(params, inst.input_ids, inst.attention_mask,
                    inst.segment_ids, train, &drop_rng, pc.enc);
    const MatrixXd& h = pc.enc.top();
    for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
      if (inst.masked_weights[k] != 1) continue;
      pc.slots.push_back(mlm_head_forward(params, h,
                                          inst.masked_positions[k],
                                          inst.masked_label_ids[k]));
      total_weight += 1.0;
    }
    pc.pool = pool_forward(params, h);
    pc.nsp_logits = pc.pool.pooled * params.nsp_w + params.nsp_b.row(0);
  }

  const double denom = std::max(total_weight, 1.0);
  const double nsp_scale = 1.0 / double(batch.size());
  LossParts parts;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& inst = batch[b];
    auto& pc = caches[b];
    const MatrixXd& h = pc.enc.top();
    MatrixXd dh = MatrixXd::Zero(pc.enc.len, params.config.hidden);

    for (const auto& slot : pc.slots) {
      Eigen::RowVectorXd dlogits;
      parts.mlm += softmax_ce(slot.logits, slot.label, &dlogits) / denom;
      dlogits /= denom;
      mlm_head_backward(params, h, slot, dlogits, grads, dh);
    }

    Eigen::RowVectorXd dnsp;
    parts.nsp +=
        softmax_ce(pc.nsp_logits, inst.next_sentence_label, &dnsp) * nsp_scale;
    dnsp *= nsp_scale;
    grads.nsp_w += pc.pool.pooled.transpose() * dnsp;
    grads.nsp_b.row(0) += dnsp;
    Eigen::RowVectorXd dpooled = dnsp * params.nsp_w.transpose();
    pool_backward(params, h, pc.pool, dpooled, grads, dh);

    encoder_backward(params, pc.enc, std::move(dh), grads);
  }
  return parts;
}

double grad_check(const ParameterSet& params,
                  const std::vector<PretrainInstance>& batch, double epsilon,
                  int coords, std::uint64_t seed) {
  ParameterSet grads = ParameterSet::zeros(params.config);
  pretrain_loss_and_grad(params, batch, grads, false, 0);
  check_finite(grads);

  auto grad_tensors = tensor_list(grads);
  ParameterSet probe = params;
  auto probe_tensors = tensor_list(probe);

  std::size_t total = 0;
  for (const auto* t : grad_tensors) total += std::size_t(t->size());

  Rng rng(derive_seed(seed, "gradcheck"));
  double worst = 0.0;
  for (int i = 0; i < coords; ++i) {
    std::size_t flat = std::size_t(rng.below(total));
    std::size_t ti = 0;
    while (flat >= std::size_t(grad_tensors[ti]->size())) {
      flat -= std::size_t(grad_tensors[ti]->size());
      ++ti;
    }
    double* slot = probe_tensors[ti]->data() + flat;
    const double original = *slot;
    *slot = original + epsilon;
    const double up = pretrain_loss(forward(probe, batch), batch).total();
    *slot = original - epsilon;
    const double down = pretrain_loss(forward(probe, batch), batch).total();
    *slot = original;

    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grad_tensors[ti]->data()[flat];
    const double rel = std::abs(numeric - analytic) /
                       std::max({1e-3, std::abs(numeric), std::abs(analytic)});
    worst = std::max(worst, rel);
  }
  return worst;
}

AdamState AdamState::fresh(const TinyLMConfig& config) {
  AdamState s;
  s.m = ParameterSet::zeros(config);
  s.v = ParameterSet::zeros(config);
  s.step = 0;
  return s;
}

namespace {

void adam_update(ParameterSet& params, ParameterSet& grads, AdamState& state,
                 const OptimizerConfig& opt) {
  state.step += 1;
  const double t = double(state.step);
  double lr = opt.learning_rate;
  if (opt.warmup_steps > 0 && state.step <= opt.warmup_steps) {
    lr *= t / double(opt.warmup_steps);
  }
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);

  auto ps = tensor_list(params);
  auto gs = tensor_list(grads);
  auto ms = tensor_list(state.m);
  auto vs = tensor_list(state.v);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    MatrixXd& g = *gs[i];
    MatrixXd& m = *ms[i];
    MatrixXd& v = *vs[i];
    m.array() = opt.beta1 * m.array() + (1.0 - opt.beta1) * g.array();
    v.array() = opt.beta2 * v.array() + (1.0 - opt.beta2) * g.array().square();
    ps[i]->array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt.epsilon);
  }
}

std::vector<std::size_t> pick_batch(std::size_t n, int batch_size,
                                    std::uint64_t seed, std::uint64_t step) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (std::size_t(batch_size) >= n) return idx;
  Rng rng(derive_seed(derive_seed(seed, "batch"), step));
  rng.shuffle(idx);
  idx.resize(std::size_t(batch_size));
  return idx;
}

}  // namespace

std::vector<LossPoint> pretrain(ParameterSet& params, AdamState& opt_state,
                                const std::vector<PretrainInstance>& instances,
                                const OptimizerConfig& opt,
                                std::uint64_t steps) {
  params.config.validate();
  opt.validate();
  if (instances.empty()) throw ModelError("no pretraining instances");

  std::vector<LossPoint> curve;
  curve.reserve(std::size_t(steps));
  ParameterSet grads = ParameterSet::zeros(params.config);
  for (std::uint64_t s = 0; s < steps; ++s) {
    const std::uint64_t global = opt_state.step;
    auto idx = pick_batch(instances.size(), opt.batch_size, opt.seed, global);
    std::vector<PretrainInstance> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(instances[i]);

    for (auto* t : tensor_list(grads)) t->setZero();
    LossParts parts = pretrain_loss_and_grad(
        params, batch, grads, params.config.dropout > 0.0,
        derive_seed(derive_seed(opt.seed, "dropout"), global));
    check_finite(grads);
    adam_update(params, grads, opt_state, opt);
    curve.push_back({opt_state.step, parts.mlm, parts.nsp, parts.total()});
  }
  return curve;
}

std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::ostringstream out;
  out << "step,mlm_loss,nsp_loss,total\n";
  out.precision(12);
  for (const auto& p : curve) {
    out << p.step << ',' << p.mlm << ',' << p.nsp << ',' << p.total << '\n';
  }
  return out.str();
}

EncodedReport encode_report(const LabeledReport& report, const Vocabulary& v,
                            int max_seq_len) {
  if (max_seq_len < 3) throw ConfigError("max_seq_len must be >= 3");
  EncodedReport enc;
  enc.id = report.id;
  enc.labels = report.labels;
  auto ids = encode_ids(tokenize(report.text, v), v);
  const std::size_t budget = std::size_t(max_seq_len) - 2;
  if (ids.size() > budget) ids.resize(budget);
  enc.input_ids.push_back(Vocabulary::kCls);
  enc.input_ids.insert(enc.input_ids.end(), ids.begin(), ids.end());
  enc.input_ids.push_back(Vocabulary::kSep);
  enc.attention_mask.assign(enc.input_ids.size(), 1);
  enc.segment_ids.assign(enc.input_ids.size(), 0);
  enc.input_ids.resize(std::size_t(max_seq_len), Vocabulary::kPad);
  enc.attention_mask.resize(std::size_t(max_seq_len), 0);
  enc.segment_ids.resize(std::size_t(max_seq_len), 0);
  return enc;
}

namespace {

double bce_with_logit(double z, double y, double* dz) {
  // max(z,0) - z*y + log(1 + exp(-|z|)) is stable for both signs.
  const double loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  if (dz) *dz = 1.0 / (1.0 + std::exp(-z)) - y;
  return loss;
}

}  // namespace

double finetune_loss_and_grad(const ParameterSet& params,
                              const std::vector<EncodedReport>& batch,
                              ParameterSet& grads, bool train,
                              std::uint64_t dropout_seed) {
  params.config.validate();
  if (batch.empty()) throw ModelError("empty batch");
  Rng drop_rng(derive_seed(dropout_seed, "dropout"));
  const double scale = 1.0 / double(batch.size());
  double loss = 0.0;
  for (const auto& ex : batch) {
    EncCache enc;
    encoder_forward(params, ex.input_ids, ex.attention_mask, ex.segment_ids,
                    train, &drop_rng, enc);
    const MatrixXd& h = enc.top();
    PoolCache pool = pool_forward(params, h);
    Eigen::RowVectorXd logits = pool.pooled * params.cls_w + params.cls_b.row(0);

    Eigen::RowVectorXd dlogits(kNumLabels);
    for (int l = 0; l < kNumLabels; ++l) {
      double dz = 0.0;
      loss += bce_with_logit(logits(l), double(ex.labels[std::size_t(l)]),
                             &dz) * scale;
      dlogits(l) = dz * scale;
    }
    grads.cls_w += pool.pooled.transpose() * dlogits;
    grads.cls_b.row(0) += dlogits;
    Eigen::RowVectorXd dpooled = dlogits * params.cls_w.transpose();
    MatrixXd dh = MatrixXd::Zero(enc.len, params.config.hidden);
    pool_backward(params, h, pool, dpooled, grads, dh);
    encoder_backward(params, enc, std::move(dh), grads);
  }
  return loss;
}

std::vector<LossPoint> fine_tune_multilabel(
    ParameterSet& params, AdamState& opt_state,
    const std::vector<EncodedReport>& train_set, const OptimizerConfig& opt,
    int epochs) {
  params.config.validate();
  opt.validate();
  if (train_set.empty()) throw ModelError("empty fine-tuning set");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");

  std::vector<LossPoint> curve;
  ParameterSet grads = ParameterSet::zeros(params.config);
  for (int e = 0; e < epochs; ++e) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(derive_seed(opt.seed, "ft-order"), std::uint64_t(e)));
    rng.shuffle(order);
    for (std::size_t at = 0; at < order.size();
         at += std::size_t(opt.batch_size)) {
      std::vector<EncodedReport> batch;
      for (std::size_t i = at;
           i < std::min(order.size(), at + std::size_t(opt.batch_size)); ++i) {
        batch.push_back(train_set[order[i]]);
      }
      for (auto* t : tensor_list(grads)) t->setZero();
      double loss = finetune_loss_and_grad(
          params, batch, grads, params.config.dropout > 0.0,
          derive_seed(derive_seed(opt.seed, "ft-dropout"), opt_state.step));
      check_finite(grads);
      if (opt.classifier_only) {
        // With zero gradients the Adam moments stay zero, so every frozen
        // tensor is left bit-identical.
        for (auto* t : tensor_list(grads)) {
          if (t != &grads.cls_w && t != &grads.cls_b) t->setZero();
        }
      }
      adam_update(params, grads, opt_state, opt);
      curve.push_back({opt_state.step, 0.0, 0.0, loss});
    }
  }
  return curve;
}

std::vector<Prediction> predict(const ParameterSet& params,
                                const std::vector<EncodedReport>& reports) {
  params.config.validate();
  std::vector<Prediction> out;
  out.reserve(reports.size());
  for (const auto& ex : reports) {
    EncCache enc;
    encoder_forward(params, ex.input_ids, ex.attention_mask, ex.segment_ids,
                    false, nullptr, enc);
    PoolCache pool = pool_forward(params, enc.top());
    Eigen::RowVectorXd logits = pool.pooled * params.cls_w + params.cls_b.row(0);
    Prediction p;
    p.id = ex.id;
    for (int l = 0; l < kNumLabels; ++l) {
      p.scores[std::size_t(l)] = 1.0 / (1.0 + std::exp(-logits(l)));
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x424c4d58;  // "BLMX"
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char(v >> (8 * i) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char(v >> (8 * i) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct ByteCursor {
  const unsigned char* p;
  std::size_t n, at = 0;

  void need(std::size_t k) const {
    if (at + k > n) throw ModelError("truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[at + std::size_t(i)]) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[at + std::size_t(i)]) << (8 * i);
    at += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};

void put_tensors(std::string& out, const ParameterSet& p) {
  auto tensors = tensor_list(p);
  put_u32(out, std::uint32_t(tensors.size()));
  for (const auto* t : tensors) {
    put_u32(out, std::uint32_t(t->rows()));
    put_u32(out, std::uint32_t(t->cols()));
    for (Eigen::Index i = 0; i < t->size(); ++i) put_f64(out, t->data()[i]);
  }
}

void get_tensors(ByteCursor& cur, ParameterSet& p) {
  auto tensors = tensor_list(p);
  const std::uint32_t count = cur.u32();
  if (count != tensors.size()) {
    throw ModelError("checkpoint tensor count does not match config");
  }
  for (auto* t : tensors) {
    const auto rows = Eigen::Index(cur.u32());
    const auto cols = Eigen::Index(cur.u32());
    if (rows != t->rows() || cols != t->cols()) {
      throw ModelError("checkpoint tensor shape does not match config");
    }
    for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = cur.f64();
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet& params,
                     std::uint64_t vocab_hash, const AdamState* opt_state,
                     std::uint64_t step) {
  std::string out;
  put_u32(out, kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  const auto& c = params.config;
  put_u32(out, std::uint32_t(c.layers));
  put_u32(out, std::uint32_t(c.hidden));
  put_u32(out, std::uint32_t(c.heads));
  put_u32(out, std::uint32_t(c.ffn));
  put_u32(out, std::uint32_t(c.max_seq_len));
  put_u32(out, std::uint32_t(c.vocab_size));
  put_f64(out, c.dropout);
  put_u64(out, vocab_hash);
  put_u64(out, step);
  put_tensors(out, params);
  out.push_back(opt_state ? char(1) : char(0));
  if (opt_state) {
    put_u64(out, opt_state->step);
    put_tensors(out, opt_state->m);
    put_tensors(out, opt_state->v);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IngestError("cannot open for writing: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IngestError("short write to checkpoint");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  ByteCursor cur{reinterpret_cast<const unsigned char*>(bytes.data()),
                 bytes.size()};
  if (cur.u32() != kCheckpointMagic) throw ModelError("not a checkpoint file");
  if (cur.u32() != kCheckpointVersion) {
    throw ModelError("unsupported checkpoint version");
  }
  TinyLMConfig c;
  c.layers = int(cur.u32());
  c.hidden = int(cur.u32());
  c.heads = int(cur.u32());
  c.ffn = int(cur.u32());
  c.max_seq_len = int(cur.u32());
  c.vocab_size = int(cur.u32());
  c.dropout = cur.f64();

  Checkpoint ck;
  ck.vocab_hash = cur.u64();
  ck.step = cur.u64();
  ck.params = ParameterSet::zeros(c);
  get_tensors(cur, ck.params);
  cur.need(1);
  ck.has_opt = cur.p[cur.at++] != 0;
  ck.opt = AdamState::fresh(c);
  if (ck.has_opt) {
    ck.opt.step = cur.u64();
    get_tensors(cur, ck.opt.m);
    get_tensors(cur, ck.opt.v);
  }
  return ck;
}

}  // namespace balmix
