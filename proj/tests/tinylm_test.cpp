// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "balmix/error.hpp"
#include "balmix/rng.hpp"
#include "balmix/tinylm.hpp"
#include "balmix/vocab.hpp"
#include "testutil.hpp"

using namespace balmix;

namespace {

TinyLMConfig small_config(int vocab_size = 30) {
  TinyLMConfig c;
  c.layers = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ffn = 32;
  c.max_seq_len = 16;
  c.vocab_size = vocab_size;
  c.dropout = 0.0;
  return c;
}

// Random but well-formed instance: `attended` live positions, `n_masked`
// weight-1 slots at distinct interior positions, padded to `cap` slots.
PretrainInstance rand_instance(Rng& rng, const TinyLMConfig& c, int attended,
                               int n_masked, int cap = 4) {
  PretrainInstance inst;
  for (int i = 0; i < c.max_seq_len; ++i) {
    bool on = i < attended;
    inst.input_ids.push_back(
        on ? std::int32_t(5 + rng.below(std::uint64_t(c.vocab_size - 5))) : 0);
    inst.attention_mask.push_back(on ? 1 : 0);
    inst.segment_ids.push_back((on && i >= attended / 2) ? 1 : 0);
  }
  std::vector<int> pos;
  for (int i = 1; i + 1 < attended; ++i) pos.push_back(i);
  rng.shuffle(pos);
  for (int k = 0; k < cap; ++k) {
    if (k < n_masked) {
      inst.masked_positions.push_back(pos[std::size_t(k)]);
      inst.masked_label_ids.push_back(
          std::int32_t(5 + rng.below(std::uint64_t(c.vocab_size - 5))));
      inst.masked_weights.push_back(1);
    } else {
      inst.masked_positions.push_back(0);
      inst.masked_label_ids.push_back(0);
      inst.masked_weights.push_back(0);
    }
  }
  inst.next_sentence_label = std::int32_t(rng.below(2));
  return inst;
}

double ce_oracle(const Eigen::RowVectorXd& logits, int label) {
  double mx = logits.maxCoeff();
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    z += std::exp(logits(i) - mx);
  }
  return std::log(z) + mx - logits(label);
}

double max_param_diff(const ParameterSet& a, const ParameterSet& b) {
  auto ta = tensor_list(const_cast<ParameterSet&>(a));
  auto tb = tensor_list(const_cast<ParameterSet&>(b));
  REQUIRE(ta.size() == tb.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    worst = std::max(worst, (*ta[i] - *tb[i]).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST_CASE("model and optimizer configs are validated") {
  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  c.heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.vocab_size = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.max_seq_len = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  OptimizerConfig o;
  CHECK_NOTHROW(o.validate());
  o.learning_rate = 0.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = OptimizerConfig{};
  o.beta2 = 1.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = OptimizerConfig{};
  o.batch_size = 0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
}

TEST_CASE("all-zero parameters give the uniform loss ln(V) + ln(2)") {
  auto c = small_config(30);
  auto params = ParameterSet::zeros(c);
  Rng rng(4);
  std::vector<PretrainInstance> batch = {rand_instance(rng, c, 12, 3),
                                         rand_instance(rng, c, 9, 2)};
  auto parts = pretrain_loss(forward(params, batch), batch);
  CHECK(parts.mlm == doctest::Approx(std::log(30.0)).epsilon(1e-12));
  CHECK(parts.nsp == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(parts.total() ==
        doctest::Approx(std::log(30.0) + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("zero masked weights drop the MLM term entirely") {
  auto c = small_config(30);
  auto params = ParameterSet::zeros(c);
  Rng rng(5);
  std::vector<PretrainInstance> batch = {rand_instance(rng, c, 10, 0)};
  auto outputs = forward(params, batch);
  CHECK(outputs[0].slots.empty());
  auto parts = pretrain_loss(outputs, batch);
  CHECK(parts.mlm == 0.0);
  CHECK(parts.nsp == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("NSP cross-entropy matches a hand computation at fixed logits") {
  auto c = small_config(30);
  auto params = ParameterSet::zeros(c);
  params.nsp_b(0, 0) = 0.3;
  params.nsp_b(0, 1) = -0.2;
  Rng rng(6);
  auto inst = rand_instance(rng, c, 8, 0);

  inst.next_sentence_label = 0;
  auto p0 = pretrain_loss(forward(params, {inst}), {inst});
  // Two classes with gap 0.5: CE(label 0) = ln(1 + e^-0.5).
  CHECK(p0.nsp == doctest::Approx(std::log1p(std::exp(-0.5))).epsilon(1e-12));

  inst.next_sentence_label = 1;
  auto p1 = pretrain_loss(forward(params, {inst}), {inst});
  CHECK(p1.nsp == doctest::Approx(std::log1p(std::exp(0.5))).epsilon(1e-12));
}

TEST_CASE("MLM logits flow through the tied decoder bias") {
  auto c = small_config(8);
  auto params = ParameterSet::zeros(c);
  for (int v = 0; v < 8; ++v) params.mlm_out_bias(0, v) = 0.1 * v;
  Rng rng(7);
  auto inst = rand_instance(rng, c, 8, 1);
  inst.masked_label_ids[0] = 3;

  // Zero transform leaves only the output bias: CE = ln(sum e^{0.1 v}) - 0.3.
  double z = 0.0;
  for (int v = 0; v < 8; ++v) z += std::exp(0.1 * v);
  auto parts = pretrain_loss(forward(params, {inst}), {inst});
  CHECK(parts.mlm == doctest::Approx(std::log(z) - 0.3).epsilon(1e-12));
}

TEST_CASE("pretraining loss is the weighted slot mean plus batch-mean NSP") {
  auto c = small_config(24);
  auto params = ParameterSet::init(c, 11);
  Rng rng(8);
  std::vector<PretrainInstance> batch = {rand_instance(rng, c, 12, 2),
                                         rand_instance(rng, c, 14, 3)};
  auto outputs = forward(params, batch);
  REQUIRE(outputs[0].slots.size() == 2);
  REQUIRE(outputs[1].slots.size() == 3);

  double mlm_sum = 0.0, nsp_sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t r = 0; r < outputs[b].slots.size(); ++r) {
      auto k = std::size_t(outputs[b].slots[r]);
      Eigen::RowVectorXd logits = outputs[b].mlm_logits.row(Eigen::Index(r));
      mlm_sum += ce_oracle(logits, batch[b].masked_label_ids[k]);
    }
    Eigen::RowVectorXd nsp = outputs[b].nsp_logits.transpose();
    nsp_sum += ce_oracle(nsp, batch[b].next_sentence_label);
  }
  auto parts = pretrain_loss(outputs, batch);
  CHECK(parts.mlm == doctest::Approx(mlm_sum / 5.0).epsilon(1e-12));
  CHECK(parts.nsp == doctest::Approx(nsp_sum / 2.0).epsilon(1e-12));

  ParameterSet grads = ParameterSet::zeros(c);
  auto parts2 = pretrain_loss_and_grad(params, batch, grads);
  CHECK(parts2.mlm == doctest::Approx(parts.mlm).epsilon(1e-12));
  CHECK(parts2.nsp == doctest::Approx(parts.nsp).epsilon(1e-12));
}

TEST_CASE("forward outputs do not depend on batch composition") {
  auto c = small_config();
  auto params = ParameterSet::init(c, 21);
  Rng rng(9);
  auto a = rand_instance(rng, c, 11, 2);
  auto b = rand_instance(rng, c, 13, 3);
  auto alone = forward(params, {a});
  auto together = forward(params, {b, a});
  CHECK((alone[0].mlm_logits - together[1].mlm_logits).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((alone[0].nsp_logits - together[1].nsp_logits).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("padding positions are inert") {
  auto c = small_config();
  auto params = ParameterSet::init(c, 33);
  Rng rng(10);
  auto inst = rand_instance(rng, c, 10, 2);
  auto noisy = inst;
  for (int i = 10; i < c.max_seq_len; ++i) {
    noisy.input_ids[std::size_t(i)] = 7;
    noisy.segment_ids[std::size_t(i)] = 1;
  }
  auto base = forward(params, {inst});
  auto moved = forward(params, {noisy});
  CHECK((base[0].mlm_logits - moved[0].mlm_logits).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((base[0].nsp_logits - moved[0].nsp_logits).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("malformed instances are rejected") {
  auto c = small_config();
  auto params = ParameterSet::init(c, 1);
  Rng rng(12);
  auto good = rand_instance(rng, c, 8, 2);
  ParameterSet grads = ParameterSet::zeros(c);

  auto bad = good;
  bad.input_ids[0] = c.vocab_size;  // out of range
  CHECK_THROWS_AS(pretrain_loss_and_grad(params, {bad}, grads), ModelError);

  bad = good;
  bad.masked_positions[0] = 14;  // beyond the attended prefix
  CHECK_THROWS_AS(pretrain_loss_and_grad(params, {bad}, grads), ModelError);

  bad = good;
  bad.next_sentence_label = 2;
  CHECK_THROWS_AS(pretrain_loss_and_grad(params, {bad}, grads), ModelError);

  bad = good;
  bad.attention_mask.assign(bad.attention_mask.size(), 0);
  CHECK_THROWS_AS(pretrain_loss_and_grad(params, {bad}, grads), ModelError);
}

TEST_CASE("analytic gradients match central differences") {
  auto c = small_config(24);
  auto params = ParameterSet::init(c, 3);
  Rng rng(13);
  std::vector<PretrainInstance> batch = {rand_instance(rng, c, 12, 3),
                                         rand_instance(rng, c, 9, 2)};
  double worst = grad_check(params, batch, 1e-5, 300, 17);
  CHECK(worst < 1e-4);
  CHECK(grad_check(params, batch, 1e-5, 300, 17) == worst);  // deterministic
}

TEST_CASE("dropout is seeded and reproducible") {
  auto c = small_config();
  c.dropout = 0.5;
  auto params = ParameterSet::init(c, 5);
  Rng rng(14);
  std::vector<PretrainInstance> batch = {rand_instance(rng, c, 12, 3)};
  ParameterSet g1 = ParameterSet::zeros(c);
  ParameterSet g2 = ParameterSet::zeros(c);
  auto a = pretrain_loss_and_grad(params, batch, g1, true, 99);
  auto b = pretrain_loss_and_grad(params, batch, g2, true, 99);
  CHECK(a.total() == b.total());
  CHECK(max_param_diff(g1, g2) == 0.0);
  ParameterSet g3 = ParameterSet::zeros(c);
  auto other = pretrain_loss_and_grad(params, batch, g3, true, 100);
  CHECK(other.total() != a.total());
}

TEST_CASE("a tiny model overfits one batch from the uniform start") {
  auto c = small_config(30);
  auto params = ParameterSet::init(c, 42);
  Rng rng(15);
  std::vector<PretrainInstance> data;
  for (int i = 0; i < 4; ++i) data.push_back(rand_instance(rng, c, 12, 3));

  OptimizerConfig opt;
  opt.learning_rate = 5e-3;
  opt.batch_size = int(data.size());
  opt.seed = 1;
  AdamState state = AdamState::fresh(c);
  auto curve = pretrain(params, state, data, opt, 300);
  REQUIRE(curve.size() == 300);

  const double lnv = std::log(30.0);
  CHECK(std::abs(curve.front().mlm - lnv) < 0.1 * lnv);
  CHECK(curve.back().mlm < 0.1 * lnv);
  CHECK(curve.back().total < curve.front().total);
  CHECK(state.step == 300);
}

TEST_CASE("training resumes exactly from a checkpoint") {
  auto c = small_config(24);
  c.dropout = 0.1;
  Rng rng(16);
  std::vector<PretrainInstance> data;
  for (int i = 0; i < 12; ++i) data.push_back(rand_instance(rng, c, 12, 2));
  OptimizerConfig opt;
  opt.learning_rate = 1e-3;
  opt.batch_size = 4;
  opt.seed = 9;

  auto straight = ParameterSet::init(c, 7);
  AdamState straight_state = AdamState::fresh(c);
  auto full_curve = pretrain(straight, straight_state, data, opt, 10);

  auto halted = ParameterSet::init(c, 7);
  AdamState halted_state = AdamState::fresh(c);
  auto first_half = pretrain(halted, halted_state, data, opt, 5);

  auto dir = testutil::tmp_dir("tinylm-resume");
  auto path = (dir / "ck.bin").string();
  save_checkpoint(path, halted, 1234, &halted_state, halted_state.step);
  auto ck = load_checkpoint(path);
  REQUIRE(ck.has_opt);
  CHECK(ck.vocab_hash == 1234);
  CHECK(ck.step == 5);
  CHECK(max_param_diff(ck.params, halted) == 0.0);

  auto second_half = pretrain(ck.params, ck.opt, data, opt, 5);
  REQUIRE(first_half.size() + second_half.size() == full_curve.size());
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(second_half[i].total == full_curve[i + 5].total);
    CHECK(second_half[i].step == full_curve[i + 5].step);
  }
  CHECK(max_param_diff(ck.params, straight) == 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint loading validates the container") {
  auto dir = testutil::tmp_dir("tinylm-ck");
  auto path = (dir / "ck.bin").string();
  auto c = small_config();
  auto params = ParameterSet::init(c, 2);
  save_checkpoint(path, params, 55);

  auto ck = load_checkpoint(path);
  CHECK_FALSE(ck.has_opt);
  CHECK(ck.vocab_hash == 55);
  CHECK(max_param_diff(ck.params, params) == 0.0);
  CHECK(ck.params.config.hidden == c.hidden);

  std::string bytes = read_file(path);
  write_file(path, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(path), ModelError);

  std::string wrong_version = bytes;
  wrong_version[4] = char(9);
  write_file(path, wrong_version);
  CHECK_THROWS_AS(load_checkpoint(path), ModelError);

  write_file(path, "definitely not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(path), ModelError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("loss curves render as CSV") {
  std::vector<LossPoint> curve = {{1, 3.0, 0.5, 3.5}, {2, 2.5, 0.4, 2.9}};
  auto csv = loss_curve_csv(curve);
  CHECK(csv.rfind("step,mlm_loss,nsp_loss,total\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find("\n1,3,") != std::string::npos);
}

TEST_CASE("reports encode as CLS tokens SEP with padding") {
  auto v = testutil::small_vocab();
  LabeledReport r;
  r.id = "enc";
  r.text = "market river";
  r.labels[2] = 1;

  auto enc = encode_report(r, v, 8);
  REQUIRE(enc.input_ids.size() == 8);
  CHECK(enc.id == "enc");
  CHECK(enc.labels[2] == 1);
  CHECK(enc.input_ids[0] == Vocabulary::kCls);
  CHECK(enc.input_ids[1] == v.id_of("market").value());
  CHECK(enc.input_ids[2] == v.id_of("river").value());
  CHECK(enc.input_ids[3] == Vocabulary::kSep);
  for (int i = 4; i < 8; ++i) {
    CHECK(enc.input_ids[std::size_t(i)] == Vocabulary::kPad);
    CHECK(enc.attention_mask[std::size_t(i)] == 0);
  }
  for (int i = 0; i < 4; ++i) CHECK(enc.attention_mask[std::size_t(i)] == 1);

  // Long text truncates to the token budget, SEP kept.
  r.text = "market river valley harvest bridge library garden season";
  auto cut = encode_report(r, v, 6);
  REQUIRE(cut.input_ids.size() == 6);
  CHECK(cut.input_ids[0] == Vocabulary::kCls);
  CHECK(cut.input_ids[5] == Vocabulary::kSep);
  CHECK(cut.attention_mask == std::vector<std::int32_t>(6, 1));

  CHECK_THROWS_AS(encode_report(r, v, 2), ConfigError);
}

TEST_CASE("an untrained zero head scores everything at one half") {
  auto v = testutil::small_vocab();
  auto c = small_config(int(v.size()));
  auto params = ParameterSet::init(c, 19);
  params.cls_w.setZero();
  params.cls_b.setZero();
  LabeledReport r;
  r.id = "x";
  r.text = "market river valley";
  auto preds = predict(params, {encode_report(r, v, c.max_seq_len)});
  REQUIRE(preds.size() == 1);
  for (int l = 0; l < kNumLabels; ++l) {
    CHECK(preds[0].scores[std::size_t(l)] == 0.5);
  }
}

TEST_CASE("fine-tuning separates reports with distinct trigger words") {
  auto v = testutil::small_vocab();
  auto c = small_config(int(v.size()));
  auto params = ParameterSet::init(c, 23);

  // Labels follow the trigger word: "market" marks label 0, "river" label 1.
  std::vector<LabeledReport> reports;
  const auto& filler = testutil::domain_words();
  for (int i = 0; i < 8; ++i) {
    LabeledReport r;
    r.id = "ft-" + std::to_string(i);
    bool hot = i % 2 == 0;
    r.text = std::string(hot ? "market" : "river") + " " +
             filler[std::size_t(i) % filler.size()] + " " +
             filler[std::size_t(i + 3) % filler.size()];
    r.labels[0] = hot ? 1 : 0;
    r.labels[1] = hot ? 0 : 1;
    reports.push_back(r);
  }
  std::vector<EncodedReport> encoded;
  for (const auto& r : reports) {
    encoded.push_back(encode_report(r, v, c.max_seq_len));
  }

  OptimizerConfig opt;
  opt.learning_rate = 5e-3;
  opt.batch_size = 8;
  opt.seed = 3;
  AdamState state = AdamState::fresh(c);
  // One step per epoch at this size; the trigger feature only emerges
  // after a few hundred updates.
  auto curve = fine_tune_multilabel(params, state, encoded, opt, 400);
  CHECK(curve.back().total < curve.front().total);

  auto preds = predict(params, encoded);
  REQUIRE(preds.size() == reports.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int l = 0; l < kNumLabels; ++l) {
      bool want = reports[i].labels[std::size_t(l)] == 1;
      CHECK((preds[i].scores[std::size_t(l)] > 0.5) == want);
    }
  }
}

TEST_CASE("classifier-only fine-tuning freezes everything but the head") {
  auto v = testutil::small_vocab();
  auto c = small_config(int(v.size()));
  auto params = ParameterSet::init(c, 29);
  const ParameterSet before = params;

  std::vector<LabeledReport> reports;
  for (int i = 0; i < 6; ++i) {
    LabeledReport r;
    r.id = "co-" + std::to_string(i);
    r.text = i % 2 == 0 ? "market stall" : "river bank";
    r.labels[i % 2 == 0 ? 0 : 1] = 1;
    reports.push_back(r);
  }
  std::vector<EncodedReport> encoded;
  for (const auto& r : reports) {
    encoded.push_back(encode_report(r, v, c.max_seq_len));
  }

  OptimizerConfig opt;
  opt.learning_rate = 1e-2;
  opt.batch_size = 6;
  opt.seed = 5;
  opt.classifier_only = true;
  AdamState state = AdamState::fresh(c);
  auto curve = fine_tune_multilabel(params, state, encoded, opt, 50);
  CHECK(curve.back().total < curve.front().total);

  auto ps = tensor_list(params);
  auto bs = tensor_list(before);
  auto names = tensor_names(c);
  REQUIRE(ps.size() == names.size());
  double head_moved = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    double diff = (*ps[i] - *bs[i]).cwiseAbs().maxCoeff();
    if (names[i] == "cls_w" || names[i] == "cls_b") {
      head_moved = std::max(head_moved, diff);
    } else {
      CAPTURE(names[i]);
      CHECK(diff == 0.0);
    }
  }
  CHECK(head_moved > 0.0);
}
