// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include <array>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "balmix/corpus.hpp"
#include "balmix/datasets.hpp"
#include "balmix/error.hpp"
#include "balmix/hash.hpp"
#include "balmix/instances.hpp"
#include "balmix/mixing.hpp"
#include "balmix/records.hpp"
#include "balmix/rng.hpp"
#include "balmix/text.hpp"
#include "balmix/tinylm.hpp"
#include "balmix/vocab.hpp"

namespace {

using nlohmann::json;

struct Globals {
  std::uint64_t seed = 42;
  int threads = 1;
  std::string format = "text";
  std::string config_hash;
};

std::string stem_of(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

std::int64_t build_timestamp() {
  // Artifacts must be byte-identical across reruns; wall-clock time is only
  // used when the caller pins it explicitly.
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    return std::atoll(env);
  }
  return 0;
}

void log_fields(const Globals& g, const std::string& command,
                const std::vector<std::pair<std::string, std::string>>& kv) {
  if (g.format == "json") {
    json j = {{"command", command},
              {"config_hash", g.config_hash},
              {"seed", g.seed}};
    for (const auto& [k, v] : kv) j[k] = v;
    std::cerr << j.dump() << '\n';
    return;
  }
  std::cerr << "command=" << command << " config_hash=" << g.config_hash
            << " seed=" << g.seed;
  for (const auto& [k, v] : kv) std::cerr << ' ' << k << '=' << v;
  std::cerr << '\n';
}

void write_sidecar(const std::string& artifact, const std::string& command,
                   const Globals& g, const std::vector<std::string>& inputs,
                   const json& counts, const json& extra = json::object()) {
  json input_hashes = json::object();
  for (const auto& path : inputs) {
    input_hashes[path] = balmix::content_hash(balmix::read_file(path));
  }
  json meta = {{"command", command},
               {"config_hash", g.config_hash},
               {"seed", g.seed},
               {"inputs", input_hashes},
               {"counts", counts}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  balmix::write_file(artifact + ".meta.json", meta.dump(2) + "\n");

  std::vector<std::pair<std::string, std::string>> kv = {{"artifact", artifact}};
  for (const auto& [k, v] : counts.items()) {
    kv.emplace_back(k, v.dump());
  }
  for (const auto& [path, h] : input_hashes.items()) {
    kv.emplace_back("input:" + path, h.get<std::string>());
  }
  log_fields(g, command, kv);
}

std::vector<balmix::CleanDocument> read_many_clean(
    const std::vector<std::string>& paths) {
  std::vector<balmix::CleanDocument> docs;
  for (const auto& p : paths) {
    auto part = balmix::read_clean_jsonl(p);
    docs.insert(docs.end(), std::make_move_iterator(part.begin()),
                std::make_move_iterator(part.end()));
  }
  return docs;
}

std::vector<balmix::Chunk> corpus_to_chunks(const std::string& path,
                                            const balmix::Vocabulary& v,
                                            int chunk_size) {
  std::vector<balmix::TokenizedDocument> toks;
  for (const auto& doc : balmix::read_clean_jsonl(path)) {
    auto t = balmix::tokenize_document(doc, v);
    if (!t.sentences.empty()) toks.push_back(std::move(t));
  }
  return balmix::split_into_chunks(toks, chunk_size);
}

std::vector<balmix::LabeledReport> subset_reports(
    const std::vector<balmix::LabeledReport>& all,
    const balmix::SplitAssignment& sa, balmix::Split which) {
  std::vector<balmix::LabeledReport> out;
  for (const auto& r : all) {
    auto it = sa.assignment.find(r.id);
    if (it == sa.assignment.end()) {
      throw balmix::EvalError("report id missing from split: " + r.id);
    }
    if (it->second == which) out.push_back(r);
  }
  return out;
}

const char* error_name(const std::exception& e) {
  if (dynamic_cast<const balmix::IngestError*>(&e)) return "IngestError";
  if (dynamic_cast<const balmix::TrainError*>(&e)) return "TrainError";
  if (dynamic_cast<const balmix::EncodeError*>(&e)) return "EncodeError";
  if (dynamic_cast<const balmix::MixError*>(&e)) return "MixError";
  if (dynamic_cast<const balmix::EvalError*>(&e)) return "EvalError";
  if (dynamic_cast<const balmix::ModelError*>(&e)) return "ModelError";
  if (dynamic_cast<const balmix::CorruptRecord*>(&e)) return "CorruptRecord";
  if (dynamic_cast<const balmix::ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const balmix::Error*>(&e)) return "Error";
  return "InternalError";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"balmix: balanced MLM pretraining data toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; flags override its values");

  Globals g;
  app.add_option("--seed", g.seed, "Global seed; every stage derives from it")
      ->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads where supported")
      ->capture_default_str();
  app.add_option("--format", g.format, "Log format: text or json")
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();

  std::function<void()> action;

  // ---- clean ----
  auto* clean = app.add_subcommand("clean", "Normalize raw corpus documents");
  {
    auto opts = std::make_shared<std::tuple<std::vector<std::string>,
                                            std::string, std::string,
                                            std::size_t>>();
    std::get<1>(*opts) = "general";
    std::get<3>(*opts) = 100;
    clean->add_option("--in", std::get<0>(*opts), ".txt or .jsonl corpus")
        ->required();
    clean->add_option("--source", std::get<1>(*opts),
                      "Source tag for .txt inputs");
    clean->add_option("--out", std::get<2>(*opts), "Cleaned .jsonl")
        ->required();
    clean->add_option("--min-chars", std::get<3>(*opts),
                      "Drop documents shorter than this after normalization");
    clean->callback([&action, opts, &g] {
      action = [opts, &g] {
        const auto& [ins, source, out, min_chars] = *opts;
        balmix::CleanConfig cfg;
        cfg.min_chars = min_chars;
        std::vector<balmix::CleanDocument> kept;
        std::size_t total = 0;
        for (const auto& path : ins) {
          auto raw = balmix::read_corpus(
              path, balmix::source_from_string(source));
          total += raw.size();
          for (const auto& doc : raw) {
            if (auto cleaned = balmix::clean_document(doc, cfg)) {
              kept.push_back(std::move(*cleaned));
            }
          }
        }
        balmix::write_jsonl_corpus(kept, out);
        write_sidecar(out, "clean", g, ins,
                      {{"documents_in", total},
                       {"documents_kept", kept.size()},
                       {"documents_filtered", total - kept.size()}});
      };
    });
  }

  // ---- deident ----
  auto* deident = app.add_subcommand("deident", "Replace identifiers with tags");
  {
    auto opts = std::make_shared<std::pair<std::string, std::string>>();
    deident->add_option("--in", opts->first, "Cleaned .jsonl")->required();
    deident->add_option("--out", opts->second, "De-identified .jsonl")
        ->required();
    deident->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto docs = balmix::read_clean_jsonl(opts->first);
        auto rules = balmix::default_deid_rules();
        std::vector<balmix::CleanDocument> out;
        std::size_t replacements = 0;
        for (const auto& doc : docs) {
          auto res = balmix::deidentify(doc, rules);
          replacements += res.replacement_count;
          out.push_back(std::move(res.doc));
        }
        balmix::write_jsonl_corpus(out, opts->second);
        write_sidecar(opts->second, "deident", g, {opts->first},
                      {{"documents", docs.size()},
                       {"replacements", replacements}});
      };
    });
  }

  // ---- dedup ----
  auto* dedup = app.add_subcommand("dedup", "Drop exact near-duplicate documents");
  {
    auto opts =
        std::make_shared<std::pair<std::vector<std::string>, std::string>>();
    dedup->add_option("--in", opts->first, "Cleaned .jsonl inputs")->required();
    dedup->add_option("--out", opts->second, "Deduplicated .jsonl")->required();
    dedup->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto docs = read_many_clean(opts->first);
        auto res = balmix::dedup_corpus(docs);
        balmix::write_jsonl_corpus(res.docs, opts->second);
        write_sidecar(opts->second, "dedup", g, opts->first,
                      {{"documents_in", docs.size()},
                       {"documents_out", res.docs.size()},
                       {"removed", res.removed_count}});
      };
    });
  }

  // ---- stats ----
  auto* stats = app.add_subcommand("stats", "Per-source corpus manifest");
  {
    auto opts =
        std::make_shared<std::pair<std::vector<std::string>, std::string>>();
    stats->add_option("--in", opts->first, "Cleaned .jsonl inputs")->required();
    stats->add_option("--out", opts->second, "Manifest .json")->required();
    stats->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto docs = read_many_clean(opts->first);
        auto manifest =
            balmix::corpus_stats(docs, g.config_hash, build_timestamp());
        balmix::write_file(opts->second,
                           balmix::manifest_to_json(manifest) + "\n");
        write_sidecar(opts->second, "stats", g, opts->first,
                      {{"documents", docs.size()},
                       {"sources", manifest.rows.size()}});
      };
    });
  }

  // ---- vocab-train ----
  auto* vt = app.add_subcommand("vocab-train", "Train a WordPiece vocabulary");
  {
    struct VtOpts {
      std::vector<std::string> in;
      std::string domain, out;
      int vocab_size = 32000;
      std::uint64_t min_pair_freq = 2;
      int max_token_length = 100;
      bool uncased = false;
    };
    auto opts = std::make_shared<VtOpts>();
    vt->add_option("--in", opts->in, "Training corpus .jsonl")->required();
    vt->add_option("--domain", opts->domain,
                   "Small domain corpus to up-sample into the training text");
    vt->add_option("--out", opts->out, "Vocabulary file")->required();
    vt->add_option("--vocab-size", opts->vocab_size, "Target vocabulary size");
    vt->add_option("--min-pair-freq", opts->min_pair_freq,
                   "Stop merging below this pair frequency");
    vt->add_option("--max-token-length", opts->max_token_length,
                   "Skip words longer than this many code points");
    vt->add_flag("--uncased", opts->uncased, "Casefold before training");
    vt->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto docs = read_many_clean(opts->in);
        std::vector<std::string> inputs = opts->in;
        std::uint64_t repeat_factor = 1;
        if (!opts->domain.empty()) {
          auto domain_docs = balmix::read_clean_jsonl(opts->domain);
          auto amplified = balmix::amplified_corpus(docs, domain_docs);
          docs = std::move(amplified.docs);
          repeat_factor = amplified.repeat_factor;
          inputs.push_back(opts->domain);
        }
        balmix::VocabTrainerConfig cfg;
        cfg.vocab_size = opts->vocab_size;
        cfg.min_pair_frequency = opts->min_pair_freq;
        cfg.max_token_length = opts->max_token_length;
        cfg.cased = !opts->uncased;
        auto v = balmix::train_wordpiece(docs, cfg);
        v.save(opts->out);
        write_sidecar(opts->out, "vocab-train", g, inputs,
                      {{"documents", docs.size()},
                       {"vocab_size", v.size()},
                       {"repeat_factor", repeat_factor}},
                      {{"vocab_hash", balmix::hex64(v.hash())}});
      };
    });
  }

  // ---- fertility ----
  auto* fert = app.add_subcommand("fertility",
                                  "Subwords per word on held-out text");
  {
    auto opts = std::make_shared<std::array<std::string, 3>>();
    fert->add_option("--vocab", (*opts)[0], "Vocabulary file")->required();
    fert->add_option("--in", (*opts)[1], "Held-out .jsonl")->required();
    fert->add_option("--out", (*opts)[2], "Report .json")->required();
    fert->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto v = balmix::Vocabulary::load((*opts)[0]);
        auto docs = balmix::read_clean_jsonl((*opts)[1]);
        auto rep = balmix::fertility(docs, v);
        json j = {{"fertility", rep.fertility},
                  {"unk_rate", rep.unk_rate},
                  {"words", rep.words},
                  {"subwords", rep.subwords},
                  {"unks", rep.unks}};
        balmix::write_file((*opts)[2], j.dump(2) + "\n");
        std::cout << j.dump(2) << '\n';
        write_sidecar((*opts)[2], "fertility", g, {(*opts)[0], (*opts)[1]},
                      {{"words", rep.words}, {"subwords", rep.subwords}},
                      {{"vocab_hash", balmix::hex64(v.hash())}});
      };
    });
  }

  // ---- mix ----
  auto* mix = app.add_subcommand("mix",
                                 "Balance domain chunks against general text");
  {
    struct MixOpts {
      std::string large, small, vocab, out, plan;
      int chunk_size = 512;
      double ratio = 1.0, tolerance = 0.05;
    };
    auto opts = std::make_shared<MixOpts>();
    mix->add_option("--large", opts->large, "General corpus .jsonl")->required();
    mix->add_option("--small", opts->small, "Domain corpus .jsonl")->required();
    mix->add_option("--vocab", opts->vocab, "Vocabulary file")->required();
    mix->add_option("--out", opts->out, "Interleaved chunk stream .jsonl")
        ->required();
    mix->add_option("--plan", opts->plan, "Also write the mix plan .json");
    mix->add_option("--chunk-size", opts->chunk_size, "Tokens per chunk");
    mix->add_option("--ratio", opts->ratio, "Small:large exposure ratio");
    mix->add_option("--tolerance", opts->tolerance,
                    "Declared imbalance tolerance");
    mix->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto v = balmix::Vocabulary::load(opts->vocab);
        auto large = corpus_to_chunks(opts->large, v, opts->chunk_size);
        auto small = corpus_to_chunks(opts->small, v, opts->chunk_size);
        auto plan = balmix::build_mix_plan(
            large.size(), small.size(), balmix::derive_seed(g.seed, "mix"),
            opts->ratio, opts->tolerance);
        auto stream = balmix::interleave(plan, large, small);
        balmix::write_chunks(stream, opts->out);
        if (!opts->plan.empty()) {
          balmix::write_file(opts->plan, plan.to_json() + "\n");
        }
        write_sidecar(opts->out, "mix", g,
                      {opts->large, opts->small, opts->vocab},
                      {{"large_chunks", large.size()},
                       {"small_chunks", small.size()},
                       {"repeat_factor", plan.repeat_factor},
                       {"stream_chunks", stream.size()}},
                      {{"imbalance", plan.imbalance},
                       {"vocab_hash", balmix::hex64(v.hash())}});
      };
    });
  }

  // ---- instances ----
  auto* inst = app.add_subcommand("instances",
                                  "Generate MLM+NSP pretraining records");
  {
    struct InstOpts {
      std::string mode, vocab, large, small, out;
      int chunk_size = 512;
      int max_seq_len = 512;
      int max_predictions = 76;
      double mask_prob = 0.15;
      double short_seq_prob = 0.1;
      double nsp_random_prob = 0.5;
      int dupe_factor = 0;  // 0 = mode default (5 simultaneous, 10 adaptive)
      double ratio = 1.0;
    };
    auto opts = std::make_shared<InstOpts>();
    inst->add_option("--mode", opts->mode, "simultaneous or task-adaptive")
        ->required()
        ->check(CLI::IsMember({"simultaneous", "task-adaptive"}));
    inst->add_option("--vocab", opts->vocab, "Vocabulary file")->required();
    inst->add_option("--large", opts->large,
                     "General corpus .jsonl (simultaneous mode)");
    inst->add_option("--small", opts->small, "Domain/task corpus .jsonl")
        ->required();
    inst->add_option("--out", opts->out, "Record file")->required();
    inst->add_option("--chunk-size", opts->chunk_size, "Tokens per chunk");
    inst->add_option("--max-seq-len", opts->max_seq_len,
                     "Instance sequence length");
    inst->add_option("--max-predictions", opts->max_predictions,
                     "Masked-prediction cap per instance");
    inst->add_option("--mask-prob", opts->mask_prob, "Masking probability");
    inst->add_option("--short-seq-prob", opts->short_seq_prob,
                     "Probability of a short target length");
    inst->add_option("--nsp-random-prob", opts->nsp_random_prob,
                     "Probability B comes from another chunk");
    inst->add_option("--dupe-factor", opts->dupe_factor,
                     "Masking passes per pair (0 = mode default)");
    inst->add_option("--ratio", opts->ratio, "Small:large exposure ratio");
    inst->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto v = balmix::Vocabulary::load(opts->vocab);
        const bool simultaneous = opts->mode == "simultaneous";
        std::vector<std::string> inputs = {opts->vocab, opts->small};

        std::vector<balmix::Chunk> stream;
        std::uint64_t repeat_factor = 1;
        auto small = corpus_to_chunks(opts->small, v, opts->chunk_size);
        if (simultaneous) {
          if (opts->large.empty()) {
            throw balmix::MixError(
                "simultaneous pretraining requires a general corpus");
          }
          inputs.push_back(opts->large);
          auto large = corpus_to_chunks(opts->large, v, opts->chunk_size);
          auto plan = balmix::build_mix_plan(
              large.size(), small.size(), balmix::derive_seed(g.seed, "mix"),
              opts->ratio);
          repeat_factor = plan.repeat_factor;
          stream = balmix::interleave(plan, large, small);
        } else {
          stream = std::move(small);
        }

        balmix::InstanceGenConfig cfg;
        cfg.pair.max_seq_len = opts->max_seq_len;
        cfg.pair.nsp_random_prob = opts->nsp_random_prob;
        cfg.pair.short_seq_prob = opts->short_seq_prob;
        cfg.pair.seed = g.seed;
        cfg.masking.mask_probability = opts->mask_prob;
        cfg.masking.max_predictions_per_seq = opts->max_predictions;
        cfg.masking.seed = g.seed;
        cfg.dupe_factor =
            opts->dupe_factor > 0 ? opts->dupe_factor : (simultaneous ? 5 : 10);
        cfg.threads = g.threads;

        balmix::InstanceStats st;
        auto instances = balmix::create_instances(stream, v, cfg, &st);
        balmix::RecordLayout layout{opts->max_seq_len, opts->max_predictions};
        balmix::write_records(opts->out, instances, layout);
        write_sidecar(opts->out, "instances", g, inputs,
                      {{"stream_chunks", stream.size()},
                       {"pairs", st.pairs},
                       {"instances", st.instances},
                       {"skipped_chunks", st.skipped_chunks},
                       {"repeat_factor", repeat_factor}},
                      {{"mode", opts->mode},
                       {"layout",
                        {{"max_seq_len", layout.max_seq_len},
                         {"max_predictions_per_seq",
                          layout.max_predictions_per_seq}}},
                       {"vocab_hash", balmix::hex64(v.hash())}});
      };
    });
  }

  // ---- split ----
  auto* split = app.add_subcommand("split", "Stratified train/validation/test");
  {
    struct SplitOpts {
      std::string reports, out;
      std::vector<double> fractions{0.8, 0.1, 0.1};
    };
    auto opts = std::make_shared<SplitOpts>();
    split->add_option("--reports", opts->reports, "Labeled reports .jsonl")
        ->required();
    split->add_option("--out", opts->out, "Split assignment .json")->required();
    split->add_option("--fractions", opts->fractions,
                      "Train/validation/test fractions")
        ->expected(3);
    split->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto reports = balmix::read_reports_jsonl(opts->reports);
        std::array<double, 3> fr{opts->fractions[0], opts->fractions[1],
                                 opts->fractions[2]};
        auto sa = balmix::stratified_split(reports, fr, g.seed);
        balmix::write_file(opts->out, sa.to_json() + "\n");
        auto sizes = sa.sizes();
        write_sidecar(opts->out, "split", g, {opts->reports},
                      {{"reports", reports.size()},
                       {"train", sizes[0]},
                       {"validation", sizes[1]},
                       {"test", sizes[2]}});
      };
    });
  }

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Per-label and macro P/R/F1");
  {
    struct EvalOpts {
      std::string reports, split, subset = "test", out;
      std::vector<std::string> predictions;
      double threshold = 0.5;
    };
    auto opts = std::make_shared<EvalOpts>();
    eval->add_option("--reports", opts->reports, "Labeled reports .jsonl")
        ->required();
    eval->add_option("--predictions", opts->predictions,
                     "Prediction .jsonl (repeat to compare models)")
        ->required();
    eval->add_option("--split", opts->split, "Restrict to one split subset");
    eval->add_option("--subset", opts->subset, "train, validation or test");
    eval->add_option("--threshold", opts->threshold, "Positive-score cutoff");
    eval->add_option("--out", opts->out, "Metrics .json")->required();
    eval->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto gold = balmix::read_reports_jsonl(opts->reports);
        if (!opts->split.empty()) {
          auto sa = balmix::SplitAssignment::from_json(
              balmix::read_file(opts->split));
          gold = subset_reports(gold, sa, balmix::split_from_name(opts->subset));
        }
        std::vector<balmix::MetricsReport> reports;
        for (const auto& pred_path : opts->predictions) {
          auto preds = balmix::read_predictions_jsonl(pred_path);
          std::vector<balmix::Prediction> kept;
          std::unordered_set<std::string> ids;
          for (const auto& r : gold) ids.insert(r.id);
          for (auto& p : preds) {
            if (ids.count(p.id)) kept.push_back(std::move(p));
          }
          reports.push_back(balmix::per_label_metrics(
              gold, kept, opts->threshold, stem_of(pred_path)));
        }
        balmix::write_file(opts->out,
                           balmix::format_report_json(reports) + "\n");
        std::cout << balmix::format_report_text(reports);
        std::vector<std::string> inputs = {opts->reports};
        inputs.insert(inputs.end(), opts->predictions.begin(),
                      opts->predictions.end());
        json counts = {{"reports", gold.size()}};
        for (const auto& r : reports) {
          counts["macro_f1:" + r.run_id] = r.macro_f1;
        }
        write_sidecar(opts->out, "eval", g, inputs, counts);
      };
    });
  }

  // ---- sigtest ----
  auto* sig = app.add_subcommand("sigtest",
                                 "Exact paired sign-flip significance test");
  {
    struct SigOpts {
      std::string a, b, out;
    };
    auto opts = std::make_shared<SigOpts>();
    sig->add_option("--a", opts->a, "JSON array of run scores")->required();
    sig->add_option("--b", opts->b, "JSON array of run scores")->required();
    sig->add_option("--out", opts->out, "Result .json");
    sig->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto a = json::parse(balmix::read_file(opts->a))
                     .get<std::vector<double>>();
        auto b = json::parse(balmix::read_file(opts->b))
                     .get<std::vector<double>>();
        double p = balmix::significance_test(a, b);
        json j = {{"p_value", p}, {"n", a.size()}};
        std::cout << j.dump(2) << '\n';
        if (!opts->out.empty()) {
          balmix::write_file(opts->out, j.dump(2) + "\n");
          write_sidecar(opts->out, "sigtest", g, {opts->a, opts->b},
                        {{"n", a.size()}, {"p_value", p}});
        } else {
          log_fields(g, "sigtest", {{"p_value", std::to_string(p)}});
        }
      };
    });
  }

  // ---- pretrain-tiny ----
  auto* pt = app.add_subcommand("pretrain-tiny",
                                "Pretrain the desk-scale encoder on records");
  {
    struct PtOpts {
      std::string records, vocab, out, resume, curve;
      std::uint64_t steps = 200;
      int batch_size = 8;
      double lr = 1e-4, beta1 = 0.9, beta2 = 0.999;
      std::uint64_t warmup = 0;
      int layers = 2, hidden = 64, heads = 2, ffn = 256;
      int model_seq_len = 0;  // 0 = records layout
      double dropout = 0.1;
    };
    auto opts = std::make_shared<PtOpts>();
    pt->add_option("--records", opts->records, "Instance record file")
        ->required();
    pt->add_option("--vocab", opts->vocab, "Vocabulary file")->required();
    pt->add_option("--out", opts->out, "Checkpoint path")->required();
    pt->add_option("--resume", opts->resume, "Continue from this checkpoint");
    pt->add_option("--curve", opts->curve,
                   "Loss curve CSV (default <out>.curve.csv)");
    pt->add_option("--steps", opts->steps, "Optimizer steps");
    pt->add_option("--batch-size", opts->batch_size, "Instances per step");
    pt->add_option("--lr", opts->lr, "Peak learning rate");
    pt->add_option("--beta1", opts->beta1, "Adam beta1");
    pt->add_option("--beta2", opts->beta2, "Adam beta2");
    pt->add_option("--warmup", opts->warmup, "Linear warmup steps");
    pt->add_option("--layers", opts->layers, "Encoder layers");
    pt->add_option("--hidden", opts->hidden, "Hidden width");
    pt->add_option("--heads", opts->heads, "Attention heads");
    pt->add_option("--ffn", opts->ffn, "Feed-forward width");
    pt->add_option("--model-seq-len", opts->model_seq_len,
                   "Positional table size (0 = records layout)");
    pt->add_option("--dropout", opts->dropout, "Dropout rate");
    pt->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto v = balmix::Vocabulary::load(opts->vocab);
        auto layout = balmix::read_layout_sidecar(opts->records);
        if (!layout) {
          throw balmix::ConfigError(
              "records sidecar with layout not found: " + opts->records +
              ".meta.json");
        }
        auto meta = json::parse(
            balmix::read_file(opts->records + ".meta.json"));
        if (meta.contains("vocab_hash") &&
            meta["vocab_hash"].get<std::string>() !=
                balmix::hex64(v.hash())) {
          throw balmix::ConfigError(
              "records were generated with a different vocabulary");
        }
        auto instances = balmix::read_records(opts->records, *layout);

        balmix::TinyLMConfig cfg;
        cfg.layers = opts->layers;
        cfg.hidden = opts->hidden;
        cfg.heads = opts->heads;
        cfg.ffn = opts->ffn;
        cfg.max_seq_len = opts->model_seq_len > 0 ? opts->model_seq_len
                                                  : layout->max_seq_len;
        cfg.vocab_size = v.size();
        cfg.dropout = opts->dropout;

        balmix::ParameterSet params;
        balmix::AdamState opt_state;
        if (!opts->resume.empty()) {
          auto ck = balmix::load_checkpoint(opts->resume);
          if (ck.vocab_hash != v.hash()) {
            throw balmix::ConfigError(
                "checkpoint vocabulary hash does not match --vocab");
          }
          params = std::move(ck.params);
          opt_state = ck.has_opt ? std::move(ck.opt)
                                 : balmix::AdamState::fresh(params.config);
        } else {
          params = balmix::ParameterSet::init(cfg, g.seed);
          opt_state = balmix::AdamState::fresh(cfg);
        }

        balmix::OptimizerConfig opt;
        opt.learning_rate = opts->lr;
        opt.beta1 = opts->beta1;
        opt.beta2 = opts->beta2;
        opt.warmup_steps = opts->warmup;
        opt.batch_size = opts->batch_size;
        opt.seed = g.seed;

        auto curve = balmix::pretrain(params, opt_state, instances, opt,
                                      opts->steps);
        balmix::save_checkpoint(opts->out, params, v.hash(), &opt_state,
                                opt_state.step);
        const std::string curve_path =
            opts->curve.empty() ? opts->out + ".curve.csv" : opts->curve;
        balmix::write_file(curve_path, balmix::loss_curve_csv(curve));

        json counts = {{"instances", instances.size()},
                       {"steps", opts->steps},
                       {"global_step", opt_state.step}};
        if (!curve.empty()) {
          counts["initial_loss"] = curve.front().total;
          counts["final_loss"] = curve.back().total;
        }
        write_sidecar(opts->out, "pretrain-tiny", g,
                      {opts->records, opts->vocab}, counts,
                      {{"vocab_hash", balmix::hex64(v.hash())}});
      };
    });
  }

  // ---- finetune-tiny ----
  auto* ft = app.add_subcommand("finetune-tiny",
                                "Fine-tune the 13-label head");
  {
    struct FtOpts {
      std::string ckpt, vocab, reports, split, subset = "train", out;
      bool from_scratch = false, classifier_only = false;
      int epochs = 4, batch_size = 32;
      double lr = 5e-5;
      int layers = 2, hidden = 64, heads = 2, ffn = 256, max_seq_len = 128;
      double dropout = 0.1;
    };
    auto opts = std::make_shared<FtOpts>();
    ft->add_option("--ckpt", opts->ckpt, "Pretrained checkpoint");
    ft->add_flag("--from-scratch", opts->from_scratch,
                 "Skip pretraining; start from fresh weights");
    ft->add_option("--vocab", opts->vocab, "Vocabulary file")->required();
    ft->add_option("--reports", opts->reports, "Labeled reports .jsonl")
        ->required();
    ft->add_option("--split", opts->split, "Split assignment .json");
    ft->add_option("--subset", opts->subset, "Subset to train on");
    ft->add_option("--out", opts->out, "Fine-tuned checkpoint")->required();
    ft->add_option("--epochs", opts->epochs, "Training epochs");
    ft->add_option("--batch-size", opts->batch_size, "Reports per step");
    ft->add_option("--lr", opts->lr, "Learning rate");
    ft->add_option("--layers", opts->layers, "Layers (from-scratch only)");
    ft->add_option("--hidden", opts->hidden, "Hidden (from-scratch only)");
    ft->add_option("--heads", opts->heads, "Heads (from-scratch only)");
    ft->add_option("--ffn", opts->ffn, "FFN width (from-scratch only)");
    ft->add_option("--max-seq-len", opts->max_seq_len,
                   "Sequence length (from-scratch only)");
    ft->add_option("--dropout", opts->dropout, "Dropout rate");
    ft->add_flag("--classifier-only", opts->classifier_only,
                 "Update only the 13-label head; freeze encoder and pooler");
    ft->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto v = balmix::Vocabulary::load(opts->vocab);
        auto reports = balmix::read_reports_jsonl(opts->reports);
        std::vector<std::string> inputs = {opts->vocab, opts->reports};
        if (!opts->split.empty()) {
          auto sa = balmix::SplitAssignment::from_json(
              balmix::read_file(opts->split));
          reports =
              subset_reports(reports, sa, balmix::split_from_name(opts->subset));
          inputs.push_back(opts->split);
        }

        balmix::ParameterSet params;
        if (opts->from_scratch) {
          balmix::TinyLMConfig cfg;
          cfg.layers = opts->layers;
          cfg.hidden = opts->hidden;
          cfg.heads = opts->heads;
          cfg.ffn = opts->ffn;
          cfg.max_seq_len = opts->max_seq_len;
          cfg.vocab_size = v.size();
          cfg.dropout = opts->dropout;
          params = balmix::ParameterSet::init(cfg, g.seed);
        } else {
          if (opts->ckpt.empty()) {
            throw balmix::ConfigError(
                "either --ckpt or --from-scratch is required");
          }
          auto ck = balmix::load_checkpoint(opts->ckpt);
          if (ck.vocab_hash != v.hash()) {
            throw balmix::ConfigError(
                "checkpoint vocabulary hash does not match --vocab");
          }
          params = std::move(ck.params);
          params.config.dropout = opts->dropout;
          inputs.push_back(opts->ckpt);
        }

        std::vector<balmix::EncodedReport> train_set;
        for (const auto& r : reports) {
          train_set.push_back(
              balmix::encode_report(r, v, params.config.max_seq_len));
        }

        balmix::OptimizerConfig opt;
        opt.learning_rate = opts->lr;
        opt.batch_size = opts->batch_size;
        opt.seed = g.seed;
        opt.classifier_only = opts->classifier_only;
        auto opt_state = balmix::AdamState::fresh(params.config);
        auto curve = balmix::fine_tune_multilabel(params, opt_state, train_set,
                                                  opt, opts->epochs);
        balmix::save_checkpoint(opts->out, params, v.hash(), nullptr,
                                opt_state.step);
        json counts = {{"train_reports", train_set.size()},
                       {"epochs", opts->epochs},
                       {"steps", opt_state.step},
                       {"classifier_only", opts->classifier_only}};
        if (!curve.empty()) counts["final_loss"] = curve.back().total;
        write_sidecar(opts->out, "finetune-tiny", g, inputs, counts,
                      {{"vocab_hash", balmix::hex64(v.hash())}});
      };
    });
  }

  // ---- predict ----
  auto* pr = app.add_subcommand("predict", "Score reports with a checkpoint");
  {
    struct PrOpts {
      std::string ckpt, vocab, reports, split, subset = "test", out;
      double threshold = 0.5;
    };
    auto opts = std::make_shared<PrOpts>();
    pr->add_option("--ckpt", opts->ckpt, "Fine-tuned checkpoint")->required();
    pr->add_option("--vocab", opts->vocab, "Vocabulary file")->required();
    pr->add_option("--reports", opts->reports, "Reports .jsonl")->required();
    pr->add_option("--split", opts->split, "Split assignment .json");
    pr->add_option("--subset", opts->subset, "Subset to score");
    pr->add_option("--out", opts->out, "Predictions .jsonl")->required();
    pr->add_option("--threshold", opts->threshold,
                   "Recorded for eval; scores are stored raw");
    pr->callback([&action, opts, &g] {
      action = [opts, &g] {
        auto v = balmix::Vocabulary::load(opts->vocab);
        auto ck = balmix::load_checkpoint(opts->ckpt);
        if (ck.vocab_hash != v.hash()) {
          throw balmix::ConfigError(
              "checkpoint vocabulary hash does not match --vocab");
        }
        auto reports = balmix::read_reports_jsonl(opts->reports);
        std::vector<std::string> inputs = {opts->ckpt, opts->vocab,
                                           opts->reports};
        if (!opts->split.empty()) {
          auto sa = balmix::SplitAssignment::from_json(
              balmix::read_file(opts->split));
          reports =
              subset_reports(reports, sa, balmix::split_from_name(opts->subset));
          inputs.push_back(opts->split);
        }
        std::vector<balmix::EncodedReport> enc;
        for (const auto& r : reports) {
          enc.push_back(
              balmix::encode_report(r, v, ck.params.config.max_seq_len));
        }
        auto preds = balmix::predict(ck.params, enc);
        balmix::write_predictions_jsonl(opts->out, preds);
        write_sidecar(opts->out, "predict", g, inputs,
                      {{"reports", reports.size()}},
                      {{"threshold", opts->threshold},
                       {"vocab_hash", balmix::hex64(v.hash())}});
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  g.config_hash = balmix::content_hash(app.config_to_str(true, false));

  try {
    if (action) action();
  } catch (const std::exception& e) {
    if (g.format == "json") {
      json j = {{"error", error_name(e)}, {"message", e.what()}};
      std::cerr << j.dump() << '\n';
    } else {
      std::cerr << "error: " << error_name(e) << ": " << e.what() << '\n';
    }
    return 1;
  }
  return 0;
}
