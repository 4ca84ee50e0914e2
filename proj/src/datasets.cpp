// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#include "balmix/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "balmix/error.hpp"
#include "balmix/rng.hpp"
#include "balmix/text.hpp"

namespace balmix {

const std::array<std::string, kNumLabels>& label_schema() {
  static const std::array<std::string, kNumLabels> kLabels = {
      "Intraventricular",
      "Gliosis",
      "Epidural",
      "Hydrocephalus",
      "Encephalomalacia",
      "Chronic ischemic changes",
      "Lacuna",
      "Leukoaraiosis",
      "Mega cisterna magna",
      "Meningioma",
      "Subarachnoid Bleeding",
      "Subdural",
      "No Findings"};
  return kLabels;
}

int label_index(std::string_view name) {
  const auto& schema = label_schema();
  for (int i = 0; i < kNumLabels; ++i) {
    if (schema[std::size_t(i)] == name) return i;
  }
  return -1;
}

void validate_report(const LabeledReport& report) {
  bool any_finding = false;
  for (int i = 0; i < kNumLabels; ++i) {
    const auto v = report.labels[std::size_t(i)];
    if (v != 0 && v != 1) {
      throw IngestError("lint: report " + report.id +
                        " has a non-binary label value");
    }
    if (i < kNumLabels - 1 && v == 1) any_finding = true;
  }
  if (report.labels[kNumLabels - 1] == 1 && any_finding) {
    throw IngestError("lint: report " + report.id +
                      " sets No Findings alongside another label");
  }
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  throw ConfigError("invalid split value");
}

Split split_from_name(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split name: " + std::string(name));
}

std::array<std::size_t, 3> SplitAssignment::sizes() const {
  std::array<std::size_t, 3> out{0, 0, 0};
  for (const auto& [id, s] : assignment) {
    (void)id;
    ++out[std::size_t(s)];
  }
  return out;
}

std::string SplitAssignment::to_json() const {
  nlohmann::json names;
  for (const auto& [id, s] : assignment) {
    names[id] = std::string(split_name(s));
  }
  nlohmann::json j = {{"seed", seed},
                      {"fractions", std::vector<double>(fractions.begin(),
                                                        fractions.end())},
                      {"assignment", names}};
  return j.dump(2);
}

SplitAssignment SplitAssignment::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SplitAssignment out;
  out.seed = j.at("seed").get<std::uint64_t>();
  auto fr = j.at("fractions").get<std::vector<double>>();
  if (fr.size() != 3) throw ConfigError("fractions must have 3 entries");
  std::copy(fr.begin(), fr.end(), out.fractions.begin());
  for (const auto& [id, name] : j.at("assignment").items()) {
    out.assignment.emplace(id, split_from_name(name.get<std::string>()));
  }
  return out;
}

namespace {

// Exact split sizes by largest remainder; ties resolved in split order.
std::array<std::size_t, 3> quota_sizes(std::size_t n,
                                       const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    double exact = fractions[std::size_t(s)] * double(n);
    sizes[std::size_t(s)] = std::size_t(std::floor(exact + 1e-9));
    remainders[std::size_t(s)] = exact - double(sizes[std::size_t(s)]);
    assigned += sizes[std::size_t(s)];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      if (remainders[std::size_t(s)] > remainders[std::size_t(best)] + 1e-12) {
        best = s;
      }
    }
    ++sizes[std::size_t(best)];
    remainders[std::size_t(best)] = -1.0;
    ++assigned;
  }
  return sizes;
}

}  // namespace

SplitAssignment stratified_split(const std::vector<LabeledReport>& reports,
                                 const std::array<double, 3>& fractions,
                                 std::uint64_t seed) {
  double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
  }
  std::unordered_set<std::string> seen_ids;
  for (const auto& r : reports) {
    validate_report(r);
    if (!seen_ids.insert(r.id).second) {
      throw IngestError("duplicate report id: " + r.id);
    }
  }

  const std::size_t n = reports.size();
  auto capacity = quota_sizes(n, fractions);
  Rng rng(derive_seed(seed, "split"));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<int> assigned(n, -1);
  // desired[s][l]: remaining positives label l should still receive in s.
  std::array<std::array<double, kNumLabels>, 3> desired{};
  std::array<std::size_t, kNumLabels> positives{};
  for (const auto& r : reports) {
    for (int l = 0; l < kNumLabels; ++l) {
      positives[std::size_t(l)] += std::size_t(r.labels[std::size_t(l)]);
    }
  }
  for (int s = 0; s < 3; ++s) {
    for (int l = 0; l < kNumLabels; ++l) {
      desired[std::size_t(s)][std::size_t(l)] =
          fractions[std::size_t(s)] * double(positives[std::size_t(l)]);
    }
  }

  auto place = [&](std::size_t idx, int s) {
    assigned[idx] = s;
    --capacity[std::size_t(s)];
    for (int l = 0; l < kNumLabels; ++l) {
      desired[std::size_t(s)][std::size_t(l)] -=
          double(reports[idx].labels[std::size_t(l)]);
    }
  };

  // Coverage pass: labels with >= 3 positives get one positive per split up
  // front, rarest label first, so proportional assignment can never starve a
  // split of a rare label.
  std::vector<int> by_rarity;
  for (int l = 0; l < kNumLabels; ++l) {
    if (positives[std::size_t(l)] >= 3) by_rarity.push_back(l);
  }
  std::sort(by_rarity.begin(), by_rarity.end(), [&](int a, int b) {
    if (positives[std::size_t(a)] != positives[std::size_t(b)]) {
      return positives[std::size_t(a)] < positives[std::size_t(b)];
    }
    return a < b;
  });
  for (int l : by_rarity) {
    std::array<bool, 3> covered{false, false, false};
    for (std::size_t i = 0; i < n; ++i) {
      if (assigned[i] >= 0 && reports[i].labels[std::size_t(l)] == 1) {
        covered[std::size_t(assigned[i])] = true;
      }
    }
    for (int s : {2, 1, 0}) {  // smallest-capacity splits claim first
      if (covered[std::size_t(s)] || capacity[std::size_t(s)] == 0) continue;
      for (std::size_t idx : order) {
        if (assigned[idx] < 0 && reports[idx].labels[std::size_t(l)] == 1) {
          place(idx, s);
          break;
        }
      }
    }
  }

  // Main loop: among labels with unassigned positives, take the rarest;
  // give each of its unassigned positives to the split that still wants the
  // label most.
  while (true) {
    std::array<std::size_t, kNumLabels> remaining{};
    for (std::size_t i = 0; i < n; ++i) {
      if (assigned[i] >= 0) continue;
      for (int l = 0; l < kNumLabels; ++l) {
        remaining[std::size_t(l)] += std::size_t(reports[i].labels[std::size_t(l)]);
      }
    }
    int target_label = -1;
    for (int l = 0; l < kNumLabels; ++l) {
      if (remaining[std::size_t(l)] == 0) continue;
      if (target_label < 0 ||
          remaining[std::size_t(l)] < remaining[std::size_t(target_label)]) {
        target_label = l;
      }
    }
    if (target_label < 0) break;

    for (std::size_t idx : order) {
      if (assigned[idx] >= 0 ||
          reports[idx].labels[std::size_t(target_label)] != 1) {
        continue;
      }
      int best = -1;
      for (int s = 0; s < 3; ++s) {
        if (capacity[std::size_t(s)] == 0) continue;
        if (best < 0) {
          best = s;
          continue;
        }
        double d_s = desired[std::size_t(s)][std::size_t(target_label)];
        double d_b = desired[std::size_t(best)][std::size_t(target_label)];
        if (d_s > d_b + 1e-12) {
          best = s;
        } else if (std::abs(d_s - d_b) <= 1e-12 &&
                   capacity[std::size_t(s)] > capacity[std::size_t(best)]) {
          best = s;
        }
      }
      if (best < 0) throw ConfigError("split capacities exhausted early");
      place(idx, best);
    }
  }

  // Reports without any positive label left: fill by remaining capacity.
  for (std::size_t idx : order) {
    if (assigned[idx] >= 0) continue;
    int best = -1;
    for (int s = 0; s < 3; ++s) {
      if (capacity[std::size_t(s)] == 0) continue;
      if (best < 0 || capacity[std::size_t(s)] > capacity[std::size_t(best)]) {
        best = s;
      }
    }
    if (best < 0) throw ConfigError("split capacities exhausted early");
    place(idx, best);
  }

  SplitAssignment out;
  out.fractions = fractions;
  out.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    out.assignment.emplace(reports[i].id, Split(assigned[i]));
  }
  return out;
}

MetricsReport per_label_metrics(const std::vector<LabeledReport>& gold,
                                const std::vector<Prediction>& predictions,
                                double threshold, const std::string& run_id) {
  std::unordered_map<std::string, const LabeledReport*> by_id;
  for (const auto& g : gold) {
    if (!by_id.emplace(g.id, &g).second) {
      throw EvalError("duplicate gold id: " + g.id);
    }
  }
  if (predictions.size() != gold.size()) {
    throw EvalError("gold and prediction id sets differ in size");
  }
  std::unordered_set<std::string> seen;
  MetricsReport report;
  report.run_id = run_id;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) throw EvalError("prediction id not in gold: " + p.id);
    if (!seen.insert(p.id).second) {
      throw EvalError("duplicate prediction id: " + p.id);
    }
    const auto& labels = it->second->labels;
    for (int l = 0; l < kNumLabels; ++l) {
      bool predicted = p.scores[std::size_t(l)] > threshold;
      bool actual = labels[std::size_t(l)] == 1;
      auto& m = report.per_label[std::size_t(l)];
      if (actual) ++m.support;
      if (predicted && actual) ++m.tp;
      if (predicted && !actual) ++m.fp;
      if (!predicted && actual) ++m.fn;
    }
  }
  for (int l = 0; l < kNumLabels; ++l) {
    auto& m = report.per_label[std::size_t(l)];
    m.precision = (m.tp + m.fp) ? double(m.tp) / double(m.tp + m.fp) : 0.0;
    m.recall = (m.tp + m.fn) ? double(m.tp) / double(m.tp + m.fn) : 0.0;
    m.f1 = (m.precision + m.recall > 0)
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    report.macro_precision += m.precision / kNumLabels;
    report.macro_recall += m.recall / kNumLabels;
    report.macro_f1 += m.f1 / kNumLabels;
  }
  return report;
}

double significance_test(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.empty()) throw EvalError("significance test needs at least one pair");
  if (a.size() != b.size()) {
    throw EvalError("paired score vectors differ in length");
  }
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  const double observed = std::abs(std::accumulate(diff.begin(), diff.end(), 0.0));

  if (n <= 20) {
    const std::uint64_t total = std::uint64_t(1) << n;
    std::uint64_t hits = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum += (mask >> i & 1) ? -diff[i] : diff[i];
      }
      if (std::abs(sum) >= observed) ++hits;
    }
    return double(hits) / double(total);
  }

  const std::uint64_t kResamples = 200000;
  Rng rng(derive_seed(0xb0a7ed5u, "sigtest"));
  std::uint64_t hits = 0;
  for (std::uint64_t r = 0; r < kResamples; ++r) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum += rng.bernoulli(0.5) ? -diff[i] : diff[i];
    }
    if (std::abs(sum) >= observed) ++hits;
  }
  return double(hits) / double(kResamples);
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string format_report_json(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw EvalError("no metrics reports to format");
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : reports) {
    summary.push_back({{"model", r.run_id},
                       {"precision", r.macro_precision},
                       {"recall", r.macro_recall},
                       {"f1_score", r.macro_f1}});
  }
  nlohmann::json label_rows = nlohmann::json::array();
  for (int l = 0; l < kNumLabels; ++l) {
    nlohmann::json scores;
    for (const auto& r : reports) {
      scores[r.run_id] = r.per_label[std::size_t(l)].f1;
    }
    label_rows.push_back({{"label", label_schema()[std::size_t(l)]},
                          {"support", reports.front().per_label[std::size_t(l)].support},
                          {"f1", scores}});
  }
  nlohmann::json doc = {{"summary", summary}, {"label_f1", label_rows}};
  return doc.dump(2);
}

std::string format_report_text(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw EvalError("no metrics reports to format");
  std::size_t model_w = 5;
  for (const auto& r : reports) model_w = std::max(model_w, r.run_id.size());
  std::size_t label_w = 5;
  for (const auto& name : label_schema()) label_w = std::max(label_w, name.size());

  std::ostringstream out;
  auto pad = [&](const std::string& s, std::size_t w) {
    out << s;
    for (std::size_t i = s.size(); i < w + 2; ++i) out << ' ';
  };
  pad("Model", model_w);
  pad("Precision", 9);
  pad("Recall", 9);
  out << "F1 Score\n";
  for (const auto& r : reports) {
    pad(r.run_id, model_w);
    pad(fixed4(r.macro_precision), 9);
    pad(fixed4(r.macro_recall), 9);
    out << fixed4(r.macro_f1) << '\n';
  }
  out << '\n';
  pad("Label", label_w);
  for (const auto& r : reports) pad(r.run_id, std::max<std::size_t>(6, r.run_id.size()));
  out << '\n';
  for (int l = 0; l < kNumLabels; ++l) {
    pad(label_schema()[std::size_t(l)], label_w);
    for (const auto& r : reports) {
      pad(fixed4(r.per_label[std::size_t(l)].f1),
          std::max<std::size_t>(6, r.run_id.size()));
    }
    out << '\n';
  }
  return out.str();
}

std::vector<LabeledReport> read_reports_jsonl(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<LabeledReport> out;
  std::unordered_set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    LabeledReport r;
    r.id = j.at("id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    for (const auto& [name, value] : j.at("labels").items()) {
      int idx = label_index(name);
      if (idx < 0) throw IngestError("lint: unknown label name: " + name);
      r.labels[std::size_t(idx)] = std::int8_t(value.get<int>());
    }
    validate_report(r);
    if (!ids.insert(r.id).second) {
      throw IngestError("duplicate report id: " + r.id);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_reports_jsonl(const std::string& path,
                         const std::vector<LabeledReport>& reports) {
  std::ostringstream out;
  for (const auto& r : reports) {
    nlohmann::json labels;
    for (int l = 0; l < kNumLabels; ++l) {
      labels[label_schema()[std::size_t(l)]] = int(r.labels[std::size_t(l)]);
    }
    nlohmann::json j = {{"id", r.id}, {"text", r.text}, {"labels", labels}};
    out << j.dump() << '\n';
  }
  write_file(path, out.str());
}

std::vector<Prediction> read_predictions_jsonl(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<Prediction> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Prediction p;
    p.id = j.at("id").get<std::string>();
    auto scores = j.at("scores").get<std::vector<double>>();
    if (scores.size() != kNumLabels) {
      throw EvalError("prediction " + p.id + " must carry 13 scores");
    }
    std::copy(scores.begin(), scores.end(), p.scores.begin());
    out.push_back(std::move(p));
  }
  return out;
}

void write_predictions_jsonl(const std::string& path,
                             const std::vector<Prediction>& predictions) {
  std::ostringstream out;
  for (const auto& p : predictions) {
    nlohmann::json j = {{"id", p.id},
                        {"scores", std::vector<double>(p.scores.begin(),
                                                       p.scores.end())}};
    out << j.dump() << '\n';
  }
  write_file(path, out.str());
}

}  // namespace balmix
