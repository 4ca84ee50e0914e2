// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_DATASETS_HPP_
#define BALMIX_DATASETS_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace balmix {

inline constexpr int kNumLabels = 13;

// Fixed, ordered head-CT observation labels. The last one, "No Findings",
// is mutually exclusive with all others.
const std::array<std::string, kNumLabels>& label_schema();
int label_index(std::string_view name);  // -1 when unknown

struct LabeledReport {
  std::string id;
  std::string text;
  std::array<std::int8_t, kNumLabels> labels{};
};

// Lint: values binary, No-Findings exclusivity. Throws IngestError.
void validate_report(const LabeledReport& report);

enum class Split { kTrain = 0, kValidation = 1, kTest = 2 };
std::string_view split_name(Split s);
Split split_from_name(std::string_view name);

struct SplitAssignment {
  std::map<std::string, Split> assignment;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  std::array<std::size_t, 3> sizes() const;
  std::string to_json() const;
  static SplitAssignment from_json(const std::string& text);
};

// Iterative stratification, rarest label first, with exact split sizes
// (largest-remainder quotas). Labels with >= 3 positives are guaranteed a
// positive in every split before proportional assignment starts.
SplitAssignment stratified_split(const std::vector<LabeledReport>& reports,
                                 const std::array<double, 3>& fractions,
                                 std::uint64_t seed);

struct Prediction {
  std::string id;
  std::array<double, kNumLabels> scores{};
};

struct LabelMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  std::uint64_t tp = 0, fp = 0, fn = 0;
};

struct MetricsReport {
  std::string run_id;
  std::array<LabelMetrics, kNumLabels> per_label{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

// Scores strictly above the threshold count as positive. Zero-denominator
// precision/recall/F1 are defined as 0. Gold and prediction id sets must
// match exactly (EvalError otherwise).
MetricsReport per_label_metrics(const std::vector<LabeledReport>& gold,
                                const std::vector<Prediction>& predictions,
                                double threshold = 0.5,
                                const std::string& run_id = "run");

// Exact paired sign-flip test: p = share of the 2^n sign assignments whose
// |mean difference| >= the observed one. n <= 20 enumerates exhaustively;
// larger n falls back to 200,000 seeded random assignments.
double significance_test(const std::vector<double>& a,
                         const std::vector<double>& b);

std::string format_report_json(const std::vector<MetricsReport>& reports);
std::string format_report_text(const std::vector<MetricsReport>& reports);

// JSON-lines {"id","text","labels":{name:0|1,...}}; labels validated
// against the schema, omitted names default to 0.
std::vector<LabeledReport> read_reports_jsonl(const std::string& path);
void write_reports_jsonl(const std::string& path,
                         const std::vector<LabeledReport>& reports);

// JSON-lines {"id","scores":[13 reals]}.
std::vector<Prediction> read_predictions_jsonl(const std::string& path);
void write_predictions_jsonl(const std::string& path,
                             const std::vector<Prediction>& predictions);

}  // namespace balmix

#endif  // BALMIX_DATASETS_HPP_
