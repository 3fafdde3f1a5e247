// Copyright 2026 The StageRefine Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stagerefine/eval.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "stagerefine/errors.h"
#include "stagerefine/trainer.h"

namespace stagerefine {
namespace {

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * fraction);
  return buf;
}

std::string pct(const std::optional<double>& fraction) {
  return fraction ? pct(*fraction) : "NA";
}

std::string fraction_text(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_optional(const std::string& s) {
  if (s == "NA") return std::nullopt;
  return std::stod(s);
}

constexpr const char* kReportHeader =
    "method,dataset,noise_pct,seed,test_accuracy_pct,"
    "initial_label_accuracy_pct,final_label_accuracy_pct,iterations";

}  // namespace

double accuracy(std::span<const int> predictions,
                std::span<const int> labels) {
  if (labels.empty()) throw ContractError("accuracy of an empty set");
  if (predictions.size() != labels.size()) {
    throw ContractError("accuracy: " + std::to_string(predictions.size()) +
                        " predictions for " + std::to_string(labels.size()) +
                        " labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += predictions[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const ModelState& model, const LabeledImageDataset& test_set) {
  if (test_set.size() == 0) throw ContractError("accuracy of an empty set");
  const std::vector<int> predictions = predict_labels(model, test_set);
  return accuracy(predictions, LabelOracle::clean_labels(test_set));
}

std::optional<std::vector<QualityRow>> label_quality(
    const RefinementState& state,
    std::optional<std::span<const int>> clean_labels,
    std::span<const int> initial_labels) {
  if (!clean_labels) return std::nullopt;
  const std::span<const int> clean = *clean_labels;
  if (initial_labels.size() != clean.size()) {
    throw IntegrityError("label_quality: initial and clean tracks differ");
  }
  std::vector<QualityRow> rows;
  QualityRow first;
  if (!clean.empty()) {
    first.working_label_accuracy = accuracy(initial_labels, clean);
    first.base_clean_fraction = first.working_label_accuracy;
  }
  rows.push_back(first);
  for (const IterationRecord& r : state.history) {
    if (r.labels_before.size() != clean.size() ||
        r.labels_after.size() != clean.size()) {
      throw IntegrityError("label_quality: iteration record length mismatch");
    }
    QualityRow row;
    row.iteration = r.iteration;
    if (!clean.empty()) {
      row.working_label_accuracy =
          accuracy(std::span<const int>(r.labels_after), clean);
      row.base_clean_fraction =
          accuracy(std::span<const int>(r.labels_before), clean);
    }
    row.consensus_size = static_cast<std::int64_t>(r.consensus.size());
    if (!r.consensus.empty()) {
      std::size_t clean_before = 0;
      std::size_t clean_after = 0;
      for (std::size_t id : r.consensus) {
        clean_before += r.labels_before[id] == clean[id] ? 1 : 0;
        clean_after += r.labels_after[id] == clean[id] ? 1 : 0;
      }
      const double m = static_cast<double>(r.consensus.size());
      row.consensus_clean_fraction = clean_before / m;
      row.pseudo_label_precision = clean_after / m;
    }
    for (std::size_t i = 0; i < clean.size(); ++i) {
      row.labels_changed += r.labels_before[i] != r.labels_after[i] ? 1 : 0;
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<QualityRow> label_quality(const RefinementState& state,
                                      const LabeledImageDataset& dataset) {
  return *label_quality(
      state, std::span<const int>(LabelOracle::clean_labels(dataset)),
      dataset.noisy_labels());
}

void emit_report(std::span<const MetricsReport> reports,
                 const std::filesystem::path& path) {
  if (reports.empty()) throw ContractError("emit_report: no reports");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << kReportHeader << '\n';
  for (const MetricsReport& r : reports) {
    std::optional<double> initial;
    std::optional<double> final;
    if (!r.quality.empty()) {
      initial = r.quality.front().working_label_accuracy;
      final = r.quality.back().working_label_accuracy;
    }
    out << r.method << ',' << r.dataset << ',' << pct(r.noise_rate) << ','
        << r.seed << ',' << pct(r.test_accuracy) << ',' << pct(initial) << ','
        << pct(final) << ','
        << (r.quality.empty() ? 0 : r.quality.back().iteration) << '\n';
  }
  if (!out) throw IoError("failed while writing report " + path.string());
}

std::vector<ReportRow> read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open report " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw IngestionError("report " + path.string() +
                         " has an unexpected header");
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8) {
      throw IngestionError("report " + path.string() + " row has " +
                           std::to_string(f.size()) + " fields");
    }
    ReportRow row;
    row.method = f[0];
    row.dataset = f[1];
    row.noise_pct = std::stod(f[2]);
    row.seed = std::stoull(f[3]);
    row.test_accuracy_pct = std::stod(f[4]);
    row.initial_label_accuracy_pct = parse_optional(f[5]);
    row.final_label_accuracy_pct = parse_optional(f[6]);
    row.iterations = std::stoi(f[7]);
    rows.push_back(std::move(row));
  }
  return rows;
}

void emit_quality_csv(std::span<const QualityRow> rows,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,working_label_accuracy,base_clean_fraction,"
         "consensus_size,consensus_clean_fraction,pseudo_label_precision,"
         "labels_changed\n";
  for (const QualityRow& r : rows) {
    out << r.iteration << ',' << fraction_text(r.working_label_accuracy)
        << ',' << fraction_text(r.base_clean_fraction) << ','
        << r.consensus_size << ',' << fraction_text(r.consensus_clean_fraction)
        << ',' << fraction_text(r.pseudo_label_precision) << ','
        << r.labels_changed << '\n';
  }
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace stagerefine
