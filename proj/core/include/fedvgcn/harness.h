// Copyright 2026 The FedVGCN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Experiment runner for the four comparison settings: a model per party on
// its own slice, the federated protocol, and a model on the combined data.

#ifndef FEDVGCN_HARNESS_H_
#define FEDVGCN_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedvgcn/gnn.h"
#include "fedvgcn/graph.h"
#include "fedvgcn/protocol.h"

namespace fedvgcn {

enum class Setting { kIsolatedA, kIsolatedB, kFederated, kCombined };

std::string_view setting_name(Setting s);   // isolated_a, ...
std::string_view setting_label(Setting s);  // GraphSage_A, ..., row label
// Throws ConfigError on an unknown name.
Setting parse_setting(std::string_view name);

struct ExperimentConfig {
  std::filesystem::path dataset_dir;
  std::string name = "cora";
  Setting setting = Setting::kCombined;
  double feature_ratio = 0.5;
  double edge_ratio = 0.5;
  int epochs = 100;
  // Federated runs stop after this many epochs when positive.
  int epoch_cap = 0;
  std::uint64_t seed = 42;
  unsigned key_bits = 512;
  int frac_bits = 32;
  double activation_a = 0.0;  // <= 0: fitted from the data
  double learning_rate = 5e-4;
  double dropout = 0.5;
  double unsup_weight = 0.0;
  LossReduction reduction = LossReduction::kSum;
  std::vector<int> hidden{64, 64};
  int exchanged_layers = 1;
  // 2048-bit keys under the production policy.
  bool full_crypto = false;
  bool pack = true;
  // Folds to run out of five, first ones first.
  int folds = 5;
  // Induced subgraph on this many nodes when positive.
  int max_nodes = 0;

  // Throws ConfigError.
  void validate() const;
  int effective_epochs() const;
  unsigned effective_key_bits() const { return full_crypto ? 2048u : key_bits; }
};

struct RunRecord {
  ExperimentConfig config;
  DatasetStats stats;  // of the graph actually trained on
  std::vector<double> fold_accuracies;
  std::vector<double> fold_losses;
  std::vector<double> fold_activation_a;
  double mean_accuracy = 0.0;
  int epochs_run = 0;
  double wall_seconds = 0.0;
  std::optional<CostCounters> costs;  // federated runs only

  // Throws DataError unless accuracies are present and in [0, 1].
  void validate() const;
};

RunRecord run_experiment(const ExperimentConfig& cfg);

// One self-describing JSON object, no trailing newline.
std::string to_json_line(const RunRecord& r);
// Throws DataError on malformed input.
RunRecord record_from_json(std::string_view line);
void append_record(const std::filesystem::path& path, const RunRecord& r);
std::vector<RunRecord> read_records(const std::filesystem::path& path);

// Plain-text table: one row per setting in the fixed order isolated A,
// isolated B, federated, combined; one column per dataset. The last record
// wins when a cell is repeated.
std::string compare(std::span<const RunRecord> records);

// Statistics table for one loaded dataset, with the published numbers and
// the difference when the name is known.
std::string stats_table(const Dataset& d);

}  // namespace fedvgcn

#endif  // FEDVGCN_HARNESS_H_
