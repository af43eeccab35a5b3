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


// fedvgcn: run, compare and stats commands. Exit codes: 0 success,
// 2 configuration error, 3 data error, 1 anything else.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedvgcn/error.h"
#include "fedvgcn/harness.h"

namespace {

using namespace fedvgcn;

constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;

void print_costs(const CostCounters& c) {
  std::cout << "  train iterations " << c.train_iterations << ", messages " << c.messages
            << ", forward units " << c.forward_messages() << ", backward units "
            << c.backward_messages() << "\n  ciphertexts sent " << c.ciphertexts_sent
            << ", encryptions " << c.encryptions << ", decryptions " << c.decryptions
            << ", adds " << c.ciphertext_adds << ", scalar muls " << c.scalar_muls
            << ", max depth " << int(c.max_decrypt_depth) << "\n";
}

int run_command(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  const RunRecord r = run_experiment(cfg);
  std::cout << setting_label(cfg.setting) << " on " << cfg.name << ": mean accuracy "
            << r.mean_accuracy << " over " << r.fold_accuracies.size() << " folds, "
            << r.epochs_run << " epochs, " << r.wall_seconds << " s\n  folds:";
  for (double a : r.fold_accuracies) std::cout << ' ' << a;
  std::cout << '\n';
  if (r.costs) print_costs(*r.costs);
  if (!out.empty()) {
    append_record(out, r);
    std::cout << "  record appended to " << out.string() << '\n';
  }
  return 0;
}

int compare_command(const std::vector<std::string>& inputs, const std::filesystem::path& out) {
  std::vector<RunRecord> records;
  for (const auto& path : inputs) {
    for (auto& r : read_records(path)) records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError("no run records found");
  std::cout << compare(records);
  if (!out.empty()) {
    for (const auto& r : records) append_record(out, r);
  }
  return 0;
}

std::string infer_name(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  if (std::filesystem::is_directory(dir)) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".content") names.push_back(e.path().stem().string());
    }
  }
  if (names.size() != 1) {
    throw DataError("cannot infer the dataset name in " + dir.string() + "; pass --name");
  }
  return names.front();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vertically federated GraphSage with Paillier encryption"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string setting = "combined";
  std::string reduction = "sum";
  std::string activation = "auto";
  std::filesystem::path run_out;
  auto* run = app.add_subcommand("run", "Train and evaluate one setting with five-fold CV");
  run->add_option("--dataset", cfg.dataset_dir, "Directory holding <name>.content and <name>.cites")
      ->required();
  run->add_option("--name", cfg.name, "Dataset name")->capture_default_str();
  run->add_option("--setting", setting, "isolated_a, isolated_b, federated or combined")
      ->capture_default_str();
  run->add_option("--seed", cfg.seed, "Seed for the split, folds, init and dropout")
      ->capture_default_str();
  run->add_option("--epochs", cfg.epochs, "Full-graph training epochs")->capture_default_str();
  run->add_option("--epoch-cap", cfg.epoch_cap, "Upper bound on federated epochs (0: none)")
      ->capture_default_str();
  run->add_option("--out", run_out, "Append the run record to this JSON-lines file");
  run->add_option("--feature-ratio", cfg.feature_ratio, "Share of feature columns held by A")
      ->capture_default_str();
  run->add_option("--edge-ratio", cfg.edge_ratio, "Share of edges held by A")->capture_default_str();
  run->add_option("--key-bits", cfg.key_bits, "Paillier modulus size")->capture_default_str();
  run->add_option("--frac-bits", cfg.frac_bits, "Fixed-point fraction bits")->capture_default_str();
  run->add_option("--activation-a", activation, "Activation scale a, or auto")
      ->capture_default_str();
  run->add_option("--learning-rate", cfg.learning_rate, "SGD step size")->capture_default_str();
  run->add_option("--dropout", cfg.dropout, "Dropout rate on hidden layers")->capture_default_str();
  run->add_option("--unsup-weight", cfg.unsup_weight, "Weight of the random-walk embedding loss")
      ->capture_default_str();
  run->add_option("--reduction", reduction, "Supervised loss over training nodes: sum or mean")
      ->capture_default_str();
  run->add_option("--hidden", cfg.hidden, "Hidden layer widths")->capture_default_str()->delimiter(',');
  run->add_option("--exchanged-layers", cfg.exchanged_layers,
                  "Hidden layers computed jointly under encryption")
      ->capture_default_str();
  run->add_flag("--full-crypto", cfg.full_crypto, "2048-bit keys under the production policy");
  run->add_flag("!--no-pack", cfg.pack, "One value per ciphertext");
  run->add_option("--folds", cfg.folds, "Folds to run out of five")->capture_default_str();
  run->add_option("--max-nodes", cfg.max_nodes, "Subsample to this many nodes (0: all)")
      ->capture_default_str();

  std::vector<std::string> inputs;
  std::filesystem::path compare_out;
  auto* cmp = app.add_subcommand("compare", "Tabulate mean accuracies from run records");
  cmp->add_option("records", inputs, "JSON-lines record files")->required();
  cmp->add_option("--out", compare_out, "Also append every record to this file");

  std::filesystem::path stats_dir;
  std::string stats_name;
  auto* stats = app.add_subcommand("stats", "Print node, edge, feature and class counts");
  stats->add_option("--dataset", stats_dir, "Dataset directory")->required();
  stats->add_option("--name", stats_name, "Dataset name (default: the only *.content file)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*run) {
      cfg.setting = parse_setting(setting);
      if (reduction == "sum") {
        cfg.reduction = LossReduction::kSum;
      } else if (reduction == "mean") {
        cfg.reduction = LossReduction::kMean;
      } else {
        throw ConfigError("--reduction must be sum or mean");
      }
      if (activation == "auto") {
        cfg.activation_a = 0.0;
      } else {
        try {
          cfg.activation_a = std::stod(activation);
        } catch (const std::exception&) {
          throw ConfigError("--activation-a must be a number or auto");
        }
        if (!(cfg.activation_a > 0.0)) throw ConfigError("--activation-a must be positive");
      }
      return run_command(cfg, run_out);
    }
    if (*cmp) return compare_command(inputs, compare_out);
    const std::string name = stats_name.empty() ? infer_name(stats_dir) : stats_name;
    const Dataset d = load_planetoid_dir(stats_dir, name);
    std::cout << stats_table(d);
    const auto ref = reference_stats(d.name);
    return ref && *ref != stats_of(d) ? kDataExit : 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
