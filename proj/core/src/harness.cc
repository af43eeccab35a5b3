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


#include "fedvgcn/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "fedvgcn/error.h"

namespace fedvgcn {
namespace {

using json = nlohmann::json;

constexpr Setting kSettings[] = {Setting::kIsolatedA, Setting::kIsolatedB, Setting::kFederated,
                                 Setting::kCombined};

std::string_view reduction_name(LossReduction r) {
  return r == LossReduction::kSum ? "sum" : "mean";
}

LossReduction parse_reduction(const std::string& s) {
  if (s == "sum") return LossReduction::kSum;
  if (s == "mean") return LossReduction::kMean;
  throw DataError("unknown loss reduction '" + s + "'");
}

json config_json(const ExperimentConfig& c) {
  return {{"dataset_dir", c.dataset_dir.string()},
          {"name", c.name},
          {"setting", setting_name(c.setting)},
          {"feature_ratio", c.feature_ratio},
          {"edge_ratio", c.edge_ratio},
          {"epochs", c.epochs},
          {"epoch_cap", c.epoch_cap},
          {"seed", c.seed},
          {"key_bits", c.key_bits},
          {"frac_bits", c.frac_bits},
          {"activation_a", c.activation_a},
          {"learning_rate", c.learning_rate},
          {"dropout", c.dropout},
          {"unsup_weight", c.unsup_weight},
          {"reduction", reduction_name(c.reduction)},
          {"hidden", c.hidden},
          {"exchanged_layers", c.exchanged_layers},
          {"full_crypto", c.full_crypto},
          {"pack", c.pack},
          {"folds", c.folds},
          {"max_nodes", c.max_nodes}};
}

ExperimentConfig config_from(const json& j) {
  ExperimentConfig c;
  c.dataset_dir = j.at("dataset_dir").get<std::string>();
  c.name = j.at("name").get<std::string>();
  try {
    c.setting = parse_setting(j.at("setting").get<std::string>());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  c.feature_ratio = j.at("feature_ratio").get<double>();
  c.edge_ratio = j.at("edge_ratio").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.epoch_cap = j.at("epoch_cap").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.key_bits = j.at("key_bits").get<unsigned>();
  c.frac_bits = j.at("frac_bits").get<int>();
  c.activation_a = j.at("activation_a").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.unsup_weight = j.at("unsup_weight").get<double>();
  c.reduction = parse_reduction(j.at("reduction").get<std::string>());
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.exchanged_layers = j.at("exchanged_layers").get<int>();
  c.full_crypto = j.at("full_crypto").get<bool>();
  c.pack = j.at("pack").get<bool>();
  c.folds = j.at("folds").get<int>();
  c.max_nodes = j.at("max_nodes").get<int>();
  return c;
}

json costs_json(const CostCounters& c) {
  json layers = json::array();
  for (const auto& l : c.layers) {
    layers.push_back({{"forward_messages", l.forward_messages},
                      {"backward_messages", l.backward_messages},
                      {"ciphertext_adds", l.ciphertext_adds},
                      {"scalar_muls", l.scalar_muls}});
  }
  return {{"train_iterations", c.train_iterations},
          {"messages", c.messages},
          {"forward_messages", c.forward_messages()},
          {"backward_messages", c.backward_messages()},
          {"ciphertexts_sent", c.ciphertexts_sent},
          {"encryptions", c.encryptions},
          {"decryptions", c.decryptions},
          {"ciphertext_adds", c.ciphertext_adds},
          {"scalar_muls", c.scalar_muls},
          {"max_decrypt_depth", c.max_decrypt_depth},
          {"layers", layers}};
}

CostCounters costs_from(const json& j) {
  CostCounters c;
  for (const auto& l : j.at("layers")) {
    c.layers.push_back({l.at("forward_messages").get<std::uint64_t>(),
                        l.at("backward_messages").get<std::uint64_t>(),
                        l.at("ciphertext_adds").get<std::uint64_t>(),
                        l.at("scalar_muls").get<std::uint64_t>()});
  }
  c.train_iterations = j.at("train_iterations").get<std::uint64_t>();
  c.messages = j.at("messages").get<std::uint64_t>();
  c.ciphertexts_sent = j.at("ciphertexts_sent").get<std::uint64_t>();
  c.encryptions = j.at("encryptions").get<std::uint64_t>();
  c.decryptions = j.at("decryptions").get<std::uint64_t>();
  c.ciphertext_adds = j.at("ciphertext_adds").get<std::uint64_t>();
  c.scalar_muls = j.at("scalar_muls").get<std::uint64_t>();
  c.max_decrypt_depth = j.at("max_decrypt_depth").get<std::uint8_t>();
  return c;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string format_accuracy(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

}  // namespace

std::string_view setting_name(Setting s) {
  switch (s) {
    case Setting::kIsolatedA: return "isolated_a";
    case Setting::kIsolatedB: return "isolated_b";
    case Setting::kFederated: return "federated";
    case Setting::kCombined: return "combined";
  }
  return "?";
}

std::string_view setting_label(Setting s) {
  switch (s) {
    case Setting::kIsolatedA: return "GraphSage_A";
    case Setting::kIsolatedB: return "GraphSage_B";
    case Setting::kFederated: return "FedVGraphSage";
    case Setting::kCombined: return "GraphSage_A+B";
  }
  return "?";
}

Setting parse_setting(std::string_view name) {
  for (Setting s : kSettings) {
    if (setting_name(s) == name) return s;
  }
  throw ConfigError("unknown setting '" + std::string(name) +
                    "' (expected isolated_a, isolated_b, federated or combined)");
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(!name.empty(), "dataset name is empty");
  require(feature_ratio > 0.0 && feature_ratio < 1.0, "feature_ratio must be in (0, 1)");
  require(edge_ratio > 0.0 && edge_ratio < 1.0, "edge_ratio must be in (0, 1)");
  require(epochs >= 0, "epochs must be non-negative");
  require(epoch_cap >= 0, "epoch_cap must be non-negative");
  require(key_bits == 512 || key_bits == 1024 || key_bits == 2048 || key_bits == 3072,
          "key_bits must be 512, 1024, 2048 or 3072");
  require(frac_bits >= 8 && frac_bits <= 48, "frac_bits must be in [8, 48]");
  require(std::isfinite(activation_a), "activation_a must be finite");
  require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(std::isfinite(unsup_weight) && unsup_weight >= 0.0, "unsup_weight must be non-negative");
  require(!hidden.empty(), "at least one hidden layer is needed");
  for (int h : hidden) require(h > 0, "hidden widths must be positive");
  require(exchanged_layers >= 1 && exchanged_layers <= static_cast<int>(hidden.size()),
          "exchanged_layers must be in [1, number of hidden layers]");
  require(folds >= 1 && folds <= 5, "folds must be in [1, 5]");
  require(max_nodes >= 0, "max_nodes must be non-negative");
}

int ExperimentConfig::effective_epochs() const {
  if (setting == Setting::kFederated && epoch_cap > 0) return std::min(epochs, epoch_cap);
  return epochs;
}

void RunRecord::validate() const {
  if (fold_accuracies.empty()) throw DataError("run record has no fold accuracies");
  for (double a : fold_accuracies) {
    if (!(a >= 0.0 && a <= 1.0)) throw DataError("accuracy outside [0, 1]");
  }
  if (!(mean_accuracy >= 0.0 && mean_accuracy <= 1.0)) throw DataError("mean accuracy outside [0, 1]");
}

RunRecord run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Dataset d = load_planetoid_dir(cfg.dataset_dir, cfg.name);
  if (cfg.max_nodes > 0) d = subsample(d, cfg.max_nodes, cfg.seed);
  auto [a, b] = split_vertical(d, cfg.feature_ratio, cfg.edge_ratio, cfg.seed);
  const auto folds = five_fold(d.num_nodes(), cfg.seed);
  const std::vector<int>& labels = *b.labels;
  const int classes = b.num_classes;

  TrainOptions opt;
  opt.epochs = cfg.effective_epochs();
  opt.seed = cfg.seed;
  opt.learning_rate = cfg.learning_rate;
  opt.dropout_rate = cfg.dropout;
  opt.activation_a = cfg.activation_a;
  opt.reduction = cfg.reduction;
  opt.unsup_weight = cfg.unsup_weight;

  RunRecord r;
  r.config = cfg;
  r.epochs_run = opt.epochs;
  r.stats = stats_of(d);

  auto record_fold = [&](const FoldResult& f) {
    r.fold_accuracies.push_back(f.accuracy);
    r.fold_losses.push_back(f.final_loss);
    r.fold_activation_a.push_back(f.activation_a);
  };

  if (cfg.setting == Setting::kFederated) {
    FederatedOptions fed;
    fed.exchanged_layers = cfg.exchanged_layers;
    fed.hidden = cfg.hidden;
    fed.session.key_bits = cfg.effective_key_bits();
    fed.session.key_policy = cfg.full_crypto || cfg.key_bits >= 2048 ? KeyPolicy::kProduction
                                                                      : KeyPolicy::kTest;
    fed.session.frac_bits = cfg.frac_bits;
    fed.session.seed = cfg.seed;
    fed.session.pack = cfg.pack;
    const PartyData pa = party_data(a), pb = party_data(b);
    CostCounters costs;
    for (int f = 0; f < cfg.folds; ++f) {
      record_fold(train_federated_fold(pa, pb, folds[f], opt, fed, &costs));
    }
    r.costs = costs;
  } else {
    Eigen::MatrixXd x;
    std::vector<Edge> edges;
    switch (cfg.setting) {
      case Setting::kIsolatedA:
        x = a.features;
        edges = a.edges;
        break;
      case Setting::kIsolatedB:
        x = b.features;
        edges = b.edges;
        break;
      default: {
        Dataset full = reconstruct(a, b);
        x = std::move(full.features);
        edges = std::move(full.edges);
      }
    }
    const GraphInput input = make_graph_input(x, {edges});
    const SageNetwork net(combined_plan(static_cast<int>(x.cols()), classes, cfg.hidden), input);
    for (int f = 0; f < cfg.folds; ++f) record_fold(train_fold(net, labels, folds[f], opt));
  }
  r.mean_accuracy = mean(r.fold_accuracies);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.validate();
  return r;
}

std::string to_json_line(const RunRecord& r) {
  json j{{"record", "fedvgcn.run"},
         {"dataset", r.config.name},
         {"setting", setting_name(r.config.setting)},
         {"label", setting_label(r.config.setting)},
         {"config", config_json(r.config)},
         {"stats",
          {{"nodes", r.stats.nodes},
           {"edges", r.stats.edges},
           {"features", r.stats.features},
           {"classes", r.stats.classes}}},
         {"fold_accuracies", r.fold_accuracies},
         {"fold_losses", r.fold_losses},
         {"fold_activation_a", r.fold_activation_a},
         {"mean_accuracy", r.mean_accuracy},
         {"epochs_run", r.epochs_run},
         {"wall_seconds", r.wall_seconds},
         {"costs", r.costs ? costs_json(*r.costs) : json(nullptr)}};
  return j.dump();
}

RunRecord record_from_json(std::string_view line) {
  RunRecord r;
  try {
    const json j = json::parse(line);
    r.config = config_from(j.at("config"));
    const json& s = j.at("stats");
    r.stats = {s.at("nodes").get<long>(), s.at("edges").get<long>(), s.at("features").get<long>(),
               s.at("classes").get<long>()};
    r.fold_accuracies = j.at("fold_accuracies").get<std::vector<double>>();
    r.fold_losses = j.at("fold_losses").get<std::vector<double>>();
    r.fold_activation_a = j.at("fold_activation_a").get<std::vector<double>>();
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    r.epochs_run = j.at("epochs_run").get<int>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    if (!j.at("costs").is_null()) r.costs = costs_from(j.at("costs"));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run record: ") + e.what());
  }
  r.validate();
  return r;
}

void append_record(const std::filesystem::path& path, const RunRecord& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json_line(r) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<RunRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(record_from_json(line));
  }
  return out;
}

std::string compare(std::span<const RunRecord> records) {
  // Known datasets first, in the usual column order.
  std::vector<std::string> columns;
  for (const char* known : {"cora", "pubmed", "citeseer"}) {
    for (const auto& r : records) {
      if (r.config.name == known) {
        columns.push_back(known);
        break;
      }
    }
  }
  for (const auto& r : records) {
    if (std::find(columns.begin(), columns.end(), r.config.name) == columns.end()) {
      columns.push_back(r.config.name);
    }
  }
  std::map<std::pair<Setting, std::string>, double> cells;
  for (const auto& r : records) {
    r.validate();
    cells[{r.config.setting, r.config.name}] = r.mean_accuracy;
  }

  std::vector<std::vector<std::string>> rows{{"Dataset"}};
  for (const auto& c : columns) {
    std::string title = c;
    if (!title.empty()) title[0] = static_cast<char>(std::toupper(title[0]));
    rows[0].push_back(title);
  }
  for (Setting s : kSettings) {
    std::vector<std::string> row{std::string(setting_label(s))};
    bool any = false;
    for (const auto& c : columns) {
      auto it = cells.find({s, c});
      if (it == cells.end()) {
        row.push_back("-");
      } else {
        row.push_back(format_accuracy(it->second));
        any = true;
      }
    }
    if (any) rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < rows[k].size(); ++i) {
      if (i > 0) out << "  ";
      if (i == 0) {
        out << std::left << std::setw(int(width[i])) << rows[k][i];
      } else {
        out << std::right << std::setw(int(width[i])) << rows[k][i];
      }
    }
    out << '\n';
    if (k == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

std::string stats_table(const Dataset& d) {
  const DatasetStats got = stats_of(d);
  const auto ref = reference_stats(d.name);
  std::ostringstream out;
  out << std::left << std::setw(12) << "Dataset" << std::right << std::setw(8) << "Nodes"
      << std::setw(8) << "Edges" << std::setw(10) << "Features" << std::setw(9) << "Classes"
      << '\n';
  auto line = [&](const std::string& label, const DatasetStats& s) {
    out << std::left << std::setw(12) << label << std::right << std::setw(8) << s.nodes
        << std::setw(8) << s.edges << std::setw(10) << s.features << std::setw(9) << s.classes
        << '\n';
  };
  line(d.name, got);
  if (ref) {
    line("published", *ref);
    const DatasetStats delta{got.nodes - ref->nodes, got.edges - ref->edges,
                             got.features - ref->features, got.classes - ref->classes};
    line("delta", delta);
    out << (delta == DatasetStats{} ? "matches the published statistics\n"
                                    : "MISMATCH with the published statistics\n");
  }
  const LoadReport& rep = d.report;
  out << "dropped while loading: " << rep.unknown_endpoint_rows << " edge rows with unknown ids, "
      << rep.self_loops << " self loops, " << rep.duplicate_edges << " duplicates\n";
  return out.str();
}

}  // namespace fedvgcn
