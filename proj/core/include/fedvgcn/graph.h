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

// Planetoid-style citation graphs and their vertical split between the
// passive party A and the label-holding active party B.

#ifndef FEDVGCN_GRAPH_H_
#define FEDVGCN_GRAPH_H_

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iterator>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fedvgcn/error.h"

namespace fedvgcn {

using Edge = std::pair<int, int>;  // canonical (min, max) node indices

struct LoadReport {
  std::size_t unknown_endpoint_rows = 0;
  std::size_t self_loops = 0;
  std::size_t duplicate_edges = 0;
};

struct Dataset {
  std::string name;
  std::vector<std::string> node_ids;
  Eigen::MatrixXd features;  // nodes x feature_dim
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<Edge> edges;  // sorted, de-duplicated
  LoadReport report;

  int num_nodes() const { return static_cast<int>(node_ids.size()); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }

  // Throws DataError on any broken invariant.
  void validate() const;
};

struct DatasetStats {
  long nodes = 0;
  long edges = 0;
  long features = 0;
  long classes = 0;

  bool operator==(const DatasetStats&) const = default;
};

DatasetStats stats_of(const Dataset& d);
// Published statistics for cora, citeseer and pubmed; nullopt otherwise.
std::optional<DatasetStats> reference_stats(const std::string& name);

Dataset load_planetoid(const std::filesystem::path& content_path,
                       const std::filesystem::path& cites_path,
                       std::string name = "");
// Reads <dir>/<name>.content and <dir>/<name>.cites.
Dataset load_planetoid_dir(const std::filesystem::path& dir,
                           const std::string& name);

// Induced subgraph on `max_nodes` nodes chosen by a seeded shuffle, kept in
// original order. Returns the input unchanged when it is already small enough.
Dataset subsample(const Dataset& d, int max_nodes, std::uint64_t seed);

enum class Party : std::uint8_t { kPassive = 0, kActive = 1 };

struct VerticalView {
  Party party = Party::kPassive;
  std::vector<std::string> node_ids;
  std::vector<int> feature_columns;  // original column index of each column
  Eigen::MatrixXd features;
  std::vector<Edge> edges;
  std::optional<std::vector<int>> labels;  // active party only
  int num_classes = 0;
};

// Sorted intersection; throws DataError when empty.
template <typename Id>
std::vector<Id> align_nodes(std::vector<Id> a, std::vector<Id> b) {
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  std::vector<Id> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                        std::back_inserter(out));
  if (out.empty()) throw DataError("parties share no node ids");
  return out;
}

// Feature columns and edges are shuffled by the seed; the first
// floor(ratio * count) go to A and the rest to B. Labels go to B.
std::pair<VerticalView, VerticalView> split_vertical(const Dataset& d,
                                                     double feature_ratio,
                                                     double edge_ratio,
                                                     std::uint64_t seed);

// Inverse of split_vertical: features in original column order, union of
// edges, labels from B.
Dataset reconstruct(const VerticalView& a, const VerticalView& b);

struct FoldSplit {
  int fold_index = 0;
  std::vector<int> train_ids;  // sorted node indices
  std::vector<int> test_ids;   // sorted node indices
};

std::vector<FoldSplit> five_fold(int num_nodes, std::uint64_t seed);

// Seeded Fisher-Yates permutation of [0, n).
std::vector<int> seeded_permutation(int n, std::uint64_t seed);

}  // namespace fedvgcn

#endif  // FEDVGCN_GRAPH_H_
