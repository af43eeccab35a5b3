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

#include "fedvgcn/graph.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "fedvgcn/error.h"

namespace fedvgcn {
namespace {

namespace fs = std::filesystem;

const fs::path kToy = FEDVGCN_TEST_DATA_DIR;
const fs::path kData = FEDVGCN_DATA_DIR;

fs::path write_temp(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("fedvgcn_graph_" + name);
  std::ofstream(p) << body;
  return p;
}

const Dataset& cora() {
  static const Dataset d = load_planetoid_dir(kData / "cora", "cora");
  return d;
}

TEST(LoadTest, ToyFixtureEchoesContents) {
  const Dataset d = load_planetoid_dir(kToy, "toy3");
  EXPECT_EQ(d.node_ids, (std::vector<std::string>{"p1", "p2", "p3"}));
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"Alpha", "Beta"}));
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 0}));
  ASSERT_EQ(d.features.rows(), 3);
  ASSERT_EQ(d.features.cols(), 3);
  EXPECT_EQ(d.features(0, 2), 0.5);
  EXPECT_EQ(d.features(2, 0), 1.0);
  EXPECT_EQ(d.edges, (std::vector<Edge>{{0, 1}, {1, 2}}));
  EXPECT_EQ(stats_of(d), (DatasetStats{3, 2, 3, 2}));
}

TEST(LoadTest, CountsDroppedRows) {
  const auto content = write_temp("c1.content", "a 1 0 X\nb 0 1 Y\nc 1 1 X\n");
  const auto cites = write_temp("c1.cites", "a b\nb a\nc c\na zz\nc a\n");
  const Dataset d = load_planetoid(content, cites);
  EXPECT_EQ(d.edges, (std::vector<Edge>{{0, 1}, {0, 2}}));
  EXPECT_EQ(d.report.duplicate_edges, 1u);
  EXPECT_EQ(d.report.self_loops, 1u);
  EXPECT_EQ(d.report.unknown_endpoint_rows, 1u);
}

TEST(LoadTest, RejectsMalformedInput) {
  const auto good_cites = write_temp("ok.cites", "a b\n");
  EXPECT_THROW(load_planetoid(write_temp("e.content", ""), good_cites), DataError);
  EXPECT_THROW(load_planetoid(write_temp("s.content", "a X\n"), good_cites), DataError);
  EXPECT_THROW(load_planetoid(write_temp("w.content", "a 1 0 X\nb 1 Y\n"), good_cites),
               DataError);
  EXPECT_THROW(load_planetoid(write_temp("n.content", "a 1 q X\nb 1 0 Y\n"), good_cites),
               DataError);
  EXPECT_THROW(load_planetoid(write_temp("d.content", "a 1 0 X\na 1 0 Y\n"), good_cites),
               DataError);
  const auto content = write_temp("ok.content", "a 1 0 X\nb 0 1 Y\n");
  EXPECT_THROW(load_planetoid(content, write_temp("e.cites", "\n")), DataError);
  EXPECT_THROW(load_planetoid(content, write_temp("t.cites", "a b c\n")), DataError);
  EXPECT_THROW(load_planetoid(content, "/nonexistent/x.cites"), DataError);
}

TEST(LoadTest, CoraShape) {
  const Dataset& d = cora();
  EXPECT_EQ(d.num_nodes(), 2708);
  EXPECT_EQ(d.feature_dim(), 1433);
  EXPECT_EQ(d.num_classes(), 7);
  // The LINQS release has 5429 citation rows; as undirected pairs they
  // collapse to 5278 distinct edges. See the acceptance suite for the
  // comparison against the published count.
  EXPECT_EQ(d.edges.size(), 5278u);
  EXPECT_EQ(d.report.duplicate_edges + d.edges.size() + d.report.self_loops, 5429u);
  EXPECT_EQ(d.report.unknown_endpoint_rows, 0u);
  EXPECT_EQ(reference_stats("cora")->nodes, 2708);
  EXPECT_EQ(reference_stats("cora")->edges, 5409);
  EXPECT_FALSE(reference_stats("toy").has_value());
}

TEST(AlignTest, Examples) {
  EXPECT_EQ(align_nodes<int>({3, 1, 2}, {2, 1, 3}), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(align_nodes<int>({1, 2, 3}, {2, 3, 4}), (std::vector<int>{2, 3}));
  EXPECT_THROW(align_nodes<int>({1, 2}, {3, 4}), DataError);
}

TEST(AlignTest, IndependentOfInputOrder) {
  std::vector<std::string> a{"x", "b", "q", "m", "a"}, b{"m", "q", "z", "a"};
  const auto ref = align_nodes(a, b);
  for (int i = 0; i < 10; ++i) {
    std::next_permutation(a.begin(), a.end());
    std::prev_permutation(b.begin(), b.end());
    EXPECT_EQ(align_nodes(a, b), ref);
    EXPECT_EQ(align_nodes(b, a), ref);
  }
}

TEST(SplitTest, CoraColumnCounts) {
  const auto [a, b] = split_vertical(cora(), 0.5, 0.5, 1);
  EXPECT_EQ(a.features.cols(), 716);
  EXPECT_EQ(b.features.cols(), 717);
  EXPECT_EQ(a.edges.size(), 2639u);
  EXPECT_EQ(b.edges.size(), 2639u);
  EXPECT_FALSE(a.labels.has_value());
  ASSERT_TRUE(b.labels.has_value());
  EXPECT_EQ(a.node_ids, b.node_ids);
}

TEST(SplitTest, ToyEdgesHalved) {
  const Dataset d = load_planetoid_dir(kToy, "toy10");
  ASSERT_EQ(d.edges.size(), 10u);
  const auto [a, b] = split_vertical(d, 0.5, 0.5, 9);
  EXPECT_EQ(a.edges.size(), 5u);
  EXPECT_EQ(b.edges.size(), 5u);
  std::set<Edge> ea(a.edges.begin(), a.edges.end());
  for (const auto& e : b.edges) EXPECT_FALSE(ea.count(e));
}

TEST(SplitTest, DeterministicPerSeed) {
  const Dataset d = load_planetoid_dir(kToy, "toy10");
  const auto [a1, b1] = split_vertical(d, 0.5, 0.5, 4);
  const auto [a2, b2] = split_vertical(d, 0.5, 0.5, 4);
  EXPECT_EQ(a1.feature_columns, a2.feature_columns);
  EXPECT_EQ(a1.edges, a2.edges);
  EXPECT_EQ(b1.edges, b2.edges);
  EXPECT_EQ(a1.features, a2.features);
  const auto [a3, b3] = split_vertical(cora(), 0.5, 0.5, 5);
  const auto [a4, b4] = split_vertical(cora(), 0.5, 0.5, 6);
  EXPECT_NE(a3.feature_columns, a4.feature_columns);
}

TEST(SplitTest, ReconstructionIsExact) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto [a, b] = split_vertical(cora(), 0.3, 0.7, seed);
    std::set<int> ca(a.feature_columns.begin(), a.feature_columns.end());
    for (int c : b.feature_columns) EXPECT_FALSE(ca.count(c));
    EXPECT_EQ(ca.size() + b.feature_columns.size(), 1433u);
    const Dataset r = reconstruct(a, b);
    EXPECT_EQ(r.features, cora().features);
    EXPECT_EQ(r.edges, cora().edges);
    EXPECT_EQ(r.labels, cora().labels);
  }
}

TEST(SplitTest, RejectsBadRatios) {
  const Dataset d = load_planetoid_dir(kToy, "toy3");
  EXPECT_THROW(split_vertical(d, 0.0, 0.5, 1), ConfigError);
  EXPECT_THROW(split_vertical(d, 0.5, 1.0, 1), ConfigError);
  EXPECT_THROW(split_vertical(d, 0.1, 0.5, 1), ConfigError);  // 0 columns for A
  EXPECT_THROW(split_vertical(d, 0.5, 0.2, 1), ConfigError);  // 0 edges for A
}

TEST(FoldTest, ToyFolds) {
  const auto folds = five_fold(10, 1);
  ASSERT_EQ(folds.size(), 5u);
  std::set<int> all;
  for (const auto& f : folds) {
    EXPECT_EQ(f.test_ids.size(), 2u);
    EXPECT_EQ(f.train_ids.size(), 8u);
    for (int t : f.test_ids) EXPECT_TRUE(all.insert(t).second);
  }
  EXPECT_EQ(all.size(), 10u);
}

TEST(FoldTest, CoraFoldSizes) {
  const auto folds = five_fold(2708, 7);
  std::multiset<std::size_t> sizes;
  for (const auto& f : folds) {
    sizes.insert(f.test_ids.size());
    EXPECT_EQ(f.test_ids.size() + f.train_ids.size(), 2708u);
  }
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{541, 541, 542, 542, 542}));
}

TEST(FoldTest, DeterministicAndValidated) {
  const auto a = five_fold(100, 3), b = five_fold(100, 3);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a[i].test_ids, b[i].test_ids);
  EXPECT_THROW(five_fold(4, 1), DataError);
}

TEST(SubsampleTest, InducedSubgraph) {
  const Dataset s = subsample(cora(), 500, 2);
  EXPECT_EQ(s.num_nodes(), 500);
  EXPECT_EQ(s.feature_dim(), 1433);
  EXPECT_LT(s.edges.size(), cora().edges.size());
  const Dataset same = subsample(cora(), 5000, 2);
  EXPECT_EQ(same.num_nodes(), 2708);
}

}  // namespace
}  // namespace fedvgcn
