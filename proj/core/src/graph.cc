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

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "fedvgcn/entropy.h"

namespace fedvgcn {
namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(std::move(tok));
  return out;
}

std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

double parse_real(const std::string& s, const std::string& where) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (errno != 0 || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw DataError("bad feature value '" + s + "' " + where);
  }
  return v;
}

void check_ratio(double r, const char* what) {
  if (!(r > 0.0 && r < 1.0)) {
    throw ConfigError(std::string(what) + " must lie strictly between 0 and 1");
  }
}

}  // namespace

void Dataset::validate() const {
  const int n = num_nodes();
  if (feature_dim() <= 0) throw DataError("dataset has no features");
  if (features.rows() != n) throw DataError("feature rows != node count");
  if (static_cast<int>(labels.size()) != n) throw DataError("label count != node count");
  for (int y : labels) {
    if (y < 0 || y >= num_classes()) throw DataError("label out of range");
  }
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) throw DataError("edge endpoint out of range");
  }
}

DatasetStats stats_of(const Dataset& d) {
  return {d.num_nodes(), static_cast<long>(d.edges.size()), d.feature_dim(),
          d.num_classes()};
}

std::optional<DatasetStats> reference_stats(const std::string& name) {
  static const std::map<std::string, DatasetStats> kTable = {
      {"cora", {2708, 5409, 1433, 7}},
      {"pubmed", {19717, 44338, 500, 3}},
      {"citeseer", {3327, 4732, 3703, 6}},
  };
  auto it = kTable.find(name);
  if (it == kTable.end()) return std::nullopt;
  return it->second;
}

Dataset load_planetoid(const std::filesystem::path& content_path,
                       const std::filesystem::path& cites_path,
                       std::string name) {
  Dataset d;
  d.name = std::move(name);

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  std::unordered_map<std::string, int> index;
  {
    auto in = open_or_throw(content_path);
    std::string line;
    long lineno = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto tok = split_ws(line);
      if (tok.empty()) continue;
      const std::string where = "at " + content_path.filename().string() + ":" +
                                std::to_string(lineno);
      if (tok.size() < 3) throw DataError("content row needs id, features, label " + where);
      if (width == 0) width = tok.size() - 2;
      if (tok.size() - 2 != width) throw DataError("inconsistent feature count " + where);
      if (!index.emplace(tok.front(), static_cast<int>(d.node_ids.size())).second) {
        throw DataError("duplicate node id " + tok.front() + " " + where);
      }
      std::vector<double> f(width);
      for (std::size_t j = 0; j < width; ++j) f[j] = parse_real(tok[j + 1], where);
      rows.push_back(std::move(f));
      d.node_ids.push_back(tok.front());
      raw_labels.push_back(tok.back());
    }
    if (rows.empty()) throw DataError("empty content file " + content_path.string());
  }

  std::set<std::string> names(raw_labels.begin(), raw_labels.end());
  d.class_names.assign(names.begin(), names.end());
  std::map<std::string, int> class_index;
  for (std::size_t i = 0; i < d.class_names.size(); ++i) {
    class_index[d.class_names[i]] = static_cast<int>(i);
  }
  d.labels.reserve(raw_labels.size());
  for (const auto& l : raw_labels) d.labels.push_back(class_index[l]);

  d.features.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) d.features(i, j) = rows[i][j];
  }

  {
    auto in = open_or_throw(cites_path);
    std::string line;
    long lineno = 0;
    bool any = false;
    std::set<Edge> seen;
    while (std::getline(in, line)) {
      ++lineno;
      const auto tok = split_ws(line);
      if (tok.empty()) continue;
      any = true;
      if (tok.size() != 2) {
        throw DataError("cites row needs two ids at " +
                        cites_path.filename().string() + ":" + std::to_string(lineno));
      }
      auto a = index.find(tok[0]);
      auto b = index.find(tok[1]);
      if (a == index.end() || b == index.end()) {
        ++d.report.unknown_endpoint_rows;
        continue;
      }
      if (a->second == b->second) {
        ++d.report.self_loops;
        continue;
      }
      const Edge e{std::min(a->second, b->second), std::max(a->second, b->second)};
      if (!seen.insert(e).second) ++d.report.duplicate_edges;
    }
    if (!any) throw DataError("empty cites file " + cites_path.string());
    d.edges.assign(seen.begin(), seen.end());
  }
  d.validate();
  return d;
}

Dataset load_planetoid_dir(const std::filesystem::path& dir,
                           const std::string& name) {
  return load_planetoid(dir / (name + ".content"), dir / (name + ".cites"), name);
}

std::vector<int> seeded_permutation(int n, std::uint64_t seed) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  SeededEntropy rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

Dataset subsample(const Dataset& d, int max_nodes, std::uint64_t seed) {
  if (max_nodes <= 0) throw ConfigError("max_nodes must be positive");
  if (d.num_nodes() <= max_nodes) return d;
  auto perm = seeded_permutation(d.num_nodes(), mix_words({seed, 0x5ab5}));
  perm.resize(max_nodes);
  std::sort(perm.begin(), perm.end());
  std::vector<int> remap(d.num_nodes(), -1);
  Dataset out;
  out.name = d.name;
  out.class_names = d.class_names;
  out.features.resize(max_nodes, d.feature_dim());
  for (int i = 0; i < max_nodes; ++i) {
    remap[perm[i]] = i;
    out.node_ids.push_back(d.node_ids[perm[i]]);
    out.labels.push_back(d.labels[perm[i]]);
    out.features.row(i) = d.features.row(perm[i]);
  }
  for (const auto& [u, v] : d.edges) {
    if (remap[u] >= 0 && remap[v] >= 0) out.edges.emplace_back(remap[u], remap[v]);
  }
  out.validate();
  return out;
}

std::pair<VerticalView, VerticalView> split_vertical(const Dataset& d,
                                                     double feature_ratio,
                                                     double edge_ratio,
                                                     std::uint64_t seed) {
  check_ratio(feature_ratio, "feature_ratio");
  check_ratio(edge_ratio, "edge_ratio");
  const int k = d.feature_dim();
  const int m = static_cast<int>(d.edges.size());
  const int ka = static_cast<int>(std::floor(feature_ratio * k));
  const int ma = static_cast<int>(std::floor(edge_ratio * m));
  if (ka == 0 || ka == k) throw ConfigError("feature_ratio leaves one party without features");
  if (ma == 0 || ma == m) throw ConfigError("edge_ratio leaves one party without edges");

  const auto cols = seeded_permutation(k, mix_words({seed, 1}));
  const auto eperm = seeded_permutation(m, mix_words({seed, 2}));

  VerticalView a, b;
  a.party = Party::kPassive;
  b.party = Party::kActive;
  a.node_ids = b.node_ids = d.node_ids;
  a.num_classes = b.num_classes = d.num_classes();
  a.feature_columns.assign(cols.begin(), cols.begin() + ka);
  b.feature_columns.assign(cols.begin() + ka, cols.end());
  auto take = [&](const std::vector<int>& c) {
    Eigen::MatrixXd out(d.num_nodes(), static_cast<Eigen::Index>(c.size()));
    for (std::size_t j = 0; j < c.size(); ++j) out.col(j) = d.features.col(c[j]);
    return out;
  };
  a.features = take(a.feature_columns);
  b.features = take(b.feature_columns);
  for (int i = 0; i < m; ++i) {
    (i < ma ? a.edges : b.edges).push_back(d.edges[eperm[i]]);
  }
  std::sort(a.edges.begin(), a.edges.end());
  std::sort(b.edges.begin(), b.edges.end());
  b.labels = d.labels;
  return {std::move(a), std::move(b)};
}

Dataset reconstruct(const VerticalView& a, const VerticalView& b) {
  if (a.node_ids != b.node_ids) throw DataError("views are not aligned");
  if (!b.labels) throw DataError("active view carries no labels");
  Dataset d;
  d.node_ids = a.node_ids;
  const auto k = a.feature_columns.size() + b.feature_columns.size();
  d.features.resize(static_cast<Eigen::Index>(d.node_ids.size()),
                    static_cast<Eigen::Index>(k));
  std::vector<bool> filled(k, false);
  auto put = [&](const VerticalView& v) {
    for (std::size_t j = 0; j < v.feature_columns.size(); ++j) {
      const int c = v.feature_columns[j];
      if (c < 0 || c >= static_cast<int>(k) || filled[c]) {
        throw DataError("feature column sets overlap or leave gaps");
      }
      filled[c] = true;
      d.features.col(c) = v.features.col(j);
    }
  };
  put(a);
  put(b);
  std::set<Edge> all(a.edges.begin(), a.edges.end());
  all.insert(b.edges.begin(), b.edges.end());
  d.edges.assign(all.begin(), all.end());
  d.labels = *b.labels;
  for (int c = 0; c < b.num_classes; ++c) d.class_names.push_back(std::to_string(c));
  d.validate();
  return d;
}

std::vector<FoldSplit> five_fold(int num_nodes, std::uint64_t seed) {
  if (num_nodes < 5) throw DataError("five folds need at least five nodes");
  const auto perm = seeded_permutation(num_nodes, mix_words({seed, 3}));
  std::vector<FoldSplit> folds(5);
  for (int f = 0; f < 5; ++f) {
    const long lo = static_cast<long>(f) * num_nodes / 5;
    const long hi = static_cast<long>(f + 1) * num_nodes / 5;
    FoldSplit& s = folds[f];
    s.fold_index = f;
    std::vector<bool> in_test(num_nodes, false);
    for (long i = lo; i < hi; ++i) {
      s.test_ids.push_back(perm[i]);
      in_test[perm[i]] = true;
    }
    std::sort(s.test_ids.begin(), s.test_ids.end());
    for (int i = 0; i < num_nodes; ++i) {
      if (!in_test[i]) s.train_ids.push_back(i);
    }
  }
  return folds;
}

}  // namespace fedvgcn
