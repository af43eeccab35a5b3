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

#include "fedvgcn/gnn.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <string>

#include "fedvgcn/error.h"

namespace fedvgcn {
namespace {

constexpr char kCheckpointMagic[16] = {'F', 'E', 'D', 'V', 'G', 'C', 'N', '-',
                                       'C', 'K', 'P', 'T', 0, 0, 0, 1};

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void scale_rows(SparseMatrix& m, const Vector& norm) {
  for (int i = 0; i < m.outerSize(); ++i) {
    for (SparseMatrix::InnerIterator it(m, i); it; ++it) it.valueRef() *= norm(i);
  }
}

void apply_activation(Matrix& z, const QuadActivation& act) {
  const double c2 = act.c2(), c0 = act.c0();
  z = ((c2 * z.array() + 0.5) * z.array() + c0).matrix();
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated checkpoint");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

int ModelPlan::branch_in_dim(int layer, int branch) const {
  if (layer == 0) {
    const auto& cols = layers[0].branches[branch].columns;
    return cols.empty() ? input_dim : static_cast<int>(cols.size());
  }
  return layers[layer - 1].out_dim;
}

void ModelPlan::validate(int num_adjacency) const {
  if (input_dim <= 0) throw ConfigError("model input dimension must be positive");
  if (layers.empty()) throw ConfigError("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.out_dim <= 0) throw ConfigError("layer width must be positive");
    if (layer.branches.empty()) throw ConfigError("layer without branches");
    std::set<int> adj_seen;
    for (const auto& b : layer.branches) {
      if (b.adjacency < 0 || b.adjacency >= num_adjacency) {
        throw ConfigError("branch refers to a missing edge set");
      }
      if (!adj_seen.insert(b.adjacency).second) {
        throw ConfigError("two branches of one layer share an edge set");
      }
      if (l > 0 && !b.columns.empty()) {
        throw ConfigError("column subsets are only allowed at the first layer");
      }
      std::set<int> cols(b.columns.begin(), b.columns.end());
      if (cols.size() != b.columns.size()) throw ConfigError("repeated branch column");
      for (int c : b.columns) {
        if (c < 0 || c >= input_dim) throw ConfigError("branch column out of range");
      }
    }
  }
}

ModelPlan combined_plan(int input_dim, int num_classes,
                        const std::vector<int>& hidden) {
  ModelPlan plan;
  plan.input_dim = input_dim;
  for (int h : hidden) plan.layers.push_back({{BranchSpec{}}, h});
  plan.layers.push_back({{BranchSpec{}}, num_classes});
  return plan;
}

ModelPlan federated_plan(int dim_a, int dim_b, int num_classes,
                         const std::vector<int>& hidden, int exchanged_layers) {
  if (exchanged_layers < 1 || exchanged_layers > static_cast<int>(hidden.size())) {
    throw ConfigError("exchanged layers must cover 1..number of hidden layers");
  }
  ModelPlan plan;
  plan.input_dim = dim_a + dim_b;
  BranchSpec a{{}, 0, Party::kPassive};
  BranchSpec b{{}, 1, Party::kActive};
  for (int c = 0; c < dim_a; ++c) a.columns.push_back(c);
  for (int c = 0; c < dim_b; ++c) b.columns.push_back(dim_a + c);
  plan.layers.push_back({{a, b}, hidden[0]});
  for (std::size_t l = 1; l < hidden.size(); ++l) {
    if (static_cast<int>(l) < exchanged_layers) {
      plan.layers.push_back({{BranchSpec{{}, 0, Party::kPassive},
                              BranchSpec{{}, 1, Party::kActive}},
                             hidden[l]});
    } else {
      plan.layers.push_back({{BranchSpec{{}, 1, Party::kActive}}, hidden[l]});
    }
  }
  plan.layers.push_back({{BranchSpec{{}, 1, Party::kActive}}, num_classes});
  return plan;
}

SageLayer init_branch(int in_dim, int out_dim, std::uint64_t seed, int layer,
                      int branch) {
  const double bound = std::sqrt(6.0 / (in_dim + out_dim));
  auto draw = [&](int which) {
    SeededEntropy rng(mix_words({seed, static_cast<std::uint64_t>(layer),
                                 static_cast<std::uint64_t>(branch),
                                 static_cast<std::uint64_t>(which)}));
    Matrix w(in_dim, out_dim);
    for (int i = 0; i < in_dim; ++i) {
      for (int j = 0; j < out_dim; ++j) w(i, j) = (2.0 * rng.uniform01() - 1.0) * bound;
    }
    return w;
  };
  return {draw(0), draw(1)};
}

SageModel init_model(const ModelPlan& plan, const QuadActivation& act,
                     double dropout_rate, double learning_rate,
                     std::uint64_t seed) {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0, 1)");
  }
  SageModel m;
  m.plan = plan;
  m.activation = act;
  m.dropout_rate = dropout_rate;
  m.learning_rate = learning_rate;
  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    std::vector<SageLayer> branches;
    for (std::size_t b = 0; b < plan.layers[l].branches.size(); ++b) {
      branches.push_back(init_branch(plan.branch_in_dim(int(l), int(b)),
                                     plan.layers[l].out_dim, seed, int(l), int(b)));
    }
    m.weights.push_back(std::move(branches));
  }
  return m;
}

SparseMatrix adjacency_matrix(int num_nodes, std::span<const Edge> edges) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(edges.size() * 2);
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes) {
      throw DataError("edge endpoint out of range");
    }
    t.emplace_back(u, v, 1.0);
    if (u != v) t.emplace_back(v, u, 1.0);
  }
  SparseMatrix a(num_nodes, num_nodes);
  a.setFromTriplets(t.begin(), t.end(), [](double x, double) { return x; });
  return a;
}

Vector degrees(const SparseMatrix& adjacency) {
  Vector d = Vector::Zero(adjacency.rows());
  for (int i = 0; i < adjacency.outerSize(); ++i) {
    for (SparseMatrix::InnerIterator it(adjacency, i); it; ++it) d(i) += it.value();
  }
  return d;
}

Vector inverse_degree(const Vector& degree) {
  return degree.unaryExpr([](double d) { return 1.0 / std::max(d, 1.0); });
}

Vector mean_aggregate(const Matrix& h, int node, std::span<const int> neighbors) {
  if (node < 0 || node >= h.rows()) throw DataError("node index out of range");
  Vector acc = Vector::Zero(h.cols());
  if (neighbors.empty()) return acc;
  for (int j : neighbors) {
    if (j < 0 || j >= h.rows()) throw DataError("neighbor index out of range");
    acc += h.row(j).transpose();
  }
  return acc / static_cast<double>(neighbors.size());
}

LayerForward layer_forward(const SageLayer& layer, const QuadActivation& act,
                           const Vector& h_self, const Vector& h_agg) {
  if (layer.w_self.rows() != h_self.size() || layer.w_neigh.rows() != h_agg.size() ||
      layer.w_self.cols() != layer.w_neigh.cols()) {
    throw DataError("layer input dimensions do not match weights");
  }
  LayerForward out;
  out.z = layer.w_self.transpose() * h_self + layer.w_neigh.transpose() * h_agg;
  out.out = out.z.unaryExpr([&](double x) { return act.value(x); });
  return out;
}

double dropout_scale(std::uint64_t seed, std::uint64_t epoch, int layer,
                     int node, int dim, double rate) {
  if (rate <= 0.0) return 1.0;
  const std::uint64_t h =
      mix_words({seed, epoch, static_cast<std::uint64_t>(layer),
                 static_cast<std::uint64_t>(node), static_cast<std::uint64_t>(dim)});
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < rate ? 0.0 : 1.0 / (1.0 - rate);
}

BranchInput::BranchInput(SparseMatrix h, const SparseMatrix& adjacency,
                         const Vector& norm)
    : sparse_(true), hs_(std::move(h)), adj_(&adjacency), norm_(norm) {
  as_ = adjacency * hs_;
  scale_rows(as_, norm_);
}

BranchInput::BranchInput(Matrix h, const SparseMatrix& adjacency, const Vector& norm)
    : sparse_(false), hd_(std::move(h)), adj_(&adjacency), norm_(norm) {
  ad_ = adjacency * hd_;
  ad_.array().colwise() *= norm_.array();
}

int BranchInput::rows() const {
  return static_cast<int>(sparse_ ? hs_.rows() : hd_.rows());
}

int BranchInput::cols() const {
  return static_cast<int>(sparse_ ? hs_.cols() : hd_.cols());
}

Matrix BranchInput::share(const SageLayer& w) const {
  if (w.w_self.rows() != cols()) throw DataError("branch weights do not match input");
  if (sparse_) return hs_ * w.w_self + as_ * w.w_neigh;
  return hd_ * w.w_self + ad_ * w.w_neigh;
}

SageLayer BranchInput::weight_grads(const Matrix& dz) const {
  if (sparse_) return {hs_.transpose() * dz, as_.transpose() * dz};
  return {hd_.transpose() * dz, ad_.transpose() * dz};
}

Matrix BranchInput::input_grad(const SageLayer& w, const Matrix& dz) const {
  Matrix through_neigh = dz * w.w_neigh.transpose();
  through_neigh.array().colwise() *= norm_.array();
  return dz * w.w_self.transpose() + (*adj_) * through_neigh;
}

GraphInput make_graph_input(const Eigen::MatrixXd& features,
                            const std::vector<std::vector<Edge>>& edge_sets) {
  GraphInput g;
  g.features = features.sparseView();
  for (const auto& e : edge_sets) {
    g.adjacency.push_back(adjacency_matrix(static_cast<int>(features.rows()), e));
  }
  return g;
}

std::vector<Vector> layer_norms(const ModelPlan& plan,
                                const std::vector<SparseMatrix>& adjacency) {
  std::vector<Vector> out;
  for (const auto& layer : plan.layers) {
    Vector deg = Vector::Zero(adjacency.at(0).rows());
    for (const auto& b : layer.branches) deg += degrees(adjacency.at(b.adjacency));
    out.push_back(inverse_degree(deg));
  }
  return out;
}

SageNetwork::SageNetwork(ModelPlan plan, const GraphInput& input)
    : plan_(std::move(plan)), input_(&input) {
  plan_.validate(static_cast<int>(input.adjacency.size()));
  if (input.features.cols() != plan_.input_dim) {
    throw DataError("feature width does not match the model plan");
  }
  norms_ = layer_norms(plan_, input.adjacency);
  for (const auto& b : plan_.layers[0].branches) {
    SparseMatrix x;
    if (b.columns.empty()) {
      x = input.features;
    } else {
      std::vector<int> remap(plan_.input_dim, -1);
      for (std::size_t j = 0; j < b.columns.size(); ++j) remap[b.columns[j]] = int(j);
      std::vector<Eigen::Triplet<double>> t;
      for (int i = 0; i < input.features.outerSize(); ++i) {
        for (SparseMatrix::InnerIterator it(input.features, i); it; ++it) {
          const int c = remap[it.col()];
          if (c >= 0) t.emplace_back(i, c, it.value());
        }
      }
      x.resize(input.features.rows(), static_cast<Eigen::Index>(b.columns.size()));
      x.setFromTriplets(t.begin(), t.end());
    }
    first_inputs_.emplace_back(std::move(x), input.adjacency[b.adjacency], norms_[0]);
  }
}

ForwardCache SageNetwork::forward(const SageModel& model,
                                  const ForwardOptions& opt) const {
  const int L = static_cast<int>(plan_.layers.size());
  if (static_cast<int>(model.weights.size()) != L) {
    throw ConfigError("model weights do not match the network plan");
  }
  ForwardCache c;
  c.inputs.resize(L);
  c.z.resize(L);
  c.keep.resize(L > 0 ? L - 1 : 0);
  const int n = num_nodes();
  for (int l = 0; l < L; ++l) {
    const auto& branches = l == 0 ? first_inputs_ : c.inputs[l];
    Matrix z = Matrix::Zero(n, plan_.layers[l].out_dim);
    for (std::size_t b = 0; b < branches.size(); ++b) {
      z += branches[b].share(model.weights[l][b]);
    }
    c.z[l] = z;
    if (l == L - 1) {
      c.logits = std::move(z);
      break;
    }
    apply_activation(z, model.activation);
    if (opt.train && model.dropout_rate > 0.0) {
      Matrix keep(n, z.cols());
      for (int i = 0; i < n; ++i) {
        for (int d = 0; d < z.cols(); ++d) {
          keep(i, d) = dropout_scale(opt.dropout_seed, opt.epoch, l, i, d,
                                     model.dropout_rate);
        }
      }
      z.array() *= keep.array();
      c.keep[l] = std::move(keep);
    }
    for (const auto& spec : plan_.layers[l + 1].branches) {
      c.inputs[l + 1].emplace_back(Matrix(z), input_->adjacency[spec.adjacency],
                                   norms_[l + 1]);
    }
  }
  return c;
}

Gradients SageNetwork::backward(const SageModel& model, const ForwardCache& c,
                                const Matrix& dlogits,
                                const Matrix* extra_embedding_grad) const {
  const int L = static_cast<int>(plan_.layers.size());
  Gradients g(L);
  Matrix dz = dlogits;
  for (int l = L - 1; l >= 0; --l) {
    const auto& branches = l == 0 ? first_inputs_ : c.inputs[l];
    for (std::size_t b = 0; b < branches.size(); ++b) {
      g[l].push_back(branches[b].weight_grads(dz));
    }
    if (l == 0) break;
    Matrix dh = Matrix::Zero(num_nodes(), plan_.layers[l - 1].out_dim);
    for (std::size_t b = 0; b < branches.size(); ++b) {
      dh += branches[b].input_grad(model.weights[l][b], dz);
    }
    if (l == L - 1 && extra_embedding_grad) dh += *extra_embedding_grad;
    if (c.keep[l - 1].size() > 0) dh.array() *= c.keep[l - 1].array();
    const double c2 = model.activation.c2();
    dh.array() *= (2.0 * c2 * c.z[l - 1].array() + 0.5);
    dz = std::move(dh);
  }
  return g;
}

Matrix SageNetwork::first_layer_preactivation(const SageModel& model) const {
  Matrix z = Matrix::Zero(num_nodes(), plan_.layers[0].out_dim);
  for (std::size_t b = 0; b < first_inputs_.size(); ++b) {
    z += first_inputs_[b].share(model.weights[0][b]);
  }
  return z;
}

LossAndGrad supervised_loss(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size()) throw DataError("label out of range");
  const double mx = logits.maxCoeff();
  const Vector e = (logits.array() - mx).exp();
  const double s = e.sum();
  LossAndGrad out;
  out.loss = std::log(s) + mx - logits(label);
  out.grad = e / s;
  out.grad(label) -= 1.0;
  return out;
}

Objective supervised_objective(const Matrix& logits, std::span<const int> labels,
                               std::span<const int> nodes, LossReduction reduction) {
  Objective o;
  o.dlogits = Matrix::Zero(logits.rows(), logits.cols());
  const double w = reduction == LossReduction::kMean && !nodes.empty()
                       ? 1.0 / static_cast<double>(nodes.size())
                       : 1.0;
  for (int i : nodes) {
    const auto lg = supervised_loss(logits.row(i).transpose(), labels[i]);
    o.loss += w * lg.loss;
    o.dlogits.row(i) = w * lg.grad.transpose();
  }
  return o;
}

double unsup_loss(const Matrix& z, int u, int v, std::span<const int> negatives) {
  double loss = softplus(-z.row(u).dot(z.row(v)));
  for (int n : negatives) loss += softplus(z.row(u).dot(z.row(n)));
  return loss;
}

std::vector<std::pair<int, int>> random_walk_pairs(const SparseMatrix& adjacency,
                                                   int length, std::uint64_t seed) {
  if (length < 1) throw ConfigError("walk length must be at least 1");
  if (adjacency.rows() == 0) throw DataError("random walk on an empty graph");
  std::vector<std::pair<int, int>> pairs;
  for (int start = 0; start < adjacency.outerSize(); ++start) {
    SeededEntropy rng(seed, static_cast<std::uint64_t>(start));
    int cur = start;
    for (int step = 0; step < length; ++step) {
      const auto begin = adjacency.outerIndexPtr()[cur];
      const auto end = adjacency.outerIndexPtr()[cur + 1];
      if (begin == end) break;
      const auto pick = begin + static_cast<long>(rng.next_u64() % std::uint64_t(end - begin));
      cur = adjacency.innerIndexPtr()[pick];
      if (cur != start) pairs.emplace_back(start, cur);
    }
  }
  return pairs;
}

NegativeSampler::NegativeSampler(const Vector& degree, double exponent) {
  double acc = 0.0;
  for (int i = 0; i < degree.size(); ++i) {
    acc += std::pow(std::max(degree(i), 0.0), exponent);
    cumulative_.push_back(acc);
  }
  if (!(acc > 0.0)) throw ConfigError("negative sampling needs a node with edges");
}

int NegativeSampler::sample(EntropySource& rng) const {
  const double u = rng.uniform01() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                   cumulative_.size() - 1));
}

Objective unsup_objective(const Matrix& z, std::span<const std::pair<int, int>> pairs,
                          const NegativeSampler& sampler, int negatives_q,
                          std::uint64_t seed) {
  Objective o;
  o.dlogits = Matrix::Zero(z.rows(), z.cols());
  std::vector<int> neg(negatives_q);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [u, v] = pairs[p];
    SeededEntropy rng(seed, p);
    for (int& n : neg) n = sampler.sample(rng);
    o.loss += unsup_loss(z, u, v, neg);
    const double s = sigmoid(z.row(u).dot(z.row(v)));
    o.dlogits.row(u) -= (1.0 - s) * z.row(v);
    o.dlogits.row(v) -= (1.0 - s) * z.row(u);
    for (int n : neg) {
      const double t = sigmoid(z.row(u).dot(z.row(n)));
      o.dlogits.row(u) += t * z.row(n);
      o.dlogits.row(n) += t * z.row(u);
    }
  }
  return o;
}

void sgd_step(SageModel& model, const Gradients& grads, double lr) {
  for (std::size_t l = 0; l < grads.size(); ++l) {
    for (std::size_t b = 0; b < grads[l].size(); ++b) {
      model.weights[l][b].w_self -= lr * grads[l][b].w_self;
      model.weights[l][b].w_neigh -= lr * grads[l][b].w_neigh;
    }
  }
}

double accuracy(const Matrix& logits, std::span<const int> labels,
                std::span<const int> nodes) {
  if (nodes.empty()) return 0.0;
  long hits = 0;
  for (int i : nodes) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    hits += (best == labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

QuadActivation choose_activation(const SageNetwork& net, const ModelPlan& plan,
                                 const TrainOptions& opt, std::uint64_t seed) {
  if (opt.activation_a > 0.0) return QuadActivation(opt.activation_a);
  const SageModel probe = init_model(plan, QuadActivation(1.0), 0.0, 0.0, seed);
  const Matrix z = net.first_layer_preactivation(probe);
  return fit_scale_param(std::span<const double>(z.data(), z.size()));
}

FoldResult train_fold(const SageNetwork& net, std::span<const int> labels,
                      const FoldSplit& fold, const TrainOptions& opt,
                      SageModel* out_model) {
  if (opt.epochs < 0) throw ConfigError("epochs must be non-negative");
  const std::uint64_t seed = mix_words({opt.seed, static_cast<std::uint64_t>(fold.fold_index)});
  const QuadActivation act = choose_activation(net, net.plan(), opt, seed);
  SageModel model = init_model(net.plan(), act, opt.dropout_rate, opt.learning_rate, seed);

  const int L = static_cast<int>(net.plan().layers.size());
  const SparseMatrix& walk_graph =
      net.input().adjacency[net.plan().layers.back().branches.front().adjacency];
  std::optional<NegativeSampler> sampler;
  if (opt.unsup_weight > 0.0) {
    if (L < 2) throw ConfigError("embedding loss needs a hidden layer");
    sampler.emplace(degrees(walk_graph), opt.walk.degree_exponent);
  }

  FoldResult r;
  r.activation_a = act.a();
  for (int e = 0; e < opt.epochs; ++e) {
    const ForwardCache c = net.forward(model, {true, seed, static_cast<std::uint64_t>(e)});
    Objective obj = supervised_objective(c.logits, labels, fold.train_ids, opt.reduction);
    Matrix extra;
    if (sampler) {
      const Matrix& emb = c.inputs[L - 1].front().dense_input();
      const auto pairs = random_walk_pairs(walk_graph, opt.walk.walk_length,
                                           mix_words({seed, std::uint64_t(e), 7}));
      Objective u = unsup_objective(emb, pairs, *sampler, opt.walk.negatives_q,
                                    mix_words({seed, std::uint64_t(e), 8}));
      obj.loss += opt.unsup_weight * u.loss;
      extra = opt.unsup_weight * u.dlogits;
    }
    const Gradients g = net.backward(model, c, obj.dlogits, sampler ? &extra : nullptr);
    sgd_step(model, g, opt.learning_rate);
    r.final_loss = obj.loss;
  }
  const ForwardCache eval = net.forward(model, {});
  r.accuracy = accuracy(eval.logits, labels, fold.test_ids);
  if (out_model) *out_model = std::move(model);
  return r;
}

void save_checkpoint(const SageModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, static_cast<std::uint32_t>(model.weights.size()));
  for (const auto& layer : model.weights) {
    put_u32(out, static_cast<std::uint32_t>(layer.size()));
    for (const auto& b : layer) {
      put_u32(out, static_cast<std::uint32_t>(b.w_self.rows()));
      put_u32(out, static_cast<std::uint32_t>(b.w_self.cols()));
      for (const Matrix* w : {&b.w_self, &b.w_neigh}) {
        for (Eigen::Index i = 0; i < w->rows(); ++i) {
          for (Eigen::Index j = 0; j < w->cols(); ++j) put_f64(out, (*w)(i, j));
        }
      }
    }
  }
  put_f64(out, model.activation.a());
}

void load_checkpoint(SageModel& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  char magic[16];
  if (!in.read(magic, 16) || std::memcmp(magic, kCheckpointMagic, 16) != 0) {
    throw DataError("not a model checkpoint: " + path.string());
  }
  if (get_u32(in) != model.weights.size()) throw DataError("checkpoint layer count differs");
  for (auto& layer : model.weights) {
    if (get_u32(in) != layer.size()) throw DataError("checkpoint branch count differs");
    for (auto& b : layer) {
      const auto rows = get_u32(in), cols = get_u32(in);
      if (rows != b.w_self.rows() || cols != b.w_self.cols()) {
        throw DataError("checkpoint weight shape differs");
      }
      for (Matrix* w : {&b.w_self, &b.w_neigh}) {
        for (Eigen::Index i = 0; i < w->rows(); ++i) {
          for (Eigen::Index j = 0; j < w->cols(); ++j) (*w)(i, j) = get_f64(in);
        }
      }
    }
  }
  model.activation = QuadActivation(get_f64(in));
}

}  // namespace fedvgcn
