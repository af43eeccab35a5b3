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

// Full-graph GraphSage with mean aggregation and the quadratic activation.
//
// A layer is a sum of branches. Each branch reads a slice of the layer input
// (a column subset at the first layer, everything above it), aggregates it
// over one edge set and owns its own (w_self, w_neigh) pair:
//
//   z_i = sum_b  W_self_b^T h_b,i + W_neigh_b^T (sum_{j in N_b(i)} h_b,j) / N_i
//
// with N_i the node's degree summed over the layer's edge sets. A single
// branch over every column and the full edge set is ordinary GraphSage; two
// branches split by party give the vertically partitioned model that the
// encrypted protocol computes.

#ifndef FEDVGCN_GNN_H_
#define FEDVGCN_GNN_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "fedvgcn/entropy.h"
#include "fedvgcn/graph.h"
#include "fedvgcn/polyact.h"

namespace fedvgcn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct SageLayer {
  Matrix w_self;   // in_dim x out_dim
  Matrix w_neigh;  // in_dim x out_dim
};

struct BranchSpec {
  std::vector<int> columns;  // first layer only; empty means every column
  int adjacency = 0;         // index into GraphInput::adjacency
  Party owner = Party::kActive;
};

struct LayerSpec {
  std::vector<BranchSpec> branches;
  int out_dim = 0;
};

struct ModelPlan {
  int input_dim = 0;
  std::vector<LayerSpec> layers;

  int num_classes() const { return layers.empty() ? 0 : layers.back().out_dim; }
  int branch_in_dim(int layer, int branch) const;
  // Throws ConfigError on inconsistent shapes.
  void validate(int num_adjacency) const;
};

// One branch over all columns and adjacency 0 per layer.
ModelPlan combined_plan(int input_dim, int num_classes,
                        const std::vector<int>& hidden = {64, 64});

// Input columns [0, dim_a) belong to A and [dim_a, dim_a + dim_b) to B;
// adjacency 0 is A's edge set and 1 is B's. Layers 1..exchanged_layers carry
// one branch per party; the layers above belong to B and use B's edges.
ModelPlan federated_plan(int dim_a, int dim_b, int num_classes,
                         const std::vector<int>& hidden, int exchanged_layers);

struct SageModel {
  ModelPlan plan;
  std::vector<std::vector<SageLayer>> weights;  // [layer][branch]
  QuadActivation activation{1.0};
  double dropout_rate = 0.5;
  double learning_rate = 0.0;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)); each matrix draws from a stream
// keyed by (seed, layer, branch, which) so parties can initialize their own
// branches independently and still match a joint initialization.
SageLayer init_branch(int in_dim, int out_dim, std::uint64_t seed, int layer,
                      int branch);
SageModel init_model(const ModelPlan& plan, const QuadActivation& act,
                     double dropout_rate, double learning_rate,
                     std::uint64_t seed);

SparseMatrix adjacency_matrix(int num_nodes, std::span<const Edge> edges);
Vector degrees(const SparseMatrix& adjacency);
// 1 / max(degree, 1) elementwise.
Vector inverse_degree(const Vector& degree);

// Mean of neighbor rows; zero vector when the list is empty.
Vector mean_aggregate(const Matrix& h, int node, std::span<const int> neighbors);

struct LayerForward {
  Vector z;
  Vector out;
};
// z = w_self^T h_self + w_neigh^T h_agg, out = act(z).
LayerForward layer_forward(const SageLayer& layer, const QuadActivation& act,
                           const Vector& h_self, const Vector& h_agg);

// Scale applied to hidden unit (node, dim) under dropout: 0 or 1/(1-rate).
// Counter based, so every holder of the seed reproduces the same mask.
double dropout_scale(std::uint64_t seed, std::uint64_t epoch, int layer,
                     int node, int dim, double rate);

// A branch's input together with its normalized neighbor aggregate.
class BranchInput {
 public:
  BranchInput(SparseMatrix h, const SparseMatrix& adjacency, const Vector& norm);
  BranchInput(Matrix h, const SparseMatrix& adjacency, const Vector& norm);

  // h W_self + agg W_neigh
  Matrix share(const SageLayer& w) const;
  // (h^T dz, agg^T dz)
  SageLayer weight_grads(const Matrix& dz) const;
  // dz W_self^T + A (norm . (dz W_neigh^T))
  Matrix input_grad(const SageLayer& w, const Matrix& dz) const;

  bool is_sparse() const { return sparse_; }
  const SparseMatrix& sparse_input() const { return hs_; }
  const Matrix& dense_input() const { return hd_; }
  const SparseMatrix& adjacency() const { return *adj_; }
  const Vector& norm() const { return norm_; }
  int rows() const;
  int cols() const;

 private:
  bool sparse_;
  SparseMatrix hs_, as_;  // input and aggregate when sparse
  Matrix hd_, ad_;        // input and aggregate when dense
  const SparseMatrix* adj_;
  Vector norm_;
};

struct GraphInput {
  SparseMatrix features;                 // nodes x input_dim
  std::vector<SparseMatrix> adjacency;  // symmetric 0/1

  int num_nodes() const { return static_cast<int>(features.rows()); }
};

GraphInput make_graph_input(const Eigen::MatrixXd& features,
                            const std::vector<std::vector<Edge>>& edge_sets);

struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
  std::uint64_t epoch = 0;
};

struct ForwardCache {
  std::vector<std::vector<BranchInput>> inputs;  // [layer][branch]
  std::vector<Matrix> z;                         // pre-activation per layer
  std::vector<Matrix> keep;                      // dropout scale per hidden layer
  Matrix logits;
};

using Gradients = std::vector<std::vector<SageLayer>>;  // [layer][branch]

// Degree normalizer of every layer: summed over its distinct edge sets.
std::vector<Vector> layer_norms(const ModelPlan& plan,
                                const std::vector<SparseMatrix>& adjacency);

class SageNetwork {
 public:
  SageNetwork(ModelPlan plan, const GraphInput& input);

  const ModelPlan& plan() const { return plan_; }
  const GraphInput& input() const { return *input_; }
  int num_nodes() const { return input_->num_nodes(); }

  ForwardCache forward(const SageModel& model, const ForwardOptions& opt) const;
  // `extra_embedding_grad`, when given, is added to the gradient of the
  // last hidden layer's output (auxiliary losses on embeddings).
  Gradients backward(const SageModel& model, const ForwardCache& cache,
                     const Matrix& dlogits,
                     const Matrix* extra_embedding_grad = nullptr) const;
  // Pre-activations of the first layer; used to fit the activation scale.
  Matrix first_layer_preactivation(const SageModel& model) const;

 private:
  ModelPlan plan_;
  const GraphInput* input_;
  std::vector<Vector> norms_;
  std::vector<BranchInput> first_inputs_;
};

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

// Softmax cross-entropy; gradient softmax(logits) - one_hot(label).
LossAndGrad supervised_loss(const Vector& logits, int label);

enum class LossReduction { kSum, kMean };

struct Objective {
  double loss = 0.0;
  Matrix dlogits;
};

// Cross-entropy over the listed nodes; other rows get zero gradient.
Objective supervised_objective(const Matrix& logits, std::span<const int> labels,
                               std::span<const int> nodes,
                               LossReduction reduction = LossReduction::kSum);

struct WalkConfig {
  int walk_length = 5;
  int negatives_q = 5;
  double degree_exponent = 0.75;
};

// -log s(z_u . z_v) - sum_n log s(-z_u . z_n)
double unsup_loss(const Matrix& z, int u, int v, std::span<const int> negatives);

// One walk of `length` steps from every node with neighbors; every visited
// node other than the start yields a (start, visited) pair.
std::vector<std::pair<int, int>> random_walk_pairs(const SparseMatrix& adjacency,
                                                   int length, std::uint64_t seed);

class NegativeSampler {
 public:
  NegativeSampler(const Vector& degree, double exponent);
  int sample(EntropySource& rng) const;

 private:
  std::vector<double> cumulative_;
};

// Walk-based loss summed over pairs and its gradient with respect to z.
Objective unsup_objective(const Matrix& z, std::span<const std::pair<int, int>> pairs,
                          const NegativeSampler& sampler, int negatives_q,
                          std::uint64_t seed);

void sgd_step(SageModel& model, const Gradients& grads, double lr);

double accuracy(const Matrix& logits, std::span<const int> labels,
                std::span<const int> nodes);

struct TrainOptions {
  int epochs = 100;
  std::uint64_t seed = 0;
  double learning_rate = 3e-4;
  double dropout_rate = 0.5;
  double activation_a = 0.0;  // <= 0 fits the scale from the data
  LossReduction reduction = LossReduction::kSum;
  double unsup_weight = 0.0;
  WalkConfig walk;
};

struct FoldResult {
  double accuracy = 0.0;
  double activation_a = 0.0;
  double final_loss = 0.0;
};

// Scale parameter for a fresh model: explicit when positive, otherwise fit
// on the first layer's pre-activations.
QuadActivation choose_activation(const SageNetwork& net, const ModelPlan& plan,
                                 const TrainOptions& opt, std::uint64_t seed);

FoldResult train_fold(const SageNetwork& net, std::span<const int> labels,
                      const FoldSplit& fold, const TrainOptions& opt,
                      SageModel* out_model = nullptr);

// Checkpoints: 16-byte magic, layer/branch dims, row-major little-endian
// f64 weights, then the activation scale.
void save_checkpoint(const SageModel& model, const std::filesystem::path& path);
// Weights into a model whose plan already matches the file.
void load_checkpoint(SageModel& model, const std::filesystem::path& path);

}  // namespace fedvgcn

#endif  // FEDVGCN_GNN_H_
