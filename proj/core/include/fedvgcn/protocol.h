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

// Three-party training protocol: passive party A (features, edges), active
// party B (features, edges, labels) and server C (Paillier secret key).
//
// Every party is a single-threaded state machine. A driver starts an
// iteration on all three and then delivers messages until each party has
// received what the iteration requires.

#ifndef FEDVGCN_PROTOCOL_H_
#define FEDVGCN_PROTOCOL_H_

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "fedvgcn/gnn.h"
#include "fedvgcn/graph.h"
#include "fedvgcn/paillier.h"
#include "fedvgcn/transport.h"
#include "fedvgcn/wire.h"

namespace fedvgcn {

// kClassifier trains the cross-entropy head held by B and sends A an
// encrypted error signal. kPolynomial trains a single exchanged layer on the
// objective sum p(z) and has both parties form [[z]] from the two encrypted
// shares, as in the two-party gradient algebra.
enum class ProtocolMode : std::uint8_t { kClassifier, kPolynomial };

enum class IterationKind : std::uint8_t { kSetup, kCalibrate, kTrain, kEval };

struct IterationSpec {
  IterationKind kind = IterationKind::kTrain;
  std::uint64_t epoch = 0;
};

// Message counts are in ciphertext units. A node-indexed block (one row per
// node) counts its width, i.e. per-sample activations; a weight-gradient block
// counts every entry.
struct LayerCost {
  std::uint64_t forward_messages = 0;
  std::uint64_t backward_messages = 0;
  std::uint64_t ciphertext_adds = 0;
  std::uint64_t scalar_muls = 0;

  bool operator==(const LayerCost&) const = default;
};

struct CostCounters {
  std::vector<LayerCost> layers;
  std::uint64_t train_iterations = 0;
  std::uint64_t messages = 0;  // every message, plaintext ones included
  std::uint64_t ciphertexts_sent = 0;
  std::uint64_t encryptions = 0;
  std::uint64_t decryptions = 0;
  std::uint64_t ciphertext_adds = 0;
  std::uint64_t scalar_muls = 0;
  std::uint8_t max_decrypt_depth = 0;

  LayerCost& layer(int l);
  std::uint64_t forward_messages() const;
  std::uint64_t backward_messages() const;
  std::uint64_t total_messages() const { return forward_messages() + backward_messages(); }
  bool all_zero() const;
  CostCounters& operator+=(const CostCounters& o);
  // Growth since an earlier snapshot of the same session.
  CostCounters since(const CostCounters& earlier) const;
  bool operator==(const CostCounters&) const = default;
};

// One plaintext vector materialized at the server.
enum class Observation : std::uint8_t {
  kForwardSum,
  kLoss,
  kMaskedWeightGrad,
  kMaskedInputGrad
};

struct ServerObservation {
  Observation kind;
  int layer = 0;
  Role role = Role::kServer;
  std::vector<double> values;
};

// One data party's private inputs.
struct PartyData {
  Eigen::MatrixXd features;  // N x d, rows in aligned node order
  std::vector<Edge> edges;
  std::optional<std::vector<int>> labels;  // active party only
  int num_classes = 0;
};

PartyData party_data(const VerticalView& v);

// Public training parameters both data parties agree on.
struct ProtocolParams {
  ProtocolMode mode = ProtocolMode::kClassifier;
  int exchanged_layers = 1;
  int frac_bits = 32;
  double learning_rate = 3e-4;
  double dropout_rate = 0.5;
  std::uint64_t dropout_seed = 0;
  QuadActivation activation{1.0};
  LossReduction reduction = LossReduction::kSum;
  double unsup_weight = 0.0;
  WalkConfig walk;
  // Several values per ciphertext where the computation allows it.
  bool pack = true;
};

class PartyBase {
 public:
  PartyBase(Role role, std::uint64_t session_id, std::uint64_t seed);
  virtual ~PartyBase() = default;
  PartyBase(const PartyBase&) = delete;
  PartyBase& operator=(const PartyBase&) = delete;

  Role role() const { return role_; }
  void connect(Transport* t) { transport_ = t; }

  void begin(const IterationSpec& it);
  // Checks session id and round order, then dispatches.
  void receive(const Message& m);
  bool done() const { return received_ >= expected_; }
  const CostCounters& counters() const { return counters_; }

 protected:
  virtual int expected_messages(const IterationSpec& it) const = 0;
  virtual void on_begin() = 0;
  virtual void on_message(const Message& m) = 0;

  void post(Role to, Payload p);
  std::uint64_t stream_seed(std::uint64_t purpose);

  const IterationSpec& iteration() const { return iteration_; }
  bool training() const { return iteration_.kind == IterationKind::kTrain; }

  CostCounters counters_;
  std::uint64_t seed_;

 private:
  Role role_;
  std::uint64_t session_id_;
  Transport* transport_ = nullptr;
  IterationSpec iteration_;
  int expected_ = 0;
  int received_ = 0;
  std::uint32_t next_round_ = 1;
  std::array<std::uint32_t, kNumRoles> last_round_{};
  std::uint64_t stream_counter_ = 0;
};

// Shared machinery of the two data parties: key material, forward shares,
// masking and homomorphic linear algebra.
class DataParty : public PartyBase {
 public:
  DataParty(Role role, std::uint64_t session_id, std::uint64_t seed, PartyData data);

  // Own branch weights of every exchanged layer.
  void set_params(const ProtocolParams& p) { params_ = p; }
  const ProtocolParams& params() const { return params_; }
  void set_exchanged_weights(std::vector<SageLayer> w) { weights_ = std::move(w); }
  const std::vector<SageLayer>& exchanged_weights() const { return weights_; }
  const QuadActivation& activation() const { return params_.activation; }
  bool has_public_key() const { return pk_.has_value(); }
  const PublicKey& public_key() const;
  int num_nodes() const { return static_cast<int>(data_.features.rows()); }
  int feature_dim() const { return static_cast<int>(data_.features.cols()); }
  // Every mask drawn so far, when capture is on.
  void set_capture(bool on) { capture_ = on; }
  const std::vector<std::vector<double>>& mask_log() const { return mask_log_; }

 protected:
  // Clears per-iteration caches; keeps the first-layer input.
  void prepare_iteration();
  void on_key(const PubKeyDist& k);
  void on_counts(const NeighborCount& c);
  void post_counts(Role to);
  // Encrypts and sends this party's share of exchanged layer `l`.
  void forward_layer(int l);
  // Stores z and builds the next exchanged input; fits the activation when
  // calibrating. Returns z.
  const Matrix& accept_sum(const PlainSum& s);
  Matrix activate(const Matrix& z, int layer);

  CtBlock encrypt_block(const Matrix& m, int scale);
  // Packed by rows when params_.pack is set; slots leave room for one later
  // product up to `room_scale`.
  CtBlock encrypt_packed(const Matrix& m, int scale, int room_scale = 1);
  // H^T [[D]] where H is the input of exchanged layer `l` (self part) or its
  // normalized aggregate (neighbor part). Output stacks [self; neigh].
  CtBlock weight_grad_from_error(int l, const CtBlock& delta, const CtBlock& norm_delta);
  // sum_i [[z_ij]] * 2 c2 h_if + c1 sum_i h_if, stacked [self; neigh].
  CtBlock weight_grad_from_preactivation(int l, const CtBlock& z);
  CtBlock add_blocks(const CtBlock& x, const CtBlock& y, int layer);
  CtBlock aggregate(const CtBlock& d, int layer);
  // [[D]] W^T, N x in.
  CtBlock times_transpose(const CtBlock& d, const Matrix& w, int layer);
  void check_block(const CtBlock& b, std::size_t rows, std::size_t cols) const;
  void count_adds(int layer, std::uint64_t n);
  void count_muls(int layer, std::uint64_t n);

  void send_masked(int l, GradTarget target, CtBlock grad);
  Matrix unmask(const MaskedPlainGrad& g);
  void apply_gradient(int l, const Matrix& stacked);

  PartyData data_;
  SparseMatrix adjacency_;
  Vector own_degree_;
  Vector norm_;
  ProtocolParams params_;
  std::vector<SageLayer> weights_;
  std::optional<PublicKey> pk_;
  std::unique_ptr<FastEncryptor> encryptor_;
  std::unique_ptr<FixedPointCodec> codec_;

  // Per exchanged layer, rebuilt every iteration.
  std::vector<BranchInput> inputs_;
  std::vector<Matrix> z_;
  std::vector<Matrix> keep_;
  std::vector<CtBlock> share_cts_;
  std::vector<Matrix> share_plain_;

 private:
  struct PendingMask {
    std::vector<double> sigma;
    int scale = 1;
  };
  std::map<std::pair<int, int>, PendingMask> masks_;
  std::set<std::uint64_t> mask_digests_;
  bool capture_ = false;
  std::vector<std::vector<double>> mask_log_;
};

class PassiveParty final : public DataParty {
 public:
  PassiveParty(std::uint64_t session_id, std::uint64_t seed, PartyData data);

 protected:
  int expected_messages(const IterationSpec& it) const override;
  void on_begin() override;
  void on_message(const Message& m) override;

 private:
  void send_backward_material(int l);

  std::vector<std::optional<CtBlock>> peer_share_;
};

class ActiveParty final : public DataParty {
 public:
  ActiveParty(std::uint64_t session_id, std::uint64_t seed, PartyData data);

  // Layers above the exchanged ones, all owned by B.
  void set_top(std::vector<SageLayer> w) { top_ = std::move(w); }
  const std::vector<SageLayer>& top() const { return top_; }
  void set_fold(const FoldSplit& f) { fold_ = f; }
  double last_loss() const { return last_loss_; }
  double last_accuracy() const { return last_accuracy_; }

 protected:
  int expected_messages(const IterationSpec& it) const override;
  void on_begin() override;
  void on_message(const Message& m) override;

 private:
  void top_forward_backward();
  void try_round(int l);
  void on_input_grad(const MaskedPlainGrad& g);

  std::vector<SageLayer> top_;
  FoldSplit fold_;
  SparseMatrix top_adjacency_;
  Vector top_norm_;
  std::vector<std::optional<CtBlock>> a_share_, a_loss_;
  std::vector<std::optional<Matrix>> delta_;
  std::vector<bool> round_done_;
  std::vector<Matrix> own_input_grad_;
  double last_loss_ = 0.0;
  double last_accuracy_ = 0.0;
};

class ServerParty final : public PartyBase {
 public:
  ServerParty(std::uint64_t session_id, std::uint64_t seed, unsigned key_bits,
              KeyPolicy policy, int frac_bits);

  void set_layout(ProtocolMode mode, int exchanged_layers);
  const SecretKey& secret_key() const;
  const PublicKey& public_key() const;
  void set_capture(bool on) { capture_ = on; }
  const std::vector<ServerObservation>& observations() const { return log_; }

 protected:
  int expected_messages(const IterationSpec& it) const override;
  void on_begin() override;
  void on_message(const Message& m) override;

 private:
  std::vector<double> decrypt_block(const CtBlock& b, int layer);
  void observe(Observation kind, int layer, Role role, const std::vector<double>& v);

  unsigned key_bits_;
  KeyPolicy policy_;
  int frac_bits_;
  ProtocolMode mode_ = ProtocolMode::kClassifier;
  int exchanged_ = 1;
  std::optional<std::pair<PublicKey, SecretKey>> keys_;
  std::unique_ptr<FixedPointCodec> codec_;
  std::map<int, std::array<std::optional<CtBlock>, 2>> shares_;
  bool capture_ = false;
  std::vector<ServerObservation> log_;
};

// Party-side view that can never decrypt: only the server type exposes a key.
template <typename P>
concept HoldsSecretKey = requires(const P& p) { p.secret_key(); };

struct SessionConfig {
  unsigned key_bits = 512;
  KeyPolicy key_policy = KeyPolicy::kTest;
  int frac_bits = 32;
  std::uint64_t seed = 1;  // keys, encryption randomness, masks
  ProtocolMode mode = ProtocolMode::kClassifier;
  bool capture = false;  // server observations and mask log
  // Use one thread per party (only meaningful for a SocketTransport).
  bool threaded = false;
  // Slot packing (classifier mode only).
  bool pack = true;
};

class FederatedSession {
 public:
  // Defaults to an in-process transport.
  FederatedSession(const SessionConfig& cfg, PartyData a, PartyData b,
                   std::unique_ptr<Transport> transport = nullptr);

  // Key distribution and neighbor-count exchange.
  void setup();
  // Splits a model built on federated_plan (or a single two-branch layer in
  // polynomial mode) between A and B.
  void load_model(const SageModel& model, int exchanged_layers,
                  std::uint64_t dropout_seed);
  // Fits the activation scale from the first decrypted pre-activation.
  QuadActivation calibrate();
  // Loss options for the active party's head.
  void set_training_extras(LossReduction reduction, double unsup_weight,
                           const WalkConfig& walk);
  void set_fold(const FoldSplit& fold);
  // One full forward and backward pass; returns B's supervised loss.
  double train_iteration(std::uint64_t epoch);
  // Forward pass only; returns B's accuracy on the fold's test nodes.
  double evaluate();
  // Reassembles the distributed weights, for inspection only.
  SageModel model() const;

  CostCounters counters() const;
  const std::vector<ServerObservation>& server_log() const { return c_->observations(); }
  std::uint64_t session_id() const { return session_id_; }
  Transport& transport() { return *transport_; }

  PassiveParty& passive() { return *a_; }
  ActiveParty& active() { return *b_; }
  ServerParty& server() { return *c_; }

 private:
  void run(const IterationSpec& it);
  void run_scheduled(const IterationSpec& it);
  void run_threaded(const IterationSpec& it);

  SessionConfig cfg_;
  std::uint64_t session_id_;
  std::unique_ptr<Transport> transport_;
  std::unique_ptr<PassiveParty> a_;
  std::unique_ptr<ActiveParty> b_;
  std::unique_ptr<ServerParty> c_;
  ModelPlan plan_;
  double dropout_rate_ = 0.0;
  double learning_rate_ = 0.0;
  std::uint64_t train_iterations_ = 0;
  bool setup_done_ = false;
  bool loaded_ = false;
};

struct FederatedOptions {
  int exchanged_layers = 1;
  std::vector<int> hidden{64, 64};
  SessionConfig session;
};

// Federated counterpart of train_fold: same initialization, dropout stream
// and activation rule, with every cross-party quantity going through the
// protocol. `counters` accumulates the cost of the training iterations when
// non-null; setup, calibration and evaluation are not included.
FoldResult train_federated_fold(const PartyData& a, const PartyData& b,
                                const FoldSplit& fold, const TrainOptions& opt,
                                const FederatedOptions& fed,
                                CostCounters* counters = nullptr);

}  // namespace fedvgcn

#endif  // FEDVGCN_PROTOCOL_H_
