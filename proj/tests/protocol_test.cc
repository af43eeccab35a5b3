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

#include "fedvgcn/protocol.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "fedvgcn/error.h"
#include "fedvgcn/transport.h"
#include "fedvgcn/wire.h"

namespace fedvgcn {
namespace {

static_assert(HoldsSecretKey<ServerParty>);
static_assert(!HoldsSecretKey<PassiveParty>);
static_assert(!HoldsSecretKey<ActiveParty>);

int pick(EntropySource& rng, int n) { return static_cast<int>(rng.next_u64() % std::uint64_t(n)); }

// p(x) written out from the coefficients, independent of QuadActivation::value.
double poly(double a, double x) {
  const double pi = std::numbers::pi;
  return 4.0 / (3.0 * pi * a) * x * x + 0.5 * x + a / (2.0 * pi);
}
double poly_slope(double a, double x) { return 8.0 / (3.0 * std::numbers::pi * a) * x + 0.5; }

// ---------------------------------------------------------------------------
// Wire format

Ciphertext fake_ct(unsigned v, std::uint8_t scale = 1) {
  return Ciphertext{BigInt(v) * 1000003 + 7, 0xabcdef0123ULL, scale, 0};
}

CtBlock fake_block(std::uint32_t rows, std::uint32_t cols, std::uint8_t scale = 1) {
  CtBlock b{rows, cols, {}};
  for (std::uint32_t i = 0; i < rows * cols; ++i) b.cts.push_back(fake_ct(i + 1, scale));
  return b;
}

std::vector<Payload> every_payload() {
  return {PubKeyDist{BigInt("123456789012345678901234567890"), 42},
          NeighborCount{{0, 3, 1, 4294967295u}},
          EncShare{1, Role::kActive, fake_block(2, 3)},
          PlainSum{0, {2, 2, {-0.5, 1e-300, 3.25, -0.0}}},
          EncPartialLoss{2, Role::kPassive, fake_block(1, 2, 2)},
          MaskedEncGrad{0, Role::kPassive, GradTarget::kInput, fake_block(3, 1, 2)},
          MaskedPlainGrad{1, Role::kActive, GradTarget::kWeights, {1, 3, {1.5, -2.0, 7.0}}},
          EncError{3, fake_block(2, 2), fake_block(2, 2)},
          EncInputGrad{1, fake_block(2, 1, 2)}};
}

TEST(Wire, PackedBlockKeepsItsLayout) {
  CtBlock b{3, 10, {}, 4, 104};
  for (std::size_t i = 0; i < 3 * b.per_row(); ++i) b.cts.push_back(fake_ct(unsigned(i)));
  ASSERT_EQ(b.per_row(), 3u);
  const Message m{5, 2, Role::kActive, EncError{0, b, b}};
  EXPECT_EQ(deserialize(serialize(m)), m);
  b.cts.pop_back();
  EXPECT_THROW(serialize(Message{5, 3, Role::kActive, EncError{0, b, b}}), ProtocolError);
}

TEST(Wire, EveryVariantRoundTrips) {
  const auto payloads = every_payload();
  ASSERT_EQ(payloads.size(), std::variant_size_v<Payload>);
  std::uint32_t round = 1;
  for (const auto& p : payloads) {
    const Message m{0x1122334455667788ULL, round++, Role::kServer, p};
    const auto frame = serialize(m);
    EXPECT_EQ(deserialize(frame), m) << payload_name(p);
  }
}

TEST(Wire, HeaderLayout) {
  const Message m{0x0102030405060708ULL, 0x0a0b0c0d, Role::kActive, PlainSum{0, {1, 1, {1.0}}}};
  const auto f = serialize(m);
  ASSERT_GE(f.size(), kFrameHeaderSize);
  EXPECT_EQ(std::string(f.begin(), f.begin() + 4), "FVG1");
  EXPECT_EQ(f[4], 0x01);
  EXPECT_EQ(f[11], 0x08);
  EXPECT_EQ(f[12], 0x0a);
  EXPECT_EQ(f[15], 0x0d);
  EXPECT_EQ(f[16], 1);  // active
  EXPECT_EQ(f[17], payload_tag(m.payload));
  EXPECT_EQ(frame_payload_size(f), f.size() - kFrameHeaderSize);
  // The single real is little-endian IEEE: 1.0 = 0x3ff0000000000000.
  EXPECT_EQ(f[f.size() - 1], 0x3f);
  EXPECT_EQ(f[f.size() - 2], 0xf0);
}

TEST(Wire, MalformedFramesAreRejected) {
  const Message m{7, 1, Role::kPassive, NeighborCount{{1, 2}}};
  const auto good = serialize(m);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize(bad_magic), ProtocolError);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(deserialize(truncated), ProtocolError);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(deserialize(trailing), ProtocolError);

  auto bad_tag = good;
  bad_tag[17] = 99;
  EXPECT_THROW(deserialize(bad_tag), ProtocolError);

  auto bad_role = good;
  bad_role[16] = 7;
  EXPECT_THROW(deserialize(bad_role), ProtocolError);

  EXPECT_THROW(deserialize(std::span<const std::uint8_t>(good.data(), 5)), ProtocolError);
}

TEST(Wire, BlockMixingScalesIsRefused) {
  CtBlock b = fake_block(1, 2);
  b.cts[1].scale = 2;
  EXPECT_THROW(serialize(Message{1, 1, Role::kActive, EncShare{0, Role::kActive, b}}),
               ProtocolError);
}

// ---------------------------------------------------------------------------
// Transports

Message note(Role from, std::uint32_t round, std::uint32_t tag) {
  return Message{9, round, from, NeighborCount{{tag}}};
}

std::uint32_t tag_of(const Message& m) { return std::get<NeighborCount>(m.payload).counts[0]; }

TEST(InProcess, SendThenPollIsFifo) {
  InProcessTransport t;
  t.attach(Role::kPassive);
  t.attach(Role::kServer);
  for (std::uint32_t i = 1; i <= 5; ++i) t.send(Role::kServer, note(Role::kPassive, i, i));
  for (std::uint32_t i = 1; i <= 5; ++i) EXPECT_EQ(tag_of(*t.poll(Role::kServer)), i);
  EXPECT_FALSE(t.poll(Role::kServer).has_value());
  EXPECT_THROW(t.wait(Role::kServer), ProtocolError);
}

TEST(InProcess, InterleavedSendersKeepTheirOrder) {
  InProcessTransport t;
  for (Role r : {Role::kPassive, Role::kActive, Role::kServer}) t.attach(r);
  for (std::uint32_t i = 1; i <= 4; ++i) {
    t.send(Role::kServer, note(Role::kPassive, i, 100 + i));
    t.send(Role::kServer, note(Role::kActive, i, 200 + i));
    t.send(Role::kServer, note(Role::kActive, i + 10, 300 + i));
  }
  std::vector<std::uint32_t> from_a, from_b;
  while (auto m = t.poll(Role::kServer)) {
    (m->sender == Role::kPassive ? from_a : from_b).push_back(tag_of(*m));
  }
  EXPECT_EQ(from_a, (std::vector<std::uint32_t>{101, 102, 103, 104}));
  EXPECT_EQ(from_b, (std::vector<std::uint32_t>{201, 301, 202, 302, 203, 303, 204, 304}));
}

TEST(InProcess, UnknownRecipientAndDuplicateRole) {
  InProcessTransport t;
  t.attach(Role::kPassive);
  EXPECT_THROW(t.attach(Role::kPassive), ProtocolError);
  EXPECT_THROW(t.send(Role::kServer, note(Role::kPassive, 1, 1)), ProtocolError);
}

TEST(InProcess, RecordingDigestsDeliveredFrames) {
  InProcessTransport t(true);
  t.attach(Role::kPassive);
  t.attach(Role::kActive);
  t.send(Role::kActive, note(Role::kPassive, 1, 5));
  ASSERT_TRUE(t.poll(Role::kActive));
  ASSERT_EQ(t.transcript().size(), 1u);
  EXPECT_EQ(deserialize(t.transcript()[0]), note(Role::kPassive, 1, 5));
  EXPECT_NE(t.transcript_digest(), 0u);
}

TEST(Socket, DeliversInOrderAcrossThreads) {
  SocketTransport t;
  for (Role r : {Role::kPassive, Role::kActive, Role::kServer}) t.attach(r);
  std::thread a([&] {
    for (std::uint32_t i = 1; i <= 200; ++i) t.send(Role::kServer, note(Role::kPassive, i, i));
  });
  std::thread b([&] {
    for (std::uint32_t i = 1; i <= 200; ++i) t.send(Role::kServer, note(Role::kActive, i, 1000 + i));
  });
  std::uint32_t next_a = 1, next_b = 1001;
  for (int k = 0; k < 400; ++k) {
    const Message m = t.wait(Role::kServer);
    if (m.sender == Role::kPassive) {
      EXPECT_EQ(tag_of(m), next_a++);
    } else {
      EXPECT_EQ(tag_of(m), next_b++);
    }
  }
  a.join();
  b.join();
  EXPECT_GT(t.bytes_sent(), 400 * kFrameHeaderSize);
}

TEST(Socket, ConnectionLossSurfacesAsError) {
  SocketTransport t;
  for (Role r : {Role::kPassive, Role::kActive, Role::kServer}) t.attach(r);
  t.send(Role::kServer, note(Role::kPassive, 1, 1));
  t.disconnect(Role::kPassive, Role::kServer);
  // Already-delivered frames drain first; then the loss is reported.
  EXPECT_EQ(tag_of(t.wait(Role::kServer)), 1u);
  EXPECT_THROW(t.wait(Role::kServer), ProtocolError);
  EXPECT_THROW(t.send(Role::kServer, note(Role::kPassive, 2, 2)), ProtocolError);
}

// ---------------------------------------------------------------------------
// Sessions on random toy graphs

struct Toy {
  PartyData a, b;
  Eigen::MatrixXd x;  // [A columns | B columns]
  std::vector<int> labels;
};

Toy random_toy(std::uint64_t seed, int n, int dim_a, int dim_b, int classes, bool binary) {
  SeededEntropy rng(seed);
  Toy t;
  t.x.resize(n, dim_a + dim_b);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim_a + dim_b; ++j) {
      t.x(i, j) = binary ? double(rng.next_u64() % 2) : 2.0 * rng.uniform01() - 1.0;
    }
  }
  auto edges = [&] {
    std::set<Edge> es;
    for (int k = 0; k < n; ++k) {
      const int u = pick(rng, n), v = pick(rng, n);
      if (u != v) es.insert({std::min(u, v), std::max(u, v)});
    }
    return std::vector<Edge>(es.begin(), es.end());
  };
  for (int i = 0; i < n; ++i) t.labels.push_back(pick(rng, classes));
  t.a.features = t.x.leftCols(dim_a);
  t.a.edges = edges();
  t.a.num_classes = classes;
  t.b.features = t.x.rightCols(dim_b);
  t.b.edges = edges();
  t.b.labels = t.labels;
  t.b.num_classes = classes;
  return t;
}

// 1 / max(deg_A + deg_B, 1), counted straight from the edge lists.
Vector joint_norm(const Toy& t) {
  Vector deg = Vector::Zero(t.x.rows());
  for (const auto* es : {&t.a.edges, &t.b.edges}) {
    for (const auto& [u, v] : *es) {
      deg(u) += 1;
      deg(v) += 1;
    }
  }
  return deg.cwiseMax(1.0).cwiseInverse();
}

std::vector<int> all_nodes(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Plaintext reference: one SGD step of the partitioned model on combined data.
SageModel plaintext_step(const Toy& t, const SageModel& m, std::uint64_t dropout_seed,
                         std::uint64_t epoch, const std::vector<int>& train, Gradients* grads) {
  const auto input = make_graph_input(t.x, {t.a.edges, t.b.edges});
  SageNetwork net(m.plan, input);
  const ForwardCache c = net.forward(m, {true, dropout_seed, epoch});
  const Objective obj = supervised_objective(c.logits, t.labels, train, LossReduction::kSum);
  const Gradients g = net.backward(m, c, obj.dlogits);
  SageModel out = m;
  sgd_step(out, g, m.learning_rate);
  if (grads) *grads = g;
  return out;
}

struct Prepared {
  Toy toy;
  SageModel model;
  std::uint64_t dropout_seed;
  FoldSplit fold;
};

Prepared prepare(std::uint64_t seed, int n, int dim_a, int dim_b, std::vector<int> hidden,
                 int k, int classes, bool binary, double dropout, double lr) {
  Prepared p{random_toy(seed, n, dim_a, dim_b, classes, binary), {}, mix_words({seed, 99}), {}};
  const ModelPlan plan = federated_plan(dim_a, dim_b, classes, hidden, k);
  p.model = init_model(plan, QuadActivation(1.5), dropout, lr, seed);
  p.fold.train_ids = all_nodes(n);
  p.fold.test_ids = all_nodes(n);
  return p;
}

std::unique_ptr<FederatedSession> open_session(const Prepared& p, int k, SessionConfig cfg = {},
                                               std::unique_ptr<Transport> tr = nullptr) {
  auto s = std::make_unique<FederatedSession>(cfg, p.toy.a, p.toy.b, std::move(tr));
  s->setup();
  s->load_model(p.model, k, p.dropout_seed);
  s->set_fold(p.fold);
  return s;
}

double max_weight_diff(const SageModel& x, const SageModel& y) {
  double worst = 0.0;
  for (std::size_t l = 0; l < x.weights.size(); ++l) {
    for (std::size_t b = 0; b < x.weights[l].size(); ++b) {
      worst = std::max(worst, (x.weights[l][b].w_self - y.weights[l][b].w_self).cwiseAbs().maxCoeff());
      worst = std::max(worst, (x.weights[l][b].w_neigh - y.weights[l][b].w_neigh).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

TEST(Session, SetupDistributesOnlyThePublicKey) {
  const Prepared p = prepare(1, 5, 2, 2, {3}, 1, 2, true, 0.0, 0.1);
  auto s = open_session(p, 1);
  const PublicKey& pk = s->server().public_key();
  EXPECT_EQ(s->passive().public_key().n, pk.n);
  EXPECT_EQ(s->active().public_key().key_id, pk.key_id);
  EXPECT_EQ(pk.bits(), 512u);

  // A encrypts, the server decrypts.
  SeededEntropy rng(3);
  FixedPointCodec codec(pk.n, 32);
  const Ciphertext c = encrypt(s->passive().public_key(), codec.encode(-1.375), rng);
  EXPECT_EQ(codec.decode(decrypt(s->server().secret_key(), c)), -1.375);
}

TEST(Session, DistinctSessionsHaveDistinctKeys) {
  const Prepared p = prepare(1, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.1);
  SessionConfig c1, c2;
  c2.seed = 2;
  auto s1 = open_session(p, 1, c1);
  auto s2 = open_session(p, 1, c2);
  EXPECT_NE(s1->server().public_key().key_id, s2->server().public_key().key_id);
  EXPECT_NE(s1->session_id(), s2->session_id());
}

TEST(Session, DuplicateRoleOnTransportFails) {
  const Prepared p = prepare(1, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.1);
  auto t = std::make_unique<InProcessTransport>();
  t->attach(Role::kServer);
  EXPECT_THROW(FederatedSession(SessionConfig{}, p.toy.a, p.toy.b, std::move(t)), ProtocolError);
}

// Equivalence of one encrypted iteration with the plaintext update.
void check_equivalence(int k, bool binary, std::uint64_t seed_base, bool pack = true) {
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    SeededEntropy rng(seed_base + trial);
    const int n = 3 + pick(rng, 8);  // <= 10 nodes
    const int da = 1 + pick(rng, 3), db = 1 + pick(rng, 3);
    std::vector<int> hidden(k == 1 ? 1 : 2);
    for (int& h : hidden) h = 1 + pick(rng, 4);  // widths <= 4
    const int classes = 2 + pick(rng, 3);
    const Prepared p =
        prepare(seed_base * 31 + trial, n, da, db, hidden, k, classes, binary, 0.5, 0.05);
    SessionConfig cfg;
    cfg.pack = pack;
    auto s = open_session(p, k, cfg);
    s->train_iteration(0);
    const SageModel expect = plaintext_step(p.toy, p.model, p.dropout_seed, 0, p.fold.train_ids, nullptr);
    const SageModel got = s->model();
    EXPECT_LE(max_weight_diff(got, expect), 1e-4) << "trial " << trial;
    // The update itself must be non-trivial for the comparison to mean anything.
    EXPECT_GT(max_weight_diff(p.model, expect), 1e-4);
    EXPECT_LE(s->counters().max_decrypt_depth, 1);
  }
}

TEST(Equivalence, OneExchangedLayerBinaryFeatures) { check_equivalence(1, true, 100); }
TEST(Equivalence, OneExchangedLayerRealFeatures) { check_equivalence(1, false, 200); }
TEST(Equivalence, UnpackedCiphertexts) { check_equivalence(2, false, 500, false); }
TEST(Equivalence, TwoExchangedLayers) { check_equivalence(2, true, 300); }
TEST(Equivalence, TwoExchangedLayersRealFeatures) { check_equivalence(2, false, 400); }

TEST(Equivalence, SeveralEpochsTrackPlaintext) {
  const Prepared p = prepare(7, 8, 3, 2, {3, 3}, 2, 3, true, 0.5, 0.005);
  auto s = open_session(p, 2);
  SageModel ref = p.model;
  for (std::uint64_t e = 0; e < 3; ++e) {
    s->train_iteration(e);
    ref = plaintext_step(p.toy, ref, p.dropout_seed, e, p.fold.train_ids, nullptr);
  }
  EXPECT_LE(max_weight_diff(s->model(), ref), 1e-4);
  EXPECT_GT(max_weight_diff(p.model, ref), 1e-3);
}

TEST(Equivalence, EvaluationMatchesPlaintextAccuracy) {
  const Prepared p = prepare(8, 10, 2, 3, {4}, 1, 3, false, 0.0, 0.05);
  auto s = open_session(p, 1);
  const auto input = make_graph_input(p.toy.x, {p.toy.a.edges, p.toy.b.edges});
  SageNetwork net(p.model.plan, input);
  const double expect = accuracy(net.forward(p.model, {}).logits, p.toy.labels, p.fold.test_ids);
  EXPECT_EQ(s->evaluate(), expect);
}

TEST(Equivalence, CalibrationFitsTheFirstLayerScale) {
  const Prepared p = prepare(9, 9, 2, 2, {4}, 1, 2, false, 0.0, 0.05);
  auto s = open_session(p, 1);
  const auto input = make_graph_input(p.toy.x, {p.toy.a.edges, p.toy.b.edges});
  SageNetwork net(p.model.plan, input);
  const Matrix z = net.first_layer_preactivation(p.model);
  const double expect = std::max(z.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_NEAR(s->calibrate().a(), expect, 1e-8);
}

TEST(Equivalence, ThreadedSocketRunMatchesInProcess) {
  const Prepared p = prepare(10, 7, 2, 2, {3, 2}, 2, 2, true, 0.5, 0.05);
  auto local = open_session(p, 2);
  SessionConfig cfg;
  cfg.threaded = true;
  auto remote = open_session(p, 2, cfg, std::make_unique<SocketTransport>());
  local->train_iteration(0);
  remote->train_iteration(0);
  EXPECT_LE(max_weight_diff(local->model(), remote->model()), 1e-9);
  EXPECT_GT(remote->transport().bytes_sent(), 0u);
}

TEST(Equivalence, ThreadedRunReportsLostConnection) {
  const Prepared p = prepare(11, 5, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  SessionConfig cfg;
  cfg.threaded = true;
  auto s = open_session(p, 1, cfg, std::make_unique<SocketTransport>());
  dynamic_cast<SocketTransport&>(s->transport()).disconnect(Role::kPassive, Role::kServer);
  EXPECT_THROW(s->train_iteration(0), ProtocolError);
}

// ---------------------------------------------------------------------------
// Scalar sessions in polynomial mode: one node, one feature per party, one
// output, so each party's share is exactly its self weight.

struct ScalarRun {
  std::unique_ptr<FederatedSession> session;
  SageModel model;
};

ScalarRun scalar_session(double wa, double wb, double a, bool record = false,
                         std::uint64_t seed = 1) {
  PartyData pa{Eigen::MatrixXd::Ones(1, 1), {}, std::nullopt, 1};
  PartyData pb{Eigen::MatrixXd::Ones(1, 1), {}, std::vector<int>{0}, 1};
  ModelPlan plan;
  plan.input_dim = 2;
  plan.layers.push_back({{{{0}, 0, Party::kPassive}, {{1}, 1, Party::kActive}}, 1});
  SageModel m;
  m.plan = plan;
  m.activation = QuadActivation(a);
  m.dropout_rate = 0.0;
  m.learning_rate = 1.0;
  m.weights = {{{Matrix::Constant(1, 1, wa), Matrix::Constant(1, 1, 0.3)},
                {Matrix::Constant(1, 1, wb), Matrix::Constant(1, 1, -0.2)}}};
  SessionConfig cfg;
  cfg.mode = ProtocolMode::kPolynomial;
  cfg.capture = true;
  cfg.seed = seed;
  ScalarRun r{std::make_unique<FederatedSession>(cfg, pa, pb,
                                                 std::make_unique<InProcessTransport>(record)),
              m};
  r.session->setup();
  r.session->load_model(m, 1, 0);
  return r;
}

std::vector<double> observed(const FederatedSession& s, Observation kind, Role role) {
  std::vector<double> out;
  for (const auto& o : s.server_log()) {
    if (o.kind == kind && o.role == role) out.insert(out.end(), o.values.begin(), o.values.end());
  }
  return out;
}

TEST(Forward, ScalarSharesSumAtTheServer) {
  auto r = scalar_session(0.25, -0.75, 1.0);
  r.session->train_iteration(0);
  const auto z = observed(*r.session, Observation::kForwardSum, Role::kServer);
  ASSERT_EQ(z.size(), 1u);
  EXPECT_NEAR(z[0], -0.5, std::ldexp(1.0, -31));
}

TEST(Forward, ZeroActiveShareGivesThePassiveShare) {
  const Prepared p = prepare(12, 6, 3, 2, {3}, 1, 2, false, 0.0, 0.05);
  SageModel m = p.model;
  m.weights[0][1].w_self.setZero();
  m.weights[0][1].w_neigh.setZero();
  SessionConfig cfg;
  cfg.capture = true;
  auto s = std::make_unique<FederatedSession>(cfg, p.toy.a, p.toy.b);
  s->setup();
  s->load_model(m, 1, 0);
  s->calibrate();
  const auto input = make_graph_input(p.toy.x, {p.toy.a.edges, p.toy.b.edges});
  const std::vector<Vector> norms{joint_norm(p.toy)};
  BranchInput in(Matrix(p.toy.a.features), input.adjacency[0], norms[0]);
  const Matrix share = in.share(m.weights[0][0]);
  const auto z = observed(*s, Observation::kForwardSum, Role::kServer);
  ASSERT_EQ(z.size(), std::size_t(share.size()));
  for (std::size_t i = 0; i < z.size(); ++i) {
    EXPECT_NEAR(z[i], share.data()[i], std::ldexp(1.0, -31));
  }
}

TEST(Loss, UnitShareWithZeroPeer) {
  auto r = scalar_session(1.0, 0.0, 1.0);
  r.session->train_iteration(0);
  const auto l = observed(*r.session, Observation::kLoss, Role::kActive);
  ASSERT_EQ(l.size(), 1u);
  const double pi = std::numbers::pi;
  EXPECT_NEAR(l[0], 4.0 / (3.0 * pi) + 0.5 + 1.0 / (2.0 * pi), std::ldexp(1.0, -31));
}

TEST(Loss, ZeroSharesLeaveTheConstantSplitInHalves) {
  const double a = 2.0;
  auto r = scalar_session(0.0, 0.0, a, true);
  r.session->train_iteration(0);
  const auto l = observed(*r.session, Observation::kLoss, Role::kActive);
  ASSERT_EQ(l.size(), 1u);
  EXPECT_NEAR(l[0], a / (2.0 * std::numbers::pi), std::ldexp(1.0, -31));

  // Read [[L_A]] off the recorded transcript and open it with the server key.
  const auto& t = dynamic_cast<InProcessTransport&>(r.session->transport());
  const SecretKey& sk = r.session->server().secret_key();
  FixedPointCodec codec(r.session->server().public_key().n, 32);
  int seen = 0;
  for (const auto& frame : t.transcript()) {
    const Message m = deserialize(frame);
    if (auto* pl = std::get_if<EncPartialLoss>(&m.payload); pl && m.sender == Role::kPassive) {
      const auto& c = pl->block.cts.at(0);
      EXPECT_NEAR(codec.decode(decrypt(sk, c), c.scale), a / (4.0 * std::numbers::pi),
                  std::ldexp(1.0, -31));
      ++seen;
    }
  }
  EXPECT_EQ(seen, 1);
}

TEST(Loss, RandomSharesDecryptToThePolynomial) {
  SeededEntropy rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const double x = 4.0 * rng.uniform01() - 2.0, y = 4.0 * rng.uniform01() - 2.0;
    const double a = 0.5 + 3.0 * rng.uniform01();
    auto r = scalar_session(x, y, a, false, 100 + trial);
    r.session->train_iteration(0);
    const auto l = observed(*r.session, Observation::kLoss, Role::kActive);
    ASSERT_EQ(l.size(), 1u);
    EXPECT_NEAR(l[0], poly(a, x + y), std::ldexp(1.0, 1 - 32)) << x << " " << y;
  }
}

TEST(Gradient, EncryptedRouteMatchesPlaintextOnScalars) {
  SeededEntropy rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const double x = 2.0 * rng.uniform01() - 1.0, y = 2.0 * rng.uniform01() - 1.0;
    const double a = 0.5 + rng.uniform01();
    auto r = scalar_session(x, y, a, false, 200 + trial);
    r.session->train_iteration(0);
    const SageModel m = r.session->model();
    // d p(z) / d w_self = h p'(z) with h = 1; the neighbor part sees no edges.
    const double g = poly_slope(a, x + y);
    EXPECT_NEAR(m.weights[0][0].w_self(0, 0), x - g, 1e-6);
    EXPECT_NEAR(m.weights[0][1].w_self(0, 0), y - g, 1e-6);
    EXPECT_NEAR(m.weights[0][0].w_neigh(0, 0), 0.3, 1e-6);
    EXPECT_NEAR(m.weights[0][1].w_neigh(0, 0), -0.2, 1e-6);
  }
}

TEST(Gradient, PolynomialRouteOnAGraphMatchesAnalyticForm) {
  // Objective sum_ij p(z_ij); dW_self = H^T p'(Z), dW_neigh = agg^T p'(Z).
  const Prepared p = prepare(23, 7, 2, 3, {1}, 1, 2, false, 0.0, 1.0);
  ModelPlan plan;
  plan.input_dim = 5;
  plan.layers.push_back({{{{0, 1}, 0, Party::kPassive}, {{2, 3, 4}, 1, Party::kActive}}, 2});
  const SageModel m = init_model(plan, QuadActivation(1.2), 0.0, 1.0, 5);
  SessionConfig cfg;
  cfg.mode = ProtocolMode::kPolynomial;
  FederatedSession s(cfg, p.toy.a, p.toy.b);
  s.setup();
  s.load_model(m, 1, 0);
  s.train_iteration(0);

  const auto input = make_graph_input(p.toy.x, {p.toy.a.edges, p.toy.b.edges});
  const std::vector<Vector> norms{joint_norm(p.toy)};
  BranchInput ia(Matrix(p.toy.a.features), input.adjacency[0], norms[0]);
  BranchInput ib(Matrix(p.toy.b.features), input.adjacency[1], norms[0]);
  const Matrix z = ia.share(m.weights[0][0]) + ib.share(m.weights[0][1]);
  Matrix dz = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) dz.data()[i] = poly_slope(1.2, z.data()[i]);
  const SageLayer ga = ia.weight_grads(dz), gb = ib.weight_grads(dz);
  const SageModel got = s.model();
  EXPECT_LE((got.weights[0][0].w_self - (m.weights[0][0].w_self - ga.w_self)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((got.weights[0][0].w_neigh - (m.weights[0][0].w_neigh - ga.w_neigh)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((got.weights[0][1].w_self - (m.weights[0][1].w_self - gb.w_self)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((got.weights[0][1].w_neigh - (m.weights[0][1].w_neigh - gb.w_neigh)).cwiseAbs().maxCoeff(), 1e-6);
}

// ---------------------------------------------------------------------------
// Masks and server view

TEST(Masks, UnmaskRecoversTheGradientExactly) {
  // The server sees g + sigma; the party subtracts sigma. With lr = 1 the
  // stored update must equal the plaintext gradient to codec resolution.
  const Prepared p = prepare(30, 6, 2, 2, {3}, 1, 2, true, 0.0, 1.0);
  SessionConfig cfg;
  cfg.capture = true;
  auto s = open_session(p, 1, cfg);
  s->train_iteration(0);
  Gradients g;
  plaintext_step(p.toy, p.model, p.dropout_seed, 0, p.fold.train_ids, &g);

  for (Role role : {Role::kPassive, Role::kActive}) {
    const int b = role == Role::kPassive ? 0 : 1;
    const auto masked = observed(*s, Observation::kMaskedWeightGrad, role);
    const auto& log = role == Role::kPassive ? s->passive().mask_log() : s->active().mask_log();
    ASSERT_EQ(log.size(), 1u);
    const SageLayer& truth = g[0][b];
    const auto d = truth.w_self.size();
    ASSERT_EQ(masked.size(), std::size_t(2 * d));
    int hidden = 0;
    for (Eigen::Index i = 0; i < 2 * d; ++i) {
      const double t = i < d ? truth.w_self.data()[i] : truth.w_neigh.data()[i - d];
      EXPECT_NEAR(masked[i] - log[0][i], t, 1e-6);
      if (std::abs(masked[i] - t) > 1.0) ++hidden;
    }
    EXPECT_GE(hidden, d);  // masks are on the order of 2^20
  }
}

TEST(Masks, FreshEveryRound) {
  auto r = scalar_session(0.1, 0.2, 1.0);
  for (int e = 0; e < 50; ++e) r.session->train_iteration(e);
  std::set<std::vector<double>> seen;
  for (const auto* log : {&r.session->passive().mask_log(), &r.session->active().mask_log()}) {
    ASSERT_EQ(log->size(), 50u);
    for (const auto& m : *log) {
      EXPECT_TRUE(seen.insert(m).second);
      for (double v : m) EXPECT_LE(std::abs(v), std::ldexp(1.0, 20));
    }
  }
}

TEST(ServerView, OnlyLossAndMaskedGradientsDuringBackward) {
  const Prepared p = prepare(31, 8, 2, 2, {3, 3}, 2, 3, true, 0.5, 0.05);
  SessionConfig cfg;
  cfg.capture = true;
  auto s = open_session(p, 2, cfg);
  s->train_iteration(0);
  Gradients g;
  plaintext_step(p.toy, p.model, p.dropout_seed, 0, p.fold.train_ids, &g);

  std::vector<double> truths;
  for (int l = 0; l < 2; ++l) {
    for (int b = 0; b < 2; ++b) {
      truths.insert(truths.end(), g[l][b].w_self.data(), g[l][b].w_self.data() + g[l][b].w_self.size());
      truths.insert(truths.end(), g[l][b].w_neigh.data(), g[l][b].w_neigh.data() + g[l][b].w_neigh.size());
    }
  }
  int forward = 0, losses = 0;
  for (const auto& o : s->server_log()) {
    switch (o.kind) {
      case Observation::kForwardSum: ++forward; break;
      case Observation::kLoss: ++losses; break;
      case Observation::kMaskedWeightGrad:
      case Observation::kMaskedInputGrad:
        for (double v : o.values) {
          for (double t : truths) {
            if (t != 0.0) EXPECT_GT(std::abs(v - t), 1e-3);
          }
        }
        break;
    }
  }
  EXPECT_EQ(forward, 2);
  EXPECT_EQ(losses, 2);
}

// ---------------------------------------------------------------------------
// Determinism

TEST(Determinism, SameSeedsGiveIdenticalTranscripts) {
  const Prepared p = prepare(40, 6, 2, 2, {3, 2}, 2, 2, true, 0.5, 0.05);
  auto run = [&] {
    auto s = open_session(p, 2, SessionConfig{}, std::make_unique<InProcessTransport>(true));
    s->train_iteration(0);
    s->train_iteration(1);
    s->evaluate();
    const auto& t = dynamic_cast<InProcessTransport&>(s->transport());
    return std::make_pair(t.transcript_digest(), s->model());
  };
  const auto [d1, m1] = run();
  const auto [d2, m2] = run();
  EXPECT_EQ(d1, d2);
  EXPECT_EQ(max_weight_diff(m1, m2), 0.0);
}

TEST(Determinism, DifferentSessionSeedChangesTheTranscript) {
  const Prepared p = prepare(41, 5, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  SessionConfig c1, c2;
  c2.seed = 77;
  auto s1 = open_session(p, 1, c1, std::make_unique<InProcessTransport>(true));
  auto s2 = open_session(p, 1, c2, std::make_unique<InProcessTransport>(true));
  s1->train_iteration(0);
  s2->train_iteration(0);
  EXPECT_NE(dynamic_cast<InProcessTransport&>(s1->transport()).transcript_digest(),
            dynamic_cast<InProcessTransport&>(s2->transport()).transcript_digest());
  EXPECT_LE(max_weight_diff(s1->model(), s2->model()), 1e-8);
}

// ---------------------------------------------------------------------------
// Costs

TEST(Counters, ThreeLayersWidthFour) {
  const Prepared p = prepare(50, 6, 2, 2, {4, 4}, 2, 4, true, 0.0, 0.05);
  auto s = open_session(p, 2);
  const CostCounters before = s->counters();
  s->train_iteration(0);
  const CostCounters c = s->counters();
  const int n = 3, m = 4;
  EXPECT_EQ(c.forward_messages() - before.forward_messages(), 2u * m * (n - 1));
  EXPECT_EQ(c.forward_messages() - before.forward_messages(), 16u);
  for (int l = 0; l < n - 1; ++l) {
    EXPECT_LE(c.layers.at(l).backward_messages, 7u * (m * m + m + 1)) << "layer " << l;
    EXPECT_GT(c.layers.at(l).backward_messages, 0u);
  }
  EXPECT_LE(c.total_messages() - before.total_messages(), 10u * n * m * m);
  EXPECT_EQ(c.train_iterations, 1u);
  EXPECT_LE(c.max_decrypt_depth, 1);
  EXPECT_GT(c.ciphertext_adds, 0u);
  EXPECT_GT(c.scalar_muls, 0u);
}

TEST(Counters, PackingSavesCiphertextsNotMessages) {
  const Prepared p = prepare(54, 9, 3, 3, {4}, 1, 2, true, 0.0, 0.05);
  SessionConfig packed, plain;
  plain.pack = false;
  auto s1 = open_session(p, 1, packed);
  auto s2 = open_session(p, 1, plain);
  s1->train_iteration(0);
  s2->train_iteration(0);
  const CostCounters a = s1->counters(), b = s2->counters();
  EXPECT_EQ(a.forward_messages(), b.forward_messages());
  EXPECT_EQ(a.backward_messages(), b.backward_messages());
  EXPECT_LT(a.ciphertexts_sent, b.ciphertexts_sent);
  EXPECT_LT(a.decryptions, b.decryptions);
  EXPECT_LE(max_weight_diff(s1->model(), s2->model()), 1e-8);
}

TEST(Counters, TwoLayersWidthOne) {
  const Prepared p = prepare(51, 5, 1, 1, {1}, 1, 2, true, 0.0, 0.05);
  auto s = open_session(p, 1);
  s->train_iteration(0);
  const CostCounters c = s->counters();
  EXPECT_EQ(c.forward_messages(), 2u);
  EXPECT_LE(c.layers.at(0).backward_messages, 21u);
}

TEST(Counters, MonotoneAcrossIterations) {
  const Prepared p = prepare(52, 5, 2, 1, {2}, 1, 2, true, 0.0, 0.05);
  auto s = open_session(p, 1);
  CostCounters prev = s->counters();
  for (int e = 0; e < 3; ++e) {
    s->train_iteration(e);
    const CostCounters c = s->counters();
    EXPECT_GT(c.total_messages(), prev.total_messages());
    EXPECT_GE(c.ciphertext_adds, prev.ciphertext_adds);
    EXPECT_GE(c.scalar_muls, prev.scalar_muls);
    EXPECT_GT(c.decryptions, prev.decryptions);
    prev = c;
  }
}

TEST(Counters, ZeroIterationsCountNothing) {
  EXPECT_TRUE(CostCounters{}.all_zero());
  const Prepared p = prepare(53, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  FederatedSession s(SessionConfig{}, p.toy.a, p.toy.b);
  EXPECT_TRUE(s.counters().all_zero());
}

// ---------------------------------------------------------------------------
// Error paths

TEST(Errors, StaleRoundIsRejected) {
  const Prepared p = prepare(60, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  auto s = open_session(p, 1);
  const Message old{s->session_id(), 1, Role::kServer, PlainSum{0, {1, 1, {0.0}}}};
  EXPECT_THROW(s->passive().receive(old), ProtocolError);
}

TEST(Errors, ForeignSessionIsRejected) {
  const Prepared p = prepare(61, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  auto s = open_session(p, 1);
  const Message m{s->session_id() ^ 1, 1000, Role::kServer, PlainSum{0, {1, 1, {0.0}}}};
  EXPECT_THROW(s->passive().receive(m), ProtocolError);
}

TEST(Errors, MessageOutsideAnIterationIsRejected) {
  const Prepared p = prepare(62, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  auto s = open_session(p, 1);
  const Message m{s->session_id(), 1000, Role::kServer, PlainSum{0, {4, 2, std::vector<double>(8)}}};
  EXPECT_THROW(s->active().receive(m), ProtocolError);
}

TEST(Errors, ShareDimensionMismatch) {
  const Prepared p = prepare(63, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  auto s = open_session(p, 1);
  ServerParty& c = s->server();
  c.begin({IterationKind::kCalibrate, 0});
  const PublicKey& pk = c.public_key();
  SeededEntropy rng(4);
  auto block = [&](std::uint32_t rows) {
    CtBlock b{rows, 2, {}};
    for (std::uint32_t i = 0; i < rows * 2; ++i) b.cts.push_back(encrypt(pk, BigInt(i), rng));
    return b;
  };
  c.receive({s->session_id(), 1000, Role::kPassive, EncShare{0, Role::kPassive, block(4)}});
  EXPECT_THROW(
      c.receive({s->session_id(), 1000, Role::kActive, EncShare{0, Role::kActive, block(3)}}),
      ProtocolError);
}

// Drops every share the active party sends to the server.
class DroppingTransport final : public Transport {
 public:
  void attach(Role r) override { inner_.attach(r); }
  void send(Role to, const Message& m) override {
    if (to == Role::kServer && m.sender == Role::kActive &&
        std::holds_alternative<EncShare>(m.payload)) {
      return;
    }
    inner_.send(to, m);
  }
  std::optional<Message> poll(Role to) override { return inner_.poll(to); }
  Message wait(Role to) override { return inner_.wait(to); }
  bool blocking() const override { return false; }

 private:
  InProcessTransport inner_;
};

TEST(Errors, MissingShareStallsTheIteration) {
  const Prepared p = prepare(64, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  auto s = open_session(p, 1, SessionConfig{}, std::make_unique<DroppingTransport>());
  try {
    s->calibrate();
    FAIL() << "expected a stall";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("stalled"), std::string::npos);
  }
}

TEST(Errors, IterationBeforeSetupOrModel) {
  const Prepared p = prepare(65, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  FederatedSession s(SessionConfig{}, p.toy.a, p.toy.b);
  EXPECT_THROW(s.train_iteration(0), ProtocolError);
  s.setup();
  EXPECT_THROW(s.setup(), ProtocolError);
  EXPECT_THROW(s.evaluate(), ProtocolError);
}

TEST(Errors, ModelLayoutMustMatch) {
  const Prepared p = prepare(66, 4, 1, 1, {2, 2}, 1, 2, true, 0.0, 0.05);
  FederatedSession s(SessionConfig{}, p.toy.a, p.toy.b);
  s.setup();
  EXPECT_THROW(s.load_model(p.model, 2, 0), ConfigError);  // plan exchanges only one layer
  EXPECT_THROW(s.load_model(p.model, 3, 0), ConfigError);
  const Prepared q = prepare(66, 4, 2, 1, {2}, 1, 2, true, 0.0, 0.05);
  EXPECT_THROW(s.load_model(q.model, 1, 0), ConfigError);  // A has one feature, not two
}

TEST(Errors, MisalignedPartiesAreRejected) {
  Prepared p = prepare(67, 4, 1, 1, {2}, 1, 2, true, 0.0, 0.05);
  p.toy.b.features.conservativeResize(3, Eigen::NoChange);
  EXPECT_THROW(FederatedSession(SessionConfig{}, p.toy.a, p.toy.b), DataError);
}

// ---------------------------------------------------------------------------
// Fold driver

TEST(FederatedFold, MatchesPlaintextTrainFold) {
  const Toy t = random_toy(70, 10, 3, 3, 2, true);
  TrainOptions opt;
  opt.epochs = 2;
  opt.seed = 5;
  opt.learning_rate = 0.05;
  opt.dropout_rate = 0.5;
  FoldSplit fold{1, {0, 1, 2, 3, 4, 5, 6}, {7, 8, 9}};
  FederatedOptions fed;
  fed.hidden = {3, 3};
  fed.exchanged_layers = 1;
  CostCounters costs;
  const FoldResult got = train_federated_fold(t.a, t.b, fold, opt, fed, &costs);

  const auto input = make_graph_input(t.x, {t.a.edges, t.b.edges});
  SageNetwork net(federated_plan(3, 3, 2, fed.hidden, 1), input);
  const FoldResult expect = train_fold(net, t.labels, fold, opt);
  EXPECT_NEAR(got.activation_a, expect.activation_a, 1e-8);
  EXPECT_NEAR(got.final_loss, expect.final_loss, 1e-4);
  EXPECT_EQ(got.accuracy, expect.accuracy);
  EXPECT_EQ(costs.train_iterations, 2u);
}

}  // namespace
}  // namespace fedvgcn
