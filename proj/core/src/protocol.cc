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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "fedvgcn/error.h"

namespace fedvgcn {
namespace {

int idx(Role r) { return static_cast<int>(r); }

// Runs fn(i) for i in [0, n) on all hardware threads. Results must not depend
// on scheduling; callers derive per-element randomness from i.
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
  const unsigned hw = std::thread::hardware_concurrency();
  if (hw <= 1 || n < 1024) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  constexpr std::size_t kChunk = 64;
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < std::min(hw, 32u); ++t) {
    pool.emplace_back([&] {
      try {
        for (std::size_t b; (b = next.fetch_add(kChunk)) < n;) {
          for (std::size_t i = b; i < std::min(n, b + kChunk); ++i) fn(i);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

Matrix to_matrix(const RealBlock& b) {
  Matrix m(b.rows, b.cols);
  std::copy(b.values.begin(), b.values.end(), m.data());
  return m;
}

CtBlock empty_block(std::size_t rows, std::size_t cols, const Ciphertext& fill) {
  return {static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols),
          std::vector<Ciphertext>(rows * cols, fill)};
}

// Same packing layout as `like`, new shape.
CtBlock shaped_like(const CtBlock& like, std::size_t rows, std::size_t cols,
                    const Ciphertext& fill) {
  CtBlock b{static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols), {},
            like.slots, like.slot_bits};
  b.cts.assign(rows * b.per_row(), fill);
  return b;
}

bool same_layout(const CtBlock& x, const CtBlock& y) {
  return x.rows == y.rows && x.cols == y.cols && x.slots == y.slots &&
         x.slot_bits == y.slot_bits && x.cts.size() == y.cts.size();
}

Matrix poly_matrix(const Matrix& s, const QuadActivation& act, double constant) {
  return ((act.c2() * s.array() + act.c1()) * s.array() + constant).matrix();
}

Matrix slope_matrix(const Matrix& z, const QuadActivation& act) {
  return (2.0 * act.c2() * z.array() + act.c1()).matrix();
}

// Residue of a small signed integer.
BigInt residue(long v, const BigInt& n) {
  BigInt r(v);
  if (r < 0) r += n;
  return r;
}

template <typename F>
void for_each_nonzero(const BranchInput& in, F&& fn) {
  if (in.is_sparse()) {
    const SparseMatrix& h = in.sparse_input();
    for (int i = 0; i < h.outerSize(); ++i) {
      for (SparseMatrix::InnerIterator it(h, i); it; ++it) {
        if (it.value() != 0.0) fn(i, static_cast<int>(it.col()), it.value());
      }
    }
  } else {
    const Matrix& h = in.dense_input();
    for (int i = 0; i < h.rows(); ++i) {
      for (int f = 0; f < h.cols(); ++f) {
        if (h(i, f) != 0.0) fn(i, f, h(i, f));
      }
    }
  }
}

Matrix aggregated_input(const BranchInput& in) {
  Matrix agg = in.is_sparse() ? Matrix(in.adjacency() * in.sparse_input())
                              : Matrix(in.adjacency() * in.dense_input());
  agg.array().colwise() *= in.norm().array();
  return agg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Counters

LayerCost& CostCounters::layer(int l) {
  if (static_cast<int>(layers.size()) <= l) layers.resize(l + 1);
  return layers[l];
}

std::uint64_t CostCounters::forward_messages() const {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.forward_messages;
  return s;
}

std::uint64_t CostCounters::backward_messages() const {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.backward_messages;
  return s;
}

bool CostCounters::all_zero() const {
  for (const auto& l : layers) {
    if (!(l == LayerCost{})) return false;
  }
  return train_iterations == 0 && messages == 0 && ciphertexts_sent == 0 &&
         encryptions == 0 && decryptions == 0 && ciphertext_adds == 0 &&
         scalar_muls == 0 && max_decrypt_depth == 0;
}

CostCounters& CostCounters::operator+=(const CostCounters& o) {
  if (o.layers.size() > layers.size()) layers.resize(o.layers.size());
  for (std::size_t i = 0; i < o.layers.size(); ++i) {
    layers[i].forward_messages += o.layers[i].forward_messages;
    layers[i].backward_messages += o.layers[i].backward_messages;
    layers[i].ciphertext_adds += o.layers[i].ciphertext_adds;
    layers[i].scalar_muls += o.layers[i].scalar_muls;
  }
  train_iterations += o.train_iterations;
  messages += o.messages;
  ciphertexts_sent += o.ciphertexts_sent;
  encryptions += o.encryptions;
  decryptions += o.decryptions;
  ciphertext_adds += o.ciphertext_adds;
  scalar_muls += o.scalar_muls;
  max_decrypt_depth = std::max(max_decrypt_depth, o.max_decrypt_depth);
  return *this;
}

CostCounters CostCounters::since(const CostCounters& e) const {
  CostCounters d = *this;
  for (std::size_t i = 0; i < d.layers.size() && i < e.layers.size(); ++i) {
    d.layers[i].forward_messages -= e.layers[i].forward_messages;
    d.layers[i].backward_messages -= e.layers[i].backward_messages;
    d.layers[i].ciphertext_adds -= e.layers[i].ciphertext_adds;
    d.layers[i].scalar_muls -= e.layers[i].scalar_muls;
  }
  d.train_iterations -= e.train_iterations;
  d.messages -= e.messages;
  d.ciphertexts_sent -= e.ciphertexts_sent;
  d.encryptions -= e.encryptions;
  d.decryptions -= e.decryptions;
  d.ciphertext_adds -= e.ciphertext_adds;
  d.scalar_muls -= e.scalar_muls;
  if (d.all_zero()) d.layers.clear();
  return d;
}

PartyData party_data(const VerticalView& v) {
  return {v.features, v.edges, v.labels, v.num_classes};
}

// ---------------------------------------------------------------------------
// PartyBase

PartyBase::PartyBase(Role role, std::uint64_t session_id, std::uint64_t seed)
    : seed_(seed), role_(role), session_id_(session_id) {}

void PartyBase::begin(const IterationSpec& it) {
  if (!done()) {
    throw ProtocolError(std::string(role_name(role_)) + " party is still inside an iteration");
  }
  iteration_ = it;
  expected_ = expected_messages(it);
  received_ = 0;
  on_begin();
}

void PartyBase::receive(const Message& m) {
  if (m.session_id != session_id_) throw ProtocolError("message from another session");
  auto& last = last_round_[idx(m.sender)];
  if (m.round <= last) {
    throw ProtocolError("stale round " + std::to_string(m.round) + " from " +
                        std::string(role_name(m.sender)));
  }
  last = m.round;
  if (received_ >= expected_) {
    throw ProtocolError("unexpected " + std::string(payload_name(m.payload)) + " at " +
                        std::string(role_name(role_)));
  }
  ++received_;
  on_message(m);
}

void PartyBase::post(Role to, Payload p) {
  if (!transport_) throw ProtocolError("party is not connected to a transport");
  Message m{session_id_, next_round_++, role_, std::move(p)};
  ++counters_.messages;
  auto units = [&](std::uint32_t layer, const CtBlock& b, bool forward, bool per_entry) {
    auto& lc = counters_.layer(static_cast<int>(layer));
    const std::uint64_t u = per_entry ? std::uint64_t(b.rows) * b.cols : b.cols;
    (forward ? lc.forward_messages : lc.backward_messages) += u;
    counters_.ciphertexts_sent += b.size();
  };
  if (auto* s = std::get_if<EncShare>(&m.payload)) {
    units(s->layer, s->block, to == Role::kServer, false);
  } else if (auto* l = std::get_if<EncPartialLoss>(&m.payload)) {
    units(l->layer, l->block, false, false);
  } else if (auto* g = std::get_if<MaskedEncGrad>(&m.payload)) {
    units(g->layer, g->block, false, g->target == GradTarget::kWeights);
  } else if (auto* e = std::get_if<EncError>(&m.payload)) {
    units(e->layer, e->delta, false, false);
    units(e->layer, e->norm_delta, false, false);
  } else if (auto* ig = std::get_if<EncInputGrad>(&m.payload)) {
    units(ig->layer, ig->block, false, false);
  }
  transport_->send(to, m);
}

std::uint64_t PartyBase::stream_seed(std::uint64_t purpose) {
  return mix_words({seed_, static_cast<std::uint64_t>(role_), purpose, stream_counter_++});
}

// ---------------------------------------------------------------------------
// DataParty

DataParty::DataParty(Role role, std::uint64_t session_id, std::uint64_t seed,
                     PartyData data)
    : PartyBase(role, session_id, seed), data_(std::move(data)) {
  if (data_.features.rows() == 0) throw DataError("party holds no nodes");
  if (!data_.features.allFinite()) throw DataError("non-finite feature value");
  adjacency_ = adjacency_matrix(num_nodes(), data_.edges);
  own_degree_ = degrees(adjacency_);
  norm_ = inverse_degree(own_degree_);
}

const PublicKey& DataParty::public_key() const {
  if (!pk_) throw ProtocolError("no public key has been distributed");
  return *pk_;
}

void DataParty::count_adds(int layer, std::uint64_t n) {
  counters_.layer(layer).ciphertext_adds += n;
  counters_.ciphertext_adds += n;
}

void DataParty::count_muls(int layer, std::uint64_t n) {
  counters_.layer(layer).scalar_muls += n;
  counters_.scalar_muls += n;
}

void DataParty::on_key(const PubKeyDist& k) {
  if (iteration().kind != IterationKind::kSetup) throw ProtocolError("key outside setup");
  PublicKey pk;
  pk.n = k.n;
  pk.g = k.n + 1;
  pk.n2 = k.n * k.n;
  pk.key_id = k.key_id;
  pk_ = pk;
  SeededEntropy rng(stream_seed(1));
  encryptor_ = std::make_unique<FastEncryptor>(*pk_, rng);
  codec_ = std::make_unique<FixedPointCodec>(pk_->n, params_.frac_bits);
}

void DataParty::on_counts(const NeighborCount& c) {
  if (static_cast<int>(c.counts.size()) != num_nodes()) {
    throw ProtocolError("neighbor counts do not cover the aligned nodes");
  }
  Vector peer(num_nodes());
  for (int i = 0; i < num_nodes(); ++i) peer(i) = c.counts[i];
  norm_ = inverse_degree(own_degree_ + peer);
}

void DataParty::post_counts(Role to) {
  NeighborCount c;
  for (int i = 0; i < num_nodes(); ++i) c.counts.push_back(static_cast<std::uint32_t>(own_degree_(i)));
  post(to, std::move(c));
}

void DataParty::prepare_iteration() {
  if (!pk_) throw ProtocolError("session is not set up");
  const int k = params_.exchanged_layers;
  if (static_cast<int>(weights_.size()) != k) throw ProtocolError("no model loaded");
  if (inputs_.empty()) {
    SparseMatrix x = data_.features.sparseView();
    inputs_.emplace_back(std::move(x), adjacency_, norm_);
  } else {
    inputs_.erase(inputs_.begin() + 1, inputs_.end());
  }
  z_.assign(k, Matrix());
  keep_.assign(k, Matrix());
  share_cts_.assign(k, CtBlock());
  share_plain_.assign(k, Matrix());
}

void DataParty::forward_layer(int l) {
  Matrix s = inputs_.at(l).share(weights_.at(l));
  share_cts_[l] = encrypt_packed(s, 1);
  share_plain_[l] = std::move(s);
  post(Role::kServer, EncShare{static_cast<std::uint32_t>(l), role(), share_cts_[l]});
}

const Matrix& DataParty::accept_sum(const PlainSum& s) {
  const int l = static_cast<int>(s.layer);
  const int k = params_.exchanged_layers;
  if (l >= k || static_cast<int>(inputs_.size()) != l + 1) {
    throw ProtocolError("pre-activation sum for an unexpected layer");
  }
  if (static_cast<int>(s.sum.rows) != num_nodes() ||
      static_cast<int>(s.sum.cols) != weights_[l].w_self.cols() ||
      s.sum.values.size() != std::size_t(s.sum.rows) * s.sum.cols) {
    throw ProtocolError("pre-activation sum has the wrong shape");
  }
  z_[l] = to_matrix(s.sum);
  if (iteration().kind == IterationKind::kCalibrate) {
    params_.activation = fit_scale_param(std::span<const double>(z_[l].data(), z_[l].size()));
  } else if (l + 1 < k) {
    inputs_.emplace_back(activate(z_[l], l), adjacency_, norm_);
  }
  return z_[l];
}

Matrix DataParty::activate(const Matrix& z, int layer) {
  Matrix h = poly_matrix(z, params_.activation, params_.activation.c0());
  Matrix keep;
  if (training() && params_.dropout_rate > 0.0) {
    keep.resize(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) {
      for (int d = 0; d < z.cols(); ++d) {
        keep(i, d) = dropout_scale(params_.dropout_seed, iteration().epoch, layer, i, d,
                                   params_.dropout_rate);
      }
    }
    h.array() *= keep.array();
  }
  if (layer < static_cast<int>(keep_.size())) keep_[layer] = keep;
  return h;
}

CtBlock DataParty::encrypt_block(const Matrix& m, int scale) {
  CtBlock b = empty_block(m.rows(), m.cols(), Ciphertext{});
  const std::uint64_t seed = stream_seed(2);
  const auto s = static_cast<std::uint8_t>(scale);
  parallel_for(b.cts.size(), [&](std::size_t i) {
    SeededEntropy rng(seed, i);
    b.cts[i] = encryptor_->encrypt(codec_->encode(m.data()[i], scale), rng, s);
  });
  counters_.encryptions += b.cts.size();
  return b;
}

CtBlock DataParty::encrypt_packed(const Matrix& m, int scale, int room_scale) {
  if (!params_.pack) return encrypt_block(m, scale);
  const SlotPacker packer(pk_->n, SlotPacker::width_for(params_.frac_bits, std::max(scale, room_scale)));
  CtBlock b{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {},
            static_cast<std::uint32_t>(packer.slots()), packer.slot_bits()};
  const std::size_t per_row = b.per_row();
  b.cts.resize(b.rows * per_row);
  const std::uint64_t seed = stream_seed(2);
  const auto s = static_cast<std::uint8_t>(scale);
  parallel_for(b.cts.size(), [&](std::size_t i) {
    const std::size_t r = i / per_row, c0 = (i % per_row) * b.slots;
    std::vector<BigInt> vals;
    for (std::size_t c = c0; c < std::min<std::size_t>(b.cols, c0 + b.slots); ++c) {
      vals.push_back(codec_->to_signed(codec_->encode(m(r, c), scale)));
    }
    SeededEntropy rng(seed, i);
    b.cts[i] = encryptor_->encrypt(packer.pack(vals), rng, s);
  });
  counters_.encryptions += b.cts.size();
  return b;
}

void DataParty::check_block(const CtBlock& b, std::size_t rows, std::size_t cols) const {
  if (b.rows != rows || b.cols != cols || b.slots == 0 || b.cts.size() != rows * b.per_row()) {
    throw ProtocolError("ciphertext block has the wrong shape");
  }
  for (const auto& c : b.cts) {
    if (c.key_id != public_key().key_id) throw ProtocolError("ciphertext under a foreign key");
  }
}

CtBlock DataParty::add_blocks(const CtBlock& x, const CtBlock& y, int layer) {
  if (!same_layout(x, y)) throw ProtocolError("block shapes differ");
  CtBlock out = x;
  for (std::size_t i = 0; i < out.cts.size(); ++i) add_into(*pk_, out.cts[i], y.cts[i]);
  count_adds(layer, out.cts.size());
  return out;
}

CtBlock DataParty::aggregate(const CtBlock& d, int layer) {
  const std::size_t m = d.per_row();
  const std::uint8_t scale = d.cts.empty() ? 1 : d.cts.front().scale;
  CtBlock out = shaped_like(d, d.rows, d.cols, zero_ct(*pk_, scale));
  std::uint64_t adds = 0;
  for (int i = 0; i < adjacency_.outerSize(); ++i) {
    for (SparseMatrix::InnerIterator it(adjacency_, i); it; ++it) {
      for (std::size_t j = 0; j < m; ++j) {
        add_into(*pk_, out.cts[i * m + j], d.cts[it.col() * m + j]);
      }
      adds += m;
    }
  }
  count_adds(layer, adds);
  return out;
}

CtBlock DataParty::times_transpose(const CtBlock& d, const Matrix& w, int layer) {
  const std::size_t n = d.rows, m = d.cols, in = w.rows();
  if (static_cast<std::size_t>(w.cols()) != m) throw ProtocolError("weight shape mismatch");
  if (d.packed()) throw ProtocolError("input gradients need an unpacked error signal");
  std::vector<BigInt> ws(in * m);
  for (std::size_t f = 0; f < in; ++f) {
    for (std::size_t j = 0; j < m; ++j) ws[f * m + j] = codec_->encode(w(f, j), 1);
  }
  const auto scale = static_cast<std::uint8_t>(d.cts.front().scale + 1);
  CtBlock out = empty_block(n, in, zero_ct(*pk_, scale));
  std::uint64_t muls = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < in; ++f) {
      for (std::size_t j = 0; j < m; ++j) {
        if (ws[f * m + j] == 0) continue;
        add_into(*pk_, out.cts[i * in + f], mul_scalar(*pk_, d.cts[i * m + j], ws[f * m + j], 1));
        ++muls;
      }
    }
  }
  count_muls(layer, muls);
  count_adds(layer, muls);
  return out;
}

CtBlock DataParty::weight_grad_from_error(int l, const CtBlock& delta,
                                          const CtBlock& norm_delta) {
  const BranchInput& in = inputs_.at(l);
  const std::size_t d = in.cols();
  check_block(delta, num_nodes(), weights_.at(l).w_self.cols());
  check_block(norm_delta, num_nodes(), weights_.at(l).w_self.cols());
  if (!same_layout(delta, norm_delta)) throw ProtocolError("error blocks differ in layout");
  const std::size_t m = delta.per_row();
  const CtBlock u = aggregate(norm_delta, l);

  // Integer inputs (bag-of-words) multiply as raw integers and keep scale 1.
  bool integral = true;
  for_each_nonzero(in, [&](int, int, double v) {
    integral = integral && v == std::nearbyint(v) && std::abs(v) < 2147483648.0;
  });
  const auto scale = static_cast<std::uint8_t>(delta.cts.front().scale + (integral ? 0 : 1));
  CtBlock g = shaped_like(delta, 2 * d, delta.cols, zero_ct(*pk_, scale));
  std::uint64_t adds = 0, muls = 0;
  auto accumulate = [&](std::size_t row_offset, const CtBlock& src) {
    for_each_nonzero(in, [&](int i, int f, double v) {
      Ciphertext* acc = &g.cts[(row_offset + f) * m];
      const Ciphertext* x = &src.cts[std::size_t(i) * m];
      if (integral && v == 1.0) {
        for (std::size_t j = 0; j < m; ++j) add_into(*pk_, acc[j], x[j]);
      } else {
        const BigInt s = integral ? residue(static_cast<long>(v), pk_->n) : codec_->encode(v, 1);
        const std::uint8_t ss = integral ? 0 : 1;
        for (std::size_t j = 0; j < m; ++j) add_into(*pk_, acc[j], mul_scalar(*pk_, x[j], s, ss));
        muls += m;
      }
      adds += m;
    });
  };
  accumulate(0, delta);
  accumulate(d, u);
  count_adds(l, adds);
  count_muls(l, muls);
  return g;
}

CtBlock DataParty::weight_grad_from_preactivation(int l, const CtBlock& z) {
  const BranchInput& in = inputs_.at(l);
  const std::size_t m = weights_.at(l).w_self.cols();
  const std::size_t d = in.cols();
  check_block(z, num_nodes(), m);
  const QuadActivation& act = params_.activation;
  const auto scale = static_cast<std::uint8_t>(z.cts.front().scale + 1);
  CtBlock g = empty_block(2 * d, m, zero_ct(*pk_, scale));
  std::vector<double> col_sum(2 * d, 0.0);
  std::uint64_t muls = 0;
  auto term = [&](std::size_t row, int i, double v) {
    const BigInt s = codec_->encode(2.0 * act.c2() * v, 1);
    for (std::size_t j = 0; j < m; ++j) {
      add_into(*pk_, g.cts[row * m + j], mul_scalar(*pk_, z.cts[std::size_t(i) * m + j], s, 1));
    }
    col_sum[row] += v;
    muls += m;
  };
  for_each_nonzero(in, [&](int i, int f, double v) { term(f, i, v); });
  const Matrix agg = aggregated_input(in);
  for (int i = 0; i < agg.rows(); ++i) {
    for (std::size_t f = 0; f < d; ++f) {
      if (agg(i, f) != 0.0) term(d + f, i, agg(i, f));
    }
  }
  for (std::size_t r = 0; r < 2 * d; ++r) {
    const BigInt c = codec_->encode(act.c1() * col_sum[r], 2);
    for (std::size_t j = 0; j < m; ++j) g.cts[r * m + j] = add_plain(*pk_, g.cts[r * m + j], c);
  }
  count_muls(l, muls);
  count_adds(l, muls + 2 * d * m);
  return g;
}

void DataParty::send_masked(int l, GradTarget target, CtBlock grad) {
  const std::pair<int, int> key{l, static_cast<int>(target)};
  if (masks_.count(key)) throw ProtocolError("a mask for this gradient is already pending");
  const int scale = grad.cts.empty() ? 1 : grad.cts.front().scale;
  for (const auto& c : grad.cts) {
    if (c.scale != scale) throw ProtocolError("gradient block mixes scales");
  }
  const int f = params_.frac_bits;
  SeededEntropy rng(stream_seed(3));
  const BigInt width = (BigInt(1) << (21 + f)) + 1;
  const BigInt offset = BigInt(1) << (20 + f);
  const std::size_t entries = std::size_t(grad.rows) * grad.cols;
  PendingMask mask{std::vector<double>(entries), scale};
  std::vector<BigInt> slot_values(entries);
  std::uint64_t digest = mix_words({static_cast<std::uint64_t>(entries)});
  for (std::size_t i = 0; i < entries; ++i) {
    const BigInt r = rng.below(width) - offset;
    mask.sigma[i] = std::ldexp(r.get_d(), -f);
    digest = mix_words({digest, static_cast<std::uint64_t>(r.get_si())});
    slot_values[i] = r << (f * (scale - 1));
  }
  std::vector<BigInt> plain(grad.cts.size());
  if (grad.packed()) {
    const SlotPacker packer(pk_->n, grad.slot_bits);
    const std::size_t per_row = grad.per_row();
    for (std::size_t i = 0; i < plain.size(); ++i) {
      const std::size_t r = i / per_row, c0 = (i % per_row) * grad.slots;
      const std::size_t c1 = std::min<std::size_t>(grad.cols, c0 + grad.slots);
      plain[i] = packer.pack(std::span<const BigInt>(slot_values).subspan(r * grad.cols + c0, c1 - c0));
    }
  } else {
    for (std::size_t i = 0; i < plain.size(); ++i) {
      plain[i] = slot_values[i] < 0 ? slot_values[i] + pk_->n : slot_values[i];
    }
  }
  if (!mask_digests_.insert(digest).second) throw ProtocolError("mask reuse detected");
  const std::uint64_t seed = stream_seed(4);
  const auto s = static_cast<std::uint8_t>(scale);
  parallel_for(plain.size(), [&](std::size_t i) {
    SeededEntropy er(seed, i);
    add_into(*pk_, grad.cts[i], encryptor_->encrypt(plain[i], er, s));
  });
  counters_.encryptions += plain.size();
  count_adds(l, plain.size());
  if (capture_) mask_log_.push_back(mask.sigma);
  masks_.emplace(key, std::move(mask));
  post(Role::kServer, MaskedEncGrad{static_cast<std::uint32_t>(l), role(), target, std::move(grad)});
}

Matrix DataParty::unmask(const MaskedPlainGrad& g) {
  if (g.role != role()) throw ProtocolError("gradient returned to the wrong party");
  auto it = masks_.find({static_cast<int>(g.layer), static_cast<int>(g.target)});
  if (it == masks_.end()) throw ProtocolError("no pending mask for returned gradient");
  if (g.grad.values.size() != it->second.sigma.size() ||
      g.grad.values.size() != std::size_t(g.grad.rows) * g.grad.cols) {
    throw ProtocolError("returned gradient has the wrong size");
  }
  Matrix out(g.grad.rows, g.grad.cols);
  for (std::size_t i = 0; i < g.grad.values.size(); ++i) {
    out.data()[i] = g.grad.values[i] - it->second.sigma[i];
  }
  masks_.erase(it);
  return out;
}

void DataParty::apply_gradient(int l, const Matrix& stacked) {
  SageLayer& w = weights_.at(l);
  const auto d = w.w_self.rows();
  if (stacked.rows() != 2 * d || stacked.cols() != w.w_self.cols()) {
    throw ProtocolError("gradient shape does not match the layer");
  }
  w.w_self -= params_.learning_rate * stacked.topRows(d);
  w.w_neigh -= params_.learning_rate * stacked.bottomRows(d);
}

// ---------------------------------------------------------------------------
// PassiveParty

PassiveParty::PassiveParty(std::uint64_t session_id, std::uint64_t seed, PartyData data)
    : DataParty(Role::kPassive, session_id, seed, std::move(data)) {}

int PassiveParty::expected_messages(const IterationSpec& it) const {
  const int k = params_.exchanged_layers;
  switch (it.kind) {
    case IterationKind::kSetup: return 2;
    case IterationKind::kCalibrate: return 1;
    case IterationKind::kEval: return k;
    case IterationKind::kTrain: return params_.mode == ProtocolMode::kPolynomial ? 3 : 4 * k;
  }
  return 0;
}

void PassiveParty::on_begin() {
  if (iteration().kind == IterationKind::kSetup) {
    post_counts(Role::kActive);
    return;
  }
  prepare_iteration();
  peer_share_.assign(params_.exchanged_layers, std::nullopt);
  forward_layer(0);
}

void PassiveParty::send_backward_material(int l) {
  // The cross term needs one ciphertext per entry; the loss share is summed.
  const Matrix la = poly_matrix(share_plain_[l], params_.activation, params_.activation.c0() / 2);
  CtBlock shares = share_cts_[l].packed() ? encrypt_block(share_plain_[l], 1) : share_cts_[l];
  post(Role::kActive, EncShare{static_cast<std::uint32_t>(l), role(), std::move(shares)});
  post(Role::kActive, EncPartialLoss{static_cast<std::uint32_t>(l), role(),
                                     encrypt_block(Matrix::Constant(1, 1, la.sum()), 2)});
}

void PassiveParty::on_message(const Message& m) {
  const int k = params_.exchanged_layers;
  const bool poly = params_.mode == ProtocolMode::kPolynomial;
  if (auto* key = std::get_if<PubKeyDist>(&m.payload); key && m.sender == Role::kServer) {
    on_key(*key);
  } else if (auto* c = std::get_if<NeighborCount>(&m.payload); c && m.sender == Role::kActive) {
    on_counts(*c);
  } else if (auto* s = std::get_if<PlainSum>(&m.payload); s && m.sender == Role::kServer) {
    const int l = static_cast<int>(s->layer);
    accept_sum(*s);
    if (iteration().kind == IterationKind::kCalibrate) return;
    if (l + 1 < k) {
      forward_layer(l + 1);
    } else if (training()) {
      send_backward_material(l);
    }
  } else if (auto* e = std::get_if<EncShare>(&m.payload); e && m.sender == Role::kActive) {
    const int l = static_cast<int>(e->layer);
    if (!training() || l >= k || e->role != Role::kActive || peer_share_[l]) {
      throw ProtocolError("unexpected share from the active party");
    }
    check_block(e->block, num_nodes(), weights_[l].w_self.cols());
    peer_share_[l] = e->block;
    if (poly) {
      const CtBlock z = add_blocks(share_cts_[l], e->block, l);
      send_masked(l, GradTarget::kWeights, weight_grad_from_preactivation(l, z));
    }
  } else if (auto* err = std::get_if<EncError>(&m.payload); err && m.sender == Role::kActive) {
    const int l = static_cast<int>(err->layer);
    if (poly || !training() || l >= k) throw ProtocolError("unexpected error signal");
    CtBlock g = weight_grad_from_error(l, err->delta, err->norm_delta);
    std::optional<CtBlock> input_grad;
    if (l >= 1) {
      const SageLayer& w = weights_[l];
      const CtBlock u = aggregate(err->norm_delta, l);
      input_grad = add_blocks(times_transpose(err->delta, w.w_self, l),
                              times_transpose(u, w.w_neigh, l), l);
    }
    send_masked(l, GradTarget::kWeights, std::move(g));
    if (input_grad) {
      post(Role::kActive, EncInputGrad{static_cast<std::uint32_t>(l), std::move(*input_grad)});
      send_backward_material(l - 1);
    }
  } else if (auto* pg = std::get_if<MaskedPlainGrad>(&m.payload); pg && m.sender == Role::kServer) {
    if (pg->target != GradTarget::kWeights) throw ProtocolError("unexpected input gradient");
    apply_gradient(static_cast<int>(pg->layer), unmask(*pg));
  } else {
    throw ProtocolError("passive party cannot handle " + std::string(payload_name(m.payload)) +
                        " from " + std::string(role_name(m.sender)));
  }
}

// ---------------------------------------------------------------------------
// ActiveParty

ActiveParty::ActiveParty(std::uint64_t session_id, std::uint64_t seed, PartyData data)
    : DataParty(Role::kActive, session_id, seed, std::move(data)) {
  top_adjacency_ = adjacency_;
  top_norm_ = inverse_degree(own_degree_);
}

int ActiveParty::expected_messages(const IterationSpec& it) const {
  const int k = params_.exchanged_layers;
  switch (it.kind) {
    case IterationKind::kSetup: return 2;
    case IterationKind::kCalibrate: return 1;
    case IterationKind::kEval: return k;
    case IterationKind::kTrain:
      return params_.mode == ProtocolMode::kPolynomial ? 4 : 4 * k + 2 * (k - 1);
  }
  return 0;
}

void ActiveParty::on_begin() {
  if (iteration().kind == IterationKind::kSetup) {
    post_counts(Role::kPassive);
    return;
  }
  const int k = params_.exchanged_layers;
  prepare_iteration();
  a_share_.assign(k, std::nullopt);
  a_loss_.assign(k, std::nullopt);
  delta_.assign(k, std::nullopt);
  round_done_.assign(k, false);
  own_input_grad_.assign(k, Matrix());
  forward_layer(0);
}

void ActiveParty::top_forward_backward() {
  const int k = params_.exchanged_layers;
  const int top_layers = static_cast<int>(top_.size());
  if (!data_.labels) throw DataError("the active party holds no labels");
  const auto& labels = *data_.labels;
  const QuadActivation& act = params_.activation;

  std::vector<BranchInput> in;
  std::vector<Matrix> z, keep;
  Matrix h = activate(z_[k - 1], k - 1);
  Matrix logits;
  for (int t = 0; t < top_layers; ++t) {
    in.emplace_back(std::move(h), top_adjacency_, top_norm_);
    Matrix zt = in[t].share(top_[t]);
    if (t == top_layers - 1) {
      logits = std::move(zt);
      break;
    }
    h = poly_matrix(zt, act, act.c0());
    Matrix kp;
    if (training() && params_.dropout_rate > 0.0) {
      kp.resize(h.rows(), h.cols());
      for (int i = 0; i < h.rows(); ++i) {
        for (int d = 0; d < h.cols(); ++d) {
          kp(i, d) = dropout_scale(params_.dropout_seed, iteration().epoch, k + t, i, d,
                                   params_.dropout_rate);
        }
      }
      h.array() *= kp.array();
    }
    z.push_back(std::move(zt));
    keep.push_back(std::move(kp));
  }
  if (!training()) {
    last_accuracy_ = accuracy(logits, labels, fold_.test_ids);
    return;
  }

  Objective obj = supervised_objective(logits, labels, fold_.train_ids, params_.reduction);
  Matrix extra;
  if (params_.unsup_weight > 0.0) {
    const std::uint64_t e = iteration().epoch, seed = params_.dropout_seed;
    NegativeSampler sampler(degrees(top_adjacency_), params_.walk.degree_exponent);
    const auto pairs = random_walk_pairs(top_adjacency_, params_.walk.walk_length,
                                         mix_words({seed, e, 7}));
    Objective u = unsup_objective(in.back().dense_input(), pairs, sampler,
                                  params_.walk.negatives_q, mix_words({seed, e, 8}));
    obj.loss += params_.unsup_weight * u.loss;
    extra = params_.unsup_weight * u.dlogits;
  }
  last_loss_ = obj.loss;

  std::vector<SageLayer> grads(top_layers);
  Matrix dz = std::move(obj.dlogits);
  Matrix dh;
  for (int t = top_layers - 1; t >= 0; --t) {
    grads[t] = in[t].weight_grads(dz);
    dh = in[t].input_grad(top_[t], dz);
    if (t == top_layers - 1 && extra.size() > 0) dh += extra;
    if (t == 0) break;
    if (keep[t - 1].size() > 0) dh.array() *= keep[t - 1].array();
    dh.array() *= slope_matrix(z[t - 1], act).array();
    dz = std::move(dh);
  }
  if (keep_[k - 1].size() > 0) dh.array() *= keep_[k - 1].array();
  dh.array() *= slope_matrix(z_[k - 1], act).array();
  for (int t = 0; t < top_layers; ++t) {
    top_[t].w_self -= params_.learning_rate * grads[t].w_self;
    top_[t].w_neigh -= params_.learning_rate * grads[t].w_neigh;
  }
  delta_[k - 1] = std::move(dh);
  try_round(k - 1);
}

void ActiveParty::try_round(int l) {
  if (round_done_[l] || !delta_[l] || !a_share_[l] || !a_loss_[l]) return;
  round_done_[l] = true;
  const QuadActivation& act = params_.activation;
  const Matrix& sb = share_plain_[l];
  const double lb = poly_matrix(sb, act, act.c0() / 2).sum();

  // [[L]] = [[L_A]] + L_B + sum [[s_A]] * (2 c2 s_B), summed over entries.
  const CtBlock& sa = *a_share_[l];
  Ciphertext c = add_plain(*pk_, a_loss_[l]->cts.front(), codec_->encode(lb, 2));
  for (std::size_t i = 0; i < sa.cts.size(); ++i) {
    add_into(*pk_, c, mul_scalar(*pk_, sa.cts[i], codec_->encode(2.0 * act.c2() * sb.data()[i], 1)));
  }
  count_adds(l, 1 + sa.cts.size());
  count_muls(l, sa.cts.size());
  CtBlock loss{1, 1, {std::move(c)}};
  post(Role::kServer, EncPartialLoss{static_cast<std::uint32_t>(l), role(), std::move(loss)});
  post(Role::kPassive, EncShare{static_cast<std::uint32_t>(l), role(), share_cts_[l]});

  if (params_.mode == ProtocolMode::kPolynomial) {
    const CtBlock z = add_blocks(sa, share_cts_[l], l);
    send_masked(l, GradTarget::kWeights, weight_grad_from_preactivation(l, z));
    return;
  }

  const Matrix& d = *delta_[l];
  Matrix nd = d;
  nd.array().colwise() *= norm_.array();
  // A needs entry-wise ciphertexts only when it must also form input gradients.
  if (l == 0) {
    post(Role::kPassive, EncError{0, encrypt_packed(d, 1, 2), encrypt_packed(nd, 1, 2)});
  } else {
    post(Role::kPassive, EncError{static_cast<std::uint32_t>(l), encrypt_block(d, 1),
                                  encrypt_block(nd, 1)});
  }
  const SageLayer g = inputs_[l].weight_grads(d);
  Matrix stacked(2 * g.w_self.rows(), g.w_self.cols());
  stacked << g.w_self, g.w_neigh;
  if (l >= 1) own_input_grad_[l] = inputs_[l].input_grad(weights_[l], d);
  send_masked(l, GradTarget::kWeights, encrypt_packed(stacked, 1));
}

void ActiveParty::on_input_grad(const MaskedPlainGrad& g) {
  const int l = static_cast<int>(g.layer);
  if (l < 1 || own_input_grad_[l].size() == 0) throw ProtocolError("unexpected input gradient");
  Matrix dh = unmask(g);
  if (dh.rows() != own_input_grad_[l].rows() || dh.cols() != own_input_grad_[l].cols()) {
    throw ProtocolError("input gradient has the wrong shape");
  }
  dh += own_input_grad_[l];
  if (keep_[l - 1].size() > 0) dh.array() *= keep_[l - 1].array();
  dh.array() *= slope_matrix(z_[l - 1], params_.activation).array();
  delta_[l - 1] = std::move(dh);
  try_round(l - 1);
}

void ActiveParty::on_message(const Message& m) {
  const int k = params_.exchanged_layers;
  if (auto* key = std::get_if<PubKeyDist>(&m.payload); key && m.sender == Role::kServer) {
    on_key(*key);
  } else if (auto* c = std::get_if<NeighborCount>(&m.payload); c && m.sender == Role::kPassive) {
    on_counts(*c);
  } else if (auto* s = std::get_if<PlainSum>(&m.payload); s && m.sender == Role::kServer) {
    const int l = static_cast<int>(s->layer);
    accept_sum(*s);
    if (iteration().kind == IterationKind::kCalibrate) return;
    if (l + 1 < k) {
      forward_layer(l + 1);
    } else if (params_.mode == ProtocolMode::kPolynomial) {
      if (training()) {
        delta_[l] = Matrix();
        try_round(l);
      }
    } else {
      top_forward_backward();
    }
  } else if (auto* e = std::get_if<EncShare>(&m.payload); e && m.sender == Role::kPassive) {
    const int l = static_cast<int>(e->layer);
    if (!training() || l >= k || e->role != Role::kPassive || a_share_[l]) {
      throw ProtocolError("unexpected share from the passive party");
    }
    check_block(e->block, num_nodes(), weights_[l].w_self.cols());
    if (e->block.packed()) throw ProtocolError("the cross term needs entry-wise shares");
    a_share_[l] = e->block;
    try_round(l);
  } else if (auto* pl = std::get_if<EncPartialLoss>(&m.payload); pl && m.sender == Role::kPassive) {
    const int l = static_cast<int>(pl->layer);
    if (!training() || l >= k || pl->role != Role::kPassive || a_loss_[l]) {
      throw ProtocolError("unexpected partial loss");
    }
    check_block(pl->block, 1, 1);
    a_loss_[l] = pl->block;
    try_round(l);
  } else if (auto* ig = std::get_if<EncInputGrad>(&m.payload); ig && m.sender == Role::kPassive) {
    const int l = static_cast<int>(ig->layer);
    if (!training() || l < 1 || l >= k) throw ProtocolError("unexpected input gradient");
    check_block(ig->block, num_nodes(), weights_[l].w_self.rows());
    send_masked(l, GradTarget::kInput, ig->block);
  } else if (auto* pg = std::get_if<MaskedPlainGrad>(&m.payload); pg && m.sender == Role::kServer) {
    if (pg->target == GradTarget::kInput) {
      on_input_grad(*pg);
    } else {
      apply_gradient(static_cast<int>(pg->layer), unmask(*pg));
    }
  } else {
    throw ProtocolError("active party cannot handle " + std::string(payload_name(m.payload)) +
                        " from " + std::string(role_name(m.sender)));
  }
}

// ---------------------------------------------------------------------------
// ServerParty

ServerParty::ServerParty(std::uint64_t session_id, std::uint64_t seed, unsigned key_bits,
                         KeyPolicy policy, int frac_bits)
    : PartyBase(Role::kServer, session_id, seed),
      key_bits_(key_bits),
      policy_(policy),
      frac_bits_(frac_bits) {}

void ServerParty::set_layout(ProtocolMode mode, int exchanged_layers) {
  mode_ = mode;
  exchanged_ = exchanged_layers;
}

const SecretKey& ServerParty::secret_key() const {
  if (!keys_) throw ProtocolError("keys not generated yet");
  return keys_->second;
}

const PublicKey& ServerParty::public_key() const {
  if (!keys_) throw ProtocolError("keys not generated yet");
  return keys_->first;
}

int ServerParty::expected_messages(const IterationSpec& it) const {
  const int k = exchanged_;
  switch (it.kind) {
    case IterationKind::kSetup: return 0;
    case IterationKind::kCalibrate: return 2;
    case IterationKind::kEval: return 2 * k;
    case IterationKind::kTrain: return mode_ == ProtocolMode::kPolynomial ? 5 : 6 * k - 1;
  }
  return 0;
}

void ServerParty::on_begin() {
  shares_.clear();
  if (iteration().kind != IterationKind::kSetup) return;
  if (!keys_) {
    SeededEntropy rng(stream_seed(1));
    keys_ = keygen(key_bits_, rng, policy_);
    codec_ = std::make_unique<FixedPointCodec>(keys_->first.n, frac_bits_);
  }
  const PubKeyDist k{keys_->first.n, keys_->first.key_id};
  post(Role::kPassive, k);
  post(Role::kActive, k);
}

void ServerParty::observe(Observation kind, int layer, Role role, const std::vector<double>& v) {
  if (capture_) log_.push_back({kind, layer, role, v});
}

std::vector<double> ServerParty::decrypt_block(const CtBlock& b, int layer) {
  (void)layer;
  if (!keys_) throw ProtocolError("keys not generated yet");
  if (b.slots == 0 || b.cts.size() != std::size_t(b.rows) * b.per_row()) {
    throw ProtocolError("malformed block");
  }
  std::vector<double> out(std::size_t(b.rows) * b.cols);
  const SecretKey& sk = keys_->second;
  std::uint8_t depth = 0;
  for (const auto& c : b.cts) {
    if (c.key_id != sk.key_id) throw ProtocolError("ciphertext under a foreign key");
    if (c.scale < 1 || c.scale > 2) throw CryptoError("unsupported ciphertext scale");
    depth = std::max(depth, c.depth);
  }
  if (b.packed()) {
    const SlotPacker packer(keys_->first.n, b.slot_bits);
    const std::size_t per_row = b.per_row();
    parallel_for(b.cts.size(), [&](std::size_t i) {
      const std::size_t r = i / per_row, c0 = (i % per_row) * b.slots;
      const std::size_t c1 = std::min<std::size_t>(b.cols, c0 + b.slots);
      const auto vals = packer.unpack(decrypt(sk, b.cts[i]), c1 - c0);
      for (std::size_t c = c0; c < c1; ++c) {
        long exp = 0;
        const double mant = mpz_get_d_2exp(&exp, vals[c - c0].get_mpz_t());
        out[r * b.cols + c] = std::ldexp(mant, int(exp) - frac_bits_ * b.cts[i].scale);
      }
    });
  } else {
    parallel_for(out.size(), [&](std::size_t i) {
      const BigInt m = decrypt(sk, b.cts[i]);
      out[i] = b.cts[i].scale == 1 ? codec_->decode(m, 1)
                                   : codec_->decode(codec_->rescale_after_product(m), 1);
    });
  }
  counters_.decryptions += b.cts.size();
  counters_.max_decrypt_depth = std::max(counters_.max_decrypt_depth, depth);
  return out;
}

void ServerParty::on_message(const Message& m) {
  if (auto* s = std::get_if<EncShare>(&m.payload)) {
    if (m.sender == Role::kServer || s->role != m.sender) throw ProtocolError("share from a wrong role");
    auto& slot = shares_[static_cast<int>(s->layer)];
    auto& mine = slot[idx(m.sender)];
    if (mine) throw ProtocolError("duplicate share");
    mine = s->block;
    if (!slot[0] || !slot[1]) return;
    const CtBlock& a = *slot[0];
    const CtBlock& b = *slot[1];
    if (!same_layout(a, b)) throw ProtocolError("share dimensions differ");
    CtBlock sum = a;
    for (std::size_t i = 0; i < sum.cts.size(); ++i) add_into(keys_->first, sum.cts[i], b.cts[i]);
    counters_.layer(static_cast<int>(s->layer)).ciphertext_adds += sum.cts.size();
    counters_.ciphertext_adds += sum.cts.size();
    const int l = static_cast<int>(s->layer);
    PlainSum ps{s->layer, {sum.rows, sum.cols, decrypt_block(sum, l)}};
    shares_.erase(l);
    observe(Observation::kForwardSum, l, Role::kServer, ps.sum.values);
    post(Role::kPassive, ps);
    post(Role::kActive, std::move(ps));
  } else if (auto* pl = std::get_if<EncPartialLoss>(&m.payload)) {
    if (m.sender != Role::kActive || pl->role != Role::kActive) {
      throw ProtocolError("the assembled loss must come from the active party");
    }
    // Loss values keep their double-scale precision.
    if (!keys_) throw ProtocolError("keys not generated yet");
    std::vector<double> l(pl->block.cts.size());
    std::uint8_t depth = 0;
    for (std::size_t i = 0; i < l.size(); ++i) {
      const auto& c = pl->block.cts[i];
      if (c.key_id != keys_->second.key_id) throw ProtocolError("ciphertext under a foreign key");
      l[i] = codec_->decode(decrypt(keys_->second, c), c.scale);
      depth = std::max(depth, c.depth);
    }
    counters_.decryptions += l.size();
    counters_.max_decrypt_depth = std::max(counters_.max_decrypt_depth, depth);
    observe(Observation::kLoss, static_cast<int>(pl->layer), Role::kActive, l);
  } else if (auto* g = std::get_if<MaskedEncGrad>(&m.payload)) {
    if (g->role != m.sender || m.sender == Role::kServer) throw ProtocolError("gradient from a wrong role");
    MaskedPlainGrad out{g->layer, g->role, g->target,
                        {g->block.rows, g->block.cols, decrypt_block(g->block, static_cast<int>(g->layer))}};
    observe(g->target == GradTarget::kWeights ? Observation::kMaskedWeightGrad
                                              : Observation::kMaskedInputGrad,
            static_cast<int>(g->layer), g->role, out.grad.values);
    post(g->role, std::move(out));
  } else {
    throw ProtocolError("server cannot handle " + std::string(payload_name(m.payload)));
  }
}

// ---------------------------------------------------------------------------
// FederatedSession

FederatedSession::FederatedSession(const SessionConfig& cfg, PartyData a, PartyData b,
                                   std::unique_ptr<Transport> transport)
    : cfg_(cfg),
      session_id_(mix_words({cfg.seed, 0x5e5510}) | 1),
      transport_(transport ? std::move(transport) : std::make_unique<InProcessTransport>()) {
  if (a.features.rows() != b.features.rows()) throw DataError("parties are not aligned");
  a_ = std::make_unique<PassiveParty>(session_id_, mix_words({cfg.seed, 1}), std::move(a));
  b_ = std::make_unique<ActiveParty>(session_id_, mix_words({cfg.seed, 2}), std::move(b));
  c_ = std::make_unique<ServerParty>(session_id_, mix_words({cfg.seed, 3}), cfg.key_bits,
                                     cfg.key_policy, cfg.frac_bits);
  for (PartyBase* p : std::initializer_list<PartyBase*>{a_.get(), b_.get(), c_.get()}) {
    transport_->attach(p->role());
    p->connect(transport_.get());
  }
  ProtocolParams p;
  p.mode = cfg.mode;
  p.frac_bits = cfg.frac_bits;
  p.pack = cfg.pack && cfg.mode == ProtocolMode::kClassifier;
  a_->set_params(p);
  b_->set_params(p);
  a_->set_capture(cfg.capture);
  b_->set_capture(cfg.capture);
  c_->set_capture(cfg.capture);
}

void FederatedSession::setup() {
  if (setup_done_) throw ProtocolError("session already set up");
  run({IterationKind::kSetup, 0});
  setup_done_ = true;
}

void FederatedSession::load_model(const SageModel& model, int k, std::uint64_t dropout_seed) {
  const ModelPlan& plan = model.plan;
  const int layers = static_cast<int>(plan.layers.size());
  if (k < 1 || k > layers) throw ConfigError("exchanged layers out of range");
  if (cfg_.mode == ProtocolMode::kPolynomial) {
    if (layers != 1 || k != 1) throw ConfigError("polynomial mode trains one exchanged layer");
  } else if (k >= layers) {
    throw ConfigError("the output layer must stay with the active party");
  }
  for (int l = 0; l < layers; ++l) {
    const auto& br = plan.layers[l].branches;
    const bool exchanged = l < k;
    if (static_cast<int>(br.size()) != (exchanged ? 2 : 1)) {
      throw ConfigError("model layout does not match the exchanged layers");
    }
    if (exchanged && (br[0].owner != Party::kPassive || br[1].owner != Party::kActive ||
                      br[0].adjacency != 0 || br[1].adjacency != 1)) {
      throw ConfigError("exchanged layers need a passive branch then an active branch");
    }
    if (!exchanged && (br[0].owner != Party::kActive || br[0].adjacency != 1)) {
      throw ConfigError("layers above the exchanged ones belong to the active party");
    }
  }
  if (model.weights[0][0].w_self.rows() != a_->feature_dim() ||
      model.weights[0][1].w_self.rows() != b_->feature_dim()) {
    throw ConfigError("first-layer weights do not match the party features");
  }
  ProtocolParams p = a_->params();
  p.exchanged_layers = k;
  p.learning_rate = model.learning_rate;
  p.dropout_rate = model.dropout_rate;
  p.dropout_seed = dropout_seed;
  p.activation = model.activation;
  a_->set_params(p);
  b_->set_params(p);
  std::vector<SageLayer> wa, wb, top;
  for (int l = 0; l < layers; ++l) {
    if (l < k) {
      wa.push_back(model.weights[l][0]);
      wb.push_back(model.weights[l][1]);
    } else {
      top.push_back(model.weights[l][0]);
    }
  }
  a_->set_exchanged_weights(std::move(wa));
  b_->set_exchanged_weights(std::move(wb));
  b_->set_top(std::move(top));
  c_->set_layout(cfg_.mode, k);
  plan_ = plan;
  dropout_rate_ = model.dropout_rate;
  learning_rate_ = model.learning_rate;
  loaded_ = true;
}

void FederatedSession::set_training_extras(LossReduction reduction, double unsup_weight,
                                           const WalkConfig& walk) {
  for (DataParty* p : std::initializer_list<DataParty*>{a_.get(), b_.get()}) {
    ProtocolParams q = p->params();
    q.reduction = reduction;
    q.unsup_weight = unsup_weight;
    q.walk = walk;
    p->set_params(q);
  }
}

QuadActivation FederatedSession::calibrate() {
  run({IterationKind::kCalibrate, 0});
  if (a_->activation().a() != b_->activation().a()) {
    throw ProtocolError("parties fitted different activation scales");
  }
  return b_->activation();
}

void FederatedSession::set_fold(const FoldSplit& fold) { b_->set_fold(fold); }

double FederatedSession::train_iteration(std::uint64_t epoch) {
  run({IterationKind::kTrain, epoch});
  ++train_iterations_;
  return b_->last_loss();
}

double FederatedSession::evaluate() {
  run({IterationKind::kEval, 0});
  return b_->last_accuracy();
}

SageModel FederatedSession::model() const {
  SageModel m;
  m.plan = plan_;
  m.activation = b_->activation();
  m.dropout_rate = dropout_rate_;
  m.learning_rate = learning_rate_;
  const auto& wa = a_->exchanged_weights();
  const auto& wb = b_->exchanged_weights();
  for (std::size_t l = 0; l < wa.size(); ++l) m.weights.push_back({wa[l], wb[l]});
  for (const auto& t : b_->top()) m.weights.push_back({t});
  return m;
}

CostCounters FederatedSession::counters() const {
  CostCounters c = a_->counters();
  c += b_->counters();
  c += c_->counters();
  c.train_iterations = train_iterations_;
  return c;
}

void FederatedSession::run(const IterationSpec& it) {
  if (it.kind != IterationKind::kSetup && (!setup_done_ || !loaded_)) {
    throw ProtocolError("session needs setup and a model before iterating");
  }
  if (cfg_.threaded && transport_->blocking()) {
    run_threaded(it);
  } else {
    run_scheduled(it);
  }
}

void FederatedSession::run_scheduled(const IterationSpec& it) {
  std::array<PartyBase*, kNumRoles> parties{a_.get(), b_.get(), c_.get()};
  c_->begin(it);
  a_->begin(it);
  b_->begin(it);
  while (true) {
    bool progressed = false;
    for (PartyBase* p : parties) {
      if (auto m = transport_->poll(p->role())) {
        p->receive(*m);
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  for (PartyBase* p : parties) {
    if (!p->done()) {
      throw ProtocolError("iteration stalled: " + std::string(role_name(p->role())) +
                          " party is missing messages");
    }
  }
}

void FederatedSession::run_threaded(const IterationSpec& it) {
  std::array<PartyBase*, kNumRoles> parties{a_.get(), b_.get(), c_.get()};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> threads;
  for (PartyBase* p : parties) {
    threads.emplace_back([&, p] {
      try {
        p->begin(it);
        while (!p->done()) p->receive(transport_->wait(p->role()));
      } catch (...) {
        {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
        }
        transport_->abort();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (err) std::rethrow_exception(err);
}

FoldResult train_federated_fold(const PartyData& a, const PartyData& b, const FoldSplit& fold,
                                const TrainOptions& opt, const FederatedOptions& fed,
                                CostCounters* counters) {
  if (opt.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!b.labels) throw DataError("the active party holds no labels");
  const std::uint64_t seed = mix_words({opt.seed, static_cast<std::uint64_t>(fold.fold_index)});
  const ModelPlan plan = federated_plan(static_cast<int>(a.features.cols()),
                                        static_cast<int>(b.features.cols()), b.num_classes,
                                        fed.hidden, fed.exchanged_layers);
  const SageModel model =
      init_model(plan, QuadActivation(opt.activation_a > 0.0 ? opt.activation_a : 1.0),
                 opt.dropout_rate, opt.learning_rate, seed);
  SessionConfig sc = fed.session;
  sc.mode = ProtocolMode::kClassifier;
  sc.seed = mix_words({fed.session.seed, opt.seed, static_cast<std::uint64_t>(fold.fold_index)});
  FederatedSession s(sc, a, b);
  s.setup();
  s.load_model(model, fed.exchanged_layers, seed);
  s.set_training_extras(opt.reduction, opt.unsup_weight, opt.walk);
  FoldResult r;
  r.activation_a = opt.activation_a > 0.0 ? opt.activation_a : s.calibrate().a();
  s.set_fold(fold);
  const CostCounters base = s.counters();
  for (int e = 0; e < opt.epochs; ++e) r.final_loss = s.train_iteration(static_cast<std::uint64_t>(e));
  if (counters) *counters += s.counters().since(base);
  r.accuracy = s.evaluate();
  return r;
}

}  // namespace fedvgcn
