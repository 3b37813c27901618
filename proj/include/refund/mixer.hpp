#pragma once

#include <cmath>
#include <random>
#include <set>

#include "refund/protocol.hpp"

namespace refund::mixer {

using keys::ExtendedPublicKey;
using ledger::SimLedger;
using tx::Transaction;
using tx::TxId;

// ---- seeded randomness -----------------------------------------------------------
// std::shuffle and the std distributions are implementation-defined; these
// helpers keep runs identical across standard libraries.

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::string_view domain) {
  Writer w;
  w.u64(seed);
  w.str(domain);
  auto h = sha256(w.bytes());
  std::uint64_t s = 0;
  for (int i = 0; i < 8; ++i) s = (s << 8) | h.data[i];
  return std::mt19937_64(s);
}

inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

template <class T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[bounded(rng, i)]);
}

// ---- splitting and chunk keys ----------------------------------------------------

struct SplitPlan {
  Amount total = 0;
  std::uint32_t k = 0;
  std::vector<Amount> chunks;
};

// k chunks of floor(total/k) or ceil(total/k); the remainder goes to the
// first chunks.
inline SplitPlan split_value(Amount total, std::uint32_t k) {
  if (k == 0 || total < static_cast<Amount>(k))
    throw Error(Errc::ChunkTooSmall, "cannot split " + std::to_string(total) + " into " + std::to_string(k) + " chunks");
  SplitPlan p{total, k, {}};
  const Amount base = total / k;
  const Amount rem = total % k;
  for (std::uint32_t i = 0; i < k; ++i) p.chunks.push_back(base + (static_cast<Amount>(i) < rem ? 1 : 0));
  return p;
}

inline std::vector<keys::MaskedChildKey> derive_chunk_keys(const ExtendedPublicKey& refundee_xpub, std::uint32_t k,
                                                           const Scalar& merchant_priv, std::uint32_t first_index = 0) {
  if (k == 0) throw Error(Errc::InvalidArgument, "k must be at least 1");
  std::vector<keys::MaskedChildKey> out;
  for (std::uint32_t j = 0; j < k; ++j) {
    const auto idx = first_index + j;
    out.push_back(keys::mask_child(keys::derive_child_public(refundee_xpub, idx), merchant_priv, idx));
  }
  return out;
}

// Refundee side: spend every chunk paid to the k masked children into `dest`.
inline std::vector<Transaction> sweep_chunks(const SimLedger& ledger, const Scalar& refundee_priv,
                                             const ExtendedPublicKey& refundee_xpub, std::uint32_t k,
                                             const Point& merchant_pub, const Point& dest,
                                             std::uint32_t first_index = 0) {
  std::vector<Transaction> out;
  for (std::uint32_t j = 0; j < k; ++j) {
    auto child = keys::derive_child_private(refundee_priv, refundee_xpub, first_index + j);
    Scalar priv = keys::unmask_child_private(child, merchant_pub);
    auto pub = Group::secp256k1().mul_base(priv);
    for (const auto& [op, o] : ledger.utxos_for(pub)) {
      std::vector<Scalar> signer{priv};
      out.push_back(tx::build_redeem(*ledger.find_tx(op.txid), op.index, signer, dest));
    }
  }
  return out;
}

// ---- batching --------------------------------------------------------------------

struct MixConfig {
  std::uint32_t k = 4;
  std::uint32_t min_customers = 2;
  std::uint32_t timeout_blocks = 6;
  std::uint32_t spread_blocks = 3;
  std::uint32_t outputs_per_tx = 4;
  std::uint32_t lock_blocks = 0;  // non-zero: emitted transactions are time-locked
  std::uint64_t seed = 1;
  bool mix = true;                // false: each origin is paid at once in its own transaction
};

// One chunk waiting for emission. `origin` is merchant-internal and never
// leaves the mixer.
struct PendingChunk {
  tx::TxOutput output;
  std::uint64_t origin = 0;
};

struct Emission {
  std::uint32_t scheduled_height = 0;
  Transaction tx;
  std::vector<std::optional<std::uint64_t>> origins;  // per output; empty for change
  bool broadcast = false;
};

class Mixer {
 public:
  Mixer(SimLedger& ledger, proto::DeterministicWallet& wallet, MixConfig cfg, Transcript* log = nullptr,
        std::string name = "mixer")
      : ledger_(ledger), wallet_(wallet), cfg_(cfg), rng_(seeded_rng(cfg.seed, name)), log_(log), name_(std::move(name)) {
    if (cfg_.outputs_per_tx < 2) throw Error(Errc::ConfigError, "need at least two outputs per transaction");
    if (cfg_.spread_blocks == 0) throw Error(Errc::ConfigError, "spread must be at least one block");
  }

  // Returns the batch position of the first added chunk.
  std::size_t enqueue(std::vector<PendingChunk> chunks) {
    if (chunks.empty()) throw Error(Errc::InvalidArgument, "nothing to enqueue");
    if (pending_.empty()) opened_at_ = ledger_.height();
    const auto pos = pending_.size();
    for (auto& c : chunks) pending_.push_back(std::move(c));
    note("enqueue", "chunks=" + std::to_string(chunks.size()) + " pending=" + std::to_string(pending_.size()));
    return pos;
  }

  // Called once per block: triggers the batch when it is ready and
  // broadcasts every emission that has come due.
  void poll() {
    const auto h = ledger_.height();
    if (!pending_.empty()) {
      std::set<std::uint64_t> origins;
      for (const auto& c : pending_) origins.insert(c.origin);
      if (!cfg_.mix) {
        emit_unmixed(h);
      } else if (origins.size() >= cfg_.min_customers) {
        plan(h);
      } else if (h >= opened_at_ + cfg_.timeout_blocks) {
        warnings_.push_back("h=" + std::to_string(h) + " batch with one customer emitted unmixed");
        note("anonymity-warning", "single-customer batch");
        plan(h);
      }
    }
    for (auto& e : emissions_) {
      if (e.broadcast || e.scheduled_height > h) continue;
      auto r = ledger_.broadcast(e.tx);
      if (r.status == ledger::BroadcastStatus::Rejected)
        throw Error(Errc::BadTransaction, "mix transaction rejected: " + std::string(tx::to_string(r.verdict.reason)));
      e.broadcast = true;
      note("emit", tx::summarize(e.tx));
    }
  }

  bool idle() const {
    return pending_.empty() && std::all_of(emissions_.begin(), emissions_.end(), [](const auto& e) { return e.broadcast; });
  }
  std::size_t pending() const { return pending_.size(); }
  const std::vector<Emission>& emissions() const { return emissions_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  Transaction fund(std::vector<tx::TxOutput> outputs, std::uint32_t lock) {
    auto [idx, key] = wallet_.next();
    std::vector<tx::FundingInput> f;
    for (const auto& [op, o] : ledger_.utxos_for(key.pub)) f.push_back({op, o.value, key.priv});
    return tx::build_spend(f, std::move(outputs), key.pub, lock);
  }

  void add_emission(std::uint32_t height, const std::vector<PendingChunk>& group, std::uint32_t lock) {
    std::vector<tx::TxOutput> outs;
    Emission e;
    for (const auto& c : group) {
      outs.push_back(c.output);
      e.origins.push_back(c.origin);
    }
    e.tx = fund(std::move(outs), lock);
    e.origins.resize(e.tx.outputs.size());
    e.scheduled_height = height;
    emissions_.push_back(std::move(e));
  }

  void emit_unmixed(std::uint32_t h) {
    std::map<std::uint64_t, std::vector<PendingChunk>> by_origin;
    for (auto& c : pending_) by_origin[c.origin].push_back(std::move(c));
    pending_.clear();
    const std::uint32_t lock = cfg_.lock_blocks ? h + cfg_.lock_blocks : 0;
    for (const auto& [origin, group] : by_origin) add_emission(h, group, lock);
  }

  static bool single_origin(const std::vector<PendingChunk>& g) {
    return std::all_of(g.begin(), g.end(), [&](const auto& c) { return c.origin == g.front().origin; });
  }

  void plan(std::uint32_t h) {
    auto chunks = std::move(pending_);
    pending_.clear();
    seeded_shuffle(chunks, rng_);

    std::vector<std::vector<PendingChunk>> groups;
    for (std::size_t i = 0; i < chunks.size(); i += cfg_.outputs_per_tx)
      groups.emplace_back(chunks.begin() + i, chunks.begin() + std::min(chunks.size(), i + cfg_.outputs_per_tx));
    if (groups.size() > 1 && groups.back().size() < 2) {
      groups[groups.size() - 2].push_back(groups.back().front());
      groups.pop_back();
    }

    // Every transaction must mix at least two origins when the batch has them.
    std::set<std::uint64_t> origins;
    for (const auto& c : chunks) origins.insert(c.origin);
    if (origins.size() >= 2) {
      for (auto& g : groups) {
        if (!single_origin(g)) continue;
        bool fixed = false;
        for (auto& other : groups) {
          if (&other == &g || fixed) continue;
          for (auto& c : other) {
            if (c.origin == g.front().origin) continue;
            // Swap only if `other` stays mixed afterwards.
            std::size_t same_as_c = std::count_if(other.begin(), other.end(), [&](const auto& x) { return x.origin == c.origin; });
            bool other_keeps_mix = other.size() - same_as_c >= 1 || same_as_c >= 2;
            if (!other_keeps_mix) continue;
            std::swap(c, g.back());
            if (single_origin(other)) {
              std::swap(c, g.back());
              continue;
            }
            fixed = true;
            break;
          }
        }
      }
    }

    const std::uint32_t lock = cfg_.lock_blocks ? h + cfg_.lock_blocks : 0;
    for (const auto& g : groups) add_emission(h + static_cast<std::uint32_t>(bounded(rng_, cfg_.spread_blocks)), g, lock);
    note("batch-planned", "chunks=" + std::to_string(chunks.size()) + " txs=" + std::to_string(groups.size()));
  }

  void note(std::string_view event, const std::string& detail) {
    if (log_) log_->log(name_, ledger_.height(), event, detail);
  }

  SimLedger& ledger_;
  proto::DeterministicWallet& wallet_;
  MixConfig cfg_;
  std::mt19937_64 rng_;
  Transcript* log_;
  std::string name_;
  std::vector<PendingChunk> pending_;
  std::uint32_t opened_at_ = 0;
  std::vector<Emission> emissions_;
  std::vector<std::string> warnings_;
};

// ---- merchant-side refund planning -------------------------------------------------

// Per refund entry i and chunk j: a P2PKH output to the refundee's masked child
// j, masked with the session's payment key.
struct ChunkedRefund {
  Bytes merchant_data;
  Point masking_pub;
  std::vector<SplitPlan> plans;  // per entry
  std::vector<PendingChunk> chunks;
};

inline ChunkedRefund enqueue_refund(proto::Merchant& merchant, ByteView merchant_data, std::uint32_t k,
                                    std::uint64_t origin, Mixer& mixer) {
  const auto& s = merchant.begin_external_refund(merchant_data);
  auto m = merchant.wallet().key(s.payment_key_index);
  ChunkedRefund r{s.merchant_data, m.pub, {}, {}};
  for (const auto& e : s.entries) {
    auto* x = std::get_if<ExtendedPublicKey>(&e.refundee);
    if (!x) throw Error(Errc::InvalidArgument, "mixing needs extended refundee keys");
    auto plan = split_value(e.value, k);
    auto keys = derive_chunk_keys(*x, k, m.priv);
    for (std::uint32_t j = 0; j < k; ++j) {
      merchant.claim_key(keys[j].masked_point, "masked-refundee/" + short_hex(s.merchant_data));
      r.chunks.push_back({tx::pay_to_pubkey(keys[j].masked_point, plan.chunks[j]), origin});
    }
    r.plans.push_back(std::move(plan));
  }
  mixer.enqueue(r.chunks);
  return r;
}

// Aggregate mode. For entry i (of n) and chunk j (of k):
//   joint side     2-of-2(mask(cust child i*k+j, m1), mask(refundee child j, m1))
//   fallback side  P2PKH mask(cust child n*k + i*k+j, m2), time-locked
// m1 and m2 are fresh per session; both sides are batch-mixed across sessions.
struct AggregateChunk {
  std::uint32_t entry = 0;
  std::uint32_t j = 0;
  Amount value = 0;
  std::uint32_t customer_index = 0;
  std::uint32_t fallback_index = 0;
  Point masked_customer;
  Point masked_refundee;
  Point masked_fallback;
  tx::MultisigScript script;
};

struct AggregatePlan {
  Bytes merchant_data;
  TxId main_txid;
  keys::KeyPair m1;
  keys::KeyPair m2;
  std::vector<AggregateChunk> chunks;
  std::vector<PendingChunk> joint_side;
  std::vector<PendingChunk> fallback_side;
};

inline AggregatePlan aggregate_refund(proto::Merchant& merchant, ByteView merchant_data, std::uint32_t k,
                                      std::uint64_t origin) {
  const auto& s = merchant.begin_external_refund(merchant_data);
  if (s.xpubs.size() != 1) throw Error(Errc::InvalidArgument, "aggregate mode takes one payer per session");
  const auto& cust = s.xpubs.front();
  AggregatePlan a;
  a.merchant_data = s.merchant_data;
  a.main_txid = s.main_txid;
  a.m1 = merchant.wallet().next().second;
  a.m2 = merchant.wallet().next().second;
  const std::string tag = "/" + short_hex(s.merchant_data);
  merchant.claim_key(a.m1.pub, "m1" + tag);
  merchant.claim_key(a.m2.pub, "m2" + tag);
  const auto n = static_cast<std::uint32_t>(s.entries.size());
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto& e = s.entries[i];
    auto* rx = std::get_if<ExtendedPublicKey>(&e.refundee);
    if (!rx) throw Error(Errc::InvalidArgument, "aggregate mode needs extended refundee keys");
    auto plan = split_value(e.value, k);
    auto refundee_keys = derive_chunk_keys(*rx, k, a.m1.priv);
    for (std::uint32_t j = 0; j < k; ++j) {
      AggregateChunk c;
      c.entry = i;
      c.j = j;
      c.value = plan.chunks[j];
      c.customer_index = i * k + j;
      c.fallback_index = n * k + i * k + j;
      c.masked_customer = keys::mask_child(keys::derive_child_public(cust, c.customer_index), a.m1.priv).masked_point;
      c.masked_refundee = refundee_keys[j].masked_point;
      c.masked_fallback = keys::mask_child(keys::derive_child_public(cust, c.fallback_index), a.m2.priv).masked_point;
      c.script = tx::MultisigScript{{c.masked_customer, c.masked_refundee}};
      merchant.claim_key(c.masked_customer, "masked-customer" + tag);
      merchant.claim_key(c.masked_refundee, "masked-refundee" + tag);
      merchant.claim_key(c.masked_fallback, "masked-customer" + tag);
      a.joint_side.push_back({tx::pay_to_script(c.script, c.value), origin});
      a.fallback_side.push_back({tx::pay_to_pubkey(c.masked_fallback, c.value), origin});
      a.chunks.push_back(std::move(c));
    }
  }
  return a;
}

// ---- adversary -------------------------------------------------------------------

// What a passive observer of links and chain learns about one customer.
struct CustomerObservation {
  std::uint64_t id = 0;
  ExtendedPublicKey xpub;             // from MainTC
  std::vector<Amount> refund_values;  // worst case: refund amounts leak
  std::uint32_t request_height = 0;   // when the refund request was seen
};

struct LinkageReport {
  std::vector<tx::OutPoint> outputs;
  std::vector<std::uint64_t> guesses;
  std::vector<std::optional<std::uint64_t>> truth;
  std::size_t correct = 0;
  std::size_t address_hits = 0;
  double accuracy = 0.0;
};

// Assigns each mixed output to a customer using, in order: address
// derivation from the customers' xpubs, chunk-value plausibility, and
// request timing (the latest request at or before the transaction was seen).
// Remaining ties are broken with the seeded generator.
inline LinkageReport analyze_linkage(const SimLedger& ledger, const std::vector<TxId>& mix_txs,
                                     const std::vector<CustomerObservation>& customers, std::uint32_t k,
                                     std::uint64_t seed,
                                     const std::map<tx::OutPoint, std::uint64_t>& ground_truth = {},
                                     std::uint32_t public_lock_blocks = 0) {
  LinkageReport rep;
  if (customers.empty()) return rep;
  auto rng = seeded_rng(seed, "analyzer");

  std::map<Hash20, std::uint64_t> derived;
  for (const auto& c : customers) {
    std::uint32_t span = k * static_cast<std::uint32_t>(std::max<std::size_t>(1, c.refund_values.size())) * 2 + 1;
    for (std::uint32_t i = 0; i < span; ++i) derived[tx::pubkey_hash(keys::derive_child_public(c.xpub, i))] = c.id;
  }
  auto plausible = [&](const CustomerObservation& c, Amount w) {
    for (auto v : c.refund_values)
      if (w == v / k || w == (v + k - 1) / k) return true;
    return false;
  };

  for (const auto& id : mix_txs) {
    const auto* conf = ledger.find(id);
    if (!conf) continue;
    // A time-locked transaction was seen when it was broadcast, one published
    // lock delay before its lock height.
    std::uint32_t seen = conf->height;
    if (conf->tx.lock_height && public_lock_blocks && conf->tx.lock_height >= public_lock_blocks)
      seen = conf->tx.lock_height - public_lock_blocks;
    std::set<Hash20> change;
    for (const auto& in : conf->tx.inputs)
      for (const auto& w : in.witness) change.insert(tx::pubkey_hash(w.pubkey));
    for (std::uint32_t i = 0; i < conf->tx.outputs.size(); ++i) {
      const auto& o = conf->tx.outputs[i];
      if (tx::is_data_carrier(o)) continue;
      auto* p2pkh = std::get_if<tx::PayToPubkeyHash>(&o.script);
      if (p2pkh && change.count(p2pkh->pubkey_hash)) continue;

      std::optional<std::uint64_t> guess;
      if (p2pkh) {
        if (auto it = derived.find(p2pkh->pubkey_hash); it != derived.end()) {
          guess = it->second;
          ++rep.address_hits;
        }
      }
      if (!guess) {
        std::vector<const CustomerObservation*> cand;
        for (const auto& c : customers) cand.push_back(&c);
        auto narrow = [&](auto pred) {
          std::vector<const CustomerObservation*> keep;
          for (auto* c : cand)
            if (pred(*c)) keep.push_back(c);
          if (!keep.empty()) cand = std::move(keep);
        };
        narrow([&](const auto& c) { return plausible(c, o.value); });
        narrow([&](const auto& c) { return c.request_height <= seen; });
        std::uint32_t latest = 0;
        for (auto* c : cand) latest = std::max(latest, c->request_height <= seen ? c->request_height : 0);
        narrow([&](const auto& c) { return c.request_height == latest; });
        guess = cand[bounded(rng, cand.size())]->id;
      }
      tx::OutPoint op{id, i};
      rep.outputs.push_back(op);
      rep.guesses.push_back(*guess);
      auto t = ground_truth.find(op);
      rep.truth.push_back(t == ground_truth.end() ? std::nullopt : std::optional<std::uint64_t>(t->second));
      if (rep.truth.back() && *rep.truth.back() == *guess) ++rep.correct;
    }
  }
  if (!rep.outputs.empty()) rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.outputs.size());
  return rep;
}

// Exact two-sided binomial test: total probability of outcomes no more
// likely than the observed one.
inline double binomial_two_sided_p(std::uint64_t successes, std::uint64_t n, double p) {
  if (n == 0) return 1.0;
  auto log_pmf = [&](std::uint64_t i) {
    return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
           std::lgamma(static_cast<double>(n - i) + 1) + static_cast<double>(i) * std::log(p) +
           static_cast<double>(n - i) * std::log1p(-p);
  };
  const double observed = log_pmf(successes);
  double total = 0.0;
  for (std::uint64_t i = 0; i <= n; ++i) {
    double lp = log_pmf(i);
    if (lp <= observed + 1e-7) total += std::exp(lp);
  }
  return std::min(1.0, total);
}

}  // namespace refund::mixer
