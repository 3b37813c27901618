#pragma once

// In-memory blockchain: a mempool, a block-height clock and the confirmed
// transaction history with its UTXO set.
//
// broadcast() validates against confirmed state; outputs already claimed by a
// mempool transaction count as spent (first-seen wins). A transaction whose
// only defect is a lock (its own lock height, or a source transaction still
// held by its lock) is held in the mempool. advance_height() opens one block
// per step and confirms every eligible mempool transaction in broadcast order.

#include <map>
#include <set>

#include "refund/transaction.hpp"

namespace refund::ledger {

using tx::OutPoint;
using tx::Transaction;
using tx::TxId;
using tx::TxOutput;

// Nominal 10-minute blocks.
inline constexpr std::uint32_t kOneWeekBlocks = 1008;
inline constexpr std::uint32_t kTwoMonthsBlocks = 8640;

enum class Role { Incoming, OutgoingP2SH, OutgoingP2PKH, Redeem };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::Incoming: return "Incoming";
    case Role::OutgoingP2SH: return "OutgoingP2SH";
    case Role::OutgoingP2PKH: return "OutgoingP2PKH";
    case Role::Redeem: return "Redeem";
  }
  return "Unknown";
}

struct TxLocator {
  TxId txid;
  std::uint32_t height = 0;
  Role role = Role::Incoming;

  bool operator==(const TxLocator&) const = default;
};

struct ConfirmedTx {
  Transaction tx;
  TxId id;
  std::uint32_t height = 0;
  std::uint64_t position = 0;  // global confirmation order
  bool seed = false;           // minted, no inputs
};

struct SpendStatus {
  bool spent = false;
  std::optional<TxId> spender;
};

enum class BroadcastStatus { Accepted, Held, Rejected };

struct BroadcastResult {
  BroadcastStatus status = BroadcastStatus::Rejected;
  tx::Verdict verdict;

  bool accepted() const { return status != BroadcastStatus::Rejected; }
  explicit operator bool() const { return accepted(); }
};

struct Audit {
  bool inputs_precede_spends = true;
  bool no_double_spends = true;
  bool locks_respected = true;
  bool utxo_replay_matches = true;
  bool value_conserved = true;
  std::vector<std::string> problems;

  bool ok() const {
    return inputs_precede_spends && no_double_spends && locks_respected && utxo_replay_matches &&
           value_conserved;
  }
};

class SimLedger {
 public:
  SimLedger() = default;

  std::uint32_t height() const { return height_; }

  // ---- LedgerView ----------------------------------------------------------

  std::optional<TxOutput> find_output(const OutPoint& op) const {
    auto it = index_.find(op.txid);
    if (it == index_.end()) return std::nullopt;
    const auto& tx = chain_[it->second].tx;
    if (op.index >= tx.outputs.size()) return std::nullopt;
    return tx.outputs[op.index];
  }

  bool is_output_spent(const OutPoint& op) const { return spent_by_.contains(op); }

  std::optional<std::uint32_t> pending_lock(const TxId& id) const {
    for (const auto& p : mempool_)
      if (p.id == id && p.tx.lock_height > 0) return p.tx.lock_height;
    return std::nullopt;
  }

  // ---- mutation ------------------------------------------------------------

  // Confirms a seed transaction (no inputs) at the current height. A data
  // output carrying a counter keeps seed txids distinct.
  Transaction mint(std::vector<TxOutput> outputs) {
    Writer nonce;
    nonce.u64(mint_counter_++);
    outputs.push_back(TxOutput{0, tx::DataCarrier{nonce.bytes()}});
    Transaction t;
    t.outputs = std::move(outputs);
    confirm(t, tx::txid(t), true);
    return t;
  }

  BroadcastResult broadcast(const Transaction& t) {
    auto id = tx::txid(t);
    if (index_.contains(id)) return {BroadcastStatus::Rejected, {tx::Reject::DoubleSpend, "already confirmed"}};
    MempoolView view{*this};
    auto verdict = tx::validate(t, view);
    if (verdict.reason == tx::Reject::Locked) {
      mempool_.push_back({t, id});
      return {BroadcastStatus::Held, verdict};
    }
    if (!verdict) return {BroadcastStatus::Rejected, verdict};
    mempool_.push_back({t, id});
    return {BroadcastStatus::Accepted, verdict};
  }

  std::uint32_t advance_height(std::uint32_t n = 1) {
    if (n == 0) throw Error(Errc::InvalidArgument, "advance by at least one block");
    for (std::uint32_t step = 0; step < n; ++step) {
      ++height_;
      std::vector<Pending> keep;
      for (auto& p : mempool_) {
        // Still locked: full validation waits until the lock height.
        if (p.tx.lock_height > height_) {
          keep.push_back(std::move(p));
          continue;
        }
        auto verdict = tx::validate(p.tx, *this);
        if (verdict) {
          confirm(p.tx, p.id, false);
        } else if (verdict.reason == tx::Reject::Locked) {
          keep.push_back(std::move(p));
        } else {
          dropped_.push_back(p.id);
        }
      }
      mempool_ = std::move(keep);
    }
    return height_;
  }

  // ---- queries -------------------------------------------------------------

  SpendStatus is_spent(const OutPoint& op) const {
    if (!find_output(op)) throw Error(Errc::UnknownOutput, to_hex(op.txid) + ":" + std::to_string(op.index));
    auto it = spent_by_.find(op);
    if (it == spent_by_.end()) return {};
    return {true, it->second};
  }

  const ConfirmedTx* find(const TxId& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &chain_[it->second];
  }

  const Transaction* find_tx(const TxId& id) const {
    auto* c = find(id);
    return c ? &c->tx : nullptr;
  }

  bool in_mempool(const TxId& id) const {
    return std::any_of(mempool_.begin(), mempool_.end(), [&](const Pending& p) { return p.id == id; });
  }

  std::size_t mempool_size() const { return mempool_.size(); }
  const std::vector<TxId>& dropped() const { return dropped_; }

  // All confirmed transactions in confirmation order.
  const std::vector<ConfirmedTx>& chain() const { return chain_; }

  const std::map<OutPoint, TxOutput>& utxos() const { return utxo_; }

  std::vector<std::pair<OutPoint, TxOutput>> utxos_for(const Point& pub) const {
    std::vector<std::pair<OutPoint, TxOutput>> out;
    auto h = tx::pubkey_hash(pub);
    for (const auto& [op, o] : utxo_) {
      auto* p = std::get_if<tx::PayToPubkeyHash>(&o.script);
      if (p && p->pubkey_hash == h) out.emplace_back(op, o);
    }
    return out;
  }

  Amount balance_of(const Point& pub) const {
    Amount sum = 0;
    for (const auto& [op, o] : utxos_for(pub)) sum += o.value;
    return sum;
  }

  // Value sitting in unspent script-hash outputs.
  Amount escrow_balance() const {
    Amount sum = 0;
    for (const auto& [op, o] : utxo_)
      if (tx::is_script_hash(o)) sum += o.value;
    return sum;
  }

  Amount total_supply() const {
    Amount sum = 0;
    for (const auto& [op, o] : utxo_) sum += o.value;
    return sum;
  }

  // Every confirmed transaction mentioning `pub`: outputs paying hash(pub),
  // witnesses or revealed scripts containing it, or a data output embedding
  // its encoding. Roles are relative to `pub`.
  std::vector<TxLocator> find_by_pubkey(const Point& pub) const {
    const auto& g = Group::secp256k1();
    const auto h = tx::pubkey_hash(pub);
    const auto enc = g.encode(pub);
    std::vector<TxLocator> out;
    for (const auto& c : chain_) {
      bool receives = false;
      bool signs = false;
      bool redeems = false;
      for (const auto& o : c.tx.outputs) {
        if (auto* p = std::get_if<tx::PayToPubkeyHash>(&o.script); p && p->pubkey_hash == h) receives = true;
        if (auto* d = std::get_if<tx::DataCarrier>(&o.script);
            d && d->payload.size() >= 33 && std::equal(enc.data.begin(), enc.data.end(), d->payload.begin()))
          receives = true;
      }
      for (const auto& in : c.tx.inputs) {
        bool here = std::any_of(in.witness.begin(), in.witness.end(),
                                [&](const tx::WitnessItem& w) { return w.pubkey == pub; }) ||
                    (in.revealed_script && in.revealed_script->contains(pub));
        if (!here) continue;
        signs = true;
        if (spends_refund_output(in.prev)) redeems = true;
      }
      if (!receives && !signs) continue;
      Role role = Role::Incoming;
      if (redeems) {
        role = Role::Redeem;
      } else if (signs) {
        bool p2sh = std::any_of(c.tx.outputs.begin(), c.tx.outputs.end(),
                                [](const TxOutput& o) { return tx::is_script_hash(o); });
        role = p2sh ? Role::OutgoingP2SH : Role::OutgoingP2PKH;
      }
      out.push_back({c.id, c.height, role});
    }
    return out;
  }

  // ---- integrity -----------------------------------------------------------

  std::map<OutPoint, TxOutput> replay_utxos() const {
    std::map<OutPoint, TxOutput> set;
    for (const auto& c : chain_) {
      for (const auto& in : c.tx.inputs) set.erase(in.prev);
      for (std::uint32_t i = 0; i < c.tx.outputs.size(); ++i)
        if (!tx::is_data_carrier(c.tx.outputs[i])) set.emplace(OutPoint{c.id, i}, c.tx.outputs[i]);
    }
    return set;
  }

  Audit audit() const {
    Audit a;
    std::map<TxId, std::uint64_t> pos;
    std::set<OutPoint> consumed;
    for (const auto& c : chain_) {
      if (c.tx.lock_height > c.height) {
        a.locks_respected = false;
        a.problems.push_back("lock violated by " + to_hex(c.id));
      }
      Amount in_sum = 0;
      for (const auto& in : c.tx.inputs) {
        auto it = pos.find(in.prev.txid);
        if (it == pos.end() || it->second >= c.position) {
          a.inputs_precede_spends = false;
          a.problems.push_back("input not confirmed earlier in " + to_hex(c.id));
        } else {
          const auto& src = chain_[index_.at(in.prev.txid)].tx;
          if (in.prev.index < src.outputs.size()) in_sum += src.outputs[in.prev.index].value;
        }
        if (!consumed.insert(in.prev).second) {
          a.no_double_spends = false;
          a.problems.push_back("double spend in " + to_hex(c.id));
        }
      }
      if (!c.seed && in_sum != tx::total_output(c.tx)) {
        a.value_conserved = false;
        a.problems.push_back("value not conserved in " + to_hex(c.id));
      }
      pos[c.id] = c.position;
    }
    if (replay_utxos() != utxo_) {
      a.utxo_replay_matches = false;
      a.problems.push_back("utxo set differs from replay");
    }
    return a;
  }

  // ---- persistence ---------------------------------------------------------
  //
  // height u32 | n_tx | (tx_height u32 | seed u8 | tx bytes (length-prefixed))*
  // The mempool is not persisted.

  Bytes serialize() const {
    Writer w;
    w.u32(height_);
    w.varint(chain_.size());
    for (const auto& c : chain_) {
      w.u32(c.height);
      w.u8(c.seed ? 1 : 0);
      w.var_bytes(tx::serialize(c.tx));
    }
    return std::move(w).bytes();
  }

  static SimLedger deserialize(ByteView bytes) {
    Reader r(bytes);
    SimLedger l;
    auto final_height = r.u32();
    auto n = r.varint();
    for (std::uint64_t i = 0; i < n; ++i) {
      auto h = r.u32();
      bool seed = r.u8() == 1;
      auto raw = r.var_bytes();
      auto t = tx::deserialize(raw);
      if (h < l.height_) throw Error(Errc::InvalidEncoding, "heights out of order");
      l.height_ = h;
      if (seed) ++l.mint_counter_;
      l.confirm(t, tx::txid(t), seed);
    }
    r.expect_done();
    if (final_height < l.height_) throw Error(Errc::InvalidEncoding, "bad tip height");
    l.height_ = final_height;
    return l;
  }

 private:
  struct Pending {
    Transaction tx;
    TxId id;
  };

  // Confirmed state plus mempool claims, used for first-seen admission.
  struct MempoolView {
    const SimLedger& l;
    std::uint32_t height() const { return l.height_; }
    std::optional<TxOutput> find_output(const OutPoint& op) const { return l.find_output(op); }
    bool is_output_spent(const OutPoint& op) const {
      if (l.is_output_spent(op)) return true;
      for (const auto& p : l.mempool_)
        for (const auto& in : p.tx.inputs)
          if (in.prev == op) return true;
      return false;
    }
    std::optional<std::uint32_t> pending_lock(const TxId& id) const { return l.pending_lock(id); }
  };

  bool spends_refund_output(const OutPoint& op) const {
    auto* src = find(op.txid);
    if (!src || op.index >= src->tx.outputs.size()) return false;
    return tx::is_script_hash(src->tx.outputs[op.index]) || src->tx.lock_height > 0;
  }

  void confirm(const Transaction& t, const TxId& id, bool seed) {
    for (const auto& in : t.inputs) {
      utxo_.erase(in.prev);
      spent_by_[in.prev] = id;
    }
    for (std::uint32_t i = 0; i < t.outputs.size(); ++i)
      if (!tx::is_data_carrier(t.outputs[i])) utxo_.emplace(OutPoint{id, i}, t.outputs[i]);
    index_[id] = chain_.size();
    chain_.push_back({t, id, height_, next_position_++, seed});
  }

  std::uint32_t height_ = 0;
  std::uint64_t next_position_ = 0;
  std::uint64_t mint_counter_ = 0;
  std::vector<ConfirmedTx> chain_;
  std::map<TxId, std::size_t> index_;
  std::map<OutPoint, TxOutput> utxo_;
  std::map<OutPoint, TxId> spent_by_;
  std::vector<Pending> mempool_;
  std::vector<TxId> dropped_;
};

static_assert(tx::LedgerView<SimLedger>);

}  // namespace refund::ledger
