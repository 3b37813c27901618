#pragma once

#include <set>

#include "refund/protocol.hpp"

namespace refund::recovery {

using ledger::SimLedger;
using proto::DeterministicWallet;
using tx::Transaction;
using tx::TxId;

// ---- storage cost ------------------------------------------------------------

struct StorageModel {
  std::uint32_t n_refundees = 1;
  std::uint64_t signature_bytes = 72;  // L_S
  std::uint64_t payment_bytes = 0;     // L_pay: memo + payment request
};

inline constexpr std::uint64_t kMaxPaymentBytes = 50'000;

// Per-refund storage of the endorsement-signature scheme we compare against.
inline std::uint64_t mccorry_storage(const StorageModel& m) {
  if (m.n_refundees < 1) throw Error(Errc::InvalidArgument, "need at least one refundee");
  if (m.payment_bytes > kMaxPaymentBytes) throw Error(Errc::InvalidArgument, "payment data above 50000 bytes");
  return 210 + 42ull * m.n_refundees + m.signature_bytes + m.payment_bytes;
}

inline std::string storage_table(const StorageModel& m) {
  std::string out;
  out += "refundees  endorsement-scheme  txid-record\n";
  out += std::to_string(m.n_refundees) + "  " + std::to_string(mccorry_storage(m)) + "  " +
         std::to_string(RefundRecord::kSize) + "\n";
  return out;
}

// ---- linkage proofs ------------------------------------------------------------

struct LinkageProof {
  RefundRecord record;
  std::uint32_t child_index = 0;
  Scalar masking_priv;  // m1 of this session only
  keys::ExtendedPublicKey xpub;
  Point child;
  Point masked;
  tx::MultisigScript script;
  std::uint32_t tc1_output = 0;
};

enum class ProofCheck {
  Ok,
  ChainDataMissing,
  XpubNotInPayment,
  ChildMismatch,
  MaskMismatch,
  ScriptMismatch,
  NotSpentByRedeem,
  MissingSignature,
};

inline std::string_view to_string(ProofCheck c) {
  switch (c) {
    case ProofCheck::Ok: return "ok";
    case ProofCheck::ChainDataMissing: return "chain-data-missing";
    case ProofCheck::XpubNotInPayment: return "xpub-not-in-payment";
    case ProofCheck::ChildMismatch: return "child-mismatch";
    case ProofCheck::MaskMismatch: return "mask-mismatch";
    case ProofCheck::ScriptMismatch: return "script-mismatch";
    case ProofCheck::NotSpentByRedeem: return "not-spent-by-redeem";
    case ProofCheck::MissingSignature: return "missing-signature";
  }
  return "?";
}

struct ProofVerdict {
  ProofCheck reason = ProofCheck::Ok;
  bool ok() const { return reason == ProofCheck::Ok; }
  explicit operator bool() const { return ok(); }
};

// The key that signed a refund transaction's first input.
inline Point signer_key(const Transaction& t) {
  if (t.inputs.empty() || t.inputs.front().witness.empty())
    throw Error(Errc::BadTransaction, "transaction carries no signature");
  return t.inputs.front().witness.front().pubkey;
}

inline std::optional<std::uint32_t> wallet_index_of(const DeterministicWallet& w, const Point& pub) {
  for (std::uint32_t i = 0; i < w.capacity(); ++i)
    if (w.key(i).pub == pub) return i;
  return std::nullopt;
}

// Builds the proof from the disclosed masking key: finds the joint spend of
// a TC1 output inside the redeem and the (xpub, index) whose masked child
// sits in the revealed script. `index_hint` is tried first.
inline LinkageProof make_linkage_proof(const RefundRecord& record, const Scalar& masking_priv, const SimLedger& ledger,
                                       std::uint32_t max_child_index = 16,
                                       std::optional<std::uint32_t> index_hint = std::nullopt) {
  if (!record.redeemed()) throw Error(Errc::NotRedeemed, "refund not redeemed");
  const auto* main = ledger.find_tx(record.main_txid);
  const auto* tc1 = ledger.find_tx(record.tc1_txid);
  const auto* redeem = ledger.find_tx(record.redeem_txid);
  if (!main || !tc1 || !redeem) throw Error(Errc::ChainDataMissing, "record names unconfirmed transactions");

  const tx::TxInput* spend = nullptr;
  for (const auto& in : redeem->inputs)
    if (in.prev.txid == record.tc1_txid && in.revealed_script) spend = &in;
  if (!spend)
    throw Error(Errc::NotRedeemed, "redeem does not spend a joint output; the customer used the fallback alone");

  const auto& script = *spend->revealed_script;
  std::vector<std::uint32_t> order;
  if (index_hint) order.push_back(*index_hint);
  order.push_back(spend->prev.index);
  for (std::uint32_t i = 0; i <= max_child_index; ++i) order.push_back(i);
  std::set<std::uint32_t> tried;
  for (const auto& x : tx::embedded_xpubs(*main)) {
    tried.clear();
    for (auto idx : order) {
      if (!tried.insert(idx).second) continue;
      auto child = keys::derive_child_public(x, idx);
      auto masked = keys::mask_child(child, masking_priv, idx).masked_point;
      if (!script.contains(masked)) continue;
      return LinkageProof{record, idx, masking_priv, x, child, masked, script, spend->prev.index};
    }
  }
  throw Error(Errc::ChainDataMissing, "no derivation reproduces the script keys");
}

// Merchant side: m1 is recovered from the wallet as the key that signed TC1.
inline LinkageProof generate_linkage_proof(const RefundRecord& record, const DeterministicWallet& wallet,
                                           const SimLedger& ledger, std::uint32_t max_child_index = 16) {
  if (!record.redeemed()) throw Error(Errc::NotRedeemed, "refund not redeemed");
  const auto* tc1 = ledger.find_tx(record.tc1_txid);
  if (!tc1) throw Error(Errc::ChainDataMissing, "TC1 not on chain");
  auto m1_index = wallet_index_of(wallet, signer_key(*tc1));
  if (!m1_index) throw Error(Errc::KeyMismatch, "TC1 was not signed by this wallet");
  return make_linkage_proof(record, wallet.key(*m1_index).priv, ledger, max_child_index);
}

// Replays the proof against confirmed ledger data only.
inline ProofVerdict verify_linkage_proof(const LinkageProof& p, const SimLedger& ledger) {
  const auto* main = ledger.find_tx(p.record.main_txid);
  const auto* tc1 = ledger.find_tx(p.record.tc1_txid);
  const auto* tc2 = ledger.find_tx(p.record.tc2_txid);
  const auto* redeem = ledger.find_tx(p.record.redeem_txid);
  if (!main || !tc1 || !tc2 || !redeem) return {ProofCheck::ChainDataMissing};

  auto xpubs = tx::embedded_xpubs(*main);
  if (std::find(xpubs.begin(), xpubs.end(), p.xpub) == xpubs.end()) return {ProofCheck::XpubNotInPayment};
  try {
    if (keys::derive_child_public(p.xpub, p.child_index) != p.child) return {ProofCheck::ChildMismatch};
    if (keys::mask_child(p.child, p.masking_priv).masked_point != p.masked) return {ProofCheck::MaskMismatch};
  } catch (const Error&) {
    return {ProofCheck::ChildMismatch};
  }
  if (!p.script.contains(p.masked)) return {ProofCheck::ScriptMismatch};
  if (p.tc1_output >= tc1->outputs.size()) return {ProofCheck::ScriptMismatch};
  auto* sh = std::get_if<tx::ScriptHash>(&tc1->outputs[p.tc1_output].script);
  if (!sh || sh->script_hash != p.script.hash()) return {ProofCheck::ScriptMismatch};

  const tx::TxInput* spend = nullptr;
  for (const auto& in : redeem->inputs)
    if (in.prev == tx::OutPoint{p.record.tc1_txid, p.tc1_output}) spend = &in;
  if (!spend || spend->revealed_script != p.script) return {ProofCheck::NotSpentByRedeem};
  auto st = ledger.is_spent(tx::OutPoint{p.record.tc1_txid, p.tc1_output});
  if (!st.spent || st.spender != p.record.redeem_txid) return {ProofCheck::NotSpentByRedeem};

  auto verdict = tx::check_witness(*spend, tc1->outputs[p.tc1_output], tx::signing_digest(*redeem));
  if (!verdict.accepted()) return {ProofCheck::MissingSignature};
  return {};
}

// ---- database recovery ----------------------------------------------------------

struct RecoveryOptions {
  std::uint32_t max_child_index = 16;
};

// O_K counts key generations (wallet keys, child derivations, maskings);
// O_S counts ledger searches (pubkey scans and spend lookups).
struct RecoveryStats {
  std::uint64_t key_generations = 0;
  std::uint64_t searches = 0;
  std::size_t payments = 0;     // t
  std::size_t refund_txs = 0;   // l
};

struct RecoveryResult {
  std::vector<RefundRecord> records;  // sorted by MainTC id
  std::vector<TxId> pending;          // MainTC ids whose refund is not redeemed yet
  std::vector<TxId> unmatched;        // MainTCs without an identifiable refund
  RecoveryStats stats;
};

inline std::vector<RefundRecord> sorted(std::vector<RefundRecord> v) {
  std::sort(v.begin(), v.end());
  return v;
}

// Rebuilds the refund records from the wallet and the chain alone:
//   1. regenerate every wallet key and collect the transactions it touches,
//      sorted into payments (incoming with an embedded xpub), joint refunds
//      (signed, script-hash outputs, no lock) and fallbacks (signed, locked);
//   2. for every payment, derive the customer's children from index 0 and
//      mask each with every fallback signer until a fallback output matches;
//      the joint refund is the one signed by the wallet key issued right
//      before that fallback signer; the redeem is the earliest spend.
inline RecoveryResult recover_database(const DeterministicWallet& wallet, const SimLedger& ledger,
                                       RecoveryOptions opt = {}) {
  RecoveryResult res;
  auto& st = res.stats;

  std::map<TxId, const Transaction*> payments;
  std::map<std::uint32_t, TxId> joint_by_signer;                    // wallet index -> TC1
  std::vector<std::pair<std::uint32_t, TxId>> fallbacks;            // (wallet index of m2, TC2)
  std::map<std::uint32_t, keys::KeyPair> keys_by_index;

  for (std::uint32_t i = 0; i < wallet.capacity(); ++i) {
    auto kp = wallet.key(i);
    ++st.key_generations;
    ++st.searches;
    auto found = ledger.find_by_pubkey(kp.pub);
    for (const auto& loc : found) {
      const auto* t = ledger.find_tx(loc.txid);
      if (loc.role == ledger::Role::Incoming) {
        if (!tx::embedded_xpubs(*t).empty()) payments.emplace(loc.txid, t);
        continue;
      }
      if (loc.role != ledger::Role::OutgoingP2SH && loc.role != ledger::Role::OutgoingP2PKH) continue;
      if (signer_key(*t) != kp.pub) continue;
      keys_by_index[i] = kp;
      if (t->lock_height > 0) {
        fallbacks.emplace_back(i, loc.txid);
      } else if (loc.role == ledger::Role::OutgoingP2SH) {
        joint_by_signer.emplace(i, loc.txid);
      }
    }
  }
  st.payments = payments.size();
  st.refund_txs = joint_by_signer.size() + fallbacks.size();

  auto earliest_spend = [&](const Transaction& t, bool script_only, const Point& change_key) {
    std::optional<std::pair<std::pair<std::uint32_t, std::uint32_t>, TxId>> best;
    auto id = tx::txid(t);
    for (std::uint32_t i = 0; i < t.outputs.size(); ++i) {
      const auto& o = t.outputs[i];
      if (tx::is_data_carrier(o)) continue;
      if (script_only && !tx::is_script_hash(o)) continue;
      if (!script_only && tx::pays_to(o, change_key)) continue;
      ++st.searches;
      auto s = ledger.is_spent(tx::OutPoint{id, i});
      if (!s.spent) continue;
      const auto* c = ledger.find(*s.spender);
      std::pair<std::uint32_t, std::uint32_t> at{c->height, c->position};
      if (!best || at < best->first) best = {{at, *s.spender}};
    }
    return best;
  };

  std::set<TxId> used_fallbacks;
  for (const auto& [main_id, main] : payments) {
    std::optional<std::pair<std::uint32_t, TxId>> match;
    for (const auto& x : tx::embedded_xpubs(*main)) {
      for (std::uint32_t idx = 0; idx <= opt.max_child_index && !match; ++idx) {
        Point child;
        try {
          child = keys::derive_child_public(x, idx);
        } catch (const Error&) {
          continue;
        }
        ++st.key_generations;
        for (const auto& [m2_index, tc2_id] : fallbacks) {
          if (used_fallbacks.count(tc2_id)) continue;
          ++st.key_generations;
          auto masked = keys::mask_child(child, keys_by_index.at(m2_index).priv, idx).masked_point;
          const auto* tc2 = ledger.find_tx(tc2_id);
          bool hit = std::any_of(tc2->outputs.begin(), tc2->outputs.end(),
                                 [&](const tx::TxOutput& o) { return tx::pays_to(o, masked); });
          if (hit) {
            match = {m2_index, tc2_id};
            break;
          }
        }
      }
      if (match) break;
    }
    if (!match) {
      res.unmatched.push_back(main_id);
      continue;
    }
    used_fallbacks.insert(match->second);
    RefundRecord r;
    r.main_txid = main_id;
    r.tc2_txid = match->second;
    const auto m2_index = match->first;
    auto tc1_it = m2_index > 0 ? joint_by_signer.find(m2_index - 1) : joint_by_signer.end();
    if (tc1_it != joint_by_signer.end()) r.tc1_txid = tc1_it->second;

    std::optional<std::pair<std::pair<std::uint32_t, std::uint32_t>, TxId>> best;
    if (!r.tc1_txid.is_zero()) best = earliest_spend(*ledger.find_tx(r.tc1_txid), true, {});
    auto fb = earliest_spend(*ledger.find_tx(r.tc2_txid), false, keys_by_index.at(m2_index).pub);
    if (fb && (!best || fb->first < best->first)) best = fb;
    if (best) r.redeem_txid = best->second;
    else res.pending.push_back(main_id);
    res.records.push_back(r);
  }
  res.records = sorted(std::move(res.records));
  return res;
}

}  // namespace refund::recovery
