#pragma once

// Simplified transaction model with three output templates:
//   PayToPubkeyHash  - spend with one signature under a key hashing to the output
//   ScriptHash       - commits to an n-of-n MultisigScript (2 <= n <= 4); spend by
//                      revealing the script and one signature per key, in order
//   DataCarrier      - zero-value payload of at most 80 bytes, never spendable
//
// Canonical serialization (all integers little-endian, counts as CompactSize):
//
//   version u32 | n_in | inputs | n_out | outputs | lock_height u32
//   input   = prev_txid[32] | prev_index u32 | n_wit | (sig[64] pubkey[33])*
//             | has_script u8 | [n_keys u8 | key[33]*]
//   output  = value i64 | type u8 (0 p2pkh, 1 script-hash, 2 data) | len | payload
//
// txid = SHA256(serialization). The signing digest is SHA256 of the same
// serialization with every witness emptied (n_wit = 0, has_script = 0).

#include <concepts>
#include <optional>
#include <variant>

#include "refund/keys.hpp"
#include "refund/schnorr.hpp"

namespace refund::tx {

using TxId = Hash32;

inline constexpr std::size_t kMaxDataCarrier = 80;
inline constexpr std::size_t kMaxMultisigKeys = 4;

struct OutPoint {
  TxId txid;
  std::uint32_t index = 0;

  auto operator<=>(const OutPoint&) const = default;
};

struct PayToPubkeyHash {
  Hash20 pubkey_hash;
  auto operator<=>(const PayToPubkeyHash&) const = default;
};

struct ScriptHash {
  Hash20 script_hash;
  auto operator<=>(const ScriptHash&) const = default;
};

struct DataCarrier {
  Bytes payload;
  auto operator<=>(const DataCarrier&) const = default;
};

using OutputScript = std::variant<PayToPubkeyHash, ScriptHash, DataCarrier>;

struct TxOutput {
  Amount value = 0;
  OutputScript script;

  bool operator==(const TxOutput&) const = default;
};

inline Hash20 pubkey_hash(const Point& pub) { return hash20(Group::secp256k1().encode(pub).view()); }

inline TxOutput pay_to_pubkey(const Point& pub, Amount value) {
  return {value, PayToPubkeyHash{pubkey_hash(pub)}};
}

// n-of-n multisignature script. A 2-of-2 script is the refund lock between a
// masked customer child key and a refundee key.
struct MultisigScript {
  std::vector<Point> keys;

  bool operator==(const MultisigScript&) const = default;

  void validate() const {
    if (keys.size() < 2 || keys.size() > kMaxMultisigKeys)
      throw Error(Errc::ScriptMismatch, "multisig script needs 2..4 keys");
    for (const auto& k : keys)
      if (k.is_identity()) throw Error(Errc::ScriptMismatch, "identity key in script");
  }

  Bytes serialize() const {
    Writer w;
    w.u8(static_cast<std::uint8_t>(keys.size()));
    for (const auto& k : keys) w.raw(Group::secp256k1().encode(k));
    return std::move(w).bytes();
  }

  Hash20 hash() const { return hash20(serialize()); }

  bool contains(const Point& p) const { return std::find(keys.begin(), keys.end(), p) != keys.end(); }
};

inline TxOutput pay_to_script(const MultisigScript& script, Amount value) {
  script.validate();
  return {value, ScriptHash{script.hash()}};
}

struct WitnessItem {
  sig::Signature signature;
  Point pubkey;

  bool operator==(const WitnessItem&) const = default;
};

struct TxInput {
  OutPoint prev;
  std::vector<WitnessItem> witness;
  std::optional<MultisigScript> revealed_script;

  bool operator==(const TxInput&) const = default;
};

struct Transaction {
  std::uint32_t version = 1;
  std::vector<TxInput> inputs;
  std::vector<TxOutput> outputs;
  std::uint32_t lock_height = 0;

  bool operator==(const Transaction&) const = default;
};

// ---- serialization --------------------------------------------------------

namespace detail {

inline void write_tx(Writer& w, const Transaction& tx, bool with_witness) {
  const auto& g = Group::secp256k1();
  w.u32(tx.version);
  w.varint(tx.inputs.size());
  for (const auto& in : tx.inputs) {
    w.raw(in.prev.txid);
    w.u32(in.prev.index);
    if (!with_witness) {
      w.varint(0);
      w.u8(0);
      continue;
    }
    w.varint(in.witness.size());
    for (const auto& item : in.witness) {
      w.raw(item.signature);
      w.raw(g.encode(item.pubkey));
    }
    if (in.revealed_script) {
      w.u8(1);
      w.raw(in.revealed_script->serialize());
    } else {
      w.u8(0);
    }
  }
  w.varint(tx.outputs.size());
  for (const auto& out : tx.outputs) {
    w.i64(out.value);
    std::visit(
        [&](const auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, PayToPubkeyHash>) {
            w.u8(0);
            w.var_bytes(s.pubkey_hash.view());
          } else if constexpr (std::is_same_v<S, ScriptHash>) {
            w.u8(1);
            w.var_bytes(s.script_hash.view());
          } else {
            w.u8(2);
            w.var_bytes(s.payload);
          }
        },
        out.script);
  }
  w.u32(tx.lock_height);
}

}  // namespace detail

inline Bytes serialize(const Transaction& tx) {
  Writer w;
  detail::write_tx(w, tx, true);
  return std::move(w).bytes();
}

inline MultisigScript read_script(Reader& r) {
  const auto& g = Group::secp256k1();
  MultisigScript s;
  auto n = r.u8();
  for (std::uint8_t i = 0; i < n; ++i) s.keys.push_back(g.decode(r.raw(33)));
  return s;
}

inline Transaction read_tx(Reader& r) {
  const auto& g = Group::secp256k1();
  Transaction tx;
  tx.version = r.u32();
  auto n_in = r.varint();
  for (std::uint64_t i = 0; i < n_in; ++i) {
    TxInput in;
    in.prev.txid = r.fixed<32>();
    in.prev.index = r.u32();
    auto n_wit = r.varint();
    for (std::uint64_t j = 0; j < n_wit; ++j) {
      WitnessItem item;
      item.signature = r.fixed<64>();
      item.pubkey = g.decode(r.raw(33));
      in.witness.push_back(item);
    }
    if (r.u8() == 1) in.revealed_script = read_script(r);
    tx.inputs.push_back(std::move(in));
  }
  auto n_out = r.varint();
  for (std::uint64_t i = 0; i < n_out; ++i) {
    TxOutput out;
    out.value = r.i64();
    auto type = r.u8();
    auto payload = r.var_bytes();
    switch (type) {
      case 0: out.script = PayToPubkeyHash{Hash20::from(payload)}; break;
      case 1: out.script = ScriptHash{Hash20::from(payload)}; break;
      case 2: out.script = DataCarrier{std::move(payload)}; break;
      default: throw Error(Errc::InvalidEncoding, "unknown output type");
    }
    tx.outputs.push_back(std::move(out));
  }
  tx.lock_height = r.u32();
  return tx;
}

inline Transaction deserialize(ByteView bytes) {
  Reader r(bytes);
  auto tx = read_tx(r);
  r.expect_done();
  return tx;
}

inline TxId txid(const Transaction& tx) { return sha256(serialize(tx)); }

inline Hash32 signing_digest(const Transaction& tx) {
  Writer w;
  detail::write_tx(w, tx, false);
  return sha256(w.bytes());
}

// ---- inspection helpers ---------------------------------------------------

inline bool is_data_carrier(const TxOutput& o) { return std::holds_alternative<DataCarrier>(o.script); }
inline bool is_script_hash(const TxOutput& o) { return std::holds_alternative<ScriptHash>(o.script); }
inline bool is_p2pkh(const TxOutput& o) { return std::holds_alternative<PayToPubkeyHash>(o.script); }

inline bool pays_to(const TxOutput& o, const Point& pub) {
  auto* p = std::get_if<PayToPubkeyHash>(&o.script);
  return p && p->pubkey_hash == pubkey_hash(pub);
}

inline Amount total_output(const Transaction& tx) {
  Amount sum = 0;
  for (const auto& o : tx.outputs) sum += o.value;
  return sum;
}

inline Amount total_script_hash_output(const Transaction& tx) {
  Amount sum = 0;
  for (const auto& o : tx.outputs)
    if (is_script_hash(o)) sum += o.value;
  return sum;
}

// ---- validation -----------------------------------------------------------

enum class Reject {
  None,
  Malformed,
  UnknownInput,
  DoubleSpend,
  BadWitness,
  Locked,
  ValueMismatch,
};

inline std::string_view to_string(Reject r) {
  switch (r) {
    case Reject::None: return "None";
    case Reject::Malformed: return "Malformed";
    case Reject::UnknownInput: return "UnknownInput";
    case Reject::DoubleSpend: return "DoubleSpend";
    case Reject::BadWitness: return "BadWitness";
    case Reject::Locked: return "Locked";
    case Reject::ValueMismatch: return "ValueMismatch";
  }
  return "Unknown";
}

struct Verdict {
  Reject reason = Reject::None;
  std::string detail;

  bool accepted() const { return reason == Reject::None; }
  explicit operator bool() const { return accepted(); }
};

// Read-only view of confirmed chain state that validation runs against.
template <class V>
concept LedgerView = requires(const V& v, const OutPoint& op, const TxId& id) {
  { v.height() } -> std::convertible_to<std::uint32_t>;
  { v.find_output(op) } -> std::same_as<std::optional<TxOutput>>;
  { v.is_output_spent(op) } -> std::convertible_to<bool>;
  // Lock height of a transaction that is known but held back by its lock.
  { v.pending_lock(id) } -> std::same_as<std::optional<std::uint32_t>>;
};

inline Verdict check_witness(const TxInput& in, const TxOutput& spent, const Hash32& digest) {
  if (auto* p2pkh = std::get_if<PayToPubkeyHash>(&spent.script)) {
    if (in.witness.size() != 1 || in.revealed_script)
      return {Reject::BadWitness, "p2pkh needs exactly one signature"};
    const auto& item = in.witness.front();
    if (pubkey_hash(item.pubkey) != p2pkh->pubkey_hash) return {Reject::BadWitness, "pubkey hash mismatch"};
    if (!sig::verify(item.pubkey, digest, item.signature)) return {Reject::BadWitness, "bad signature"};
    return {};
  }
  if (auto* sh = std::get_if<ScriptHash>(&spent.script)) {
    if (!in.revealed_script) return {Reject::BadWitness, "script not revealed"};
    const auto& script = *in.revealed_script;
    if (script.keys.size() < 2 || script.keys.size() > kMaxMultisigKeys)
      return {Reject::BadWitness, "bad multisig arity"};
    if (script.hash() != sh->script_hash) return {Reject::BadWitness, "script hash mismatch"};
    if (in.witness.size() != script.keys.size())
      return {Reject::BadWitness, "multisig requires every signature"};
    for (std::size_t i = 0; i < script.keys.size(); ++i) {
      const auto& item = in.witness[i];
      if (item.pubkey != script.keys[i]) return {Reject::BadWitness, "witness key order mismatch"};
      if (!sig::verify(item.pubkey, digest, item.signature)) return {Reject::BadWitness, "bad signature"};
    }
    return {};
  }
  return {Reject::BadWitness, "data-carrier outputs are unspendable"};
}

template <LedgerView View>
Verdict validate(const Transaction& tx, const View& view) {
  if (tx.outputs.empty()) return {Reject::Malformed, "no outputs"};
  if (tx.inputs.empty()) return {Reject::Malformed, "no inputs"};
  for (const auto& o : tx.outputs) {
    if (o.value < 0) return {Reject::Malformed, "negative value"};
    if (is_data_carrier(o)) {
      if (o.value != 0) return {Reject::Malformed, "data carrier with value"};
      if (std::get<DataCarrier>(o.script).payload.size() > kMaxDataCarrier)
        return {Reject::Malformed, "data carrier too large"};
    } else if (o.value == 0) {
      return {Reject::Malformed, "zero-value spendable output"};
    }
  }

  const auto digest = signing_digest(tx);
  Amount in_sum = 0;
  std::vector<OutPoint> seen;
  for (const auto& in : tx.inputs) {
    if (std::find(seen.begin(), seen.end(), in.prev) != seen.end())
      return {Reject::DoubleSpend, "input repeated within transaction"};
    seen.push_back(in.prev);
    auto spent = view.find_output(in.prev);
    if (!spent) {
      if (auto lock = view.pending_lock(in.prev.txid); lock && *lock > view.height())
        return {Reject::Locked, "source output is time-locked until " + std::to_string(*lock)};
      return {Reject::UnknownInput, to_hex(in.prev.txid) + ":" + std::to_string(in.prev.index)};
    }
    if (view.is_output_spent(in.prev)) return {Reject::DoubleSpend, "output already spent"};
    if (auto v = check_witness(in, *spent, digest); !v) return v;
    in_sum += spent->value;
  }
  if (in_sum != total_output(tx)) return {Reject::ValueMismatch, "inputs != outputs (zero-fee)"};
  if (tx.lock_height > view.height())
    return {Reject::Locked, "lock height " + std::to_string(tx.lock_height)};
  return {};
}

// ---- construction ---------------------------------------------------------

// A P2PKH output owned by `priv`, available for spending.
struct FundingInput {
  OutPoint outpoint;
  Amount value = 0;
  Scalar priv;
};

inline Amount total(std::span<const FundingInput> funding) {
  Amount sum = 0;
  for (const auto& f : funding) sum += f.value;
  return sum;
}

// Fills every P2PKH witness. Inputs must be in the same order as `funding`.
inline void sign_funding_inputs(Transaction& tx, std::span<const FundingInput> funding) {
  const auto& g = Group::secp256k1();
  auto digest = signing_digest(tx);
  for (std::size_t i = 0; i < funding.size(); ++i)
    tx.inputs[i].witness = {WitnessItem{sig::sign(funding[i].priv, digest), g.mul_base(funding[i].priv)}};
}

// Spends `funding` into `outputs`, returning any remainder to `change_to`.
inline Transaction build_spend(std::span<const FundingInput> funding, std::vector<TxOutput> outputs,
                               const Point& change_to, std::uint32_t lock_height = 0) {
  Amount needed = 0;
  for (const auto& o : outputs) needed += o.value;
  const Amount available = total(funding);
  if (funding.empty() || available < needed)
    throw Error(Errc::InsufficientFunds,
                "need " + std::to_string(needed) + ", have " + std::to_string(available));
  Transaction tx;
  tx.lock_height = lock_height;
  for (const auto& f : funding) tx.inputs.push_back(TxInput{f.outpoint, {}, std::nullopt});
  tx.outputs = std::move(outputs);
  if (available > needed) tx.outputs.push_back(pay_to_pubkey(change_to, available - needed));
  sign_funding_inputs(tx, funding);
  return tx;
}

// MainTC: pays `amount` to the merchant and embeds each payer's extended
// public key in a data-carrier output. Change returns to the first funding key.
inline Transaction build_main_tc(std::span<const FundingInput> funding, const Point& pay_to, Amount amount,
                                 std::span<const keys::ExtendedPublicKey> customer_xpubs) {
  if (amount <= 0) throw Error(Errc::InvalidArgument, "amount must be positive");
  if (funding.empty()) throw Error(Errc::InsufficientFunds, "no funding inputs");
  std::vector<TxOutput> outputs{pay_to_pubkey(pay_to, amount)};
  for (const auto& xpub : customer_xpubs) {
    auto payload = keys::encode_xpub(xpub);
    if (payload.size() > kMaxDataCarrier) throw Error(Errc::PayloadTooLarge, "xpub exceeds data cap");
    outputs.push_back(TxOutput{0, DataCarrier{std::move(payload)}});
  }
  const auto& g = Group::secp256k1();
  return build_spend(funding, std::move(outputs), g.mul_base(funding.front().priv));
}

inline Transaction build_main_tc(std::span<const FundingInput> funding, const Point& pay_to, Amount amount,
                                 const keys::ExtendedPublicKey& customer_xpub) {
  return build_main_tc(funding, pay_to, amount, std::span<const keys::ExtendedPublicKey>(&customer_xpub, 1));
}

// Extended public keys embedded in a transaction's data outputs.
inline std::vector<keys::ExtendedPublicKey> embedded_xpubs(const Transaction& tx) {
  std::vector<keys::ExtendedPublicKey> out;
  for (const auto& o : tx.outputs) {
    auto* d = std::get_if<DataCarrier>(&o.script);
    if (!d || d->payload.size() != keys::kXpubEncodedSize) continue;
    try {
      out.push_back(keys::decode_xpub(d->payload));
    } catch (const Error&) {
    }
  }
  return out;
}

// One joint-refund output: locked to every customer key plus the refundee.
struct LockedRefund {
  std::vector<Point> customer_keys;
  Point refundee_key;
  Amount value = 0;

  MultisigScript script() const {
    MultisigScript s{customer_keys};
    s.keys.push_back(refundee_key);
    return s;
  }
};

// RefundTC1: one n-of-n script-hash output per refund, change to m1.
inline Transaction build_refund_tc1(std::span<const LockedRefund> refunds, std::span<const FundingInput> funding,
                                    const Point& merchant_key_m1) {
  if (refunds.empty()) throw Error(Errc::InvalidArgument, "no refunds");
  std::vector<TxOutput> outputs;
  for (const auto& r : refunds) {
    if (r.value <= 0) throw Error(Errc::InvalidArgument, "refund value must be positive");
    outputs.push_back(pay_to_script(r.script(), r.value));
  }
  return build_spend(funding, std::move(outputs), merchant_key_m1);
}

// A fallback output: a single key gives a P2PKH output; several keys give an
// n-of-n script-hash output (multi-signer value changes lock to everyone).
struct FallbackLock {
  std::vector<Point> keys;
  Amount value = 0;

  TxOutput output() const {
    if (keys.size() == 1) return pay_to_pubkey(keys.front(), value);
    return pay_to_script(MultisigScript{keys}, value);
  }
};

// RefundTC2: time-locked payment of the same total as the companion TC1.
inline Transaction build_refund_tc2(std::span<const FallbackLock> locks, std::span<const FundingInput> funding,
                                    const Point& merchant_key_m2, std::uint32_t lock_height,
                                    std::uint32_t current_height, Amount companion_tc1_total) {
  if (locks.empty()) throw Error(Errc::InvalidArgument, "no fallback outputs");
  if (lock_height <= current_height)
    throw Error(Errc::BadLockHeight, "lock height must exceed current height");
  std::vector<TxOutput> outputs;
  Amount sum = 0;
  for (const auto& l : locks) {
    if (l.value <= 0) throw Error(Errc::InvalidArgument, "fallback value must be positive");
    outputs.push_back(l.output());
    sum += l.value;
  }
  if (sum != companion_tc1_total) throw Error(Errc::ValueMismatch, "TC2 value differs from TC1 refund total");
  return build_spend(funding, std::move(outputs), merchant_key_m2, lock_height);
}

inline Transaction build_refund_tc2(const Point& masked_customer_key, Amount value,
                                    std::span<const FundingInput> funding, const Point& merchant_key_m2,
                                    std::uint32_t lock_height, std::uint32_t current_height,
                                    Amount companion_tc1_total) {
  FallbackLock lock{{masked_customer_key}, value};
  return build_refund_tc2(std::span<const FallbackLock>(&lock, 1), funding, merchant_key_m2, lock_height,
                          current_height, companion_tc1_total);
}

// Spends source.outputs[output_index] to a P2PKH output at `dest`. For a
// script-hash output the revealed script must be supplied and `signers` must
// hold a private key for every script key. The redeem inherits the source's
// lock height.
inline Transaction build_redeem(const Transaction& source, std::uint32_t output_index,
                                std::span<const Scalar> signers, const Point& dest,
                                const std::optional<MultisigScript>& reveal_script = std::nullopt) {
  const auto& g = Group::secp256k1();
  if (output_index >= source.outputs.size()) throw Error(Errc::ScriptMismatch, "no such output");
  const auto& out = source.outputs[output_index];

  std::vector<std::pair<Scalar, Point>> keyring;
  for (const auto& s : signers) keyring.emplace_back(s, g.mul_base(s));
  auto find_signer = [&](const Point& pub) -> const Scalar* {
    for (const auto& [priv, p] : keyring)
      if (p == pub) return &priv;
    return nullptr;
  };

  Transaction tx;
  tx.lock_height = source.lock_height;
  tx.inputs.push_back(TxInput{OutPoint{txid(source), output_index}, {}, std::nullopt});
  tx.outputs.push_back(pay_to_pubkey(dest, out.value));
  auto digest = signing_digest(tx);

  if (auto* p2pkh = std::get_if<PayToPubkeyHash>(&out.script)) {
    if (reveal_script) throw Error(Errc::ScriptMismatch, "p2pkh output takes no script");
    for (const auto& [priv, pub] : keyring) {
      if (pubkey_hash(pub) == p2pkh->pubkey_hash) {
        tx.inputs[0].witness = {WitnessItem{sig::sign(priv, digest), pub}};
        return tx;
      }
    }
    throw Error(Errc::MissingSigner, "no signer for pubkey hash");
  }
  if (auto* sh = std::get_if<ScriptHash>(&out.script)) {
    if (!reveal_script) throw Error(Errc::ScriptMismatch, "script-hash output needs the script");
    reveal_script->validate();
    if (reveal_script->hash() != sh->script_hash) throw Error(Errc::ScriptMismatch, "script hash mismatch");
    for (const auto& key : reveal_script->keys) {
      const Scalar* priv = find_signer(key);
      if (!priv) throw Error(Errc::MissingSigner, "missing signature for a script key");
      tx.inputs[0].witness.push_back(WitnessItem{sig::sign(*priv, digest), key});
    }
    tx.inputs[0].revealed_script = reveal_script;
    return tx;
  }
  throw Error(Errc::ScriptMismatch, "data-carrier output is unspendable");
}

// Short one-line description for transcripts and dumps.
inline std::string summarize(const Transaction& tx) {
  std::string s = "in=" + std::to_string(tx.inputs.size()) + " out=[";
  for (std::size_t i = 0; i < tx.outputs.size(); ++i) {
    const auto& o = tx.outputs[i];
    if (i) s += ",";
    if (is_p2pkh(o)) s += "p2pkh:";
    else if (is_script_hash(o)) s += "p2sh:";
    else s += "data:";
    s += std::to_string(o.value);
  }
  s += "]";
  if (tx.lock_height) s += " lock=" + std::to_string(tx.lock_height);
  return s;
}

}  // namespace refund::tx
