#pragma once

#include <deque>
#include <map>
#include <memory>

#include "refund/ledger.hpp"
#include "refund/record.hpp"
#include "refund/transcript.hpp"

namespace refund::proto {

using keys::ExtendedPublicKey;
using keys::KeyPair;
using ledger::SimLedger;
using tx::Transaction;
using tx::TxId;

// ---- wire helpers ------------------------------------------------------------

namespace detail {

inline void write_point(Writer& w, const Point& p) { w.raw(Group::secp256k1().encode(p).view()); }
inline Point read_point(Reader& r) { return Group::secp256k1().decode(r.raw(33)); }

}  // namespace detail

// Stand-in for X.509: merchant name -> identity key.
class MerchantRegistry {
 public:
  void enroll(const std::string& name, const Point& identity) { keys_[name] = identity; }
  std::optional<Point> lookup(const std::string& name) const {
    auto it = keys_.find(name);
    if (it == keys_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::map<std::string, Point> keys_;
};

// ---- messages ------------------------------------------------------------------

struct PaymentRequest {
  std::string merchant_name;
  Point merchant_pubkey;  // fresh per request; also the DH key for sealing
  Point payment_address;
  Amount amount = 0;
  std::uint32_t created_at = 0;
  std::uint32_t expires_at = 0;
  std::string memo;
  Bytes merchant_data;
  sig::Signature signature;

  void write_unsigned(Writer& w) const {
    w.str(merchant_name);
    detail::write_point(w, merchant_pubkey);
    detail::write_point(w, payment_address);
    w.i64(amount);
    w.u32(created_at);
    w.u32(expires_at);
    w.str(memo);
    w.var_bytes(merchant_data);
  }

  Hash32 digest() const {
    Writer w;
    write_unsigned(w);
    return sha256(w.bytes());
  }

  void write(Writer& w) const {
    write_unsigned(w);
    w.raw(signature.view());
  }

  static PaymentRequest read(Reader& r) {
    PaymentRequest q;
    q.merchant_name = r.str();
    q.merchant_pubkey = detail::read_point(r);
    q.payment_address = detail::read_point(r);
    q.amount = r.i64();
    q.created_at = r.u32();
    q.expires_at = r.u32();
    q.memo = r.str();
    q.merchant_data = r.var_bytes();
    q.signature = r.fixed<64>();
    return q;
  }

  bool operator==(const PaymentRequest&) const = default;
};

using RefundeeKey = std::variant<Point, ExtendedPublicKey>;

struct RefundEntry {
  std::optional<Point> cosigner_pubkey;
  RefundeeKey refundee;
  Amount value = 0;

  Point refundee_point() const {
    if (auto* p = std::get_if<Point>(&refundee)) return *p;
    return std::get<ExtendedPublicKey>(refundee).pubkey;
  }

  void write(Writer& w) const {
    w.u8(cosigner_pubkey ? 1 : 0);
    if (cosigner_pubkey) detail::write_point(w, *cosigner_pubkey);
    if (auto* p = std::get_if<Point>(&refundee)) {
      w.u8(0);
      detail::write_point(w, *p);
    } else {
      w.u8(1);
      w.raw(keys::encode_xpub(std::get<ExtendedPublicKey>(refundee)));
    }
    w.i64(value);
  }

  static RefundEntry read(Reader& r) {
    RefundEntry e;
    auto flags = r.u8();
    if (flags > 1) throw Error(Errc::InvalidEncoding, "bad refund entry flags");
    if (flags) e.cosigner_pubkey = detail::read_point(r);
    auto kind = r.u8();
    if (kind == 0) e.refundee = detail::read_point(r);
    else if (kind == 1) e.refundee = keys::decode_xpub(r.raw(keys::kXpubEncodedSize));
    else throw Error(Errc::InvalidEncoding, "bad refundee kind");
    e.value = r.i64();
    return e;
  }

  bool operator==(const RefundEntry&) const = default;
};

inline void write_entries(Writer& w, const std::vector<RefundEntry>& entries) {
  w.varint(entries.size());
  for (const auto& e : entries) e.write(w);
}

inline std::vector<RefundEntry> read_entries(Reader& r) {
  auto n = r.varint();
  if (n > 1000) throw Error(Errc::InvalidEncoding, "too many refund entries");
  std::vector<RefundEntry> out;
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(RefundEntry::read(r));
  return out;
}

inline Amount total_value(const std::vector<RefundEntry>& entries) {
  Amount s = 0;
  for (const auto& e : entries) s += e.value;
  return s;
}

// refund_to encrypted for the merchant under dh_shared(sender, merchant_pubkey).
struct SealedRefundTo {
  Point sender_pubkey;
  Bytes ciphertext;

  bool operator==(const SealedRefundTo&) const = default;
};

using RefundTo = std::variant<std::vector<RefundEntry>, SealedRefundTo>;

inline Bytes refund_nonce(ByteView merchant_data) {
  auto h = sha256(merchant_data);
  return Bytes(h.data.begin(), h.data.begin() + 12);
}

inline SealedRefundTo seal_refund_to(const std::vector<RefundEntry>& entries, const Scalar& sender_priv,
                                     const Point& merchant_pubkey, ByteView merchant_data) {
  Writer w;
  write_entries(w, entries);
  auto key = keys::dh_shared(sender_priv, merchant_pubkey);
  return {Group::secp256k1().mul_base(sender_priv), aead_seal(key, refund_nonce(merchant_data), w.bytes())};
}

inline std::vector<RefundEntry> open_refund_to(const SealedRefundTo& sealed, const Scalar& merchant_priv,
                                               ByteView merchant_data) {
  auto key = keys::dh_shared(merchant_priv, sealed.sender_pubkey);
  auto plain = aead_open(key, refund_nonce(merchant_data), sealed.ciphertext);
  if (!plain) throw Error(Errc::UndecryptableRefundTo, "refund_to does not decrypt");
  try {
    Reader r(*plain);
    auto entries = read_entries(r);
    r.expect_done();
    return entries;
  } catch (const Error&) {
    throw Error(Errc::UndecryptableRefundTo, "refund_to plaintext is malformed");
  }
}

struct PaymentMsg {
  Bytes merchant_data;
  std::vector<Transaction> transactions;
  RefundTo refund_to;
  std::string memo;

  void write(Writer& w) const {
    w.var_bytes(merchant_data);
    w.varint(transactions.size());
    for (const auto& t : transactions) tx::detail::write_tx(w, t, true);
    if (auto* plain = std::get_if<std::vector<RefundEntry>>(&refund_to)) {
      w.u8(0);
      write_entries(w, *plain);
    } else {
      const auto& s = std::get<SealedRefundTo>(refund_to);
      w.u8(1);
      detail::write_point(w, s.sender_pubkey);
      w.var_bytes(s.ciphertext);
    }
    w.str(memo);
  }

  static PaymentMsg read(Reader& r) {
    PaymentMsg m;
    m.merchant_data = r.var_bytes();
    auto n = r.varint();
    if (n > 16) throw Error(Errc::InvalidEncoding, "too many transactions");
    for (std::uint64_t i = 0; i < n; ++i) m.transactions.push_back(tx::read_tx(r));
    auto kind = r.u8();
    if (kind == 0) {
      m.refund_to = read_entries(r);
    } else if (kind == 1) {
      SealedRefundTo s;
      s.sender_pubkey = detail::read_point(r);
      s.ciphertext = r.var_bytes();
      m.refund_to = std::move(s);
    } else {
      throw Error(Errc::InvalidEncoding, "bad refund_to kind");
    }
    m.memo = r.str();
    return m;
  }

  Hash32 hash() const {
    Writer w;
    write(w);
    return sha256(w.bytes());
  }

  bool operator==(const PaymentMsg&) const = default;
};

struct PaymentAck {
  PaymentMsg payment_copy;
  std::string memo;
  sig::Signature signature;

  Hash32 digest() const {
    Writer w;
    w.raw(payment_copy.hash().view());
    w.str(memo);
    return sha256(w.bytes());
  }

  void write(Writer& w) const {
    payment_copy.write(w);
    w.str(memo);
    w.raw(signature.view());
  }

  static PaymentAck read(Reader& r) {
    PaymentAck a;
    a.payment_copy = PaymentMsg::read(r);
    a.memo = r.str();
    a.signature = r.fixed<64>();
    return a;
  }

  bool operator==(const PaymentAck&) const = default;
};

enum class UpdateChannel : std::uint8_t { Authenticated = 0, Email = 1 };

// A request to replace the refund entries of a session. Email updates carry
// no authentication at all.
struct RefundAddressUpdate {
  Bytes merchant_data;
  std::vector<RefundEntry> new_entries;
  UpdateChannel channel = UpdateChannel::Email;
  std::optional<tx::WitnessItem> auth;  // signer key + signature, Authenticated only

  Hash32 digest() const {
    Writer w;
    w.var_bytes(merchant_data);
    write_entries(w, new_entries);
    w.u8(static_cast<std::uint8_t>(channel));
    return sha256(w.bytes());
  }

  void write(Writer& w) const {
    w.var_bytes(merchant_data);
    write_entries(w, new_entries);
    w.u8(static_cast<std::uint8_t>(channel));
    w.u8(auth ? 1 : 0);
    if (auth) {
      w.raw(auth->signature.view());
      detail::write_point(w, auth->pubkey);
    }
  }

  static RefundAddressUpdate read(Reader& r) {
    RefundAddressUpdate u;
    u.merchant_data = r.var_bytes();
    u.new_entries = read_entries(r);
    auto ch = r.u8();
    if (ch > 1) throw Error(Errc::InvalidEncoding, "bad channel");
    u.channel = static_cast<UpdateChannel>(ch);
    auto has_auth = r.u8();
    if (has_auth > 1) throw Error(Errc::InvalidEncoding, "bad auth flag");
    if (has_auth) {
      tx::WitnessItem a;
      a.signature = r.fixed<64>();
      a.pubkey = detail::read_point(r);
      u.auth = a;
    }
    return u;
  }

  bool operator==(const RefundAddressUpdate&) const = default;
};

using Message = std::variant<PaymentRequest, PaymentMsg, PaymentAck, RefundAddressUpdate>;

// Envelope: type u8 | body length u32 | body.
inline Bytes to_wire(const Message& m) {
  Writer body;
  std::visit([&](const auto& msg) { msg.write(body); }, m);
  Writer w;
  w.u8(static_cast<std::uint8_t>(m.index() + 1));
  w.u32(static_cast<std::uint32_t>(body.bytes().size()));
  w.raw(body.bytes());
  return w.bytes();
}

inline Message from_wire(ByteView v) {
  Reader r(v);
  auto type = r.u8();
  auto len = r.u32();
  Reader body(r.raw(len));
  r.expect_done();
  Message m;
  switch (type) {
    case 1: m = PaymentRequest::read(body); break;
    case 2: m = PaymentMsg::read(body); break;
    case 3: m = PaymentAck::read(body); break;
    case 4: m = RefundAddressUpdate::read(body); break;
    default: throw Error(Errc::InvalidEncoding, "unknown message type");
  }
  body.expect_done();
  return m;
}

// Structured-text rendering for logs.
inline std::string render(const Message& m) {
  auto entries_text = [](const std::vector<RefundEntry>& es) {
    std::string s = "[";
    for (std::size_t i = 0; i < es.size(); ++i) {
      if (i) s += ",";
      s += short_hex(Group::secp256k1().encode(es[i].refundee_point()).view()) + ":" + std::to_string(es[i].value);
    }
    return s + "]";
  };
  struct Visitor {
    decltype(entries_text)& entries;
    std::string operator()(const PaymentRequest& q) const {
      return "PaymentRequest{merchant=" + q.merchant_name + " amount=" + std::to_string(q.amount) +
             " created=" + std::to_string(q.created_at) + " expires=" + std::to_string(q.expires_at) +
             " data=" + short_hex(q.merchant_data) + "}";
    }
    std::string operator()(const PaymentMsg& p) const {
      std::string rt = std::holds_alternative<SealedRefundTo>(p.refund_to)
                           ? "sealed"
                           : entries(std::get<std::vector<RefundEntry>>(p.refund_to));
      return "Payment{data=" + short_hex(p.merchant_data) + " txs=" + std::to_string(p.transactions.size()) +
             " refund_to=" + rt + "}";
    }
    std::string operator()(const PaymentAck& a) const {
      return "PaymentAck{payment=" + short_hex(a.payment_copy.hash().view()) + " memo=" + a.memo + "}";
    }
    std::string operator()(const RefundAddressUpdate& u) const {
      return std::string("RefundAddressUpdate{data=") + short_hex(u.merchant_data) +
             (u.channel == UpdateChannel::Email ? " channel=email" : " channel=authenticated") +
             " entries=" + entries(u.new_entries) + "}";
    }
  };
  return std::visit(Visitor{entries_text}, m);
}

// A one-way message queue carrying wire bytes.
class MessageQueue {
 public:
  void send(const Message& m) { q_.push_back(to_wire(m)); }
  std::optional<Message> receive() {
    if (q_.empty()) return std::nullopt;
    auto b = std::move(q_.front());
    q_.pop_front();
    return from_wire(b);
  }
  std::size_t size() const { return q_.size(); }

 private:
  std::deque<Bytes> q_;
};

// ---- merchant ------------------------------------------------------------------

// Deterministic wallet with 2^k keys: key i = keygen(master || be32(i)).
class DeterministicWallet {
 public:
  DeterministicWallet(Bytes master, unsigned k_bits) : master_(std::move(master)), k_bits_(k_bits) {
    if (k_bits_ == 0 || k_bits_ > 20) throw Error(Errc::ConfigError, "wallet size out of range");
  }

  std::uint32_t capacity() const { return 1u << k_bits_; }
  unsigned k_bits() const { return k_bits_; }
  std::uint32_t used() const { return next_; }

  KeyPair key(std::uint32_t i) const {
    if (i >= capacity()) throw Error(Errc::IndexOutOfRange, "wallet index beyond capacity");
    if (auto it = cache_.find(i); it != cache_.end()) return it->second;
    Bytes seed = master_;
    for (int s = 24; s >= 0; s -= 8) seed.push_back(static_cast<std::uint8_t>(i >> s));
    auto kp = keys::keygen(ByteView(seed));
    cache_.emplace(i, kp);
    return kp;
  }

  std::pair<std::uint32_t, KeyPair> next() {
    if (next_ >= capacity()) throw Error(Errc::ConfigError, "wallet exhausted");
    auto i = next_++;
    return {i, key(i)};
  }

 private:
  Bytes master_;
  unsigned k_bits_;
  std::uint32_t next_ = 0;
  mutable std::map<std::uint32_t, KeyPair> cache_;
};

enum class SessionState { Created, Paid, Refundable, RefundIssued, Redeemed, Expired };

inline std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::Created: return "Created";
    case SessionState::Paid: return "Paid";
    case SessionState::Refundable: return "Refundable";
    case SessionState::RefundIssued: return "RefundIssued";
    case SessionState::Redeemed: return "Redeemed";
    case SessionState::Expired: return "Expired";
  }
  return "?";
}

struct MerchantConfig {
  std::uint32_t lock_blocks = ledger::kOneWeekBlocks;
  std::uint32_t window_blocks = ledger::kTwoMonthsBlocks;
  std::uint32_t request_ttl = 144;
  unsigned wallet_bits = 8;
  bool defense = true;
};

// Everything the merchant knows about an issued refund.
struct IssuedRefund {
  bool vanilla = false;
  std::uint32_t m1_index = 0;
  std::uint32_t m2_index = 0;
  KeyPair m1;
  KeyPair m2;
  Transaction tc1;  // vanilla: the direct refund payment
  Transaction tc2;  // vanilla: empty
  std::vector<tx::LockedRefund> locks;      // TC1 output i <-> entry i
  std::vector<tx::FallbackLock> fallbacks;  // TC2 outputs in order
  std::vector<std::uint32_t> child_indexes; // per entry
  std::uint32_t fallback_index = 0;
  std::uint32_t lock_height = 0;
};

struct Session {
  Bytes merchant_data;
  PaymentRequest request;
  std::uint32_t payment_key_index = 0;
  SessionState state = SessionState::Created;
  std::uint32_t window_end = 0;
  std::optional<Transaction> main_tc;
  TxId main_txid;
  std::vector<ExtendedPublicKey> xpubs;  // one per payer, in output order
  std::vector<RefundEntry> entries;
  bool updated_by_email = false;
  bool values_changed = false;
  std::optional<IssuedRefund> refund;
  RefundRecord record;
};

class Merchant {
 public:
  Merchant(std::string name, std::string_view seed, SimLedger& ledger, MerchantRegistry& registry,
           MerchantConfig cfg = {}, Transcript* log = nullptr, KeyLog* keylog = nullptr)
      : name_(std::move(name)),
        identity_(keys::keygen("identity:" + std::string(seed))),
        wallet_(to_bytes("wallet:" + std::string(seed)), cfg.wallet_bits),
        ledger_(ledger),
        cfg_(cfg),
        log_(log),
        keylog_(keylog) {
    registry.enroll(name_, identity_.pub);
  }

  const std::string& name() const { return name_; }
  const MerchantConfig& config() const { return cfg_; }
  DeterministicWallet& wallet() { return wallet_; }
  const DeterministicWallet& wallet() const { return wallet_; }
  RefundDatabase& database() { return db_; }
  const RefundDatabase& database() const { return db_; }
  void attach_database(std::filesystem::path p) {
    db_ = RefundDatabase(std::move(p));
    std::vector<RefundRecord> rows;
    for (const auto& [k, s] : sessions_)
      if (s.refund && !s.refund->vanilla) rows.push_back(s.record);
    db_.replace(std::move(rows));
  }

  PaymentRequest create_request(Amount price, std::string memo = {}) {
    if (price <= 0) throw Error(Errc::InvalidArgument, "price must be positive");
    auto [idx, key] = wallet_.next();
    claim(key.pub, "payment");
    PaymentRequest q;
    q.merchant_name = name_;
    q.merchant_pubkey = key.pub;
    q.payment_address = key.pub;
    q.amount = price;
    q.created_at = ledger_.height();
    q.expires_at = ledger_.height() + cfg_.request_ttl;
    q.memo = std::move(memo);
    auto id = sha256(name_ + ":" + std::to_string(idx));
    q.merchant_data = Bytes(id.data.begin(), id.data.begin() + 16);
    q.signature = sig::sign(identity_.priv, q.digest());
    Session s;
    s.merchant_data = q.merchant_data;
    s.request = q;
    s.payment_key_index = idx;
    s.window_end = q.created_at + cfg_.window_blocks;
    sessions_.emplace(q.merchant_data, std::move(s));
    note("request", "data=" + short_hex(q.merchant_data) + " amount=" + std::to_string(price));
    return q;
  }

  PaymentAck process_payment(const PaymentMsg& msg) {
    auto& s = session_mut(msg.merchant_data);
    refresh(s);
    if (s.state != SessionState::Created) throw Error(Errc::InvalidState, "session already " + std::string(to_string(s.state)));
    if (msg.transactions.size() != 1) throw Error(Errc::BadTransaction, "expected exactly one transaction");
    const auto& main_tc = msg.transactions.front();

    Amount paid = 0;
    for (const auto& o : main_tc.outputs)
      if (tx::pays_to(o, s.request.payment_address)) paid += o.value;
    if (paid != s.request.amount) throw Error(Errc::AmountMismatch, "MainTC pays " + std::to_string(paid));

    auto xpubs = tx::embedded_xpubs(main_tc);
    if (xpubs.empty()) throw Error(Errc::BadTransaction, "no extended public key in MainTC");
    if (xpubs.size() + 1 > tx::kMaxMultisigKeys) throw Error(Errc::BadTransaction, "too many co-signers");

    std::vector<RefundEntry> entries;
    if (auto* plain = std::get_if<std::vector<RefundEntry>>(&msg.refund_to)) {
      entries = *plain;
    } else {
      auto key = wallet_.key(s.payment_key_index);
      entries = open_refund_to(std::get<SealedRefundTo>(msg.refund_to), key.priv, msg.merchant_data);
    }
    check_entries(entries, xpubs, main_tc, s.request.amount);

    auto verdict = ledger_.broadcast(main_tc);
    if (!verdict.accepted() && verdict.status != ledger::BroadcastStatus::Held)
      throw Error(Errc::BadTransaction, "MainTC rejected: " + std::string(tx::to_string(verdict.verdict.reason)));

    s.main_tc = main_tc;
    s.main_txid = tx::txid(main_tc);
    s.xpubs = std::move(xpubs);
    s.entries = std::move(entries);
    s.state = SessionState::Paid;
    for (const auto& x : s.xpubs) claim(x.pubkey, "customer-parent");
    note("payment-accepted", "main=" + short_hex(s.main_txid.view()) + " entries=" + std::to_string(s.entries.size()));

    PaymentAck ack;
    ack.payment_copy = msg;
    ack.memo = "thank you";
    ack.signature = sig::sign(identity_.priv, ack.digest());
    return ack;
  }

  // Returns false when an Authenticated update fails its signature check.
  bool update_refund_addresses(const RefundAddressUpdate& upd) {
    auto& s = session_mut(upd.merchant_data);
    refresh(s);
    if (s.state == SessionState::Expired || ledger_.height() > s.window_end)
      throw Error(Errc::WindowExpired, "refund window closed");
    if (s.state != SessionState::Refundable && s.state != SessionState::Paid)
      throw Error(Errc::InvalidState, "session is " + std::string(to_string(s.state)));
    if (upd.channel == UpdateChannel::Authenticated) {
      if (!upd.auth || !signer_of(*s.main_tc, upd.auth->pubkey) ||
          !sig::verify(upd.auth->pubkey, upd.digest(), upd.auth->signature))
        return false;
    }
    try {
      check_entries(upd.new_entries, s.xpubs, *s.main_tc, s.request.amount);
    } catch (const Error&) {
      return false;
    }
    if (upd.channel == UpdateChannel::Email) {
      s.updated_by_email = true;
      bool same_values = upd.new_entries.size() == s.entries.size();
      for (std::size_t i = 0; same_values && i < upd.new_entries.size(); ++i)
        same_values = upd.new_entries[i].value == s.entries[i].value;
      if (!same_values) s.values_changed = true;
    }
    s.entries = upd.new_entries;
    note("refund-addresses-updated",
         std::string(upd.channel == UpdateChannel::Email ? "channel=email" : "channel=authenticated") +
             " data=" + short_hex(upd.merchant_data));
    return true;
  }

  // Issues the refund for a session: TC1 + time-locked TC2 with the defense,
  // or a direct payment to the refund addresses without it.
  const IssuedRefund& issue_refund(ByteView merchant_data) {
    auto& s = session_mut(merchant_data);
    refresh(s);
    if (s.state == SessionState::Expired) throw Error(Errc::WindowExpired, "refund window closed");
    if (s.state != SessionState::Refundable) throw Error(Errc::InvalidState, "session is " + std::string(to_string(s.state)));
    if (s.entries.empty()) throw Error(Errc::InvalidState, "no refund entries");
    return cfg_.defense ? issue_defended(s) : issue_vanilla(s);
  }

  // Hands a refundable session to another payout path (the mixer); the
  // session is marked issued so it cannot be refunded twice.
  const Session& begin_external_refund(ByteView merchant_data) {
    auto& s = session_mut(merchant_data);
    refresh(s);
    if (s.state == SessionState::Expired) throw Error(Errc::WindowExpired, "refund window closed");
    if (s.state != SessionState::Refundable) throw Error(Errc::InvalidState, "session is " + std::string(to_string(s.state)));
    if (s.entries.empty()) throw Error(Errc::InvalidState, "no refund entries");
    s.state = SessionState::RefundIssued;
    note("refund-handed-to-mixer", "data=" + short_hex(s.merchant_data));
    return s;
  }

  void claim_key(const Point& p, const std::string& role) { claim(p, role); }

  // Watches issued refunds and fills the redeem slot with the earliest
  // confirmed spend of a TC1 refund output or a TC2 output.
  void monitor() {
    for (auto& [k, s] : sessions_) {
      refresh(s);
      if (!s.refund || s.refund->vanilla || s.record.redeemed()) continue;
      std::optional<std::pair<std::pair<std::uint32_t, std::uint32_t>, TxId>> best;
      auto consider = [&](const Transaction& t, bool only_script) {
        auto id = tx::txid(t);
        if (!ledger_.find(id)) return;
        for (std::uint32_t i = 0; i < t.outputs.size(); ++i) {
          if (only_script && !tx::is_script_hash(t.outputs[i])) continue;
          if (!only_script && tx::is_p2pkh(t.outputs[i]) && tx::pays_to(t.outputs[i], s.refund->m2.pub)) continue;
          auto st = ledger_.is_spent(tx::OutPoint{id, i});
          if (!st.spent) continue;
          const auto* c = ledger_.find(*st.spender);
          std::pair<std::uint32_t, std::uint32_t> at{c->height, c->position};
          if (!best || at < best->first) best = {{at, *st.spender}};
        }
      };
      consider(s.refund->tc1, true);
      consider(s.refund->tc2, false);
      if (best) {
        s.record.redeem_txid = best->second;
        s.state = SessionState::Redeemed;
        db_.upsert(s.record);
        note("refund-redeemed", "main=" + short_hex(s.main_txid.view()) + " redeem=" + short_hex(best->second.view()));
      }
    }
  }

  const Session& session(ByteView merchant_data) const {
    auto it = sessions_.find(Bytes(merchant_data.begin(), merchant_data.end()));
    if (it == sessions_.end()) throw Error(Errc::UnknownSession, "unknown session");
    return it->second;
  }

  SessionState state(ByteView merchant_data) {
    auto& s = session_mut(merchant_data);
    refresh(s);
    return s.state;
  }

  const std::map<Bytes, Session>& sessions() const { return sessions_; }

 private:
  Session& session_mut(ByteView merchant_data) {
    auto it = sessions_.find(Bytes(merchant_data.begin(), merchant_data.end()));
    if (it == sessions_.end()) throw Error(Errc::UnknownSession, "unknown session");
    return it->second;
  }

  void refresh(Session& s) {
    const bool open = s.state == SessionState::Created || s.state == SessionState::Paid ||
                      s.state == SessionState::Refundable;
    if (open && ledger_.height() > s.window_end) {
      s.state = SessionState::Expired;
      return;
    }
    if (s.state == SessionState::Paid && ledger_.find(s.main_txid)) s.state = SessionState::Refundable;
  }

  static bool signer_of(const Transaction& t, const Point& pub) {
    for (const auto& in : t.inputs)
      for (const auto& w : in.witness)
        if (w.pubkey == pub) return true;
    return false;
  }

  static void check_entries(const std::vector<RefundEntry>& entries, const std::vector<ExtendedPublicKey>& xpubs,
                            const Transaction& main_tc, Amount amount) {
    Amount sum = 0;
    for (const auto& e : entries) {
      if (e.value <= 0) throw Error(Errc::AmountMismatch, "refund value must be positive");
      sum += e.value;
      if (!e.cosigner_pubkey) continue;
      bool known = std::any_of(xpubs.begin(), xpubs.end(), [&](const auto& x) { return x.pubkey == *e.cosigner_pubkey; });
      if (!known || !signer_of(main_tc, *e.cosigner_pubkey))
        throw Error(Errc::BadTransaction, "refund entry bound to a key that did not sign MainTC");
    }
    if (sum > amount) throw Error(Errc::AmountMismatch, "refunds exceed the amount paid");
  }

  std::vector<tx::FundingInput> funding_for(const KeyPair& k) const {
    std::vector<tx::FundingInput> out;
    for (const auto& [op, o] : ledger_.utxos_for(k.pub)) out.push_back({op, o.value, k.priv});
    return out;
  }

  const IssuedRefund& issue_defended(Session& s) {
    const auto n = static_cast<std::uint32_t>(s.entries.size());
    const bool multi = s.xpubs.size() > 1;
    IssuedRefund r;
    std::tie(r.m1_index, r.m1) = wallet_.next();
    std::tie(r.m2_index, r.m2) = wallet_.next();
    const std::string tag = "/" + short_hex(s.merchant_data);
    claim(r.m1.pub, "m1" + tag);
    claim(r.m2.pub, "m2" + tag);

    auto masked = [&](const ExtendedPublicKey& x, std::uint32_t index, const Scalar& m) {
      auto p = keys::mask_child(keys::derive_child_public(x, index), m, index).masked_point;
      claim(p, "masked-customer" + tag);
      return p;
    };
    auto cosigner = [&](const RefundEntry& e) -> const ExtendedPublicKey* {
      if (!multi || s.values_changed || !e.cosigner_pubkey) return nullptr;
      for (const auto& x : s.xpubs)
        if (x.pubkey == *e.cosigner_pubkey) return &x;
      return nullptr;
    };

    Amount total = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto& e = s.entries[i];
      tx::LockedRefund lock;
      if (!multi) {
        lock.customer_keys = {masked(s.xpubs.front(), i, r.m1.priv)};
      } else if (const auto* x = cosigner(e)) {
        lock.customer_keys = {masked(*x, i, r.m1.priv)};
      } else {
        for (const auto& x : s.xpubs) lock.customer_keys.push_back(masked(x, i, r.m1.priv));
      }
      lock.refundee_key = e.refundee_point();
      lock.value = e.value;
      total += e.value;
      r.locks.push_back(std::move(lock));
      r.child_indexes.push_back(i);
    }
    r.fallback_index = n;

    if (!multi) {
      r.fallbacks.push_back({{masked(s.xpubs.front(), n, r.m2.priv)}, total});
    } else {
      std::map<std::size_t, Amount> bound;
      Amount unbound = 0;
      for (const auto& e : s.entries) {
        if (const auto* x = cosigner(e)) bound[static_cast<std::size_t>(x - s.xpubs.data())] += e.value;
        else unbound += e.value;
      }
      for (const auto& [j, v] : bound) r.fallbacks.push_back({{masked(s.xpubs[j], n, r.m2.priv)}, v});
      if (unbound > 0) {
        tx::FallbackLock all;
        for (const auto& x : s.xpubs) all.keys.push_back(masked(x, n, r.m2.priv));
        all.value = unbound;
        r.fallbacks.push_back(std::move(all));
      }
    }

    const auto h = ledger_.height();
    r.lock_height = h + cfg_.lock_blocks;
    auto f1 = funding_for(r.m1);
    auto f2 = funding_for(r.m2);
    r.tc1 = tx::build_refund_tc1(r.locks, f1, r.m1.pub);
    r.tc2 = tx::build_refund_tc2(r.fallbacks, f2, r.m2.pub, r.lock_height, h, total);
    broadcast_or_throw(r.tc1);
    broadcast_or_throw(r.tc2);

    s.record = RefundRecord{s.main_txid, tx::txid(r.tc1), tx::txid(r.tc2), {}};
    db_.upsert(s.record);
    s.state = SessionState::RefundIssued;
    note("refund-issued", "main=" + short_hex(s.main_txid.view()) + " tc1=" + short_hex(s.record.tc1_txid.view()) +
                              " tc2=" + short_hex(s.record.tc2_txid.view()) + " lock=" + std::to_string(r.lock_height));
    s.refund = std::move(r);
    return *s.refund;
  }

  // Plain payment protocol: pay whatever the latest refund_to names.
  const IssuedRefund& issue_vanilla(Session& s) {
    IssuedRefund r;
    r.vanilla = true;
    std::tie(r.m1_index, r.m1) = wallet_.next();
    claim(r.m1.pub, "refund-sender/" + short_hex(s.merchant_data));
    std::vector<tx::TxOutput> outs;
    for (const auto& e : s.entries) outs.push_back(tx::pay_to_pubkey(e.refundee_point(), e.value));
    auto f = funding_for(r.m1);
    r.tc1 = tx::build_spend(f, std::move(outs), r.m1.pub);
    broadcast_or_throw(r.tc1);
    s.record = RefundRecord{s.main_txid, tx::txid(r.tc1), {}, {}};
    s.state = SessionState::RefundIssued;
    note("refund-paid-directly", "main=" + short_hex(s.main_txid.view()) + " tx=" + short_hex(s.record.tc1_txid.view()));
    s.refund = std::move(r);
    return *s.refund;
  }

  void broadcast_or_throw(const Transaction& t) {
    auto res = ledger_.broadcast(t);
    if (res.status == ledger::BroadcastStatus::Rejected)
      throw Error(Errc::BadTransaction, "broadcast rejected: " + std::string(tx::to_string(res.verdict.reason)));
  }

  void claim(const Point& p, const std::string& role) {
    if (keylog_) keylog_->claim(p, role);
  }

  void note(std::string_view event, const std::string& detail) {
    if (log_) log_->log(name_, ledger_.height(), event, detail);
  }

  std::string name_;
  KeyPair identity_;
  DeterministicWallet wallet_;
  SimLedger& ledger_;
  MerchantConfig cfg_;
  Transcript* log_;
  KeyLog* keylog_;
  RefundDatabase db_;
  std::map<Bytes, Session> sessions_;
};

// Seeds the first `count` wallet keys with `value` each in one mint.
inline Transaction fund_merchant(SimLedger& ledger, const Merchant& m, std::uint32_t count, Amount value) {
  std::vector<tx::TxOutput> outs;
  for (std::uint32_t i = 0; i < count; ++i) outs.push_back(tx::pay_to_pubkey(m.wallet().key(i).pub, value));
  return ledger.mint(std::move(outs));
}

// ---- customer ------------------------------------------------------------------

// A customer wallet: one parent key that holds funds and doubles as the
// root of the non-hardened tree whose extended public key goes into MainTC.
class Customer {
 public:
  Customer(std::string name, std::string_view seed, SimLedger& ledger, Transcript* log = nullptr)
      : name_(std::move(name)),
        parent_(keys::keygen("customer:" + std::string(seed))),
        xpub_{parent_.pub, sha256("chain:" + std::string(seed))},
        ledger_(ledger),
        log_(log) {}

  const std::string& name() const { return name_; }
  const KeyPair& wallet_key() const { return parent_; }
  const ExtendedPublicKey& xpub() const { return xpub_; }
  Amount balance() const { return ledger_.balance_of(parent_.pub); }

  void verify_request(const PaymentRequest& q, const MerchantRegistry& registry) const {
    auto identity = registry.lookup(q.merchant_name);
    if (!identity || !sig::verify(*identity, q.digest(), q.signature))
      throw Error(Errc::RequestBadSignature, "payment request signature does not verify");
    if (q.expires_at <= q.created_at || ledger_.height() > q.expires_at)
      throw Error(Errc::RequestExpired, "payment request expired");
  }

  bool verify_ack(const PaymentAck& ack, const PaymentMsg& sent, const PaymentRequest& q,
                  const MerchantRegistry& registry) const {
    auto identity = registry.lookup(q.merchant_name);
    return identity && ack.payment_copy.hash() == sent.hash() && sig::verify(*identity, ack.digest(), ack.signature);
  }

  std::vector<tx::FundingInput> funding() const {
    std::vector<tx::FundingInput> out;
    for (const auto& [op, o] : ledger_.utxos_for(parent_.pub)) out.push_back({op, o.value, parent_.priv});
    return out;
  }

  PaymentMsg pay(const PaymentRequest& q, const MerchantRegistry& registry, std::vector<RefundEntry> refund_plan,
                 bool encrypt) const {
    verify_request(q, registry);
    if (total_value(refund_plan) > q.amount) throw Error(Errc::AmountMismatch, "refunds exceed the payment");
    auto f = funding();
    if (tx::total(f) < q.amount) throw Error(Errc::InsufficientFunds, "wallet cannot cover the payment");
    PaymentMsg m;
    m.merchant_data = q.merchant_data;
    m.transactions.push_back(tx::build_main_tc(f, q.payment_address, q.amount, xpub_));
    if (encrypt) m.refund_to = seal_refund_to(refund_plan, parent_.priv, q.merchant_pubkey, q.merchant_data);
    else m.refund_to = std::move(refund_plan);
    if (log_) log_->log(name_, ledger_.height(), "pay", "amount=" + std::to_string(q.amount));
    return m;
  }

  // Private key for the masked child at `index` given the merchant's masking key.
  Scalar masked_child_private(std::uint32_t index, const Point& merchant_pub) const {
    return keys::unmask_child_private(keys::derive_child_private(parent_.priv, xpub_, index), merchant_pub);
  }

  // The merchant's masking key is the key that signed the refund transaction.
  static Point masking_key_of(const Transaction& refund_tx) {
    if (refund_tx.inputs.empty() || refund_tx.inputs.front().witness.empty())
      throw Error(Errc::BadTransaction, "refund transaction is unsigned");
    return refund_tx.inputs.front().witness.front().pubkey;
  }

  RefundAddressUpdate signed_update(ByteView merchant_data, std::vector<RefundEntry> entries) const {
    RefundAddressUpdate u;
    u.merchant_data = Bytes(merchant_data.begin(), merchant_data.end());
    u.new_entries = std::move(entries);
    u.channel = UpdateChannel::Authenticated;
    u.auth = tx::WitnessItem{sig::sign(parent_.priv, u.digest()), parent_.pub};
    return u;
  }

  // Joint redemption of TC1 output `output` (a 2-of-2 with the refundee).
  Transaction redeem_joint(const Transaction& tc1, std::uint32_t output, std::uint32_t child_index,
                           const Scalar& refundee_priv, const Point& dest) const {
    const auto& g = Group::secp256k1();
    auto mine = masked_child_private(child_index, masking_key_of(tc1));
    tx::MultisigScript script{{g.mul_base(mine), g.mul_base(refundee_priv)}};
    std::vector<Scalar> signers{mine, refundee_priv};
    return tx::build_redeem(tc1, output, signers, dest, script);
  }

  // Fallback redemption of a P2PKH TC2 output after its lock height.
  Transaction redeem_fallback(const Transaction& tc2, std::uint32_t output, std::uint32_t child_index,
                              const Point& dest) const {
    std::vector<Scalar> signer{masked_child_private(child_index, masking_key_of(tc2))};
    return tx::build_redeem(tc2, output, signer, dest);
  }

 private:
  std::string name_;
  KeyPair parent_;
  ExtendedPublicKey xpub_;
  SimLedger& ledger_;
  Transcript* log_;
};

}  // namespace refund::proto
