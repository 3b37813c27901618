#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>

#include "refund/mixer.hpp"
#include "refund/recovery.hpp"

namespace refund::scenario {

using namespace refund::proto;
using ledger::BroadcastStatus;

// ---- names and configuration ----------------------------------------------------

enum class Kind { HonestRefund, Silkroad, Marketplace, MultiSigner, Recovery, Mixer, Aggregate };

inline constexpr std::array kAllKinds{Kind::HonestRefund, Kind::Silkroad, Kind::Marketplace, Kind::MultiSigner,
                                      Kind::Recovery,     Kind::Mixer,    Kind::Aggregate};

inline std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::HonestRefund: return "HonestRefund";
    case Kind::Silkroad: return "Silkroad";
    case Kind::Marketplace: return "Marketplace";
    case Kind::MultiSigner: return "MultiSigner";
    case Kind::Recovery: return "Recovery";
    case Kind::Mixer: return "Mixer";
    case Kind::Aggregate: return "Aggregate";
  }
  return "?";
}

inline std::string_view describe(Kind k) {
  switch (k) {
    case Kind::HonestRefund: return "payment, joint refund, redemption recorded";
    case Kind::Silkroad: return "customer launders through the refund; merchant proves the linkage";
    case Kind::Marketplace: return "rogue trader swaps the refund address by email";
    case Kind::MultiSigner: return "co-signer names an illicit refundee for the victim's share";
    case Kind::Recovery: return "database file lost; records rebuilt from wallet and chain";
    case Kind::Mixer: return "refunds split into equal chunks and batch-mixed; linkage analyzer";
    case Kind::Aggregate: return "joint and fallback refunds chunked and mixed; proofs per chunk";
  }
  return "";
}

inline Kind parse_kind(std::string_view s) {
  for (auto k : kAllKinds) {
    std::string a(to_string(k)), b(s);
    std::transform(a.begin(), a.end(), a.begin(), ::tolower);
    std::transform(b.begin(), b.end(), b.begin(), ::tolower);
    if (a == b) return k;
  }
  throw Error(Errc::ConfigError, "unknown scenario '" + std::string(s) + "'");
}

// `k=v,k=v` parameters. Unknown keys and malformed values are ConfigError.
class Params {
 public:
  Params() = default;

  static Params parse(std::string_view text) {
    Params p;
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto end = text.find(',', pos);
      if (end == std::string_view::npos) end = text.size();
      auto item = text.substr(pos, end - pos);
      pos = end + 1;
      if (item.empty()) continue;
      auto eq = item.find('=');
      if (eq == std::string_view::npos || eq == 0)
        throw Error(Errc::ConfigError, "expected key=value, got '" + std::string(item) + "'");
      p.set(std::string(item.substr(0, eq)), std::string(item.substr(eq + 1)));
    }
    return p;
  }

  void set(std::string key, std::string value) { kv_[std::move(key)] = std::move(value); }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::uint64_t get(const std::string& key, std::uint64_t fallback, std::uint64_t lo = 0,
                    std::uint64_t hi = std::numeric_limits<std::uint32_t>::max()) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc{} || p != it->second.data() + it->second.size())
      throw Error(Errc::ConfigError, key + " must be a non-negative integer");
    if (v < lo || v > hi)
      throw Error(Errc::ConfigError, key + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return v;
  }

  std::string get_str(const std::string& key, std::string fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  void require_known(std::initializer_list<std::string_view> allowed) const {
    for (const auto& [k, v] : kv_)
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
        throw Error(Errc::ConfigError, "unknown parameter '" + k + "'");
  }

 private:
  std::map<std::string, std::string> kv_;
};

struct Options {
  std::uint64_t seed = 1;
  bool defense = true;
  Params params;
  std::filesystem::path workdir = std::filesystem::temp_directory_path();
  bool keep_files = false;
};

// ---- verdicts -------------------------------------------------------------------

struct Assertion {
  std::string label;
  bool pass = false;
  std::string detail;
};

struct Verdict {
  std::string scenario;
  std::uint64_t seed = 0;
  bool defense = true;
  std::vector<Assertion> assertions;
  std::string transcript;
  std::string report;  // free-form summary (accuracy tables and the like)
  std::shared_ptr<const SimLedger> ledger;
  std::vector<RefundRecord> records;

  bool passed() const {
    return !assertions.empty() && std::all_of(assertions.begin(), assertions.end(), [](const auto& a) { return a.pass; });
  }

  const Assertion* find(std::string_view label) const {
    for (const auto& a : assertions)
      if (a.label == label) return &a;
    return nullptr;
  }

  std::string summary() const {
    std::ostringstream out;
    out << scenario << " seed=" << seed << (defense ? "" : " defense=off") << "\n";
    for (const auto& a : assertions) out << "  [" << (a.pass ? "PASS" : "FAIL") << "] " << a.label << "  " << a.detail << "\n";
    if (!report.empty()) out << report;
    out << (passed() ? "PASS" : "FAIL") << "\n";
    return out.str();
  }
};

// ---- balance accounting ---------------------------------------------------------

// Named actors own sets of keys. "escrow" is every unspent script-hash output.
// With a fixed supply the deltas over all actors plus escrow sum to zero only
// when every satoshi is owned by someone the scenario knows about.
class Accounting {
 public:
  explicit Accounting(const SimLedger& ledger) : ledger_(ledger) {}

  void own(const std::string& actor, const Point& key) {
    if (!actors_.count(actor)) order_.push_back(actor);
    actors_[actor].insert(key);
  }
  // Keys 0..count-1 plus every key the wallet hands out later.
  void own_wallet(const std::string& actor, const DeterministicWallet& w, std::uint32_t count) {
    if (!actors_.count(actor)) order_.push_back(actor);
    actors_[actor];
    wallets_[actor] = {&w, count};
  }

  void start() {
    before_ = snapshot();
    supply_before_ = ledger_.total_supply();
  }

  Amount balance(const std::string& actor) const {
    Amount sum = 0;
    if (auto it = actors_.find(actor); it != actors_.end())
      for (const auto& k : it->second) sum += ledger_.balance_of(k);
    if (auto it = wallets_.find(actor); it != wallets_.end()) {
      const auto& [w, count] = it->second;
      for (std::uint32_t i = 0, n = std::max(count, w->used()); i < n; ++i) sum += ledger_.balance_of(w->key(i).pub);
    }
    return sum;
  }

  Amount delta(const std::string& actor) const {
    auto it = before_.find(actor);
    return balance_now(actor) - (it == before_.end() ? 0 : it->second);
  }

  // Returns the sum of deltas and a per-actor table.
  std::pair<Amount, std::string> close() const {
    Amount sum = 0;
    std::string table;
    auto names = order_;
    names.push_back("escrow");
    for (const auto& n : names) {
      auto d = delta(n);
      sum += d;
      table += n + "=" + std::to_string(d) + " ";
    }
    return {sum, table + "supply-delta=" + std::to_string(ledger_.total_supply() - supply_before_)};
  }

 private:
  Amount balance_now(const std::string& actor) const {
    return actor == "escrow" ? ledger_.escrow_balance() : balance(actor);
  }

  std::map<std::string, Amount> snapshot() const {
    std::map<std::string, Amount> m;
    for (const auto& n : order_) m[n] = balance(n);
    m["escrow"] = ledger_.escrow_balance();
    return m;
  }

  const SimLedger& ledger_;
  std::vector<std::string> order_;
  std::map<std::string, std::set<Point>> actors_;
  std::map<std::string, std::pair<const DeterministicWallet*, std::uint32_t>> wallets_;
  std::map<std::string, Amount> before_;
  Amount supply_before_ = 0;
};

// ---- harness --------------------------------------------------------------------

class Run {
 public:
  Run(std::string name, const Options& opt) : opt_(opt), acct_(ledger_) {
    v_.scenario = std::move(name);
    v_.seed = opt.seed;
    v_.defense = opt.defense;
  }

  SimLedger& ledger() { return ledger_; }
  Transcript& log() { return log_; }
  KeyLog& keylog() { return keylog_; }
  Accounting& acct() { return acct_; }
  MerchantRegistry& registry() { return registry_; }
  const Options& opt() const { return opt_; }
  std::string seeded(std::string_view who) const { return std::string(who) + "-" + std::to_string(opt_.seed); }

  void check(std::string label, bool pass, std::string detail = {}) {
    log_.log("verdict", ledger_.height(), pass ? "pass" : "FAIL", label + (detail.empty() ? "" : " " + detail));
    v_.assertions.push_back({std::move(label), pass, std::move(detail)});
  }

  void note(std::string_view actor, std::string_view event, const std::string& detail = {}) {
    log_.log(actor, ledger_.height(), event, detail);
  }

  BroadcastStatus send(std::string_view actor, const Transaction& t) {
    auto r = ledger_.broadcast(t);
    std::string status = r.status == BroadcastStatus::Accepted ? "accepted"
                         : r.status == BroadcastStatus::Held   ? "held"
                                                               : "rejected:" + std::string(tx::to_string(r.verdict.reason));
    note(actor, "broadcast", short_hex(tx::txid(t).view()) + " " + tx::summarize(t) + " " + status);
    return r.status;
  }

  void mine(std::uint32_t n = 1) { ledger_.advance_height(n); }
  void mine_to(std::uint32_t h) {
    if (ledger_.height() < h) ledger_.advance_height(h - ledger_.height());
  }

  // Conservation, ledger audit and key freshness; every scenario ends here.
  void close_books(bool check_freshness = true) {
    auto [sum, table] = acct_.close();
    check("conservation", sum == 0 && ledger_.total_supply() == supply_at_start_, table);
    auto a = ledger_.audit();
    std::string problems;
    for (const auto& p : a.problems) problems += p + "; ";
    check("ledger-audit", a.ok(), a.ok() ? "no double spends, locks respected" : problems);
    if (check_freshness)
      check("key-freshness", keylog_.violations().empty(),
            std::to_string(keylog_.size()) + " keys, " + std::to_string(keylog_.violations().size()) + " reused");
  }

  void begin_accounting() {
    acct_.start();
    supply_at_start_ = ledger_.total_supply();
  }

  Verdict finish() {
    v_.transcript = log_.text();
    v_.ledger = std::make_shared<SimLedger>(ledger_);
    return std::move(v_);
  }

  Verdict& verdict() { return v_; }

 private:
  Options opt_;
  SimLedger ledger_;
  Transcript log_;
  KeyLog keylog_;
  MerchantRegistry registry_;
  Accounting acct_;
  Verdict v_;
  Amount supply_at_start_ = 0;
};

namespace detail {

inline MerchantConfig merchant_config(const Options& opt) {
  MerchantConfig c;
  c.lock_blocks = static_cast<std::uint32_t>(opt.params.get("lock", ledger::kOneWeekBlocks, 1, 100'000));
  c.window_blocks = static_cast<std::uint32_t>(opt.params.get("window", ledger::kTwoMonthsBlocks, 1, 1'000'000));
  c.wallet_bits = static_cast<unsigned>(opt.params.get("wallet_bits", 8, 4, 16));
  c.defense = opt.defense;
  return c;
}

constexpr std::uint32_t kFundedKeys = 12;
constexpr Amount kMerchantFloat = 1'000'000;

inline RefundEntry plain_entry(const Point& refundee, Amount v) { return RefundEntry{std::nullopt, refundee, v}; }

// Request, payment message, ack. Returns the request.
inline PaymentRequest purchase(Run& run, Merchant& m, Customer& c, Amount price, std::vector<RefundEntry> plan,
                               bool encrypt = true) {
  auto req = m.create_request(price);
  auto msg = c.pay(req, run.registry(), std::move(plan), encrypt);
  auto ack = m.process_payment(msg);
  run.check("ack-verifies/" + c.name(), c.verify_ack(ack, msg, req, run.registry()));
  run.mine();
  return req;
}

inline std::string fmt_amount(Amount a) { return std::to_string(a) + " sat"; }

}  // namespace detail

// ---- scenarios ------------------------------------------------------------------

inline Verdict honest_refund(const Options& opt) {
  opt.params.require_known({"lock", "window", "wallet_bits", "refundees", "price"});
  Run run("HonestRefund", opt);
  const auto n = static_cast<std::uint32_t>(opt.params.get("refundees", 1, 1, 16));
  const Amount price = static_cast<Amount>(opt.params.get("price", 60'000, 1'000, 10'000'000));
  Merchant shop("shop", run.seeded("shop"), run.ledger(), run.registry(), detail::merchant_config(opt), &run.log(),
                &run.keylog());
  Customer alice("alice", run.seeded("alice"), run.ledger(), &run.log());
  std::vector<keys::KeyPair> refundees;
  for (std::uint32_t i = 0; i < n; ++i) refundees.push_back(keys::keygen(run.seeded("refundee" + std::to_string(i))));

  fund_merchant(run.ledger(), shop, detail::kFundedKeys, detail::kMerchantFloat);
  run.ledger().mint({tx::pay_to_pubkey(alice.wallet_key().pub, price + 10'000)});
  run.acct().own_wallet("merchant", shop.wallet(), detail::kFundedKeys);
  run.acct().own("alice", alice.wallet_key().pub);
  for (std::uint32_t i = 0; i < n; ++i) run.acct().own("refundees", refundees[i].pub);
  run.begin_accounting();

  const Amount refund_total = price * 2 / 3;
  std::vector<RefundEntry> plan;
  auto split = mixer::split_value(refund_total, n);
  for (std::uint32_t i = 0; i < n; ++i) plan.push_back(detail::plain_entry(refundees[i].pub, split.chunks[i]));
  auto req = detail::purchase(run, shop, alice, price, plan);
  const auto& issued = shop.issue_refund(req.merchant_data);
  run.mine();

  if (issued.vanilla) {
    run.check("refund-paid-directly", run.ledger().find(tx::txid(issued.tc1)) != nullptr);
    run.check("refundees-received", run.acct().delta("refundees") == refund_total,
              detail::fmt_amount(run.acct().delta("refundees")));
    const auto& rec = shop.session(req.merchant_data).record;
    run.check("no-evidence-recorded", rec.tc2_txid.is_zero() && rec.redeem_txid.is_zero(), "vanilla flow keeps no TC2/redeem");
    run.close_books();
    return run.finish();
  }

  for (std::uint32_t i = 0; i < issued.fallbacks.size(); ++i)
    for (const auto& k : issued.fallbacks[i].keys) run.acct().own("alice", k);
  run.check("tc1-total", tx::total_script_hash_output(issued.tc1) == refund_total,
            detail::fmt_amount(tx::total_script_hash_output(issued.tc1)));
  Amount tc2_value = 0;
  for (const auto& f : issued.fallbacks) tc2_value += f.value;
  run.check("tc2-total", tc2_value == refund_total && issued.tc2.lock_height == issued.lock_height,
            detail::fmt_amount(tc2_value) + " lock=" + std::to_string(issued.lock_height));
  run.check("tc2-held-until-lock", run.ledger().find(tx::txid(issued.tc2)) == nullptr &&
                                       run.ledger().pending_lock(tx::txid(issued.tc2)) == issued.lock_height);

  std::vector<TxId> redeems;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto r = alice.redeem_joint(issued.tc1, i, issued.child_indexes[i], refundees[i].priv, refundees[i].pub);
    run.send("alice+refundee" + std::to_string(i), r);
    redeems.push_back(tx::txid(r));
  }
  run.mine();
  shop.monitor();
  const auto& rec = shop.session(req.merchant_data).record;
  run.check("joint-redeem-confirmed",
            std::all_of(redeems.begin(), redeems.end(), [&](const auto& id) { return run.ledger().find(id) != nullptr; }));
  run.check("record-has-redeem", std::find(redeems.begin(), redeems.end(), rec.redeem_txid) != redeems.end() &&
                                     shop.database().find(rec.main_txid) && shop.database().find(rec.main_txid)->redeemed());
  run.check("refundees-received", run.acct().delta("refundees") == refund_total,
            detail::fmt_amount(run.acct().delta("refundees")));
  run.check("session-redeemed", shop.state(req.merchant_data) == SessionState::Redeemed);
  run.verdict().records = shop.database().records();
  run.close_books();
  return run.finish();
}

inline Verdict silkroad(const Options& opt) {
  opt.params.require_known({"lock", "window", "wallet_bits", "price"});
  Run run("Silkroad", opt);
  const Amount price = static_cast<Amount>(opt.params.get("price", 50'000, 1'000, 10'000'000));
  Merchant shop("shop", run.seeded("shop"), run.ledger(), run.registry(), detail::merchant_config(opt), &run.log(),
                &run.keylog());
  Customer alice("alice", run.seeded("alice"), run.ledger(), &run.log());
  auto trader = keys::keygen(run.seeded("silkroad"));

  fund_merchant(run.ledger(), shop, detail::kFundedKeys, detail::kMerchantFloat);
  run.ledger().mint({tx::pay_to_pubkey(alice.wallet_key().pub, price)});
  run.acct().own_wallet("merchant", shop.wallet(), detail::kFundedKeys);
  run.acct().own("alice", alice.wallet_key().pub);
  run.acct().own("trader", trader.pub);
  run.begin_accounting();

  run.note("alice", "names-illicit-refundee", short_hex(Group::secp256k1().encode(trader.pub).view()));
  auto req = detail::purchase(run, shop, alice, price, {detail::plain_entry(trader.pub, price)});
  const auto& issued = shop.issue_refund(req.merchant_data);
  run.mine();

  if (issued.vanilla) {
    run.mine();
    run.check("trader-paid", run.acct().delta("trader") == price, detail::fmt_amount(run.acct().delta("trader")));
    const auto& refund_tx = *run.ledger().find_tx(tx::txid(issued.tc1));
    bool names_alice = false;
    for (const auto& in : refund_tx.inputs)
      for (const auto& w : in.witness) names_alice |= w.pubkey == alice.wallet_key().pub;
    run.check("refund-signed-by-merchant-only", !names_alice, "only the merchant appears as sender");
    bool proof = true;
    try {
      recovery::generate_linkage_proof(shop.session(req.merchant_data).record, shop.wallet(), run.ledger());
    } catch (const Error& e) {
      proof = false;
      run.note("shop", "no-proof", std::string(to_string(e.code())));
    }
    run.check("no-linkage-proof", !proof, "the merchant cannot show who asked for the payment");
    run.close_books();
    return run.finish();
  }

  for (const auto& k : issued.fallbacks.front().keys) run.acct().own("alice", k);
  auto redeem = alice.redeem_joint(issued.tc1, 0, issued.child_indexes[0], trader.priv, trader.pub);
  run.send("alice+trader", redeem);
  run.mine_to(issued.lock_height + 1);
  shop.monitor();
  const auto& rec = shop.session(req.merchant_data).record;
  run.check("redeemed-jointly", rec.redeem_txid == tx::txid(redeem) && run.acct().delta("trader") == price,
            detail::fmt_amount(run.acct().delta("trader")));

  try {
    auto proof = recovery::generate_linkage_proof(rec, shop.wallet(), run.ledger());
    auto v = recovery::verify_linkage_proof(proof, run.ledger());
    run.check("proof-verifies", v.ok(), std::string(recovery::to_string(v.reason)));
    run.check("proof-names-both", proof.xpub == alice.xpub() && proof.script.contains(trader.pub),
              "xpub from MainTC and trader key in the redeemed script");
    auto forged = proof;
    forged.xpub = ExtendedPublicKey{trader.pub, sha256("forged")};
    run.check("forged-proof-rejected", !recovery::verify_linkage_proof(forged, run.ledger()).ok());
  } catch (const Error& e) {
    run.check("proof-verifies", false, e.what());
  }
  run.verdict().records = shop.database().records();
  run.close_books();
  return run.finish();
}

inline Verdict marketplace(const Options& opt) {
  opt.params.require_known({"lock", "window", "wallet_bits", "price"});
  Run run("Marketplace", opt);
  const Amount price = static_cast<Amount>(opt.params.get("price", 50'000, 1'000, 10'000'000));
  Merchant shop("shop", run.seeded("shop"), run.ledger(), run.registry(), detail::merchant_config(opt), &run.log(),
                &run.keylog());
  Customer alice("alice", run.seeded("alice"), run.ledger(), &run.log());
  auto rogue = keys::keygen(run.seeded("rogue"));

  fund_merchant(run.ledger(), shop, detail::kFundedKeys, detail::kMerchantFloat);
  run.ledger().mint({tx::pay_to_pubkey(alice.wallet_key().pub, price)});
  run.acct().own_wallet("merchant", shop.wallet(), detail::kFundedKeys);
  run.acct().own("alice", alice.wallet_key().pub);
  run.acct().own("rogue", rogue.pub);
  run.begin_accounting();

  // Alice buys through the rogue marketplace and names herself as refundee.
  auto req = detail::purchase(run, shop, alice, price, {detail::plain_entry(alice.wallet_key().pub, price)});
  const Amount after_payment = alice.balance();

  MessageQueue email;
  email.send(RefundAddressUpdate{req.merchant_data, {detail::plain_entry(rogue.pub, price)}, UpdateChannel::Email, {}});
  run.note("rogue", "email-update", "refund_to -> rogue");
  auto msg = email.receive();
  run.check("email-update-accepted", shop.update_refund_addresses(std::get<RefundAddressUpdate>(*msg)));
  const auto& issued = shop.issue_refund(req.merchant_data);
  run.mine();

  if (issued.vanilla) {
    run.mine();
    run.check("rogue-steals-refund", run.acct().delta("rogue") == price, detail::fmt_amount(run.acct().delta("rogue")));
    run.check("alice-gets-nothing", alice.balance() == after_payment);
    run.check("no-fallback", issued.tc2.inputs.empty(), "vanilla flow issues no time-locked refund");
    run.close_books();
    return run.finish();
  }

  for (const auto& k : issued.fallbacks.front().keys) run.acct().own("alice", k);
  run.check("refund-locked-to-rogue", issued.locks[0].refundee_key == rogue.pub && issued.locks[0].customer_keys.size() == 1);

  std::vector<Scalar> rogue_only{rogue.priv};
  bool missing_signer = false;
  try {
    tx::build_redeem(issued.tc1, 0, rogue_only, rogue.pub, issued.locks[0].script());
  } catch (const Error& e) {
    missing_signer = e.code() == Errc::MissingSigner;
  }
  // A hand-made spend with only the rogue's signature.
  Transaction forged;
  forged.inputs.push_back(tx::TxInput{tx::OutPoint{tx::txid(issued.tc1), 0}, {}, issued.locks[0].script()});
  forged.outputs.push_back(tx::pay_to_pubkey(rogue.pub, price));
  forged.inputs[0].witness = {tx::WitnessItem{sig::sign(rogue.priv, tx::signing_digest(forged)), rogue.pub}};
  run.check("rogue-cannot-redeem", missing_signer && run.send("rogue", forged) == BroadcastStatus::Rejected,
            "MissingSigner; one-signature spend rejected");

  auto fallback = alice.redeem_fallback(issued.tc2, 0, issued.fallback_index, alice.wallet_key().pub);
  run.mine_to(issued.lock_height - 1);
  auto early = tx::validate(fallback, run.ledger());
  run.check("fallback-not-before-lock",
            !early.accepted() && run.ledger().find(tx::txid(issued.tc2)) == nullptr && alice.balance() == after_payment,
            "height " + std::to_string(run.ledger().height()) + ": " + std::string(tx::to_string(early.reason)));
  run.mine();
  const auto at = run.ledger().height();
  run.check("fallback-at-lock", run.send("alice", fallback) == BroadcastStatus::Accepted && at == issued.lock_height &&
                                    issued.lock_height == req.created_at + 1 + shop.config().lock_blocks,
            "accepted at height " + std::to_string(at));
  run.mine();
  shop.monitor();
  run.check("alice-recovers-refund", alice.balance() - after_payment == price,
            detail::fmt_amount(alice.balance() - after_payment));
  run.check("rogue-delta-zero", run.acct().delta("rogue") == 0, detail::fmt_amount(run.acct().delta("rogue")));
  run.verdict().records = shop.database().records();
  run.close_books();
  return run.finish();
}

inline Verdict multi_signer(const Options& opt) {
  opt.params.require_known({"lock", "window", "wallet_bits"});
  Run run("MultiSigner", opt);
  Merchant shop("shop", run.seeded("shop"), run.ledger(), run.registry(), detail::merchant_config(opt), &run.log(),
                &run.keylog());
  Customer alice("alice", run.seeded("alice"), run.ledger(), &run.log());
  Customer bob("bob", run.seeded("bob"), run.ledger(), &run.log());
  auto trader = keys::keygen(run.seeded("silkroad"));
  auto bob_refund = keys::keygen(run.seeded("bob-refund"));
  const Amount alice_share = 50'000, bob_share = 20'000, alice_refund = 40'000, bob_refund_value = 20'000;

  fund_merchant(run.ledger(), shop, detail::kFundedKeys, detail::kMerchantFloat);
  run.ledger().mint({tx::pay_to_pubkey(alice.wallet_key().pub, alice_share), tx::pay_to_pubkey(bob.wallet_key().pub, bob_share)});
  run.acct().own_wallet("merchant", shop.wallet(), detail::kFundedKeys);
  run.acct().own("alice", alice.wallet_key().pub);
  run.acct().own("bob", bob.wallet_key().pub);
  run.acct().own("bob", bob_refund.pub);
  run.acct().own("trader", trader.pub);
  run.begin_accounting();

  // Bob assembles the joint payment and writes the refund plan: Alice's share
  // goes to the trader.
  auto req = shop.create_request(alice_share + bob_share);
  auto funding = alice.funding();
  for (auto& f : bob.funding()) funding.push_back(f);
  std::vector<ExtendedPublicKey> xpubs{alice.xpub(), bob.xpub()};
  PaymentMsg msg;
  msg.merchant_data = req.merchant_data;
  msg.transactions.push_back(tx::build_main_tc(funding, req.payment_address, req.amount, xpubs));
  msg.refund_to = std::vector<RefundEntry>{{alice.xpub().pubkey, trader.pub, alice_refund},
                                           {bob.xpub().pubkey, bob_refund.pub, bob_refund_value}};
  run.note("bob", "injects-illicit-refundee", "entry bound to alice");
  shop.process_payment(msg);
  run.mine();
  const Amount alice_after = alice.balance();
  const auto& issued = shop.issue_refund(req.merchant_data);
  run.mine();

  if (issued.vanilla) {
    run.mine();
    run.check("trader-paid", run.acct().delta("trader") == alice_refund, detail::fmt_amount(run.acct().delta("trader")));
    run.check("alice-loses-share", alice.balance() == alice_after);
    run.check("no-fallback", issued.tc2.inputs.empty());
    run.close_books();
    return run.finish();
  }

  run.check("entry-bound-to-victim", issued.locks[0].customer_keys.size() == 1 && issued.locks[0].refundee_key == trader.pub,
            "2-of-2 with alice's masked child");
  // Fallbacks follow the cosigner order. Bob's own fallback is kept apart:
  // it pays him whatever he did with his joint output.
  for (const auto& f : issued.fallbacks) {
    const auto* owner = (&f == &issued.fallbacks.front()) ? "alice" : "bob-fallback";
    for (const auto& k : f.keys) run.acct().own(owner, k);
  }

  // Bob and the trader try every key they hold.
  std::vector<Scalar> colluders{bob.wallet_key().priv, bob.masked_child_private(0, issued.m1.pub), trader.priv};
  bool blocked = false;
  try {
    tx::build_redeem(issued.tc1, 0, colluders, trader.pub, issued.locks[0].script());
  } catch (const Error& e) {
    blocked = e.code() == Errc::MissingSigner;
  }
  run.check("silkroad-redeem-fails", blocked, "MissingSigner without alice");

  // Bob's own entry redeems normally.
  run.send("bob", bob.redeem_joint(issued.tc1, 1, issued.child_indexes[1], bob_refund.priv, bob_refund.pub));
  run.mine();

  auto fb = alice.redeem_fallback(issued.tc2, 0, issued.fallback_index, alice.wallet_key().pub);
  run.mine_to(issued.lock_height);
  run.check("victim-fallback-at-lock", run.send("alice", fb) == BroadcastStatus::Accepted);
  run.mine();
  run.check("victim-recovers", alice.balance() - alice_after == alice_refund,
            detail::fmt_amount(alice.balance() - alice_after));
  const Amount gain = run.acct().delta("trader") + std::max<Amount>(0, run.acct().delta("bob"));
  run.check("attacker-gain-zero", gain == 0,
            "trader " + detail::fmt_amount(run.acct().delta("trader")) + ", bob " + detail::fmt_amount(run.acct().delta("bob")) +
                ", bob's unclaimed fallback " + detail::fmt_amount(run.acct().delta("bob-fallback")));
  run.close_books();
  return run.finish();
}

inline Verdict recovery_scenario(const Options& opt) {
  opt.params.require_known({"lock", "window", "wallet_bits", "sessions"});
  Run run("Recovery", opt);
  const auto sessions = static_cast<std::uint32_t>(opt.params.get("sessions", 3, 1, 8));
  auto cfg = detail::merchant_config(opt);
  Merchant shop("shop", run.seeded("shop"), run.ledger(), run.registry(), cfg, &run.log(), &run.keylog());
  auto db_path = opt.workdir / ("refund-db-" + std::to_string(opt.seed) + ".bin");
  shop.attach_database(db_path);

  std::vector<std::unique_ptr<Customer>> customers;
  std::vector<keys::KeyPair> refundees;
  const std::uint32_t funded = detail::kFundedKeys + 3 * sessions;
  fund_merchant(run.ledger(), shop, funded, detail::kMerchantFloat);
  for (std::uint32_t i = 0; i < sessions; ++i) {
    customers.push_back(std::make_unique<Customer>("cust" + std::to_string(i), run.seeded("cust" + std::to_string(i)),
                                                   run.ledger(), &run.log()));
    refundees.push_back(keys::keygen(run.seeded("refundee" + std::to_string(i))));
    run.ledger().mint({tx::pay_to_pubkey(customers.back()->wallet_key().pub, 40'000)});
    run.acct().own("customers", customers.back()->wallet_key().pub);
    run.acct().own("refundees", refundees.back().pub);
  }
  run.acct().own_wallet("merchant", shop.wallet(), detail::kFundedKeys);
  run.begin_accounting();

  std::vector<const IssuedRefund*> issued;
  for (std::uint32_t i = 0; i < sessions; ++i) {
    auto req = detail::purchase(run, shop, *customers[i], 40'000, {detail::plain_entry(refundees[i].pub, 25'000)});
    issued.push_back(&shop.issue_refund(req.merchant_data));
    if (!issued.back()->vanilla)
      for (const auto& k : issued.back()->fallbacks.front().keys) run.acct().own("customers", k);
  }
  run.mine();
  // Every session but the last redeems jointly; the last takes the fallback.
  std::uint32_t last_lock = 0;
  for (std::uint32_t i = 0; i < sessions; ++i) {
    if (issued[i]->vanilla) continue;
    last_lock = std::max(last_lock, issued[i]->lock_height);
    if (i + 1 < sessions || sessions == 1)
      run.send(customers[i]->name(), customers[i]->redeem_joint(issued[i]->tc1, 0, 0, refundees[i].priv, refundees[i].pub));
  }
  run.mine_to(last_lock + 1);
  if (sessions > 1 && !issued.back()->vanilla)
    run.send(customers.back()->name(),
             customers.back()->redeem_fallback(issued.back()->tc2, 0, issued.back()->fallback_index,
                                               customers.back()->wallet_key().pub));
  run.mine(2);
  shop.monitor();

  auto before = recovery::sorted(shop.database().records());
  const bool file_had_rows = std::filesystem::exists(db_path) &&
                             std::filesystem::file_size(db_path) == before.size() * RefundRecord::kSize;
  shop.database().wipe();
  run.note("shop", "database-lost", db_path.filename().string());

  DeterministicWallet fresh(to_bytes("wallet:" + run.seeded("shop")), cfg.wallet_bits);
  auto res = recovery::recover_database(fresh, run.ledger());
  const std::uint64_t two_k = fresh.capacity();
  run.note("shop", "recovered", std::to_string(res.records.size()) + " records, keygens=" +
                                    std::to_string(res.stats.key_generations) + " searches=" + std::to_string(res.stats.searches));

  if (!opt.defense) {
    run.check("db-file-deleted", !std::filesystem::exists(db_path));
    run.check("nothing-to-recover", res.records.empty() && res.unmatched.size() == sessions,
              std::to_string(res.unmatched.size()) + " payments without a matching refund");
    run.check("no-evidence", before.empty(), "vanilla refunds keep no records");
    run.close_books();
    return run.finish();
  }

  run.check("db-file-written", file_had_rows, std::to_string(before.size()) + " rows of 128 bytes");
  run.check("db-file-deleted", !std::filesystem::exists(db_path));
  run.check("records-reproduced", res.records == before && before.size() == sessions,
            std::to_string(res.records.size()) + "/" + std::to_string(before.size()));
  run.check("keygen-bound", res.stats.key_generations <= 2 * res.stats.payments * two_k,
            std::to_string(res.stats.key_generations) + " <= " + std::to_string(2 * res.stats.payments * two_k));
  run.check("search-bound", res.stats.searches <= res.stats.refund_txs * two_k,
            std::to_string(res.stats.searches) + " <= " + std::to_string(res.stats.refund_txs * two_k));
  std::size_t proofs = 0;
  for (const auto& r : res.records) {
    try {
      if (recovery::verify_linkage_proof(recovery::generate_linkage_proof(r, fresh, run.ledger()), run.ledger()).ok()) ++proofs;
    } catch (const Error&) {
    }
  }
  const std::size_t joint = sessions > 1 ? sessions - 1 : sessions;
  run.check("proofs-from-recovered-records", proofs == joint, std::to_string(proofs) + " joint redemptions proven");
  shop.database().replace(res.records);
  shop.attach_database(db_path);
  run.check("db-restored", RefundDatabase::load(db_path) == shop.database().records());
  run.verdict().records = res.records;
  if (!opt.keep_files) std::filesystem::remove(db_path);
  run.close_books();
  return run.finish();
}

// ---- mixing trials --------------------------------------------------------------

struct MixTrialConfig {
  std::uint32_t customers = 2;
  std::uint32_t k = 4;
  bool equal_chunks = true;
  bool mix = true;
  bool aggregate = false;
  std::uint32_t lock_blocks = ledger::kOneWeekBlocks;
  std::uint64_t seed = 1;
};

struct MixTrial {
  mixer::LinkageReport report;
  bool designated_correct = false;
  bool every_tx_mixed = true;
  bool equal_values = true;
  bool swept_all = true;
  bool conserved = false;
  bool audit_ok = false;
  std::size_t proofs_ok = 0;
  std::size_t proofs_total = 0;
  std::size_t mix_txs = 0;
  std::vector<std::string> warnings;
  std::string transcript;
  std::shared_ptr<const SimLedger> ledger;
};

// Customer i pays and requests a refund split over its refundees; refund
// requests arrive one block apart. With `equal_chunks` every refund is
// 0.2 BTC, so all chunks have the same value; otherwise odd customers refund
// 0.5 BTC to a single refundee.
inline MixTrial run_mix_trial(const MixTrialConfig& c) {
  constexpr Amount kBtc = 100'000'000;
  if (c.customers < 1) throw Error(Errc::ConfigError, "need at least one customer");
  MixTrial out;
  SimLedger ledger;
  MerchantRegistry registry;
  Transcript log;
  KeyLog keylog;
  const std::string s = std::to_string(c.seed);
  MerchantConfig mcfg;
  mcfg.lock_blocks = c.lock_blocks;
  mcfg.wallet_bits = 8;
  Merchant shop("shop", "mix-shop-" + s, ledger, registry, mcfg, &log, &keylog);
  constexpr std::uint32_t kFunded = 24;
  fund_merchant(ledger, shop, kFunded, 2 * kBtc);

  struct Party {
    std::unique_ptr<Customer> customer;
    std::vector<std::unique_ptr<Customer>> refundees;
    std::vector<Amount> refunds;
    Amount price = 0;
    Bytes data;
    std::uint32_t request_height = 0;
  };
  std::vector<Party> parties;
  Accounting acct(ledger);
  for (std::uint32_t i = 0; i < c.customers; ++i) {
    Party p;
    const std::string id = std::to_string(i) + "-" + s;
    p.customer = std::make_unique<Customer>("cust" + std::to_string(i), "mix-cust-" + id, ledger, &log);
    p.price = (i == 0 ? 4 : 5) * kBtc / 10;
    if (c.equal_chunks || i % 2 == 0) p.refunds = {kBtc / 5, kBtc / 5};
    else p.refunds = {kBtc / 2};
    for (std::size_t r = 0; r < p.refunds.size(); ++r)
      p.refundees.push_back(std::make_unique<Customer>("ref" + std::to_string(i) + "." + std::to_string(r),
                                                       "mix-ref-" + id + "-" + std::to_string(r), ledger, &log));
    ledger.mint({tx::pay_to_pubkey(p.customer->wallet_key().pub, p.price)});
    acct.own("customers", p.customer->wallet_key().pub);
    for (auto& r : p.refundees) acct.own("refundees", r->wallet_key().pub);
    parties.push_back(std::move(p));
  }
  acct.own_wallet("merchant", shop.wallet(), kFunded);
  acct.start();
  const Amount supply = ledger.total_supply();

  for (auto& p : parties) {
    auto req = shop.create_request(p.price);
    std::vector<RefundEntry> plan;
    for (std::size_t r = 0; r < p.refunds.size(); ++r)
      plan.push_back(RefundEntry{std::nullopt, p.refundees[r]->xpub(), p.refunds[r]});
    shop.process_payment(p.customer->pay(req, registry, std::move(plan), true));
    p.data = req.merchant_data;
  }
  ledger.advance_height();

  mixer::MixConfig mc;
  mc.k = c.k;
  mc.min_customers = std::max<std::uint32_t>(2, c.customers);
  mc.seed = c.seed;
  mc.mix = c.mix;
  mixer::Mixer joint_mixer(ledger, shop.wallet(), mc, &log, "mixer");
  auto fb_cfg = mc;
  fb_cfg.lock_blocks = c.lock_blocks;
  mixer::Mixer fallback_mixer(ledger, shop.wallet(), fb_cfg, &log, "mixer-locked");

  std::vector<mixer::ChunkedRefund> plain;
  std::vector<mixer::AggregatePlan> agg;
  for (std::uint32_t i = 0; i < parties.size(); ++i) {
    auto& p = parties[i];
    p.request_height = ledger.height();
    log.log(p.customer->name(), ledger.height(), "refund-request");
    if (c.aggregate) {
      agg.push_back(mixer::aggregate_refund(shop, p.data, c.k, i + 1));
      joint_mixer.enqueue(agg.back().joint_side);
      fallback_mixer.enqueue(agg.back().fallback_side);
    } else {
      plain.push_back(mixer::enqueue_refund(shop, p.data, c.k, i + 1, joint_mixer));
    }
    // Two blocks apart, so an unmixed emission confirms before the next request.
    for (int b = 0; b < 2; ++b) {
      joint_mixer.poll();
      fallback_mixer.poll();
      ledger.advance_height();
    }
  }
  for (int b = 0; b < 12 && !(joint_mixer.idle() && fallback_mixer.idle()); ++b) {
    joint_mixer.poll();
    fallback_mixer.poll();
    ledger.advance_height();
  }

  // Ground truth and composition checks.
  std::map<tx::OutPoint, std::uint64_t> truth;
  std::vector<TxId> mix_ids;
  for (const auto* mx : {&joint_mixer, &fallback_mixer}) {
    for (const auto& e : mx->emissions()) {
      auto id = tx::txid(e.tx);
      mix_ids.push_back(id);
      std::set<std::uint64_t> origins;
      std::set<Amount> values;
      for (std::uint32_t o = 0; o < e.origins.size(); ++o) {
        if (!e.origins[o]) continue;
        truth[{id, o}] = *e.origins[o];
        origins.insert(*e.origins[o]);
        values.insert(e.tx.outputs[o].value);
      }
      if (c.mix && c.customers >= 2 && origins.size() < 2) out.every_tx_mixed = false;
      if (values.size() > 1) out.equal_values = false;
    }
    for (const auto& w : mx->warnings()) out.warnings.push_back(w);
  }
  out.mix_txs = mix_ids.size();
  if (c.aggregate) {
    // Fallback-side chunks confirm at their lock; let them.
    std::uint32_t lock = 0;
    for (const auto& e : fallback_mixer.emissions()) lock = std::max(lock, e.tx.lock_height);
    if (ledger.height() <= lock) ledger.advance_height(lock + 1 - ledger.height());
  }

  // Adversary view: xpubs from MainTC, refund values, request times.
  std::vector<mixer::CustomerObservation> obs;
  for (std::uint32_t i = 0; i < parties.size(); ++i)
    obs.push_back({i + 1, parties[i].customer->xpub(), parties[i].refunds, parties[i].request_height});
  out.report = mixer::analyze_linkage(ledger, mix_ids, obs, c.k, c.seed, truth, c.lock_blocks);
  if (!out.report.outputs.empty()) {
    auto rng = mixer::seeded_rng(c.seed, "designated");
    auto d = mixer::bounded(rng, out.report.outputs.size());
    out.designated_correct = out.report.truth[d] && *out.report.truth[d] == out.report.guesses[d];
  }

  // Refundees claim their chunks.
  if (!c.aggregate) {
    for (std::uint32_t i = 0; i < parties.size(); ++i) {
      for (std::size_t r = 0; r < parties[i].refundees.size(); ++r) {
        const auto& ref = *parties[i].refundees[r];
        // Each entry's chunks sit at child indexes 0..k-1 of its own refundee.
        auto sweeps = mixer::sweep_chunks(ledger, ref.wallet_key().priv, ref.xpub(), c.k, plain[i].masking_pub,
                                          ref.wallet_key().pub);
        for (const auto& t : sweeps) ledger.broadcast(t);
      }
    }
    ledger.advance_height();
    for (std::uint32_t i = 0; i < parties.size(); ++i)
      for (std::size_t r = 0; r < parties[i].refundees.size(); ++r)
        if (parties[i].refundees[r]->balance() != parties[i].refunds[r]) out.swept_all = false;
  } else {
    // Every chunk is redeemed jointly and proven.
    std::map<Hash20, tx::OutPoint> script_index;
    std::map<Hash20, tx::OutPoint> fallback_index;
    for (const auto& id : mix_ids) {
      const auto* t = ledger.find_tx(id);
      if (!t) continue;
      for (std::uint32_t o = 0; o < t->outputs.size(); ++o) {
        if (auto* sh = std::get_if<tx::ScriptHash>(&t->outputs[o].script)) script_index[sh->script_hash] = {id, o};
        if (auto* pk = std::get_if<tx::PayToPubkeyHash>(&t->outputs[o].script)) fallback_index[pk->pubkey_hash] = {id, o};
      }
    }
    struct Pending {
      const mixer::AggregatePlan* plan;
      const mixer::AggregateChunk* chunk;
      tx::OutPoint joint, fallback;
      TxId redeem;
    };
    std::vector<Pending> done;
    for (std::uint32_t i = 0; i < parties.size(); ++i) {
      const auto& a = agg[i];
      for (const auto& ch : a.chunks) {
        acct.own("customers", ch.masked_fallback);
        auto js = script_index.find(ch.script.hash());
        auto fs = fallback_index.find(tx::pubkey_hash(ch.masked_fallback));
        if (js == script_index.end() || fs == fallback_index.end()) {
          out.swept_all = false;
          continue;
        }
        const auto& ref = *parties[i].refundees[ch.entry];
        std::vector<Scalar> signers{parties[i].customer->masked_child_private(ch.customer_index, a.m1.pub),
                                    ref.masked_child_private(ch.j, a.m1.pub)};
        auto redeem = tx::build_redeem(*ledger.find_tx(js->second.txid), js->second.index, signers,
                                       ref.wallet_key().pub, ch.script);
        if (ledger.broadcast(redeem).status == BroadcastStatus::Rejected) out.swept_all = false;
        done.push_back({&a, &ch, js->second, fs->second, tx::txid(redeem)});
      }
    }
    ledger.advance_height();
    for (std::uint32_t i = 0; i < parties.size(); ++i)
      for (std::size_t r = 0; r < parties[i].refundees.size(); ++r)
        if (parties[i].refundees[r]->balance() != parties[i].refunds[r]) out.swept_all = false;
    for (const auto& d : done) {
      ++out.proofs_total;
      RefundRecord rec{d.plan->main_txid, d.joint.txid, d.fallback.txid, d.redeem};
      try {
        auto proof = recovery::make_linkage_proof(rec, d.plan->m1.priv, ledger, 16, d.chunk->customer_index);
        if (recovery::verify_linkage_proof(proof, ledger).ok() && proof.child_index == d.chunk->customer_index) ++out.proofs_ok;
      } catch (const Error&) {
      }
    }
  }

  auto [sum, table] = acct.close();
  out.conserved = sum == 0 && ledger.total_supply() == supply;
  out.audit_ok = ledger.audit().ok() && keylog.violations().empty();
  log.log("books", ledger.height(), "close", table);
  out.transcript = log.text();
  out.ledger = std::make_shared<SimLedger>(std::move(ledger));
  return out;
}

struct MixStudy {
  std::size_t trials = 0;
  std::size_t designated_hits = 0;
  double mean_accuracy = 0.0;
  double baseline = 0.0;
  double p_value = 1.0;
  bool all_mixed = true;
  bool all_equal = true;
  bool all_swept = true;
  bool all_conserved = true;
  bool all_audited = true;
  std::size_t proofs_ok = 0;
  std::size_t proofs_total = 0;

  std::string line(std::string_view label) const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-10s trials=%zu accuracy=%.3f baseline=%.3f designated=%zu/%zu p=%.4f", label.data(),
                  trials, mean_accuracy, baseline, designated_hits, trials, p_value);
    std::string s = buf;
    if (proofs_total) s += " proofs=" + std::to_string(proofs_ok) + "/" + std::to_string(proofs_total);
    return s;
  }
};

inline MixStudy study(MixTrialConfig base, std::size_t trials) {
  MixStudy st;
  st.trials = trials;
  st.baseline = 1.0 / base.customers;
  double acc = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    auto c = base;
    c.seed = base.seed * 1'000'003 + t;
    auto r = run_mix_trial(c);
    acc += r.report.accuracy;
    st.designated_hits += r.designated_correct;
    st.all_mixed &= r.every_tx_mixed;
    st.all_equal &= r.equal_values;
    st.all_swept &= r.swept_all;
    st.all_conserved &= r.conserved;
    st.all_audited &= r.audit_ok;
    st.proofs_ok += r.proofs_ok;
    st.proofs_total += r.proofs_total;
  }
  if (trials) st.mean_accuracy = acc / static_cast<double>(trials);
  st.p_value = mixer::binomial_two_sided_p(st.designated_hits, trials, st.baseline);
  return st;
}

inline constexpr double kAlpha = 0.01;
inline constexpr double kBaselineTolerance = 0.10;

inline bool at_chance(const MixStudy& s) {
  return s.p_value >= kAlpha && std::abs(s.mean_accuracy - s.baseline) <= kBaselineTolerance;
}

inline Verdict mixing_scenario(const Options& opt, bool aggregate) {
  opt.params.require_known({"customers", "k", "trials", "lock"});
  Run run(aggregate ? "Aggregate" : "Mixer", opt);
  MixTrialConfig c;
  c.customers = static_cast<std::uint32_t>(opt.params.get("customers", 2, 2, 8));
  c.k = static_cast<std::uint32_t>(opt.params.get("k", 4, 1, 16));
  c.aggregate = aggregate;
  c.mix = opt.defense;
  c.lock_blocks = static_cast<std::uint32_t>(opt.params.get("lock", ledger::kOneWeekBlocks, 1, 100'000));
  c.seed = opt.seed;
  const auto trials = static_cast<std::size_t>(opt.params.get("trials", 200, 1, 10'000));
  if (aggregate && c.k * 4 > 16) throw Error(Errc::ConfigError, "aggregate mode supports k <= 4");

  auto detailed = run_mix_trial(c);
  run.log().log("scenario", 0, "detailed-trial", "seed=" + std::to_string(c.seed));
  std::string transcript = detailed.transcript;

  auto main = study(c, trials);
  std::string report = main.line(opt.defense ? "mixed" : "unmixed") + "\n";

  if (!opt.defense) {
    run.check("unmixed-outputs-linkable", main.mean_accuracy == 1.0, main.line("unmixed"));
    run.check("conservation", main.all_conserved);
    run.check("ledger-audit", main.all_audited);
    run.verdict().report = report;
    auto v = run.finish();
    v.transcript = transcript + v.transcript;
    v.ledger = detailed.ledger;
    return v;
  }

  auto control_cfg = c;
  control_cfg.mix = false;
  auto control = study(control_cfg, std::max<std::size_t>(20, trials / 10));
  auto ablation_cfg = c;
  ablation_cfg.equal_chunks = false;
  auto ablation = study(ablation_cfg, std::max<std::size_t>(20, trials / 10));
  report += control.line("control") + "\n" + ablation.line("ablation") + "\n";

  run.check("every-tx-mixes-customers", main.all_mixed && detailed.every_tx_mixed,
            std::to_string(detailed.mix_txs) + " transactions in the detailed trial");
  run.check("equal-chunk-values", main.all_equal);
  run.check(aggregate ? "chunks-redeemed" : "refundees-sweep-all", main.all_swept);
  run.check("accuracy-at-chance", at_chance(main), main.line("mixed"));
  run.check("unmixed-control-linkable", control.mean_accuracy == 1.0, control.line("control"));
  run.check("unequal-chunks-leak", ablation.mean_accuracy > ablation.baseline + kBaselineTolerance &&
                                       ablation.p_value < kAlpha,
            ablation.line("ablation"));
  if (aggregate)
    run.check("proof-per-chunk", main.proofs_total > 0 && main.proofs_ok == main.proofs_total,
              std::to_string(main.proofs_ok) + "/" + std::to_string(main.proofs_total));
  run.check("conservation", main.all_conserved && detailed.conserved);
  run.check("ledger-audit", main.all_audited && detailed.audit_ok, "audit and key freshness in every trial");
  run.verdict().report = report;
  auto v = run.finish();
  v.transcript = transcript + v.transcript;
  v.ledger = detailed.ledger;
  return v;
}

// ---- dispatch -------------------------------------------------------------------

inline Verdict run_scenario(Kind k, const Options& opt) {
  switch (k) {
    case Kind::HonestRefund: return honest_refund(opt);
    case Kind::Silkroad: return silkroad(opt);
    case Kind::Marketplace: return marketplace(opt);
    case Kind::MultiSigner: return multi_signer(opt);
    case Kind::Recovery: return recovery_scenario(opt);
    case Kind::Mixer: return mixing_scenario(opt, false);
    case Kind::Aggregate: return mixing_scenario(opt, true);
  }
  throw Error(Errc::ConfigError, "unknown scenario");
}

}  // namespace refund::scenario
