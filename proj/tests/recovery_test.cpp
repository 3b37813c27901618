#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "refund/recovery.hpp"

using namespace refund;
using namespace refund::proto;
using namespace refund::recovery;

namespace {

RefundEntry entry(const Point& refundee, Amount v) { return RefundEntry{std::nullopt, refundee, v}; }

// A merchant with several customers; lock kept short where the test allows.
struct Shop {
  SimLedger ledger;
  MerchantRegistry registry;
  Merchant merchant;
  std::vector<std::unique_ptr<Customer>> customers;

  explicit Shop(MerchantConfig cfg = {}) : merchant("shop", "shop-seed", ledger, registry, cfg) {
    fund_merchant(ledger, merchant, 40, 1'000'000);
  }

  Customer& add_customer(const std::string& name, Amount funds) {
    customers.push_back(std::make_unique<Customer>(name, name + "-seed", ledger));
    ledger.mint({tx::pay_to_pubkey(customers.back()->wallet_key().pub, funds)});
    return *customers.back();
  }

  // Pays and confirms; returns the request.
  PaymentRequest pay(Customer& c, Amount amount, std::vector<RefundEntry> plan) {
    auto req = merchant.create_request(amount);
    merchant.process_payment(c.pay(req, registry, std::move(plan), false));
    ledger.advance_height();
    return req;
  }

  void advance_past(std::uint32_t h) {
    if (ledger.height() <= h) ledger.advance_height(h + 1 - ledger.height());
  }
};

}  // namespace

// ---- storage --------------------------------------------------------------------

TEST(Storage, RecordIsAlways128Bytes) {
  for (std::uint32_t n : {1u, 3u, 10u}) {
    Shop shop;
    auto& c = shop.add_customer("c", 100'000);
    std::vector<RefundEntry> plan;
    for (std::uint32_t i = 0; i < n; ++i) plan.push_back(entry(keys::keygen("r" + std::to_string(i)).pub, 1000));
    auto req = shop.pay(c, 100'000, plan);
    shop.merchant.issue_refund(req.merchant_data);
    const auto& rec = shop.merchant.session(req.merchant_data).record;
    EXPECT_EQ(record_size(rec), 128u) << n;
    auto bytes = rec.serialize();
    ASSERT_EQ(bytes.size(), 128u);
    EXPECT_TRUE(std::equal(rec.main_txid.data.begin(), rec.main_txid.data.end(), bytes.begin()));
    EXPECT_TRUE(std::equal(rec.tc2_txid.data.begin(), rec.tc2_txid.data.end(), bytes.begin() + 64));
    EXPECT_TRUE(std::all_of(bytes.begin() + 96, bytes.end(), [](auto b) { return b == 0; }));
    EXPECT_EQ(RefundRecord::deserialize(bytes), rec);
  }
}

TEST(Storage, EndorsementSchemeFormula) {
  EXPECT_EQ(mccorry_storage({1, 0, 0}), 252u);
  EXPECT_EQ(mccorry_storage({1, 72, 300}), 252u + 72 + 300);
  EXPECT_EQ(mccorry_storage({5, 72, 1000}), 1492u);
  EXPECT_EQ(mccorry_storage({10, 72, 0}), 702u);
  EXPECT_THROW(mccorry_storage({0, 72, 0}), Error);
  EXPECT_THROW(mccorry_storage({1, 72, 50'001}), Error);
  auto table = storage_table({10, 72, 0});
  EXPECT_NE(table.find("702"), std::string::npos);
  EXPECT_NE(table.find("128"), std::string::npos);
}

TEST(Storage, TxidRecordAlwaysSmallerProperty) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    StorageModel m{static_cast<std::uint32_t>(1 + rng() % 100), 64 + rng() % 200, rng() % 50'001};
    EXPECT_GT(mccorry_storage(m), RefundRecord::kSize);
  }
}

TEST(Database, FileRoundTripAndWipe) {
  auto path = std::filesystem::temp_directory_path() / "refund_db_test.bin";
  RefundDatabase db(path);
  RefundRecord a{sha256("m1"), sha256("a"), sha256("b"), {}};
  RefundRecord b{sha256("m2"), sha256("c"), sha256("d"), sha256("e")};
  db.upsert(a);
  db.upsert(b);
  EXPECT_EQ(std::filesystem::file_size(path), 256u);
  a.redeem_txid = sha256("f");
  db.upsert(a);
  EXPECT_EQ(std::filesystem::file_size(path), 256u);
  EXPECT_EQ(RefundDatabase::load(path), db.records());

  std::filesystem::resize_file(path, 200);
  EXPECT_THROW(RefundDatabase::load(path), Error);
  db.wipe();
  EXPECT_FALSE(std::filesystem::exists(path));
  EXPECT_TRUE(db.records().empty());
}

// ---- proofs ---------------------------------------------------------------------

namespace {

struct Redeemed {
  Shop shop;
  keys::KeyPair refundee = keys::keygen("silkroad");
  PaymentRequest req;
  RefundRecord record;

  explicit Redeemed(bool joint) {
    auto& c = shop.add_customer("c", 50'000);
    req = shop.pay(c, 50'000, {entry(refundee.pub, 50'000)});
    const auto& issued = shop.merchant.issue_refund(req.merchant_data);
    shop.ledger.advance_height();
    auto dest = keys::keygen("dest").pub;
    auto redeem = joint ? c.redeem_joint(issued.tc1, 0, 0, refundee.priv, dest) : c.redeem_fallback(issued.tc2, 0, 1, dest);
    if (!joint) shop.advance_past(issued.lock_height - 1);
    EXPECT_NE(shop.ledger.broadcast(redeem).status, ledger::BroadcastStatus::Rejected);
    shop.advance_past(issued.lock_height);
    shop.merchant.monitor();
    record = shop.merchant.session(req.merchant_data).record;
  }
};

}  // namespace

TEST(Linkage, JointRedemptionProofVerifies) {
  Redeemed r(true);
  auto proof = generate_linkage_proof(r.record, r.shop.merchant.wallet(), r.shop.ledger);
  EXPECT_EQ(proof.child_index, 0u);
  EXPECT_TRUE(proof.script.contains(r.refundee.pub));
  auto v = verify_linkage_proof(proof, r.shop.ledger);
  EXPECT_TRUE(v.ok()) << to_string(v.reason);
}

TEST(Linkage, FallbackOnlyHasNothingToProve) {
  Redeemed r(false);
  ASSERT_TRUE(r.record.redeemed());
  try {
    generate_linkage_proof(r.record, r.shop.merchant.wallet(), r.shop.ledger);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NotRedeemed);
  }
  auto pending = r.record;
  pending.redeem_txid = {};
  EXPECT_THROW(generate_linkage_proof(pending, r.shop.merchant.wallet(), r.shop.ledger), Error);
}

TEST(Linkage, TamperedProofsFail) {
  Redeemed r(true);
  auto proof = generate_linkage_proof(r.record, r.shop.merchant.wallet(), r.shop.ledger);

  auto bad_index = proof;
  bad_index.child_index = 1;
  EXPECT_EQ(verify_linkage_proof(bad_index, r.shop.ledger).reason, ProofCheck::ChildMismatch);

  auto bad_scalar = proof;
  bad_scalar.masking_priv.be[31] ^= 1;
  EXPECT_EQ(verify_linkage_proof(bad_scalar, r.shop.ledger).reason, ProofCheck::MaskMismatch);

  auto foreign_xpub = proof;
  foreign_xpub.xpub.chain_code = sha256("other");
  EXPECT_EQ(verify_linkage_proof(foreign_xpub, r.shop.ledger).reason, ProofCheck::XpubNotInPayment);

  // A redeem that never reached the chain.
  auto off_chain = proof;
  off_chain.record.redeem_txid = sha256("forged redeem");
  EXPECT_EQ(verify_linkage_proof(off_chain, r.shop.ledger).reason, ProofCheck::ChainDataMissing);

  // A confirmed transaction that does not spend the TC1 output.
  auto wrong_spender = proof;
  wrong_spender.record.redeem_txid = r.record.main_txid;
  EXPECT_EQ(verify_linkage_proof(wrong_spender, r.shop.ledger).reason, ProofCheck::NotSpentByRedeem);
}

// ---- recovery ------------------------------------------------------------------

namespace {

// Three paid sessions: two redeemed jointly, one via the fallback; a fourth
// customer's refund stays unredeemed when `with_pending`.
struct History {
  Shop shop;
  std::vector<RefundRecord> before;

  explicit History(bool with_pending) : shop(MerchantConfig{.lock_blocks = 30}) {
    std::vector<std::pair<Customer*, const IssuedRefund*>> issued;
    std::vector<keys::KeyPair> refundees;
    const int n = with_pending ? 4 : 3;
    for (int i = 0; i < n; ++i) {
      auto& c = shop.add_customer("cust" + std::to_string(i), 40'000);
      refundees.push_back(keys::keygen("refundee" + std::to_string(i)));
      std::vector<RefundEntry> plan{entry(refundees.back().pub, 25'000)};
      if (i == 1) plan.push_back(entry(keys::keygen("extra").pub, 5'000));
      auto req = shop.pay(c, 40'000, plan);
      issued.emplace_back(&c, &shop.merchant.issue_refund(req.merchant_data));
      shop.ledger.advance_height();
    }
    auto dest = keys::keygen("dest").pub;
    shop.ledger.broadcast(issued[0].first->redeem_joint(issued[0].second->tc1, 0, 0, refundees[0].priv, dest));
    shop.ledger.broadcast(issued[1].first->redeem_joint(issued[1].second->tc1, 0, 0, refundees[1].priv, dest));
    shop.advance_past(issued[2].second->lock_height + 1);
    shop.ledger.broadcast(issued[2].first->redeem_fallback(issued[2].second->tc2, 0, 1, dest));
    shop.advance_past(shop.ledger.height() + 35);
    shop.merchant.monitor();
    before = sorted(shop.merchant.database().records());
  }
};

}  // namespace

TEST(Recovery, ReproducesWipedDatabase) {
  History h(false);
  ASSERT_EQ(h.before.size(), 3u);
  for (const auto& r : h.before) ASSERT_TRUE(r.redeemed());
  h.shop.merchant.database().wipe();

  // A fresh wallet object: nothing cached, only the seed survives.
  DeterministicWallet wallet(to_bytes("wallet:shop-seed"), 8);
  auto res = recover_database(wallet, h.shop.ledger);
  EXPECT_EQ(res.records, h.before);
  EXPECT_TRUE(res.pending.empty());
  EXPECT_TRUE(res.unmatched.empty());

  const std::uint64_t two_k = 256;
  EXPECT_EQ(res.stats.payments, 3u);
  EXPECT_LE(res.stats.key_generations, 2 * res.stats.payments * two_k);
  EXPECT_LE(res.stats.searches, res.stats.refund_txs * two_k);

  // Idempotent, and a no-op relative to an intact database.
  EXPECT_EQ(recover_database(wallet, h.shop.ledger).records, res.records);
}

TEST(Recovery, UnredeemedRefundGivesPartialRecord) {
  History h(true);
  ASSERT_EQ(h.before.size(), 4u);
  DeterministicWallet wallet(to_bytes("wallet:shop-seed"), 8);
  auto res = recover_database(wallet, h.shop.ledger);
  EXPECT_EQ(res.records, h.before);
  ASSERT_EQ(res.pending.size(), 1u);
  auto it = std::find_if(res.records.begin(), res.records.end(), [&](const auto& r) { return r.main_txid == res.pending[0]; });
  ASSERT_NE(it, res.records.end());
  EXPECT_FALSE(it->redeemed());
  EXPECT_FALSE(it->tc1_txid.is_zero());
}
