#include <gtest/gtest.h>

#include <set>

#include "refund/mixer.hpp"

using namespace refund;
using namespace refund::proto;
using namespace refund::mixer;

namespace {

const Group& G = Group::secp256k1();

// Every k-tuple of positive amounts summing to `total` whose entries differ by
// at most one, listed with the larger entries first.
std::vector<std::vector<Amount>> valid_plans(Amount total, std::uint32_t k) {
  std::vector<std::vector<Amount>> out;
  std::vector<Amount> cur;
  std::function<void(Amount)> rec = [&](Amount left) {
    if (cur.size() == k) {
      if (left == 0) out.push_back(cur);
      return;
    }
    for (Amount v = 1; v <= left; ++v) {
      if (!cur.empty() && v > cur.back()) break;
      cur.push_back(v);
      rec(left - v);
      cur.pop_back();
    }
  };
  rec(total);
  std::erase_if(out, [](const auto& p) { return p.front() - p.back() > 1; });
  return out;
}

}  // namespace

TEST(Split, EvenDivision) {
  EXPECT_EQ(split_value(100, 4).chunks, (std::vector<Amount>{25, 25, 25, 25}));
}

TEST(Split, RemainderMatchesEnumeratedPlan) {
  auto plans = valid_plans(10, 3);
  ASSERT_EQ(plans.size(), 1u);
  EXPECT_EQ(plans[0], (std::vector<Amount>{4, 3, 3}));
  EXPECT_EQ(split_value(10, 3).chunks, plans[0]);
}

TEST(Split, AgreesWithEnumerationOnSmallInputs) {
  for (Amount total = 1; total <= 24; ++total) {
    for (std::uint32_t k = 1; k <= std::min<Amount>(total, 6); ++k) {
      auto plans = valid_plans(total, k);
      ASSERT_EQ(plans.size(), 1u) << total << "/" << k;
      EXPECT_EQ(split_value(total, k).chunks, plans[0]) << total << "/" << k;
    }
  }
}

TEST(Split, ChunkTooSmall) {
  try {
    split_value(5, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ChunkTooSmall);
  }
  EXPECT_THROW(split_value(5, 0), Error);
}

TEST(Split, SumAndSpreadProperty) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    std::uint32_t k = 1 + rng() % 64;
    Amount total = static_cast<Amount>(k + rng() % 10'000'000);
    auto p = split_value(total, k);
    ASSERT_EQ(p.chunks.size(), k);
    EXPECT_EQ(std::accumulate(p.chunks.begin(), p.chunks.end(), Amount{0}), total);
    auto [lo, hi] = std::minmax_element(p.chunks.begin(), p.chunks.end());
    EXPECT_LE(*hi - *lo, 1);
  }
}

TEST(ChunkKeys, SingleChunkIsPlainComposition) {
  auto parent = keys::keygen("carol");
  keys::ExtendedPublicKey x{parent.pub, sha256("carol-chain")};
  auto m = keys::keygen("merchant-m");
  auto ks = derive_chunk_keys(x, 1, m.priv);
  ASSERT_EQ(ks.size(), 1u);
  EXPECT_EQ(ks[0].masked_point, keys::mask_child(keys::derive_child_public(x, 0), m.priv).masked_point);
}

TEST(ChunkKeys, DistinctAndUnmaskable) {
  auto parent = keys::keygen("carol");
  keys::ExtendedPublicKey x{parent.pub, sha256("carol-chain")};
  auto m = keys::keygen("merchant-m");
  auto ks = derive_chunk_keys(x, 5, m.priv);
  std::set<Point> seen;
  for (std::uint32_t j = 0; j < ks.size(); ++j) {
    seen.insert(ks[j].masked_point);
    auto child = keys::derive_child_private(parent.priv, x, j);
    EXPECT_EQ(G.mul_base(keys::unmask_child_private(child, m.pub)), ks[j].masked_point);
  }
  EXPECT_EQ(seen.size(), 5u);
  EXPECT_THROW(derive_chunk_keys(x, 0, m.priv), Error);
}

// ---- mixing ---------------------------------------------------------------------

namespace {

struct MixWorld {
  SimLedger ledger;
  MerchantRegistry registry;
  Transcript log;
  KeyLog keylog;
  Merchant merchant{"shop", "shop-seed", ledger, registry, {}, &log, &keylog};
  std::vector<std::unique_ptr<Customer>> people;

  MixWorld() { fund_merchant(ledger, merchant, 64, 100'000'000); }

  Customer& person(const std::string& name, Amount funds = 0) {
    people.push_back(std::make_unique<Customer>(name, name + "-seed", ledger, &log));
    if (funds) ledger.mint({tx::pay_to_pubkey(people.back()->wallet_key().pub, funds)});
    return *people.back();
  }

  // Pays `amount` with an extended-key refund plan; returns merchant_data.
  Bytes pay(Customer& c, Amount amount, const std::vector<std::pair<Customer*, Amount>>& refunds) {
    auto req = merchant.create_request(amount);
    std::vector<RefundEntry> plan;
    for (auto [r, v] : refunds) plan.push_back(RefundEntry{std::nullopt, r->xpub(), v});
    merchant.process_payment(c.pay(req, registry, std::move(plan), true));
    ledger.advance_height();
    return req.merchant_data;
  }

  void run(Mixer& mx, int blocks) {
    for (int i = 0; i < blocks; ++i) {
      mx.poll();
      ledger.advance_height();
    }
  }
};

std::vector<std::uint64_t> origins_of(const Emission& e) {
  std::vector<std::uint64_t> out;
  for (const auto& o : e.origins)
    if (o) out.push_back(*o);
  return out;
}

}  // namespace

TEST(Mixing, SweepRecoversFullRefund) {
  MixWorld w;
  auto& alice = w.person("alice", 50'000'000);
  auto& carol = w.person("carol");
  auto data = w.pay(alice, 40'000'000, {{&carol, 40'000'000}});
  Mixer mx(w.ledger, w.merchant.wallet(), MixConfig{.timeout_blocks = 2});
  auto r = enqueue_refund(w.merchant, data, 4, 1, mx);
  w.run(mx, 8);
  ASSERT_TRUE(mx.idle());

  auto sweeps = sweep_chunks(w.ledger, carol.wallet_key().priv, carol.xpub(), 4, r.masking_pub, carol.wallet_key().pub);
  ASSERT_EQ(sweeps.size(), 4u);
  for (const auto& t : sweeps) ASSERT_NE(w.ledger.broadcast(t).status, ledger::BroadcastStatus::Rejected);
  w.ledger.advance_height();
  EXPECT_EQ(carol.balance(), 40'000'000);
  EXPECT_TRUE(w.ledger.audit().ok());
}

TEST(Mixing, TwoCustomersEveryTxMixesBoth) {
  MixWorld w;
  auto& alice = w.person("alice", 50'000'000);
  auto& bob = w.person("bob", 50'000'000);
  auto& carol = w.person("carol");
  auto& david = w.person("david");
  auto a = w.pay(alice, 20'000'000, {{&carol, 20'000'000}});
  auto b = w.pay(bob, 20'000'000, {{&david, 20'000'000}});
  Mixer mx(w.ledger, w.merchant.wallet(), MixConfig{.seed = 9});
  enqueue_refund(w.merchant, a, 4, 100, mx);
  enqueue_refund(w.merchant, b, 4, 200, mx);
  w.run(mx, 5);
  ASSERT_TRUE(mx.idle());
  ASSERT_GE(mx.emissions().size(), 2u);
  for (const auto& e : mx.emissions()) {
    auto o = origins_of(e);
    EXPECT_EQ(std::set<std::uint64_t>(o.begin(), o.end()).size(), 2u);
    // No single-origin contiguous run covering the whole output list.
    EXPECT_FALSE(std::all_of(o.begin(), o.end(), [&](auto x) { return x == o.front(); }));
    for (std::size_t i = 0; i < e.tx.outputs.size(); ++i)
      if (e.origins[i]) {
        EXPECT_EQ(e.tx.outputs[i].value, 5'000'000);
      }
  }
  EXPECT_TRUE(mx.warnings().empty());
}

TEST(Mixing, ThreeCustomersSpreadOverSeveralTxs) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    MixWorld w;
    Mixer mx(w.ledger, w.merchant.wallet(), MixConfig{.min_customers = 3, .seed = seed});
    for (int i = 0; i < 3; ++i) {
      auto& c = w.person("c" + std::to_string(i), 10'000'000);
      auto& r = w.person("r" + std::to_string(i));
      enqueue_refund(w.merchant, w.pay(c, 8'000'000, {{&r, 8'000'000}}), 4, 10 + i, mx);
    }
    w.run(mx, 5);
    ASSERT_TRUE(mx.idle());
    std::size_t chunks = 0;
    std::set<std::uint32_t> heights;
    for (const auto& e : mx.emissions()) {
      auto o = origins_of(e);
      chunks += o.size();
      EXPECT_GE(std::set<std::uint64_t>(o.begin(), o.end()).size(), 2u) << seed;
      heights.insert(e.scheduled_height);
    }
    EXPECT_EQ(chunks, 12u);
    EXPECT_GE(mx.emissions().size(), 2u);
    EXPECT_LE(*heights.rbegin() - *heights.begin(), 2u);
  }
}

TEST(Mixing, LoneCustomerTimesOutWithWarning) {
  MixWorld w;
  auto& alice = w.person("alice", 50'000'000);
  auto& carol = w.person("carol");
  auto data = w.pay(alice, 8'000'000, {{&carol, 8'000'000}});
  Mixer mx(w.ledger, w.merchant.wallet(), MixConfig{.timeout_blocks = 4}, &w.log);
  enqueue_refund(w.merchant, data, 4, 1, mx);
  w.run(mx, 3);
  EXPECT_TRUE(mx.emissions().empty());
  EXPECT_EQ(mx.pending(), 4u);
  w.run(mx, 6);
  EXPECT_TRUE(mx.idle());
  ASSERT_EQ(mx.warnings().size(), 1u);
  EXPECT_NE(w.log.text().find("anonymity-warning"), std::string::npos);
}

TEST(Mixing, NoOriginOrParentKeyLeaks) {
  MixWorld w;
  auto& alice = w.person("alice", 50'000'000);
  auto& bob = w.person("bob", 50'000'000);
  auto& carol = w.person("carol");
  auto& david = w.person("david");
  auto a = w.pay(alice, 20'000'000, {{&carol, 20'000'000}});
  auto b = w.pay(bob, 20'000'000, {{&david, 20'000'000}});
  Mixer mx(w.ledger, w.merchant.wallet(), MixConfig{.seed = 3});
  const std::uint64_t oa = 0x5e55100a11ce0001, ob = 0x5e55100b0b000002;
  enqueue_refund(w.merchant, a, 4, oa, mx);
  enqueue_refund(w.merchant, b, 4, ob, mx);
  w.run(mx, 5);
  ASSERT_TRUE(mx.idle());

  auto contains = [](const Bytes& hay, ByteView needle) {
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
  };
  for (const auto& e : mx.emissions()) {
    auto bytes = tx::serialize(e.tx);
    for (auto origin : {oa, ob}) {
      Writer le;
      le.u64(origin);
      EXPECT_FALSE(contains(bytes, le.bytes()));
    }
    for (const auto* r : {&carol, &david}) {
      EXPECT_FALSE(contains(bytes, G.encode(r->wallet_key().pub).view()));
      EXPECT_FALSE(contains(bytes, tx::pubkey_hash(r->wallet_key().pub).view()));
    }
  }
  // Conservation: each customer's chunks add up to the refund.
  std::map<std::uint64_t, Amount> per_origin;
  for (const auto& e : mx.emissions())
    for (std::size_t i = 0; i < e.origins.size(); ++i)
      if (e.origins[i]) per_origin[*e.origins[i]] += e.tx.outputs[i].value;
  EXPECT_EQ(per_origin[oa], 20'000'000);
  EXPECT_EQ(per_origin[ob], 20'000'000);
  EXPECT_TRUE(w.ledger.audit().ok());
}

TEST(Mixing, RefundOutsideWindowRejected) {
  MixWorld w;
  auto& alice = w.person("alice", 50'000'000);
  auto& carol = w.person("carol");
  auto data = w.pay(alice, 8'000'000, {{&carol, 8'000'000}});
  w.ledger.advance_height(8641);
  Mixer mx(w.ledger, w.merchant.wallet(), MixConfig{});
  try {
    enqueue_refund(w.merchant, data, 4, 1, mx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::WindowExpired);
  }
}

TEST(Mixing, PlainRefundeeKeyRejected) {
  MixWorld w;
  auto& alice = w.person("alice", 50'000'000);
  auto req = w.merchant.create_request(8'000'000);
  w.merchant.process_payment(alice.pay(req, w.registry, {RefundEntry{std::nullopt, keys::keygen("x").pub, 8'000'000}}, true));
  w.ledger.advance_height();
  Mixer mx(w.ledger, w.merchant.wallet(), MixConfig{});
  EXPECT_THROW(enqueue_refund(w.merchant, req.merchant_data, 4, 1, mx), Error);
}

TEST(Aggregate, ConstructionShape) {
  MixWorld w;
  auto& alice = w.person("alice", 50'000'000);
  auto& carol = w.person("carol");
  auto data = w.pay(alice, 9'000'000, {{&carol, 9'000'000}});
  auto a = aggregate_refund(w.merchant, data, 3, 1);
  ASSERT_EQ(a.joint_side.size(), 3u);
  ASSERT_EQ(a.fallback_side.size(), 3u);
  for (std::uint32_t j = 0; j < 3; ++j) {
    const auto& c = a.chunks[j];
    EXPECT_TRUE(tx::is_script_hash(a.joint_side[j].output));
    EXPECT_TRUE(tx::is_p2pkh(a.fallback_side[j].output));
    EXPECT_EQ(a.joint_side[j].output.value, 3'000'000);
    EXPECT_EQ(c.masked_customer,
              keys::mask_child(keys::derive_child_public(alice.xpub(), c.customer_index), a.m1.priv).masked_point);
    EXPECT_EQ(c.masked_refundee,
              keys::mask_child(keys::derive_child_public(carol.xpub(), j), a.m1.priv).masked_point);
    EXPECT_EQ(c.fallback_index, 3u + j);
  }
  EXPECT_TRUE(w.keylog.violations().empty());
}

TEST(Binomial, ExactTwoSidedValues) {
  // Symmetric case: P(X <= 2 or X >= 8) for n=10, p=1/2 is 112/1024.
  EXPECT_NEAR(binomial_two_sided_p(2, 10, 0.5), 112.0 / 1024.0, 1e-12);
  EXPECT_NEAR(binomial_two_sided_p(5, 10, 0.5), 1.0, 1e-12);
  EXPECT_LT(binomial_two_sided_p(200, 200, 0.5), 1e-50);
  EXPECT_GT(binomial_two_sided_p(100, 200, 0.5), 0.9);
}
