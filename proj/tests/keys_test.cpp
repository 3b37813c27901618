#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "refund/keys.hpp"
#include "support.hpp"

using namespace refund;
using namespace refund::keys;
using namespace testing_support;

namespace {

const Group& G = Group::secp256k1();

// Frozen from tests/gen/gen_vectors.cpp (reference arithmetic only).
constexpr const char* kKeygenA = "ca978112ca1bbdcafac231b39a23dc4da786eff8147c4e72b9807785afee48bb";
constexpr const char* kKeygenAPub = "034da006f958beba78ec54443df4a3f52237253f7ae8cbdb17dccf3feaa57f3126";
constexpr const char* kChildVector1 = "03c3ac9c9d146a2e86c79f674cf705f875c7249dbe88af1fe5fe01f7bee5093e89";
constexpr const char* kChildPrivOne = "23f2740ea906f427c10cd03910c510f0c468e703f042a8d06c5b7721f2c15b34";
constexpr const char* kDhXY = "b5429976ff898462a7393df17d168dcf6f96ccbae21c3ce30e795724605c4a99";
constexpr const char* kMaskChildMerchant = "0330978de401ba4eee1f9aeecbeead3a5c29fb1aff2c1971bc0b80594cb9a4024a";
constexpr const char* kUnmaskChildMerchant = "b495a9d0883b3b6f577902fa7d4fd319d7a7773273070c9c41d0c5bb6c4a3632";
constexpr const char* kUnmaskOne = "8da71989a69890b05574d2308bb5075945a9d38da02baaa66a297822ddd8cd91";

ExtendedPublicKey xpub_of(const KeyPair& kp, const ChainCode& chain) { return {kp.pub, chain}; }

}  // namespace

// ---- group -------------------------------------------------------------------

TEST(Group, KnownMultiplesOfGenerator) {
  EXPECT_EQ(hex(G.mul_base(G.scalar(1))), "0279be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798");
  EXPECT_EQ(hex(G.mul_base(G.scalar(2))), "02c6047f9441ed7d6d3045406e95c07cd85c778e4b8cef3ca7abac09b95c709ee5");
  EXPECT_TRUE(G.mul_base(Scalar{}).is_identity());
  EXPECT_TRUE(G.mul_base(Scalar{G.order()}).is_identity());
}

TEST(Group, MatchesReferenceOnSecp256k1) {
  std::mt19937_64 rng(7);
  const auto c = oracle::secp256k1();
  for (int i = 0; i < 20; ++i) {
    auto a = random_scalar(rng);
    auto b = random_scalar(rng);
    auto pa = G.mul_base(a);
    auto pb = G.mul_base(b);
    EXPECT_EQ(to_oracle(pa), oracle::mul(to_oracle(a), oracle::generator(c), c));
    EXPECT_EQ(to_oracle(G.add(pa, pb)), oracle::add(to_oracle(pa), to_oracle(pb), c));
    EXPECT_EQ(to_oracle(G.mul(a, pb)), oracle::mul(to_oracle(a), to_oracle(pb), c));
    EXPECT_EQ(G.decode(G.encode(pa).view()), pa);
    EXPECT_TRUE(G.on_curve(pa));
  }
}

TEST(Group, ToyCurveExhaustive) {
  const auto& toy = toy_group();
  const auto c = oracle::toy();
  auto points = oracle::all_points(c);
  ASSERT_EQ(points.size(), 1093u);  // prime order, cofactor 1

  std::set<std::pair<oracle::cpp_int, oracle::cpp_int>> seen;
  for (std::uint64_t k = 1; k < 1093; ++k) {
    auto p = toy.mul_base(toy.scalar(k));
    auto ref = oracle::mul(k, oracle::generator(c), c);
    ASSERT_EQ(to_oracle(p), ref) << "k=" << k;
    ASSERT_TRUE(oracle::on_curve(ref, c));
    seen.insert({ref.x, ref.y});
    ASSERT_EQ(toy.decode(toy.encode(p).view()), p);
  }
  EXPECT_EQ(seen.size(), 1092u);  // G generates every non-identity point
  EXPECT_TRUE(toy.mul_base(toy.scalar(1093)).is_identity());
}

TEST(Group, RejectsBadEncodings) {
  Bytes bad(33, 0);
  bad[0] = 0x05;
  EXPECT_THROW(G.decode(bad), Error);
  EXPECT_THROW(G.decode(Bytes(32, 1)), Error);
  EXPECT_TRUE(G.decode(Bytes(33, 0)).is_identity());
}

// ---- keygen ------------------------------------------------------------------

TEST(Keygen, DeterministicAndDistinct) {
  auto a1 = keygen("a");
  auto a2 = keygen("a");
  auto b = keygen("b");
  EXPECT_EQ(a1.priv, a2.priv);
  EXPECT_EQ(a1.pub, a2.pub);
  EXPECT_NE(a1.priv, b.priv);
  EXPECT_EQ(hex(a1.priv), kKeygenA);
  EXPECT_EQ(hex(a1.pub), kKeygenAPub);
}

TEST(Keygen, PublicKeyMatchesReferenceMultiplication) {
  const auto c = oracle::secp256k1();
  for (const char* seed : {"s0", "s1", "s2", "s3"}) {
    auto kp = keygen(seed);
    EXPECT_EQ(to_oracle(kp.pub), oracle::mul(to_oracle(kp.priv), oracle::generator(c), c));
  }
}

TEST(Keygen, EmptySeedRejected) { EXPECT_THROW(keygen(ByteView{}), Error); }

// ---- child derivation --------------------------------------------------------

TEST(DeriveChild, PublicPrivateConsistency) {
  auto kp = keygen("parent");
  ChainCode chain = sha256("chain");
  auto x = xpub_of(kp, chain);
  for (std::uint32_t idx : {0u, 1u, 2u, 1000u, kHardenedIndex - 1}) {
    auto priv = derive_child_private(kp.priv, x, idx);
    EXPECT_EQ(G.mul_base(priv), derive_child_public(x, idx));
  }
}

TEST(DeriveChild, DistinctIndexesGiveDistinctChildren) {
  auto x = xpub_of(keygen("parent"), sha256("chain"));
  EXPECT_NE(derive_child_public(x, 0), derive_child_public(x, 1));
}

TEST(DeriveChild, FixedVector) {
  auto x = xpub_of(keygen("vector1"), ChainCode{});
  EXPECT_EQ(hex(derive_child_public(x, 5)), kChildVector1);
}

TEST(DeriveChild, PrivateFromUnitParent) {
  ExtendedPublicKey x{G.generator(), ChainCode{}};
  EXPECT_EQ(hex(derive_child_private(G.scalar(1), x, 0)), kChildPrivOne);
}

TEST(DeriveChild, ErrorPaths) {
  auto kp = keygen("parent");
  auto other = keygen("other");
  auto x = xpub_of(kp, ChainCode{});
  try {
    derive_child_private(other.priv, x, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::KeyMismatch);
  }
  try {
    derive_child_public(x, kHardenedIndex);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IndexOutOfRange);
  }
}

// On the toy curve a zero tweak (probability 1/1093 per index) is easy to hit.
TEST(DeriveChild, DegenerateChildIsSkipped) {
  const auto& toy = toy_group();
  auto kp = keygen("toy-parent", toy);
  ExtendedPublicKey x{kp.pub, sha256("toy-chain")};
  std::optional<std::uint32_t> degenerate;
  for (std::uint32_t i = 0; i < 20000 && !degenerate; ++i) {
    try {
      derive_child_public(x, i, toy);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Errc::DegenerateChild);
      degenerate = i;
    }
  }
  ASSERT_TRUE(degenerate.has_value());
  auto next = next_valid_index(x, *degenerate, toy);
  EXPECT_GT(next, *degenerate);
  EXPECT_NO_THROW(derive_child_public(x, next, toy));
}

TEST(DeriveChild, ToyCurveMatchesReference) {
  const auto& toy = toy_group();
  const auto c = oracle::toy();
  auto kp = keygen("toy-parent", toy);
  ExtendedPublicKey x{kp.pub, sha256("toy-chain")};
  for (std::uint32_t i = 0; i < 200; ++i) {
    auto ref = oracle::derive_child(to_oracle(kp.pub), bytes(x.chain_code), i, c);
    if (ref.inf || oracle::h_l(bytes(x.chain_code), to_oracle(kp.pub), i, c) == 0) continue;
    EXPECT_EQ(to_oracle(derive_child_public(x, i, toy)), ref) << i;
    EXPECT_EQ(toy.mul_base(derive_child_private(kp.priv, x, i, toy)), derive_child_public(x, i, toy));
  }
}

TEST(DeriveChild, PropertyRandomParents) {
  std::mt19937_64 rng(11);
  const auto c = oracle::secp256k1();
  for (int i = 0; i < 100; ++i) {
    auto priv = random_scalar(rng);
    ExtendedPublicKey x{G.mul_base(priv), random_chain(rng)};
    auto idx = static_cast<std::uint32_t>(rng() % kHardenedIndex);
    auto pub = derive_child_public(x, idx);
    EXPECT_EQ(G.mul_base(derive_child_private(priv, x, idx)), pub);
    EXPECT_EQ(to_oracle(pub), oracle::derive_child(to_oracle(x.pubkey), bytes(x.chain_code), idx, c));
  }
}

TEST(DeriveChild, FreshnessOverTenThousandTrials) {
  std::mt19937_64 rng(13);
  std::set<PointEncoding> children;
  const int parents = 100;
  const int per_parent = 100;
  for (int p = 0; p < parents; ++p) {
    ExtendedPublicKey x{G.mul_base(random_scalar(rng)), random_chain(rng)};
    for (int i = 0; i < per_parent; ++i) children.insert(G.encode(derive_child_public(x, i)));
  }
  EXPECT_EQ(children.size(), static_cast<std::size_t>(parents * per_parent));
}

// ---- Diffie-Hellman masking --------------------------------------------------

TEST(DhShared, Symmetry) {
  auto a = keygen("x");
  auto b = keygen("y");
  EXPECT_EQ(dh_shared(a.priv, b.pub), dh_shared(b.priv, a.pub));
  EXPECT_EQ(to_hex(dh_shared(a.priv, b.pub)), kDhXY);
}

TEST(DhShared, UnitPeer) {
  auto a = keygen("x");
  Hash32 expected;
  expected.data = h_star(a.pub).be;
  EXPECT_EQ(dh_shared(a.priv, G.generator()), expected);
}

TEST(DhShared, IdentityRejected) {
  auto a = keygen("x");
  EXPECT_THROW(dh_shared(a.priv, Point{}), Error);
  EXPECT_THROW(dh_shared(Scalar{}, a.pub), Error);
}

TEST(MaskChild, UnmaskRoundTrip) {
  auto child = keygen("child");
  auto merchant = keygen("merchant");
  auto masked = mask_child(child.pub, merchant.priv, 3);
  EXPECT_EQ(masked.parent_index, 3u);
  EXPECT_EQ(masked.masking_pubkey_hint, merchant.pub);
  EXPECT_EQ(G.mul_base(unmask_child_private(child.priv, merchant.pub)), masked.masked_point);
  EXPECT_EQ(hex(masked.masked_point), kMaskChildMerchant);
  EXPECT_EQ(hex(unmask_child_private(child.priv, merchant.pub)), kUnmaskChildMerchant);
}

TEST(MaskChild, DistinctMerchantKeysGiveDistinctMasks) {
  auto child = keygen("child");
  EXPECT_NE(mask_child(child.pub, keygen("m1").priv).masked_point,
            mask_child(child.pub, keygen("m2").priv).masked_point);
}

TEST(UnmaskChild, UnitChildKey) {
  auto merchant = keygen("merchant");
  auto expected = G.add(G.scalar(1), h_star(merchant.pub));
  EXPECT_EQ(unmask_child_private(G.scalar(1), merchant.pub), expected);
  EXPECT_EQ(hex(expected), kUnmaskOne);
}

TEST(MaskChild, PropertyRandomKeys) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    auto c = random_scalar(rng);
    auto m = random_scalar(rng);
    EXPECT_EQ(G.mul_base(unmask_child_private(c, G.mul_base(m))), mask_child(G.mul_base(c), m).masked_point);
  }
}

TEST(MaskChild, ToyCurveMatchesReference) {
  const auto& toy = toy_group();
  const auto c = oracle::toy();
  for (std::uint64_t k = 2; k < 60; ++k) {
    auto child = toy.mul_base(toy.scalar(k));
    auto m = toy.scalar(k * 7 + 3);
    auto ref = oracle::mask(to_oracle(child), to_oracle(m), c);
    if (ref.inf) continue;
    EXPECT_EQ(to_oracle(mask_child(child, m, 0, toy).masked_point), ref);
  }
}

// ---- vector file -------------------------------------------------------------

TEST(Vectors, ChildKeyFileMatches) {
  std::ifstream in(std::string(REFUND_VECTOR_DIR) + "/child_keys.txt");
  ASSERT_TRUE(in.good());
  std::string line;
  int checked = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string seed, idx, child_hex, masked_hex;
    std::getline(ss, seed, ',');
    std::getline(ss >> std::ws, idx, ',');
    std::getline(ss >> std::ws, child_hex, ',');
    std::getline(ss >> std::ws, masked_hex);
    auto parent = keygen(seed);
    ExtendedPublicKey x{parent.pub, sha256("chain:" + seed)};
    auto merchant = keygen(seed + "/merchant");
    auto index = static_cast<std::uint32_t>(std::stoul(idx));
    auto child = derive_child_public(x, index);
    EXPECT_EQ(hex(child), child_hex) << line;
    EXPECT_EQ(hex(mask_child(child, merchant.priv, index).masked_point), masked_hex) << line;
    ++checked;
  }
  EXPECT_EQ(checked, 56);
}

TEST(Xpub, EncodingRoundTrip) {
  ExtendedPublicKey x{keygen("p").pub, sha256("c")};
  auto enc = encode_xpub(x);
  EXPECT_EQ(enc.size(), kXpubEncodedSize);
  EXPECT_EQ(decode_xpub(enc), x);
  EXPECT_THROW(decode_xpub(Bytes(64, 2)), Error);
}
