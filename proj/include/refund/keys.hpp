#pragma once

// Non-hardened child key derivation and Diffie-Hellman masking of child keys.
//
//   child   = parent + H_l(chain_code, enc(parent) || be32(index)) * G
//   masked  = child  + H*(m * child) * G
//
// H_l is the leftmost 256 bits of HMAC-SHA512 keyed by the chain code; H* is
// the same construction keyed by the fixed string "H*" over the compressed
// point. Both are reduced mod n. Whoever holds the child private key c' can
// compute the masked private key c' + H*(c' * M) because c'*M = m*child.

#include "refund/crypto.hpp"
#include "refund/group.hpp"

namespace refund::keys {

inline constexpr std::uint32_t kHardenedIndex = 0x80000000u;

struct KeyPair {
  Scalar priv;
  Point pub;
};

using ChainCode = Hash32;

struct ExtendedPublicKey {
  Point pubkey;
  ChainCode chain_code;

  auto operator<=>(const ExtendedPublicKey&) const = default;
};

// 33-byte compressed point followed by the 32-byte chain code.
inline constexpr std::size_t kXpubEncodedSize = 65;

inline Bytes encode_xpub(const ExtendedPublicKey& x, const Group& g = Group::secp256k1()) {
  Bytes out;
  out.reserve(kXpubEncodedSize);
  auto p = g.encode(x.pubkey);
  out.insert(out.end(), p.data.begin(), p.data.end());
  out.insert(out.end(), x.chain_code.data.begin(), x.chain_code.data.end());
  return out;
}

inline ExtendedPublicKey decode_xpub(ByteView v, const Group& g = Group::secp256k1()) {
  if (v.size() != kXpubEncodedSize) throw Error(Errc::InvalidEncoding, "xpub must be 65 bytes");
  ExtendedPublicKey x;
  x.pubkey = g.decode(v.first(33));
  if (x.pubkey.is_identity()) throw Error(Errc::InvalidEncoding, "xpub pubkey is the identity");
  x.chain_code = ChainCode::from(v.subspan(33));
  return x;
}

// Deterministic key pair: k = SHA256(seed) mod n, re-hashing on zero.
inline KeyPair keygen(ByteView seed, const Group& g = Group::secp256k1()) {
  if (seed.empty()) throw Error(Errc::InvalidArgument, "empty seed");
  auto h = sha256(seed);
  Scalar k = g.reduce(h.view());
  while (k.is_zero()) {
    h = sha256(h.view());
    k = g.reduce(h.view());
  }
  return {k, g.mul_base(k)};
}

inline KeyPair keygen(std::string_view seed, const Group& g = Group::secp256k1()) {
  return keygen(ByteView(reinterpret_cast<const std::uint8_t*>(seed.data()), seed.size()), g);
}

inline Scalar h_star(const Point& p, const Group& g = Group::secp256k1()) {
  static constexpr std::uint8_t kDomain[] = {'H', '*'};
  auto mac = hmac_sha512(kDomain, g.encode(p).view());
  return g.reduce(ByteView(mac.data.data(), 32));
}

// H_l(chain_code, enc(pubkey) || be32(index)) mod n.
inline Scalar child_tweak(const ExtendedPublicKey& parent, std::uint32_t index,
                          const Group& g = Group::secp256k1()) {
  if (index >= kHardenedIndex) throw Error(Errc::IndexOutOfRange, "hardened index");
  std::array<std::uint8_t, 37> msg{};
  auto enc = g.encode(parent.pubkey);
  std::copy(enc.data.begin(), enc.data.end(), msg.begin());
  for (int i = 0; i < 4; ++i) msg[33 + i] = static_cast<std::uint8_t>(index >> (24 - 8 * i));
  auto mac = hmac_sha512(parent.chain_code.view(), msg);
  auto tweak = g.reduce(ByteView(mac.data.data(), 32));
  if (tweak.is_zero()) throw Error(Errc::DegenerateChild, "tweak is zero mod n");
  return tweak;
}

inline Point derive_child_public(const ExtendedPublicKey& parent, std::uint32_t index,
                                 const Group& g = Group::secp256k1()) {
  auto tweak = child_tweak(parent, index, g);
  auto child = g.add(parent.pubkey, g.mul_base(tweak));
  if (child.is_identity()) throw Error(Errc::DegenerateChild, "child is the identity");
  return child;
}

inline Scalar derive_child_private(const Scalar& parent_priv, const ExtendedPublicKey& parent,
                                   std::uint32_t index, const Group& g = Group::secp256k1()) {
  if (index >= kHardenedIndex) throw Error(Errc::IndexOutOfRange, "hardened index");
  if (g.mul_base(parent_priv) != parent.pubkey)
    throw Error(Errc::KeyMismatch, "parent private key does not match xpub");
  auto child = g.add(parent_priv, child_tweak(parent, index, g));
  if (child.is_zero()) throw Error(Errc::DegenerateChild, "child is the identity");
  return child;
}

// First index >= start that yields a non-degenerate child.
inline std::uint32_t next_valid_index(const ExtendedPublicKey& parent, std::uint32_t start,
                                      const Group& g = Group::secp256k1()) {
  for (std::uint32_t i = start; i < kHardenedIndex; ++i) {
    try {
      derive_child_public(parent, i, g);
      return i;
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateChild) throw;
    }
  }
  throw Error(Errc::IndexOutOfRange, "no valid child index left");
}

// Canonical 32-byte big-endian encoding of H*(priv * peer).
inline Hash32 dh_shared(const Scalar& priv, const Point& peer_pub, const Group& g = Group::secp256k1()) {
  if (peer_pub.is_identity()) throw Error(Errc::IdentityPoint, "peer key is the identity");
  auto shared = g.mul(priv, peer_pub);
  if (shared.is_identity()) throw Error(Errc::IdentityPoint, "shared point is the identity");
  Hash32 out;
  out.data = h_star(shared, g).be;
  return out;
}

struct MaskedChildKey {
  Point masked_point;
  std::uint32_t parent_index = 0;
  Point masking_pubkey_hint;

  auto operator<=>(const MaskedChildKey&) const = default;
};

inline MaskedChildKey mask_child(const Point& child_pub, const Scalar& merchant_priv,
                                 std::uint32_t index = 0, const Group& g = Group::secp256k1()) {
  if (child_pub.is_identity()) throw Error(Errc::IdentityPoint, "child key is the identity");
  auto secret = g.reduce(dh_shared(merchant_priv, child_pub, g).view());
  MaskedChildKey out;
  out.masked_point = g.add(child_pub, g.mul_base(secret));
  if (out.masked_point.is_identity()) throw Error(Errc::IdentityPoint, "masked key is the identity");
  out.parent_index = index;
  out.masking_pubkey_hint = g.mul_base(merchant_priv);
  return out;
}

inline Scalar unmask_child_private(const Scalar& child_priv, const Point& merchant_pub,
                                   const Group& g = Group::secp256k1()) {
  if (merchant_pub.is_identity()) throw Error(Errc::IdentityPoint, "merchant key is the identity");
  return g.add(child_priv, g.reduce(dh_shared(child_priv, merchant_pub, g).view()));
}

// Merchant-side check: does `masked` come from `child_pub` under `merchant_priv`?
inline bool is_masked_from(const Point& masked, const Point& child_pub, const Scalar& merchant_priv,
                           const Group& g = Group::secp256k1()) {
  return !child_pub.is_identity() && mask_child(child_pub, merchant_priv, 0, g).masked_point == masked;
}

}  // namespace refund::keys
