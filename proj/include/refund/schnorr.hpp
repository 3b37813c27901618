#pragma once

// Deterministic Schnorr signatures, 64 bytes: e || s with
//   k = HMAC-SHA512(priv, digest) mod n,  R = kG,
//   e = SHA256("schnorr" || enc(R) || enc(Q) || digest) mod n,
//   s = k + e*x mod n.
// Verification recomputes R = sG - eQ.

#include "refund/crypto.hpp"
#include "refund/group.hpp"

namespace refund::sig {

using Signature = FixedBytes<64>;

namespace detail {

inline Scalar challenge(const Point& r, const Point& q, const Hash32& digest, const Group& g) {
  static constexpr std::uint8_t kTag[] = {'s', 'c', 'h', 'n', 'o', 'r', 'r'};
  auto er = g.encode(r);
  auto eq = g.encode(q);
  return g.reduce(sha256({ByteView(kTag), er.view(), eq.view(), digest.view()}).view());
}

}  // namespace detail

inline Signature sign(const Scalar& priv, const Hash32& digest, const Group& g = Group::secp256k1()) {
  if (priv.is_zero()) throw Error(Errc::InvalidArgument, "zero private key");
  Scalar k;
  Bytes nonce_input(digest.data.begin(), digest.data.end());
  for (std::uint8_t counter = 0; k.is_zero(); ++counter) {
    nonce_input.push_back(counter);
    auto mac = hmac_sha512(priv.view(), nonce_input);
    k = g.reduce(mac.view());
  }
  auto q = g.mul_base(priv);
  auto r = g.mul_base(k);
  auto e = detail::challenge(r, q, digest, g);
  auto s = g.add(k, g.mul(e, priv));
  Signature out;
  std::copy(e.be.begin(), e.be.end(), out.data.begin());
  std::copy(s.be.begin(), s.be.end(), out.data.begin() + 32);
  return out;
}

inline bool verify(const Point& pub, const Hash32& digest, const Signature& signature,
                   const Group& g = Group::secp256k1()) {
  if (pub.is_identity()) return false;
  Scalar e, s;
  std::copy_n(signature.data.begin(), 32, e.be.begin());
  std::copy_n(signature.data.begin() + 32, 32, s.be.begin());
  if (!g.in_range(e) || !g.in_range(s)) return false;
  auto r = g.mul_add(s, g.neg(e), pub);
  if (r.is_identity()) return false;
  return detail::challenge(r, pub, digest, g) == e;
}

}  // namespace refund::sig
