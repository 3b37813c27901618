#pragma once

#include <random>

#include "oracle.hpp"
#include "refund/group.hpp"
#include "refund/keys.hpp"

namespace testing_support {

inline const refund::Group& toy_group() {
  static const refund::Group g(refund::Group::Params{"toy1051", "41B", "0", "7", "3", "181", "445"});
  return g;
}

inline oracle::Pt to_oracle(const refund::Point& p) {
  if (p.infinity) return {};
  return {oracle::from_be(p.x.data(), 32), oracle::from_be(p.y.data(), 32), false};
}

inline oracle::cpp_int to_oracle(const refund::Scalar& s) { return oracle::from_be(s.be.data(), 32); }

inline refund::Scalar from_oracle(const oracle::cpp_int& v) { return refund::Scalar{oracle::to_be32(v)}; }

inline refund::Point point_from_hex(const std::string& h, const refund::Group& g = refund::Group::secp256k1()) {
  return g.decode(refund::from_hex(h));
}

inline std::string hex(const refund::Point& p, const refund::Group& g = refund::Group::secp256k1()) {
  return refund::to_hex(g.encode(p));
}

inline std::string hex(const refund::Scalar& s) { return refund::to_hex(s.view()); }

// Uniform nonzero scalar from a seeded generator.
inline refund::Scalar random_scalar(std::mt19937_64& rng, const refund::Group& g = refund::Group::secp256k1()) {
  for (;;) {
    std::array<std::uint8_t, 32> raw{};
    for (auto& b : raw) b = static_cast<std::uint8_t>(rng());
    auto s = g.reduce(raw);
    if (!s.is_zero()) return s;
  }
}

inline refund::keys::ChainCode random_chain(std::mt19937_64& rng) {
  refund::keys::ChainCode c;
  for (auto& b : c.data) b = static_cast<std::uint8_t>(rng());
  return c;
}

inline oracle::Bytes bytes(const refund::keys::ChainCode& c) { return oracle::Bytes(c.data.begin(), c.data.end()); }

}  // namespace testing_support
