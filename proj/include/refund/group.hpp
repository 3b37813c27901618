#pragma once

// Prime-order elliptic-curve group over a short-Weierstrass curve
// y^2 = x^3 + ax + b (mod p). Curve parameters are injected through
// Group::Params; secp256k1() is the default everywhere.
//
// Scalars and points are plain values (32-byte big-endian words); the group
// object performs all arithmetic. Arithmetic is delegated to OpenSSL.

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/obj_mac.h>

#include <memory>
#include <string>
#include <vector>

#include "refund/common.hpp"

namespace refund {

struct Scalar {
  std::array<std::uint8_t, 32> be{};

  bool is_zero() const {
    return std::all_of(be.begin(), be.end(), [](std::uint8_t b) { return b == 0; });
  }
  ByteView view() const { return {be.data(), be.size()}; }
  auto operator<=>(const Scalar&) const = default;
};

// Affine point; `infinity` marks the identity element.
struct Point {
  std::array<std::uint8_t, 32> x{};
  std::array<std::uint8_t, 32> y{};
  bool infinity = true;

  bool is_identity() const { return infinity; }
  auto operator<=>(const Point&) const = default;
};

// 33-byte compressed form: 0x02/0x03 parity prefix followed by the x
// coordinate. The identity encodes as 33 zero bytes.
using PointEncoding = FixedBytes<33>;

namespace detail {

struct BnDeleter {
  void operator()(BIGNUM* b) const { BN_free(b); }
};
struct BnCtxDeleter {
  void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};
struct EcGroupDeleter {
  void operator()(EC_GROUP* g) const { EC_GROUP_free(g); }
};
struct EcPointDeleter {
  void operator()(EC_POINT* p) const { EC_POINT_free(p); }
};

using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxDeleter>;
using EcPointPtr = std::unique_ptr<EC_POINT, EcPointDeleter>;

inline BnPtr bn_from(ByteView be) { return BnPtr(BN_bin2bn(be.data(), static_cast<int>(be.size()), nullptr)); }

inline BnPtr bn_from_hex(const std::string& hex) {
  BIGNUM* raw = nullptr;
  if (BN_hex2bn(&raw, hex.c_str()) == 0) throw Error(Errc::InvalidArgument, "bad curve parameter");
  return BnPtr(raw);
}

inline std::array<std::uint8_t, 32> bn_to_word(const BIGNUM* b) {
  std::array<std::uint8_t, 32> out{};
  if (BN_bn2binpad(b, out.data(), 32) != 32) throw Error(Errc::InvalidArgument, "value exceeds 256 bits");
  return out;
}

inline void check(int rc, const char* what) {
  if (rc != 1) throw std::runtime_error(std::string("OpenSSL: ") + what);
}

}  // namespace detail

class Group {
 public:
  // Hex-encoded curve parameters (no 0x prefix).
  struct Params {
    std::string name;
    std::string p, a, b;
    std::string gx, gy;
    std::string n;
  };

  explicit Group(const Params& params) : name_(params.name) {
    detail::BnCtxPtr ctx(BN_CTX_new());
    auto p = detail::bn_from_hex(params.p);
    auto a = detail::bn_from_hex(params.a);
    auto b = detail::bn_from_hex(params.b);
    EC_GROUP* raw = EC_GROUP_new_curve_GFp(p.get(), a.get(), b.get(), ctx.get());
    if (!raw) throw Error(Errc::InvalidArgument, "invalid curve parameters");
    group_.reset(raw, detail::EcGroupDeleter{});
    init_generator(params, ctx.get());
  }

  static const Group& secp256k1() {
    static const Group g(Params{
        "secp256k1",
        "FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F",
        "0",
        "7",
        "79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798",
        "483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8",
        "FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141",
    });
    return g;
  }

  const std::string& name() const { return name_; }

  // Big-endian bytes of the group order n.
  std::array<std::uint8_t, 32> order() const { return detail::bn_to_word(order_.get()); }

  // ---- scalar field ----------------------------------------------------

  // Interprets arbitrary-length big-endian bytes and reduces mod n.
  Scalar reduce(ByteView be) const {
    detail::BnCtxPtr ctx(BN_CTX_new());
    auto v = detail::bn_from(be);
    detail::BnPtr r(BN_new());
    detail::check(BN_nnmod(r.get(), v.get(), order_.get(), ctx.get()), "BN_nnmod");
    return Scalar{detail::bn_to_word(r.get())};
  }

  Scalar scalar(std::uint64_t v) const {
    std::array<std::uint8_t, 8> be{};
    for (int i = 0; i < 8; ++i) be[7 - i] = static_cast<std::uint8_t>(v >> (8 * i));
    return reduce(be);
  }

  bool in_range(const Scalar& s) const {
    auto v = detail::bn_from(s.view());
    return BN_cmp(v.get(), order_.get()) < 0;
  }

  Scalar add(const Scalar& a, const Scalar& b) const {
    return binop(a, b, [](BIGNUM* r, const BIGNUM* x, const BIGNUM* y, const BIGNUM* m, BN_CTX* c) {
      return BN_mod_add(r, x, y, m, c);
    });
  }
  Scalar sub(const Scalar& a, const Scalar& b) const {
    return binop(a, b, [](BIGNUM* r, const BIGNUM* x, const BIGNUM* y, const BIGNUM* m, BN_CTX* c) {
      return BN_mod_sub(r, x, y, m, c);
    });
  }
  Scalar mul(const Scalar& a, const Scalar& b) const {
    return binop(a, b, [](BIGNUM* r, const BIGNUM* x, const BIGNUM* y, const BIGNUM* m, BN_CTX* c) {
      return BN_mod_mul(r, x, y, m, c);
    });
  }
  Scalar neg(const Scalar& a) const { return sub(Scalar{}, a); }

  // ---- group -----------------------------------------------------------

  Point generator() const { return to_point(EC_GROUP_get0_generator(group_.get())); }

  // Sums one precomputed multiple of G per nonzero 4-bit window. OpenSSL
  // routes a lone generator multiple through its ladder, which ignores
  // precomputation; this is about five times faster.
  Point mul_base(const Scalar& k) const {
    detail::BnCtxPtr ctx(BN_CTX_new());
    detail::EcPointPtr r(EC_POINT_new(group_.get()));
    detail::check(EC_POINT_set_to_infinity(group_.get(), r.get()), "set_to_infinity");
    for (std::size_t w = 0; w < kWindows; ++w) {
      const unsigned nibble = (k.be[31 - w / 2] >> (4 * (w % 2))) & 0xF;
      if (nibble == 0) continue;
      detail::check(EC_POINT_add(group_.get(), r.get(), r.get(), (*base_table_)[w * 15 + nibble - 1].get(), ctx.get()),
                    "EC_POINT_add");
    }
    return to_point(r.get(), ctx.get());
  }

  Point mul(const Scalar& k, const Point& q) const { return mul_add(Scalar{}, k, q); }

  // a*G + b*Q
  Point mul_add(const Scalar& a, const Scalar& b, const Point& q) const {
    detail::BnCtxPtr ctx(BN_CTX_new());
    auto aa = detail::bn_from(a.view());
    auto bb = detail::bn_from(b.view());
    auto qq = to_ec(q, ctx.get());
    detail::EcPointPtr r(EC_POINT_new(group_.get()));
    detail::check(EC_POINT_mul(group_.get(), r.get(), aa.get(), qq.get(), bb.get(), ctx.get()),
                  "EC_POINT_mul");
    return to_point(r.get(), ctx.get());
  }

  Point add(const Point& p, const Point& q) const {
    detail::BnCtxPtr ctx(BN_CTX_new());
    auto pp = to_ec(p, ctx.get());
    auto qq = to_ec(q, ctx.get());
    detail::EcPointPtr r(EC_POINT_new(group_.get()));
    detail::check(EC_POINT_add(group_.get(), r.get(), pp.get(), qq.get(), ctx.get()), "EC_POINT_add");
    return to_point(r.get(), ctx.get());
  }

  Point neg(const Point& p) const {
    detail::BnCtxPtr ctx(BN_CTX_new());
    auto pp = to_ec(p, ctx.get());
    detail::check(EC_POINT_invert(group_.get(), pp.get(), ctx.get()), "EC_POINT_invert");
    return to_point(pp.get(), ctx.get());
  }

  bool on_curve(const Point& p) const {
    if (p.infinity) return true;
    detail::BnCtxPtr ctx(BN_CTX_new());
    auto x = detail::bn_from({p.x.data(), 32});
    auto y = detail::bn_from({p.y.data(), 32});
    detail::EcPointPtr r(EC_POINT_new(group_.get()));
    // set_affine_coordinates already rejects off-curve points
    if (EC_POINT_set_affine_coordinates(group_.get(), r.get(), x.get(), y.get(), ctx.get()) != 1) {
      return false;
    }
    return EC_POINT_is_on_curve(group_.get(), r.get(), ctx.get()) == 1;
  }

  PointEncoding encode(const Point& p) const {
    PointEncoding out;
    if (p.infinity) return out;
    out.data[0] = static_cast<std::uint8_t>(0x02 | (p.y[31] & 1));
    std::copy(p.x.begin(), p.x.end(), out.data.begin() + 1);
    return out;
  }

  Point decode(ByteView enc) const {
    if (enc.size() != 33) throw Error(Errc::InvalidEncoding, "point encoding must be 33 bytes");
    if (std::all_of(enc.begin(), enc.end(), [](std::uint8_t b) { return b == 0; })) return Point{};
    if (enc[0] != 0x02 && enc[0] != 0x03) throw Error(Errc::InvalidEncoding, "bad point prefix");
    detail::BnCtxPtr ctx(BN_CTX_new());
    auto x = detail::bn_from(enc.subspan(1));
    detail::EcPointPtr r(EC_POINT_new(group_.get()));
    if (EC_POINT_set_compressed_coordinates(group_.get(), r.get(), x.get(), enc[0] & 1, ctx.get()) != 1) {
      throw Error(Errc::InvalidEncoding, "point not on curve");
    }
    return to_point(r.get(), ctx.get());
  }

 private:
  template <class Op>
  Scalar binop(const Scalar& a, const Scalar& b, Op op) const {
    detail::BnCtxPtr ctx(BN_CTX_new());
    auto x = detail::bn_from(a.view());
    auto y = detail::bn_from(b.view());
    detail::BnPtr r(BN_new());
    detail::check(op(r.get(), x.get(), y.get(), order_.get(), ctx.get()), "BN_mod op");
    return Scalar{detail::bn_to_word(r.get())};
  }

  void init_generator(const Params& params, BN_CTX* ctx) {
    order_ = std::shared_ptr<BIGNUM>(detail::bn_from_hex(params.n).release(), detail::BnDeleter{});
    auto gx = detail::bn_from_hex(params.gx);
    auto gy = detail::bn_from_hex(params.gy);
    detail::EcPointPtr g(EC_POINT_new(group_.get()));
    if (EC_POINT_set_affine_coordinates(group_.get(), g.get(), gx.get(), gy.get(), ctx) != 1)
      throw Error(Errc::InvalidArgument, "generator not on curve");
    detail::BnPtr one(BN_new());
    BN_one(one.get());
    detail::check(EC_GROUP_set_generator(group_.get(), g.get(), order_.get(), one.get()),
                  "EC_GROUP_set_generator");
    build_base_table(g.get(), ctx);
  }

  // Entry w*15 + (d-1) holds d * 16^w * G.
  void build_base_table(const EC_POINT* g, BN_CTX* ctx) {
    auto table = std::make_shared<std::vector<detail::EcPointPtr>>();
    table->reserve(kWindows * 15);
    detail::EcPointPtr step(EC_POINT_dup(g, group_.get()));
    for (std::size_t w = 0; w < kWindows; ++w) {
      for (int d = 1; d <= 15; ++d) {
        detail::EcPointPtr p(d == 1 ? EC_POINT_dup(step.get(), group_.get()) : EC_POINT_new(group_.get()));
        if (d > 1) detail::check(EC_POINT_add(group_.get(), p.get(), table->back().get(), step.get(), ctx), "EC_POINT_add");
        table->push_back(std::move(p));
      }
      detail::check(EC_POINT_add(group_.get(), step.get(), table->back().get(), step.get(), ctx), "EC_POINT_add");
    }
    // affine entries make each addition a cheaper mixed addition
    for (auto& p : *table) p = to_ec(to_point(p.get(), ctx), ctx);
    base_table_ = std::move(table);
  }

  detail::EcPointPtr to_ec(const Point& p, BN_CTX* ctx) const {
    detail::EcPointPtr r(EC_POINT_new(group_.get()));
    if (p.infinity) {
      detail::check(EC_POINT_set_to_infinity(group_.get(), r.get()), "set_to_infinity");
      return r;
    }
    auto x = detail::bn_from({p.x.data(), 32});
    auto y = detail::bn_from({p.y.data(), 32});
    if (EC_POINT_set_affine_coordinates(group_.get(), r.get(), x.get(), y.get(), ctx) != 1)
      throw Error(Errc::InvalidEncoding, "point not on curve");
    return r;
  }

  Point to_point(const EC_POINT* p, BN_CTX* ctx = nullptr) const {
    if (EC_POINT_is_at_infinity(group_.get(), p) == 1) return Point{};
    detail::BnCtxPtr own;
    if (!ctx) {
      own.reset(BN_CTX_new());
      ctx = own.get();
    }
    detail::BnPtr x(BN_new()), y(BN_new());
    detail::check(EC_POINT_get_affine_coordinates(group_.get(), p, x.get(), y.get(), ctx),
                  "get_affine_coordinates");
    Point out;
    out.infinity = false;
    out.x = detail::bn_to_word(x.get());
    out.y = detail::bn_to_word(y.get());
    return out;
  }

  std::string name_;
  std::shared_ptr<EC_GROUP> group_;
  std::shared_ptr<BIGNUM> order_;
  static constexpr std::size_t kWindows = 64;
  std::shared_ptr<const std::vector<detail::EcPointPtr>> base_table_;
};

}  // namespace refund
