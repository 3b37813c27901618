#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace refund {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// Satoshis. Fees are zero everywhere in the simulation.
using Amount = std::int64_t;

enum class Errc {
  InvalidArgument,
  IndexOutOfRange,
  DegenerateChild,
  KeyMismatch,
  IdentityPoint,
  InvalidEncoding,
  PayloadTooLarge,
  InsufficientFunds,
  BadLockHeight,
  ScriptMismatch,
  MissingSigner,
  ValueMismatch,
  UnknownOutput,
  Locked,
  AlreadySpent,
  RequestExpired,
  RequestBadSignature,
  BadTransaction,
  AmountMismatch,
  UndecryptableRefundTo,
  UnknownSession,
  WindowExpired,
  InvalidState,
  NotRedeemed,
  ChainDataMissing,
  ChunkTooSmall,
  ConfigError,
};

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::DegenerateChild: return "DegenerateChild";
    case Errc::KeyMismatch: return "KeyMismatch";
    case Errc::IdentityPoint: return "IdentityPoint";
    case Errc::InvalidEncoding: return "InvalidEncoding";
    case Errc::PayloadTooLarge: return "PayloadTooLarge";
    case Errc::InsufficientFunds: return "InsufficientFunds";
    case Errc::BadLockHeight: return "BadLockHeight";
    case Errc::ScriptMismatch: return "ScriptMismatch";
    case Errc::MissingSigner: return "MissingSigner";
    case Errc::ValueMismatch: return "ValueMismatch";
    case Errc::UnknownOutput: return "UnknownOutput";
    case Errc::Locked: return "Locked";
    case Errc::AlreadySpent: return "AlreadySpent";
    case Errc::RequestExpired: return "RequestExpired";
    case Errc::RequestBadSignature: return "RequestBadSignature";
    case Errc::BadTransaction: return "BadTransaction";
    case Errc::AmountMismatch: return "AmountMismatch";
    case Errc::UndecryptableRefundTo: return "UndecryptableRefundTo";
    case Errc::UnknownSession: return "UnknownSession";
    case Errc::WindowExpired: return "WindowExpired";
    case Errc::InvalidState: return "InvalidState";
    case Errc::NotRedeemed: return "NotRedeemed";
    case Errc::ChainDataMissing: return "ChainDataMissing";
    case Errc::ChunkTooSmall: return "ChunkTooSmall";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  explicit Error(Errc code) : std::runtime_error(std::string(to_string(code))), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Fixed-size byte strings (ids, hashes) with value semantics and ordering.
template <std::size_t N>
struct FixedBytes {
  std::array<std::uint8_t, N> data{};

  static constexpr std::size_t size() { return N; }
  bool is_zero() const {
    return std::all_of(data.begin(), data.end(), [](std::uint8_t b) { return b == 0; });
  }
  ByteView view() const { return {data.data(), N}; }

  static FixedBytes from(ByteView v) {
    if (v.size() != N) throw Error(Errc::InvalidEncoding, "fixed-size field length mismatch");
    FixedBytes out;
    std::copy(v.begin(), v.end(), out.data.begin());
    return out;
  }

  auto operator<=>(const FixedBytes&) const = default;
};

using Hash32 = FixedBytes<32>;
using Hash20 = FixedBytes<20>;

inline std::string to_hex(ByteView v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(v.size() * 2);
  for (auto b : v) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

template <std::size_t N>
std::string to_hex(const FixedBytes<N>& b) {
  return to_hex(b.view());
}

inline Bytes from_hex(std::string_view s) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (s.size() % 2 != 0) throw Error(Errc::InvalidEncoding, "odd-length hex");
  Bytes out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = nibble(s[2 * i]);
    int lo = nibble(s[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::InvalidEncoding, "bad hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

// Little-endian writer for the canonical binary layouts.
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }

  // Bitcoin-style CompactSize.
  void varint(std::uint64_t v) {
    if (v < 0xfd) {
      u8(static_cast<std::uint8_t>(v));
    } else if (v <= 0xffff) {
      u8(0xfd);
      u8(static_cast<std::uint8_t>(v));
      u8(static_cast<std::uint8_t>(v >> 8));
    } else if (v <= 0xffffffff) {
      u8(0xfe);
      u32(static_cast<std::uint32_t>(v));
    } else {
      u8(0xff);
      u64(v);
    }
  }
  void raw(ByteView v) { buf_.insert(buf_.end(), v.begin(), v.end()); }
  template <std::size_t N>
  void raw(const FixedBytes<N>& v) {
    raw(v.view());
  }
  void var_bytes(ByteView v) {
    varint(v.size());
    raw(v);
  }
  void str(std::string_view s) {
    varint(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  const Bytes& bytes() const& { return buf_; }
  Bytes bytes() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

class Reader {
 public:
  explicit Reader(ByteView v) : data_(v) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  std::uint64_t varint() {
    auto tag = u8();
    if (tag < 0xfd) return tag;
    if (tag == 0xfd) {
      auto s = take(2);
      return static_cast<std::uint64_t>(s[0]) | (static_cast<std::uint64_t>(s[1]) << 8);
    }
    if (tag == 0xfe) return u32();
    return u64();
  }
  ByteView raw(std::size_t n) { return take(n); }
  template <std::size_t N>
  FixedBytes<N> fixed() {
    return FixedBytes<N>::from(take(N));
  }
  Bytes var_bytes() {
    auto n = varint();
    auto s = take(n);
    return Bytes(s.begin(), s.end());
  }
  std::string str() {
    auto n = varint();
    auto s = take(n);
    return std::string(s.begin(), s.end());
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_done() const {
    if (!done()) throw Error(Errc::InvalidEncoding, "trailing bytes");
  }

 private:
  ByteView take(std::size_t n) {
    if (n > data_.size() - pos_) throw Error(Errc::InvalidEncoding, "truncated input");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace refund
