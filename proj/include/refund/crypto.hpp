#pragma once

// Hash and symmetric primitives over OpenSSL's EVP interface.

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <array>
#include <memory>
#include <optional>

#include "refund/common.hpp"

namespace refund {

using Hash64 = FixedBytes<64>;

namespace detail {

struct EvpMdCtxDeleter {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
struct EvpCipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};

template <std::size_t N>
FixedBytes<N> digest(const EVP_MD* md, std::initializer_list<ByteView> parts) {
  std::unique_ptr<EVP_MD_CTX, EvpMdCtxDeleter> ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1)
    throw std::runtime_error("EVP_DigestInit_ex failed");
  for (auto p : parts) EVP_DigestUpdate(ctx.get(), p.data(), p.size());
  FixedBytes<N> out;
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), out.data.data(), &len);
  return out;
}

}  // namespace detail

inline Hash32 sha256(ByteView data) { return detail::digest<32>(EVP_sha256(), {data}); }

inline Hash32 sha256(std::initializer_list<ByteView> parts) {
  return detail::digest<32>(EVP_sha256(), parts);
}

inline Hash32 sha256(std::string_view s) {
  return sha256(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline Hash64 hmac_sha512(ByteView key, ByteView data) {
  Hash64 out;
  unsigned int len = 0;
  if (!HMAC(EVP_sha512(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
            out.data.data(), &len))
    throw std::runtime_error("HMAC-SHA512 failed");
  return out;
}

// 20-byte address hash: leftmost 160 bits of SHA-256. OpenSSL 3 ships
// RIPEMD-160 only in the legacy provider, so the Bitcoin HASH160 is not used.
inline Hash20 hash20(ByteView data) {
  auto h = sha256(data);
  Hash20 out;
  std::copy_n(h.data.begin(), 20, out.data.begin());
  return out;
}

// AES-256-GCM. Output layout: ciphertext || 16-byte tag.
inline Bytes aead_seal(const Hash32& key, ByteView nonce12, ByteView plaintext) {
  if (nonce12.size() != 12) throw Error(Errc::InvalidArgument, "nonce must be 12 bytes");
  std::unique_ptr<EVP_CIPHER_CTX, detail::EvpCipherCtxDeleter> ctx(EVP_CIPHER_CTX_new());
  EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data.data(), nonce12.data());
  Bytes out(plaintext.size() + 16);
  int len = 0;
  if (!plaintext.empty())
    EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                      static_cast<int>(plaintext.size()));
  int fin = 0;
  EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &fin);
  EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, 16, out.data() + plaintext.size());
  return out;
}

inline std::optional<Bytes> aead_open(const Hash32& key, ByteView nonce12, ByteView sealed) {
  if (nonce12.size() != 12 || sealed.size() < 16) return std::nullopt;
  std::unique_ptr<EVP_CIPHER_CTX, detail::EvpCipherCtxDeleter> ctx(EVP_CIPHER_CTX_new());
  EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data.data(), nonce12.data());
  const std::size_t n = sealed.size() - 16;
  Bytes out(n);
  int len = 0;
  if (n > 0) EVP_DecryptUpdate(ctx.get(), out.data(), &len, sealed.data(), static_cast<int>(n));
  std::array<std::uint8_t, 16> tag;
  std::copy_n(sealed.data() + n, 16, tag.begin());
  EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, 16, tag.data());
  int fin = 0;
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1) return std::nullopt;
  return out;
}

}  // namespace refund
