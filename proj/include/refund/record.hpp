#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include "refund/transaction.hpp"

namespace refund {

// One row of the merchant database: four transaction ids, nothing else.
// A pending redemption is stored as 32 zero bytes.
struct RefundRecord {
  tx::TxId main_txid;
  tx::TxId tc1_txid;
  tx::TxId tc2_txid;
  tx::TxId redeem_txid;

  static constexpr std::size_t kSize = 128;

  bool redeemed() const { return !redeem_txid.is_zero(); }

  Bytes serialize() const {
    Bytes out;
    out.reserve(kSize);
    for (const auto* id : {&main_txid, &tc1_txid, &tc2_txid, &redeem_txid})
      out.insert(out.end(), id->data.begin(), id->data.end());
    return out;
  }

  static RefundRecord deserialize(ByteView v) {
    if (v.size() != kSize) throw Error(Errc::InvalidEncoding, "refund record must be 128 bytes");
    Reader r(v);
    RefundRecord rec;
    rec.main_txid = r.fixed<32>();
    rec.tc1_txid = r.fixed<32>();
    rec.tc2_txid = r.fixed<32>();
    rec.redeem_txid = r.fixed<32>();
    return rec;
  }

  auto operator<=>(const RefundRecord&) const = default;
};

inline std::size_t record_size(const RefundRecord& r) { return r.serialize().size(); }

// Flat file of concatenated 128-byte rows. Rows are keyed by MainTC id; an
// update rewrites the file.
class RefundDatabase {
 public:
  RefundDatabase() = default;
  explicit RefundDatabase(std::filesystem::path path) : path_(std::move(path)) {}

  const std::vector<RefundRecord>& records() const { return rows_; }
  const std::optional<std::filesystem::path>& path() const { return path_; }

  void upsert(const RefundRecord& r) {
    auto it = std::find_if(rows_.begin(), rows_.end(), [&](const auto& x) { return x.main_txid == r.main_txid; });
    if (it == rows_.end()) rows_.push_back(r);
    else *it = r;
    flush();
  }

  const RefundRecord* find(const tx::TxId& main) const {
    for (const auto& r : rows_)
      if (r.main_txid == main) return &r;
    return nullptr;
  }

  // Simulated loss: the in-memory copy and the file both disappear.
  void wipe() {
    rows_.clear();
    if (path_) std::filesystem::remove(*path_);
  }

  void replace(std::vector<RefundRecord> rows) {
    rows_ = std::move(rows);
    flush();
  }

  static std::vector<RefundRecord> load(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(Errc::InvalidArgument, "cannot open " + p.string());
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() % RefundRecord::kSize != 0)
      throw Error(Errc::InvalidEncoding, "database size is not a multiple of 128");
    std::vector<RefundRecord> out;
    for (std::size_t off = 0; off < data.size(); off += RefundRecord::kSize)
      out.push_back(RefundRecord::deserialize(ByteView(data.data() + off, RefundRecord::kSize)));
    return out;
  }

  static void save(const std::filesystem::path& p, const std::vector<RefundRecord>& rows) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::InvalidArgument, "cannot write " + p.string());
    for (const auto& r : rows) {
      auto b = r.serialize();
      out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    }
  }

 private:
  void flush() {
    if (path_) save(*path_, rows_);
  }

  std::optional<std::filesystem::path> path_;
  std::vector<RefundRecord> rows_;
};

}  // namespace refund
