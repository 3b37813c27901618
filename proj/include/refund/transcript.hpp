#pragma once

#include <map>
#include <string>
#include <vector>

#include "refund/group.hpp"

namespace refund {

// Append-only event log, one line per event:
//   h=<height> <actor> <event> <detail>
class Transcript {
 public:
  void log(std::string_view actor, std::uint32_t height, std::string_view event, std::string_view detail = {}) {
    std::string line = "h=" + std::to_string(height) + " " + std::string(actor) + " " + std::string(event);
    if (!detail.empty()) line += " " + std::string(detail);
    lines_.push_back(std::move(line));
  }

  const std::vector<std::string>& lines() const { return lines_; }

  std::string text() const {
    std::string out;
    for (const auto& l : lines_) out += l + "\n";
    return out;
  }

 private:
  std::vector<std::string> lines_;
};

// Records every key handed out and the role it was handed out for. Reusing a
// key under a different role is a freshness violation.
class KeyLog {
 public:
  void claim(const Point& p, const std::string& role) {
    auto enc = Group::secp256k1().encode(p);
    auto [it, inserted] = roles_.emplace(enc, role);
    if (!inserted && it->second != role)
      violations_.push_back(to_hex(enc.view()).substr(0, 16) + " used as " + it->second + " and " + role);
  }

  const std::vector<std::string>& violations() const { return violations_; }
  std::size_t size() const { return roles_.size(); }

 private:
  std::map<PointEncoding, std::string> roles_;
  std::vector<std::string> violations_;
};

inline std::string short_hex(ByteView v) { return to_hex(v).substr(0, 16); }

}  // namespace refund
