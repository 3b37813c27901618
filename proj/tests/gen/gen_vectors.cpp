// Emits frozen expected values using only the reference arithmetic in
// oracle.hpp. Output is pasted into tests and tests/vectors/.

#include <iomanip>
#include <iostream>
#include <sstream>

#include "oracle.hpp"

using namespace oracle;

static std::string hex(const std::uint8_t* p, std::size_t n) {
  std::ostringstream s;
  for (std::size_t i = 0; i < n; ++i) s << std::hex << std::setw(2) << std::setfill('0') << int(p[i]);
  return s.str();
}
static std::string hex_pt(const Pt& p) {
  auto e = encode(p);
  return hex(e.data(), e.size());
}
static std::string hex_scalar(const cpp_int& v) {
  auto e = to_be32(v);
  return hex(e.data(), e.size());
}
static Bytes str(const std::string& s) { return Bytes(s.begin(), s.end()); }

int main(int argc, char** argv) {
  const auto c = secp256k1();
  const auto G = generator(c);
  std::string mode = argc > 1 ? argv[1] : "constants";

  if (mode == "vectors") {
    std::cout << "# seed, index, child_point_hex, masked_point_hex\n"
              << "# parent = keygen(seed); chain code = SHA256(\"chain:\" || seed);\n"
              << "# merchant = keygen(seed || \"/merchant\"); masked = child + H*(m * child) * G\n";
    const char* seeds[] = {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"};
    const std::uint32_t indexes[] = {0, 1, 2, 7, 100, 65535, 2147483647u};
    for (auto s : seeds) {
      std::string seed = s;
      auto k = keygen_scalar(str(seed), c);
      auto parent = mul(k, G, c);
      auto chain = sha256(str("chain:" + seed));
      auto m = keygen_scalar(str(seed + "/merchant"), c);
      for (auto idx : indexes) {
        auto child = derive_child(parent, chain, idx, c);
        auto masked = mask(child, m, c);
        std::cout << seed << ", " << idx << ", " << hex_pt(child) << ", " << hex_pt(masked) << "\n";
      }
    }
    return 0;
  }

  // keygen("a")
  auto ka = keygen_scalar(str("a"), c);
  std::cout << "keygen(a).priv = " << hex_scalar(ka) << "\n";
  std::cout << "keygen(a).pub  = " << hex_pt(mul(ka, G, c)) << "\n";

  // derive_child_public: keygen("vector1"), zero chain code, index 5
  auto kv = keygen_scalar(str("vector1"), c);
  Bytes zero(32, 0);
  std::cout << "child(vector1, 0^32, 5) = " << hex_pt(derive_child(mul(kv, G, c), zero, 5, c)) << "\n";

  // derive_child_private: parent_priv = 1, zero chain code, index 0
  auto priv1 = mod(1 + h_l(zero, G, 0, c), c.n);
  std::cout << "child_priv(1, 0^32, 0) = " << hex_scalar(priv1) << "\n";

  // dh_shared(keygen(x), keygen(y).pub)
  auto kx = keygen_scalar(str("x"), c);
  auto ky = keygen_scalar(str("y"), c);
  std::cout << "dh(x, y) = " << hex_scalar(h_star(mul(kx, mul(ky, G, c), c), c)) << "\n";

  // mask_child: child = keygen("child").pub, merchant = keygen("merchant")
  auto kc = keygen_scalar(str("child"), c);
  auto km = keygen_scalar(str("merchant"), c);
  std::cout << "mask(child, merchant) = " << hex_pt(mask(mul(kc, G, c), km, c)) << "\n";

  // unmask_child_private(child, merchant.pub)
  auto shared = mul(kc, mul(km, G, c), c);
  std::cout << "unmask(child, merchant) = " << hex_scalar(mod(kc + h_star(shared, c), c.n)) << "\n";

  // unmask with child_priv = 1
  std::cout << "unmask(1, merchant) = " << hex_scalar(mod(1 + h_star(mul(km, G, c), c), c.n)) << "\n";
  return 0;
}
