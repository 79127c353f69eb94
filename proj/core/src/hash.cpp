#include "mammoforge/hash.hpp"

#include <array>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "mammoforge/error.hpp"

namespace mammoforge {
namespace {

struct DigestContext {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  ~DigestContext() { EVP_MD_CTX_free(ctx); }
};

std::string to_hex(const unsigned char* digest, unsigned int length) {
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  DigestContext d;
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (d.ctx == nullptr || EVP_DigestInit_ex(d.ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(d.ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(d.ctx, digest.data(), &length) != 1) {
    throw ProcessingError("SHA-256 computation failed");
  }
  return to_hex(digest.data(), length);
}

std::string mask_hash(const LabelVolume& mask) {
  std::vector<std::uint8_t> buffer;
  buffer.reserve(16 + mask.size());
  for (const char c : std::string_view("mfmask1\0", 8)) buffer.push_back(static_cast<std::uint8_t>(c));
  for (const int d : mask.meta().dims) {
    const auto u = static_cast<std::uint32_t>(d);
    for (int b = 0; b < 4; ++b) buffer.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
  }
  const auto data = mask.data();
  buffer.insert(buffer.end(), data.begin(), data.end());
  return "sha256:" + sha256_hex(buffer);
}

}  // namespace mammoforge
