#pragma once

#include "zebra/common.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <memory>
#include <span>
#include <string>

namespace zebra {

using Fingerprint = std::array<std::uint8_t, 32>;

/// SHA-256 of the vertex buffer as consecutive little-endian float64 x,y,z.
inline Fingerprint fingerprint_vertices(std::span<const Vec3> vertices) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  for (const auto& v : vertices) {
    const double xyz[3] = {v.x(), v.y(), v.z()};
    EVP_DigestUpdate(ctx.get(), xyz, sizeof(xyz));
  }
  Fingerprint out{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != out.size())
    throw Error("sha256 finalize failed");
  return out;
}

inline std::string to_hex(const Fingerprint& fp) {
  std::string s;
  char buf[3];
  for (const auto byte : fp) {
    std::snprintf(buf, sizeof(buf), "%02x", byte);
    s += buf;
  }
  return s;
}

}  // namespace zebra
