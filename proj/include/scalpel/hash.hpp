#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "scalpel/common.hpp"

namespace scalpel {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw InternalError("sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t len) {
        if (EVP_DigestUpdate(ctx_, data, len) != 1) throw InternalError("sha256 update failed");
    }

    std::string hex() {
        std::array<unsigned char, 32> digest{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, digest.data(), &len) != 1)
            throw InternalError("sha256 final failed");
        static const char* k = "0123456789abcdef";
        std::string out(64, '0');
        for (unsigned int i = 0; i < len; ++i) {
            out[2 * i] = k[digest[i] >> 4];
            out[2 * i + 1] = k[digest[i] & 0xf];
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(const void* data, std::size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.hex();
}

inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

}  // namespace scalpel
