#pragma once
// SHA-256 (for file/config/artifact hashes in run manifests) and FNV-1a
// (cheap in-memory digests, e.g. parameter-isolation checks in tests).

#include <cstdint>
#include <string>
#include <string_view>

namespace agepred {

class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    // Hex digest; the object must not be updated afterwards.
    std::string hex_digest();

private:
    void process_block(const std::uint8_t* block);

    std::uint32_t state_[8];
    std::uint64_t bit_len_ = 0;
    std::uint8_t buffer_[64];
    std::size_t buffer_len_ = 0;
};

std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::string& path);

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace agepred
