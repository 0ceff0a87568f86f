#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string_view>

namespace stamesh {

// SHA-256 (FIPS 180-4). Committee sortition needs a fixed cryptographic
// digest; this one is self-contained so selection hashes never depend on a
// system crypto library version.
class Sha256 {
public:
    Sha256() { reset(); }

    void reset();
    void update(const void* data, size_t len);
    std::array<uint8_t, 32> finish();

    static std::array<uint8_t, 32> hash(const void* data, size_t len) {
        Sha256 h;
        h.update(data, len);
        return h.finish();
    }

private:
    void process_block(const uint8_t* p);

    uint32_t h_[8];
    uint64_t total_len_ = 0;
    uint8_t buf_[64];
    size_t buf_len_ = 0;
};

// First 8 digest bytes, big-endian.
uint64_t sha256_trunc64(const void* data, size_t len);

std::string sha256_hex(std::string_view data);

}  // namespace stamesh
