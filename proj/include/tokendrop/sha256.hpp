#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace tokendrop {

// Self-contained SHA-256 (FIPS 180-4). Used for the frozen-parameter audit
// during curriculum phases and the checkpoint integrity checksum.
class Sha256 {
  public:
    Sha256() { reset(); }

    void reset();
    void update(const void* data, std::size_t len);
    std::array<std::uint8_t, 32> digest();  // finalizes; call once

    static std::array<std::uint8_t, 32> hash(const void* data, std::size_t len) {
        Sha256 h;
        h.update(data, len);
        return h.digest();
    }
    static std::string hex(const std::array<std::uint8_t, 32>& d);

  private:
    void process_block(const std::uint8_t* block);
    std::array<std::uint32_t, 8> state_{};
    std::uint64_t total_len_ = 0;
    std::array<std::uint8_t, 64> buffer_{};
    std::size_t buffer_len_ = 0;
};

}  // namespace tokendrop
