#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace permssl {

// Malformed dataset or checkpoint file. Carries the byte offset at which
// the problem was detected.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& message, uint64_t offset)
        : std::runtime_error(message + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    uint64_t offset() const { return offset_; }

private:
    uint64_t offset_;
};

} // namespace permssl
