#pragma once

#include <stdexcept>
#include <string>

namespace tilesearch {

enum class ErrorCode {
    kInvalidArgument,
    kLengthMismatch,
    kNotFound,
    kDuplicateId,
    kSealed,
    kCorruptFile,
    kIo,
    kBounds,
    kEmptyGrid,
    kNonFinite,
    kShape,
};

const char* error_code_name(ErrorCode code);

/// All library failures surface as this exception; `code()` is the
/// machine-readable category.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace tilesearch
