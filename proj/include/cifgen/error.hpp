#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cifgen {

enum class ErrorCode {
    // cif
    MissingTag,
    BadNumber,
    UnknownElement,
    UnknownSpaceGroup,
    UnknownTag,
    MalformedCif,
    InvariantViolation,
    PartialOccupancy,
    UnsupportedElement,
    // tokenizer
    UnknownToken,
    IdOutOfRange,
    // pxrd
    EmptyStructure,
    NoReflectionsInRange,
    // packing / dataset
    EmptyCorpus,
    // model
    DimensionMismatch,
    ShapeMismatch,
    NonFiniteLoss,
    ContextOverflow,
    BadCheckpoint,
    // evaluation
    GridMismatch,
    ZeroReference,
    DegenerateCovariance,
    // plumbing
    InvalidArgument,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Domain error carrying a machine-readable code. Every failure the library
/// reports to callers is an Error; anything else escaping is a bug.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace cifgen
