#include "cifgen/util.hpp"

#include <cmath>
#include <cstdio>

#include "cifgen/error.hpp"

namespace cifgen {

std::string to_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string format_fixed(double value, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
    std::string s(buf);
    // "-0.0000" -> "0.0000"
    if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

double round_to(double value, int decimals) noexcept {
    const double scale = std::pow(10.0, decimals);
    return std::round(value * scale) / scale;
}

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MissingTag: return "MissingTag";
        case ErrorCode::BadNumber: return "BadNumber";
        case ErrorCode::UnknownElement: return "UnknownElement";
        case ErrorCode::UnknownSpaceGroup: return "UnknownSpaceGroup";
        case ErrorCode::UnknownTag: return "UnknownTag";
        case ErrorCode::MalformedCif: return "MalformedCif";
        case ErrorCode::InvariantViolation: return "InvariantViolation";
        case ErrorCode::PartialOccupancy: return "PartialOccupancy";
        case ErrorCode::UnsupportedElement: return "UnsupportedElement";
        case ErrorCode::UnknownToken: return "UnknownToken";
        case ErrorCode::IdOutOfRange: return "IdOutOfRange";
        case ErrorCode::EmptyStructure: return "EmptyStructure";
        case ErrorCode::NoReflectionsInRange: return "NoReflectionsInRange";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::ContextOverflow: return "ContextOverflow";
        case ErrorCode::BadCheckpoint: return "BadCheckpoint";
        case ErrorCode::GridMismatch: return "GridMismatch";
        case ErrorCode::ZeroReference: return "ZeroReference";
        case ErrorCode::DegenerateCovariance: return "DegenerateCovariance";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace cifgen
