#pragma once

#include <stdexcept>
#include <string>

namespace tune {

enum class Errc {
    ParseError,
    SchemaInvalid,
    ValueOutOfBounds,
    UnknownParameter,
    DimensionMismatch,
    UnresolvedPlaceholder,
    DuplicatePlaceholder,
    SingularKernel,
    ModelUnavailable,
    NoIncumbent,
    TooFewObservations,
    MalformedReport,
    ReferenceFailed,
    NoValidObservations,
    DuplicateMethod,
    IoError,
    InvalidArgument,
};

const char* errc_name(Errc c);

/// Single exception type; the code identifies the failure class, the
/// message carries context (parameter name, offending field, ...).
class TuneError : public std::runtime_error {
public:
    TuneError(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) {
    throw TuneError(code, what);
}

} // namespace tune
