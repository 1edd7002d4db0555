#pragma once

#include <stdexcept>
#include <string>

namespace meadow {

// Config file is structurally wrong: bad syntax, missing or unknown keys.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config parsed fine but a value breaks an invariant.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Packed weight stream cannot be encoded or decoded.
struct CodecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Requested TPHS lane count exceeds what the PE array supplies.
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace meadow
