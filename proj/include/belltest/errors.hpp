#pragma once

#include <stdexcept>
#include <string>

namespace belltest {

// Error taxonomy shared by the library and the CLI exit-code mapping:
// ParseError/ParamError -> usage problems (CLI exit 2),
// LoadError/DataError/ModelError -> data problems (CLI exit 3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input text (CSV rows, meta.json); message carries the location.
struct ParseError : Error {
    using Error::Error;
};

// Invalid operation parameters (bad bin widths, negative windows, ...).
struct ParamError : Error {
    using Error::Error;
};

// Missing or unreadable files.
struct LoadError : Error {
    using Error::Error;
};

// Structurally valid input on which the requested computation is impossible
// (empty coincidence cells, missing rotated runs, featureless histograms).
struct DataError : Error {
    using Error::Error;
};

// Integer overflow when shifting time tags.
struct RangeError : Error {
    using Error::Error;
};

// Invalid model state: negative outcome probabilities, non-positive
// denominators in the efficiency map.
struct ModelError : Error {
    using Error::Error;
};

} // namespace belltest
