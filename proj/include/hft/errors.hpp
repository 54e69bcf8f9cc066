#pragma once

#include <stdexcept>
#include <string>

namespace hft {

// Errors caused by user-supplied input or on-disk data. The CLI maps these
// to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file contents (bad JSON, bad qualified name, bad container).
struct FormatError : DataError {
  using DataError::DataError;
};

// Structurally valid input with missing or wrong fields.
struct SchemaError : DataError {
  using DataError::DataError;
};

// Container whose manifest and payload disagree (truncation, bad lengths).
struct CorruptionError : DataError {
  using DataError::DataError;
};

// Unknown name or id.
struct LookupError : DataError {
  using DataError::DataError;
};

// File system failures, reported with the offending path.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Contract violations inside the library. These indicate caller bugs and map
// to exit code 3 if they ever escape the CLI.
struct ShapeError : std::logic_error {
  using std::logic_error::logic_error;
};

struct IndexError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace hft
