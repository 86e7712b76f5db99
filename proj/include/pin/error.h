#ifndef PIN_ERROR_H_
#define PIN_ERROR_H_

#include <stdexcept>
#include <string>

namespace pin {

// Root of every error raised by the library. Callers that only need a
// message catch this; tests match the concrete kinds below.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not conform for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A token id, class index or position is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// A precondition on the call itself is violated (empty input, non-scalar loss).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates the corpus schema or ontology.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed auxiliary text file (embeddings).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training data that the model cannot represent.
class DataError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pin

#endif  // PIN_ERROR_H_
