#pragma once

#include <stdexcept>
#include <string>

namespace layerlens {

// Base class for every error this library raises on malformed input.
// Callers that want blanket handling catch `error`; the CLI maps the
// concrete types to its exit codes.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid ModelConfig, unknown template id, bad generation spec.
class config_error : public error {
public:
  using error::error;
};

// Unreadable or unwritable path.
class io_error : public error {
public:
  using error::error;
};

// Malformed weight container: bad header, truncated payload, bad offsets.
class corrupt_container_error : public error {
public:
  using error::error;
};

// Declared shape x dtype does not match the payload bytes.
class shape_error : public error {
public:
  using error::error;
};

// A tensor required by the architecture layout is absent.
class missing_tensor_error : public error {
public:
  using error::error;
};

// Tokenizer vocab/merges file violations.
class format_error : public error {
public:
  using error::error;
};

// Out-of-range token id handed to decode.
class decode_error : public error {
public:
  using error::error;
};

// Line-numbered dataset parse failure.
class parse_error : public error {
public:
  using error::error;
};

// Dataset-level semantic violation (bad correct index, duplicate options, ...).
class validation_error : public error {
public:
  using error::error;
};

// Bad forward-pass input: out-of-range token id, over-length sequence,
// out-of-range tap index, dimension mismatch.
class input_error : public error {
public:
  using error::error;
};

// Option scoring failure (empty continuation, prefix mismatch).
class scoring_error : public error {
public:
  using error::error;
};

// Metric requested over an empty result set.
class metric_error : public error {
public:
  using error::error;
};

// Non-finite value inside an iterative numeric routine.
class numeric_error : public error {
public:
  using error::error;
};

// Degenerate projection input (duplicate points).
class degenerate_input_error : public error {
public:
  using error::error;
};

// Bounded resampling loop exhausted its attempt budget.
class resample_error : public error {
public:
  using error::error;
};

// Metrics files handed to the report stage disagree on schema.
class schema_error : public error {
public:
  using error::error;
};

} // namespace layerlens
