#pragma once

#include <stdexcept>
#include <string>

namespace tapegrad {

/// Base class for all engine-specific failures.
struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A fixed-capacity buffer would have to grow to satisfy the request.
struct CapacityError : TapeError {
    using TapeError::TapeError;
};

/// A node handle refers past the live end of the tape.
struct InvalidHandle : TapeError {
    using TapeError::TapeError;
};

/// A checkpoint mark is ahead of the live end of the tape.
struct InvalidCheckpoint : TapeError {
    using TapeError::TapeError;
};

/// A byte stream does not match the expected wire format.
struct FormatError : TapeError {
    using TapeError::TapeError;
};

/// An underlying stream or file operation failed.
struct IoError : TapeError {
    using TapeError::TapeError;
};

}  // namespace tapegrad
