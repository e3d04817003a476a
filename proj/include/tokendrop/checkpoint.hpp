#pragma once

#include <stdexcept>
#include <string>

#include "tokendrop/policy.hpp"

namespace tokendrop {

// Versioned, checksummed binary snapshot of the whole training state:
// hyperparameters, every parameter block (64-bit payloads), the trainer rng,
// the curriculum cursor and the current phase's optimizer moments. Loading
// reproduces the saved run bit-exactly.
enum class CheckpointError {
    BadMagic,
    VersionMismatch,
    ChecksumMismatch,
    Truncated,
    Malformed,
};

const char* checkpoint_error_name(CheckpointError e);

class CheckpointException : public std::runtime_error {
  public:
    CheckpointException(CheckpointError code, const std::string& msg)
        : std::runtime_error(std::string(checkpoint_error_name(code)) + ": " + msg), code_(code) {}
    CheckpointError code() const { return code_; }

  private:
    CheckpointError code_;
};

void save_checkpoint(const Model& m, const TrainState& state, const std::string& path);

struct LoadedCheckpoint {
    Model model;
    TrainState state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace tokendrop
