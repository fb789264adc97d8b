#pragma once

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace cvgan {

// Shape/arity violations between tensors and operations.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an operation's contract (non-scalar loss, bad parameter, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk artifact (latent file, checkpoint, image).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / decode failures while ingesting data.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad run configuration (unknown key, invalid value).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Worker-thread cap. CVGAN_THREADS wins over hardware concurrency; kernels
// accumulate each output element in a fixed serial order, so results do not
// depend on this value.
int worker_threads();

}  // namespace cvgan
