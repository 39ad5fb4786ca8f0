#ifndef TRAJVID_ERRORS_HPP
#define TRAJVID_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace trajvid {

// Bad user input or malformed data. CLI exit code 2.
struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A required artifact (checkpoint, corpus, config) is absent. CLI exit code 3.
struct missing_dependency_error : std::runtime_error {
    explicit missing_dependency_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failure. CLI exit code 1.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace trajvid

#endif
