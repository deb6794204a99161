#pragma once

#include <stdexcept>
#include <string>

namespace refmatch {

enum class ErrorKind {
    Validation,  // bad inputs, violated preconditions, malformed files
    Parse,       // unreadable input files (position info in message)
    Internal,    // bugs and unexpected states
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_validation(const std::string& message) {
    throw Error(ErrorKind::Validation, message);
}

[[noreturn]] inline void throw_parse(const std::string& message) {
    throw Error(ErrorKind::Parse, message);
}

[[noreturn]] inline void throw_internal(const std::string& message) {
    throw Error(ErrorKind::Internal, message);
}

}  // namespace refmatch
