#pragma once

#include <stdexcept>
#include <string>

namespace miniwm {

// Error categories map onto CLI exit codes: config=2, data=3, numeric=4.
enum class ErrorKind { Config = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(ErrorKind::Config, msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

// Shape violations are programming/config errors surfaced as numeric failures.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

}  // namespace miniwm
