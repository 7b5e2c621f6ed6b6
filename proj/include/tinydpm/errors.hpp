#pragma once

#include <stdexcept>
#include <string>

namespace tinydpm {

// Error taxonomy mapped to CLI exit codes: usage 2, data 3, numeric 4.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual int exit_code() const { return 1; }
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
    int exit_code() const override { return 2; }
};

class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
    int exit_code() const override { return 3; }
};

// Shape or domain violations on tensor operations.
class ShapeError : public DataError {
public:
    explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
    int exit_code() const override { return 4; }
};

}  // namespace tinydpm
