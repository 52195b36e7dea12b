#pragma once

#include <stdexcept>
#include <string>

namespace smartcal {

// Error categories map one-to-one onto the CLI exit codes.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ExitCode : int {
    ok = 0,
    usage = 2,
    data = 3,
    numeric = 4,
};

} // namespace smartcal
