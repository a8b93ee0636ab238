#pragma once

#include <stdexcept>
#include <string>

namespace ddipnet {

// Error taxonomy. The CLI maps these onto exit codes
// (config/dimension -> 1, data/io -> 2, numeric -> 3).

class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace ddipnet
