#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bpnet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Base for everything the library throws on bad input or numeric trouble.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b,
             const std::string& detail = {});
  ShapeError(const std::string& op, const std::string& detail);
};

// Bad or missing input data (files, sparse maps, configs).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace bpnet
