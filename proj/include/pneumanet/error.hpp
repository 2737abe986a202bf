#pragma once

#include <stdexcept>
#include <string>

namespace pneumanet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Raised for byte streams that do not decode as PNG or JPEG.
class ImageDecodeError : public Error {
 public:
  using Error::Error;
};

}  // namespace pneumanet
