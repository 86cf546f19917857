#pragma once

#include <stdexcept>
#include <string>

namespace latent_ofer {

// Base for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/grid/image shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its documented domain (proportion > 1, q <= 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Dataset problems. Each failure class has its own code so callers
// (and the CLI) can tell them apart.
class DataError : public Error {
 public:
  enum class Code { kMissingFile, kBadLabel, kUnreadableImage, kEmpty, kUnwritable, kBadFormat };

  DataError(Code code, const std::string& what) : Error(what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

// A model stage is missing, untrained, or cannot run on the given input.
class ModelError : public Error {
 public:
  ModelError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace latent_ofer
