#pragma once

#include <stdexcept>
#include <string>

namespace snoop {

enum class errc {
  malformed_module,
  empty_input,
  empty_classifier_set,
  insufficient_pool,
  split_too_small,
  manifest_invalid,
  config,
  lookup,
  format,
  resolution,
  construction,
  divergence,
  io,
};

inline const char* to_string(errc e) {
  switch (e) {
    case errc::malformed_module: return "malformed-module";
    case errc::empty_input: return "empty-input";
    case errc::empty_classifier_set: return "empty-classifier-set";
    case errc::insufficient_pool: return "insufficient-pool";
    case errc::split_too_small: return "split-too-small";
    case errc::manifest_invalid: return "manifest-invalid";
    case errc::config: return "config";
    case errc::lookup: return "lookup";
    case errc::format: return "format";
    case errc::resolution: return "resolution";
    case errc::construction: return "construction";
    case errc::divergence: return "divergence";
    case errc::io: return "io";
  }
  return "unknown";
}

// Domain error; the CLI maps every error of this type to exit status 1.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

}  // namespace snoop
