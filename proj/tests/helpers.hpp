#pragma once

#include <filesystem>
#include <string>

#include "nlmot/error.hpp"

namespace testing {

/// True if `fn` throws nlmot::Error of the given kind.
template <class Fn>
bool throws_kind(nlmot::ErrorKind kind, Fn&& fn) {
  try {
    fn();
  } catch (const nlmot::Error& e) {
    return e.kind() == kind;
  }
  return false;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("nlmot_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
