#pragma once

#include <filesystem>
#include <string>

#include "bvr/config.hpp"

namespace bvr::testing {

// 32x32 frames, two pyramid levels, narrow layers: fast enough to train a
// few steps inside a unit test.
RunConfig tiny_run_config(std::uint64_t seed = 3);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace bvr::testing
