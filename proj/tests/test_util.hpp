#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "tsal/candidates.hpp"
#include "tsal/rng.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tsal-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline tsal::Candidate candidate(tsal::CandidateId id, const std::string& image, int gx, int gy, double animal,
                                 std::size_t dim = 2, int stride = tsal::kDefaultGridStride) {
  tsal::Candidate c;
  c.candidate_id = id;
  c.image_id = image;
  c.grid_x = gx;
  c.grid_y = gy;
  c.px = static_cast<double>(gx) * stride;
  c.py = static_cast<double>(gy) * stride;
  c.confidence = {1.0 - animal, animal, 0.0};
  c.features.assign(dim, 0.0);
  return c;
}

}  // namespace testutil
