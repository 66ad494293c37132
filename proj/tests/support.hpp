#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>

#include "socl/ten/mat.hpp"
#include "socl/ten/rng.hpp"

namespace socl::test {

inline ten::Mat random_mat(ten::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) { return rng.normal_mat(r, c, scale); }

inline ten::Mat random_unit_rows(ten::Rng& rng, std::size_t r, std::size_t c) {
  ten::Mat m = rng.normal_mat(r, c, 1.0);
  for (std::size_t i = 0; i < r; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < c; ++j) n += m(i, j) * m(i, j);
    n = std::sqrt(n);
    for (std::size_t j = 0; j < c; ++j) m(i, j) /= n;
  }
  return m;
}

inline double max_abs_diff(const ten::Mat& a, const ten::Mat& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a[i] - b[i]));
  return w;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("socl-" + tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace socl::test
