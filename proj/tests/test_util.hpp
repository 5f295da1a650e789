#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "lab/diffusion.hpp"
#include "lab/error.hpp"
#include "lab/textenc.hpp"

namespace lab::test {

/// Small enough that a full reverse trajectory takes milliseconds.
inline diffusion::DenoiserArch tiny_arch() { return {4, 4, 4, 16}; }

inline diffusion::DenoiserParams tiny_denoiser(std::uint64_t seed, int T = 20) {
  return diffusion::DenoiserParams::init(tiny_arch(), T, seed);
}

template <class S>
Mat<S> random_matrix(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  Rng rng(seed);
  return normal_matrix<S>(rng, rows, cols, sd);
}

/// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("lab_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace lab::test

#define EXPECT_LAB_ERROR(stmt, errc)                                  \
  do {                                                                \
    try {                                                             \
      stmt;                                                           \
      ADD_FAILURE() << "expected " << lab::errc_name(errc);           \
    } catch (const lab::Error& e) {                                   \
      EXPECT_EQ(e.code(), errc) << e.what();                          \
    }                                                                 \
  } while (0)
