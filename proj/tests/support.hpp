#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mufasa/cloud.hpp"

namespace testing_support {

inline std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mufasa_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline mufasa::PointCloud random_cloud(std::size_t n, std::uint64_t seed, double extent = 10.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  std::uniform_real_distribution<double> r(-20.0, 20.0);
  mufasa::PointCloud c;
  c.frame_id = "rand" + std::to_string(seed);
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({u(rng), u(rng), u(rng) * 0.2, r(rng), r(rng) * 0.3});
  return c;
}

}  // namespace testing_support
