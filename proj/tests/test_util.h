#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "fvar/dataset.h"
#include "fvar/tensor.h"

namespace fvar::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fvar_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// A small dataset spec that keeps the generator fast.
inline DatasetSpec tiny_spec(std::size_t train = 16, std::size_t test = 8, std::uint64_t seed = 0) {
  DatasetSpec spec;
  spec.train_count = train;
  spec.test_count = test;
  spec.seed = seed;
  return spec;
}

}  // namespace fvar::testing
