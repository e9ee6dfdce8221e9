#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deepfv/tensor.hpp"

namespace deepfv {

// Multi-label example: pixels in [0, 1], one binary label per class.
struct Example {
  std::string name;
  Tensor image;  // C x H x W
  std::vector<double> labels;
};

struct Dataset {
  std::size_t classes = 0;
  std::vector<Example> items;
};

// Generator parameters for the synthetic shape benchmark. Each class is a
// distinct geometry (disc, square, triangle, cross, ring, diamond, bars,
// checker) drawn at a random position, size, and intensity; images hold one
// to max_objects distinct classes over a noisy background.
struct SyntheticSpec {
  int image_size = 64;
  int classes = 4;
  int channels = 1;
  int min_objects = 1;
  int max_objects = 3;
  double noise = 0.05;
  int train_count = 500;
  int test_count = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

std::pair<Dataset, Dataset> gen_dataset(const SyntheticSpec& spec);

// Directory layout: images/<name>.fnt (one f32 tensor per image),
// labels.csv ("filename,c0,c1,..."), spec.txt (key=value generation record).
void save_dataset(const std::string& dir, const Dataset& ds,
                  const SyntheticSpec& spec);
Dataset load_dataset(const std::string& dir);

}  // namespace deepfv
