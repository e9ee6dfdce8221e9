#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "deepfv/classifier.hpp"
#include "deepfv/dataset.hpp"
#include "deepfv/gmm.hpp"
#include "deepfv/pipeline.hpp"
#include "deepfv/training.hpp"

namespace deepfv {

// Whole-run configuration, parsed from a key=value text file. Every key has
// a default; unknown keys are rejected. Lines starting with '#' and blank
// lines are ignored.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  SyntheticSpec data;
  ModelConfig model;
  TrainConfig train;
  EmConfig gmm;
  double svm_c = 1.0;
  std::vector<int> eval_scales = {48, 64, 80};
  std::string features_dir;  // optional: precomputed features for `eval`

  // Raw lines as read from the file, echoed verbatim to logs.
  std::vector<std::string> source_lines;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// key=value dump of the resolved configuration (defaults included).
void print_config(const RunConfig& cfg, std::ostream& os);

}  // namespace deepfv
