#include "deepfv/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace deepfv {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::istringstream ss(v);
  std::string field;
  while (std::getline(ss, field, ',')) {
    field = trim(field);
    if (field.empty()) continue;
    try {
      out.push_back(std::stoi(field));
    } catch (const std::exception&) {
      fail("config: bad integer list for " + key + ": " + v);
    }
  }
  check(!out.empty(), "config: empty list for " + key);
  return out;
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, double>) return std::stod(v);
    else if constexpr (std::is_same_v<T, std::uint64_t>) return std::stoull(v);
    else return static_cast<T>(std::stoll(v));
  } catch (const std::exception&) {
    fail("config: bad value for " + key + ": " + v);
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  fail("config: bad boolean for " + key + ": " + v);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  using Setter = std::function<void(RunConfig&, const std::string&,
                                    const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"seed", [](RunConfig& c, const std::string& v, const std::string& k) {
         c.seed = parse_number<std::uint64_t>(v, k);
       }},
      {"data.dir", [](RunConfig& c, const std::string& v,
                      const std::string&) { c.data_dir = v; }},
      {"data.image_size",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.data.image_size = parse_number<int>(v, k);
       }},
      {"data.classes",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.data.classes = parse_number<int>(v, k);
       }},
      {"data.channels",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.data.channels = parse_number<int>(v, k);
       }},
      {"data.min_objects",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.data.min_objects = parse_number<int>(v, k);
       }},
      {"data.max_objects",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.data.max_objects = parse_number<int>(v, k);
       }},
      {"data.noise",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.data.noise = parse_number<double>(v, k);
       }},
      {"data.train_count",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.data.train_count = parse_number<int>(v, k);
       }},
      {"data.test_count",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.data.test_count = parse_number<int>(v, k);
       }},
      {"model.components",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.model.gmm_components =
             static_cast<std::size_t>(parse_number<std::uint64_t>(v, k));
       }},
      {"model.descriptor_dim",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.model.backbone.descriptor_dim = parse_number<int>(v, k);
       }},
      {"model.hidden_dim",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.model.backbone.hidden_dim = parse_number<int>(v, k);
       }},
      {"model.grid",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.model.backbone.grid = parse_number<int>(v, k);
       }},
      {"model.conv_channels",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.model.backbone.conv_channels = parse_int_list(v, k);
       }},
      {"model.init_std",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.model.backbone.init_std = parse_number<double>(v, k);
       }},
      {"patch.scales",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.model.patch_scales = parse_int_list(v, k);
       }},
      {"patch.step",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.model.patch_step = parse_number<int>(v, k);
       }},
      {"train.iterations",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.iterations = parse_number<int>(v, k);
       }},
      {"train.batch_size",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.batch_size = parse_number<int>(v, k);
       }},
      {"train.lr_backbone",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.lr_backbone = parse_number<double>(v, k);
       }},
      {"train.lr_fisher",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.lr_fisher = parse_number<double>(v, k);
       }},
      {"train.lr_score",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.lr_score = parse_number<double>(v, k);
       }},
      {"train.lr_step",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.lr_step_size = parse_number<int>(v, k);
       }},
      {"train.lr_decay",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.lr_decay = parse_number<double>(v, k);
       }},
      {"train.momentum",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.momentum = parse_number<double>(v, k);
       }},
      {"train.weight_decay",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.weight_decay = parse_number<double>(v, k);
       }},
      {"train.scales",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.train_scales = parse_int_list(v, k);
       }},
      {"train.hflip",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.hflip = parse_bool(v, k);
       }},
      {"train.checkpoint_every",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.train.checkpoint_every = parse_number<int>(v, k);
       }},
      {"gmm.max_iters",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.gmm.max_iters = parse_number<int>(v, k);
       }},
      {"gmm.tol",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.gmm.tol = parse_number<double>(v, k);
       }},
      {"gmm.variance_floor",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.gmm.variance_floor = parse_number<double>(v, k);
       }},
      {"gmm.sample_count",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.gmm.sample_count =
             static_cast<std::size_t>(parse_number<std::uint64_t>(v, k));
       }},
      {"svm.c", [](RunConfig& c, const std::string& v, const std::string& k) {
         c.svm_c = parse_number<double>(v, k);
       }},
      {"eval.scales",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.eval_scales = parse_int_list(v, k);
       }},
      {"eval.features",
       [](RunConfig& c, const std::string& v, const std::string&) {
         c.features_dir = v;
       }},
  };

  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    cfg.source_lines.push_back(line);
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    check(eq != std::string::npos, "config: expected key=value, got: " + line);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) fail("config: unknown key: " + key);
    it->second(cfg, value, key);
  }

  // Derived defaults kept in sync.
  cfg.data.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.gmm.seed = cfg.seed;
  cfg.model.backbone.in_channels = cfg.data.channels;
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "cannot open config: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) ss << ",";
    ss << v[i];
  }
  return ss.str();
}

}  // namespace

void print_config(const RunConfig& c, std::ostream& os) {
  os << "seed=" << c.seed << "\n"
     << "data.dir=" << c.data_dir << "\n"
     << "data.image_size=" << c.data.image_size << "\n"
     << "data.classes=" << c.data.classes << "\n"
     << "data.channels=" << c.data.channels << "\n"
     << "data.min_objects=" << c.data.min_objects << "\n"
     << "data.max_objects=" << c.data.max_objects << "\n"
     << "data.noise=" << c.data.noise << "\n"
     << "data.train_count=" << c.data.train_count << "\n"
     << "data.test_count=" << c.data.test_count << "\n"
     << "model.components=" << c.model.gmm_components << "\n"
     << "model.descriptor_dim=" << c.model.backbone.descriptor_dim << "\n"
     << "model.hidden_dim=" << c.model.backbone.hidden_dim << "\n"
     << "model.grid=" << c.model.backbone.grid << "\n"
     << "model.conv_channels=" << join_ints(c.model.backbone.conv_channels)
     << "\n"
     << "model.init_std=" << c.model.backbone.init_std << "\n"
     << "patch.scales=" << join_ints(c.model.patch_scales) << "\n"
     << "patch.step=" << c.model.patch_step << "\n"
     << "train.iterations=" << c.train.iterations << "\n"
     << "train.batch_size=" << c.train.batch_size << "\n"
     << "train.lr_backbone=" << c.train.lr_backbone << "\n"
     << "train.lr_fisher=" << c.train.lr_fisher << "\n"
     << "train.lr_score=" << c.train.lr_score << "\n"
     << "train.lr_step=" << c.train.lr_step_size << "\n"
     << "train.lr_decay=" << c.train.lr_decay << "\n"
     << "train.momentum=" << c.train.momentum << "\n"
     << "train.weight_decay=" << c.train.weight_decay << "\n"
     << "train.scales=" << join_ints(c.train.train_scales) << "\n"
     << "train.hflip=" << (c.train.hflip ? 1 : 0) << "\n"
     << "train.checkpoint_every=" << c.train.checkpoint_every << "\n"
     << "gmm.max_iters=" << c.gmm.max_iters << "\n"
     << "gmm.tol=" << c.gmm.tol << "\n"
     << "gmm.variance_floor=" << c.gmm.variance_floor << "\n"
     << "gmm.sample_count=" << c.gmm.sample_count << "\n"
     << "svm.c=" << c.svm_c << "\n"
     << "eval.scales=" << join_ints(c.eval_scales) << "\n"
     << "eval.features=" << c.features_dir << "\n";
}

}  // namespace deepfv
