#include "deepfv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "deepfv/tensor_io.hpp"

namespace deepfv {

namespace fs = std::filesystem;

void SyntheticSpec::validate() const {
  check(classes >= 2, "SyntheticSpec: need at least two classes");
  check(classes <= 8, "SyntheticSpec: at most eight shape classes");
  check(image_size >= 32, "SyntheticSpec: image size must be >= 32");
  check(channels >= 1, "SyntheticSpec: channels must be >= 1");
  check(min_objects >= 1 && max_objects >= min_objects,
        "SyntheticSpec: invalid objects-per-image range");
  check(max_objects <= classes,
        "SyntheticSpec: objects per image exceeds distinct classes");
  check(noise >= 0.0, "SyntheticSpec: noise must be >= 0");
  check(train_count >= 1 && test_count >= 1,
        "SyntheticSpec: empty split requested");
}

namespace {

struct Placement {
  int cls;
  int cx, cy, half;  // center and half-extent in pixels
  double intensity;
};

// One geometry per class; pixel predicate relative to center, half-extent.
bool shape_hit(int cls, int dx, int dy, int half) {
  const int ax = std::abs(dx);
  const int ay = std::abs(dy);
  switch (cls) {
    case 0:  // disc
      return dx * dx + dy * dy <= half * half;
    case 1:  // square
      return ax <= half && ay <= half;
    case 2:  // upward triangle
      return dy >= -half && dy <= half && ax * 2 * half <= (dy + half) * half;
    case 3:  // cross
      return (ax <= half / 3 && ay <= half) || (ay <= half / 3 && ax <= half);
    case 4: {  // ring
      const int r2 = dx * dx + dy * dy;
      const int inner = (2 * half) / 3;
      return r2 <= half * half && r2 >= inner * inner;
    }
    case 5:  // diamond
      return ax + ay <= half;
    case 6:  // vertical bars
      return ax <= half && ay <= half && (((dx + half) / 3) % 2 == 0);
    case 7:  // checker
      return ax <= half && ay <= half &&
             ((((dx + half) / 4) + ((dy + half) / 4)) % 2 == 0);
    default:
      fail("shape_hit: unknown class");
  }
}

void render(Tensor& img, const Placement& p, int size, int channels) {
  for (int y = std::max(0, p.cy - p.half);
       y <= std::min(size - 1, p.cy + p.half); ++y) {
    for (int x = std::max(0, p.cx - p.half);
         x <= std::min(size - 1, p.cx + p.half); ++x) {
      if (!shape_hit(p.cls, x - p.cx, y - p.cy, p.half)) continue;
      for (int c = 0; c < channels; ++c) {
        double& px = img.at(static_cast<std::size_t>(c),
                            static_cast<std::size_t>(y),
                            static_cast<std::size_t>(x));
        px = std::max(px, p.intensity);
      }
    }
  }
}

Example make_example(const SyntheticSpec& spec, Rng& rng,
                     const std::string& name) {
  const int size = spec.image_size;
  Example ex;
  ex.name = name;
  ex.image = Tensor({static_cast<std::size_t>(spec.channels),
                     static_cast<std::size_t>(size),
                     static_cast<std::size_t>(size)});
  ex.labels.assign(spec.classes, 0.0);

  for (double& px : ex.image.data)
    px = std::clamp(rng.normal(0.1, spec.noise), 0.0, 1.0);

  const int count =
      spec.min_objects +
      static_cast<int>(rng.uniform_index(
          static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)));

  // Distinct classes for this image.
  std::vector<int> order(spec.classes);
  for (int c = 0; c < spec.classes; ++c) order[c] = c;
  for (int i = 0; i < count; ++i) {
    const int j =
        i + static_cast<int>(rng.uniform_index(
                static_cast<std::uint64_t>(spec.classes - i)));
    std::swap(order[i], order[j]);
  }

  std::vector<Placement> placements;
  for (int i = 0; i < count; ++i) {
    Placement p;
    p.cls = order[i];
    const int min_half = std::max(4, size / 12);
    const int max_half = std::max(min_half + 1, size / 5);
    p.half = min_half + static_cast<int>(rng.uniform_index(
                            static_cast<std::uint64_t>(max_half - min_half)));
    p.cx = p.half + static_cast<int>(rng.uniform_index(
                        static_cast<std::uint64_t>(size - 2 * p.half)));
    p.cy = p.half + static_cast<int>(rng.uniform_index(
                        static_cast<std::uint64_t>(size - 2 * p.half)));
    p.intensity = rng.uniform(0.45, 1.0);
    placements.push_back(p);
    render(ex.image, p, size, spec.channels);
  }

  // Labels are re-derived from the placement list, never from the pixels.
  for (const Placement& p : placements) ex.labels[p.cls] = 1.0;
  double label_sum = 0.0;
  for (double l : ex.labels) label_sum += l;
  check(static_cast<int>(label_sum) == count,
        "gen_dataset: placement/label inconsistency");

  // Snap pixels through f32 so on-disk and in-memory datasets agree exactly.
  for (double& px : ex.image.data) px = static_cast<float>(px);
  return ex;
}

Dataset gen_split(const SyntheticSpec& spec, Rng& rng, int count,
                  const std::string& prefix) {
  Dataset ds;
  ds.classes = static_cast<std::size_t>(spec.classes);
  for (int attempt = 0; attempt < 100; ++attempt) {
    ds.items.clear();
    for (int i = 0; i < count; ++i) {
      std::ostringstream name;
      name << prefix << "_" << i;
      ds.items.push_back(make_example(spec, rng, name.str()));
    }
    std::vector<bool> seen(spec.classes, false);
    for (const Example& ex : ds.items)
      for (int c = 0; c < spec.classes; ++c)
        if (ex.labels[c] > 0.5) seen[c] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
      return ds;
  }
  fail("gen_dataset: could not cover every class in a split");
}

}  // namespace

std::pair<Dataset, Dataset> gen_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset train = gen_split(spec, rng, spec.train_count, "train");
  Dataset test = gen_split(spec, rng, spec.test_count, "test");
  return {std::move(train), std::move(test)};
}

void save_dataset(const std::string& dir, const Dataset& ds,
                  const SyntheticSpec& spec) {
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream labels(fs::path(dir) / "labels.csv");
  check(labels.good(), "save_dataset: cannot write labels.csv");
  for (const Example& ex : ds.items) {
    const std::string file = ex.name + ".fnt";
    TensorF img(ex.image.dims);
    for (std::size_t i = 0; i < img.numel(); ++i)
      img.data[i] = static_cast<float>(ex.image.data[i]);
    write_tensor_file((fs::path(dir) / "images" / file).string(),
                      TensorData::from(img));
    labels << file;
    for (double l : ex.labels) labels << "," << (l > 0.5 ? 1 : 0);
    labels << "\n";
  }
  labels.flush();
  check(labels.good(), "save_dataset: labels.csv write failed");

  std::ofstream meta(fs::path(dir) / "spec.txt");
  meta << "image_size=" << spec.image_size << "\n"
       << "classes=" << spec.classes << "\n"
       << "channels=" << spec.channels << "\n"
       << "min_objects=" << spec.min_objects << "\n"
       << "max_objects=" << spec.max_objects << "\n"
       << "noise=" << spec.noise << "\n"
       << "train_count=" << spec.train_count << "\n"
       << "test_count=" << spec.test_count << "\n"
       << "seed=" << spec.seed << "\n";
  check(meta.good(), "save_dataset: spec.txt write failed");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream labels(fs::path(dir) / "labels.csv");
  check(labels.good(), "load_dataset: missing labels.csv in " + dir);
  Dataset ds;
  std::string line;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string file;
    check(static_cast<bool>(std::getline(ss, file, ',')),
          "load_dataset: malformed labels.csv line");
    Example ex;
    ex.name = file;
    std::string field;
    while (std::getline(ss, field, ','))
      ex.labels.push_back(std::stod(field));
    check(!ex.labels.empty(), "load_dataset: row without labels");
    if (ds.classes == 0)
      ds.classes = ex.labels.size();
    else
      check(ds.classes == ex.labels.size(),
            "load_dataset: inconsistent class count");
    ex.image =
        read_tensor_file((fs::path(dir) / "images" / file).string()).as_f64();
    check(ex.image.ndim() == 3, "load_dataset: image must be C x H x W");
    ds.items.push_back(std::move(ex));
  }
  check(!ds.items.empty(), "load_dataset: empty dataset");
  return ds;
}

}  // namespace deepfv
