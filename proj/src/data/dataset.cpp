#include "xmark/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "xmark/core/io.hpp"
#include "xmark/core/rng.hpp"

namespace xmark::data {

namespace fs = std::filesystem;

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  fail("unknown split name: '", name, "' (expected train/val/test)");
}

std::vector<int> Dataset::indices(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i)
    if (samples[static_cast<std::size_t>(i)].split == s) out.push_back(i);
  return out;
}

std::vector<int> Dataset::class_indices(Split s, int k, bool positive) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    const ImageSample& smp = samples[static_cast<std::size_t>(i)];
    if (smp.split == s && (smp.labels[static_cast<std::size_t>(k)] == 1) == positive)
      out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  int k = num_classes();
  XM_CHECK(k >= 1, "dataset has no label names");
  XM_CHECK(target_class >= 0 && target_class < k, "target class out of range");
  std::set<std::string> ids;
  for (const ImageSample& s : samples) {
    XM_CHECK(static_cast<int>(s.labels.size()) == k, "sample ", s.id, ": label count mismatch");
    for (int v : s.labels) XM_CHECK(v == 0 || v == 1, "sample ", s.id, ": label not in {0,1}");
    XM_CHECK(s.pixels.rank() == 2 && s.pixels.dim(0) >= 1 && s.pixels.dim(1) >= 1,
             "sample ", s.id, ": empty image");
    XM_CHECK(ids.insert(s.id).second, "duplicate sample id: ", s.id);
  }
}

namespace {

// Smooth indicator of an axis-aligned ellipse with a soft edge.
inline double ellipse_soft(double y, double x, double cy, double cx, double ry, double rx,
                           double edge) {
  double dy = (y - cy) / ry, dx = (x - cx) / rx;
  double d = std::sqrt(dy * dy + dx * dx);
  return 1.0 / (1.0 + std::exp((d - 1.0) / edge));
}

struct PathologySpot {
  double cy, cx;
  bool ring;
};

// Class-specific feature anchors inside the lung fields (fractions of the
// image side). Extra classes beyond six land on a circle.
PathologySpot spot_for_class(int j, int num_pathologies) {
  static const PathologySpot base[] = {
      {0.36, 0.32, false}, {0.36, 0.68, false}, {0.60, 0.30, false},
      {0.60, 0.70, false}, {0.48, 0.50, true},
  };
  if (j < 5) return base[j];
  double ang = 2.0 * 3.14159265358979 * (j - 5) / std::max(1, num_pathologies - 5);
  return {0.5 + 0.2 * std::sin(ang), 0.5 + 0.2 * std::cos(ang), false};
}

}  // namespace

Dataset generate_toy_dataset(const ToyDatasetConfig& config) {
  XM_CHECK(config.n_samples >= 1, "toy dataset: n_samples must be positive");
  XM_CHECK(config.resolution >= 32, "toy dataset: resolution must be >= 32");
  XM_CHECK(config.num_classes >= 2, "toy dataset: K must be >= 2");
  XM_CHECK(config.label_feature_strength >= 0.0 && config.label_feature_strength <= 1.0,
           "toy dataset: label_feature_strength must be in [0,1]");

  int r = config.resolution;
  int k = config.num_classes;
  Dataset ds;
  ds.label_names.push_back("no_finding");
  for (int j = 1; j < k; ++j) ds.label_names.push_back("pathology_" + std::to_string(j));
  ds.target_class = 0;

  Rng master(static_cast<std::uint64_t>(config.seed));
  for (int i = 0; i < config.n_samples; ++i) {
    Rng rng = master.fork(static_cast<std::uint64_t>(i));

    std::vector<int> labels(static_cast<std::size_t>(k), 0);
    if (rng.uniform() < 0.45) {
      labels[0] = 1;  // no finding, exclusive
    } else {
      int tries = 0;
      while (tries++ < 64) {
        int present = 0;
        for (int j = 1; j < k; ++j) {
          labels[static_cast<std::size_t>(j)] = rng.uniform() < 0.38 ? 1 : 0;
          present += labels[static_cast<std::size_t>(j)];
        }
        if (present > 0) break;
      }
      if (std::count(labels.begin() + 1, labels.end(), 1) == 0)
        labels[static_cast<std::size_t>(rng.uniform_int(1, k))] = 1;
    }

    // anatomy parameters
    double torso_cx = 0.5 + rng.uniform(-0.02, 0.02);
    double torso_cy = 0.54 + rng.uniform(-0.02, 0.02);
    double torso_rx = 0.42 * rng.uniform(0.94, 1.06);
    double torso_ry = 0.46 * rng.uniform(0.94, 1.06);
    double body = 0.52 + rng.uniform(-0.06, 0.06);
    double lung_drop = 0.22 + rng.uniform(-0.03, 0.03);
    double lung_dx = 0.17 + rng.uniform(-0.01, 0.01);
    double lung_cy = 0.47 + rng.uniform(-0.02, 0.02);
    double lung_rx = 0.115 * rng.uniform(0.9, 1.1);
    double lung_ry = 0.205 * rng.uniform(0.9, 1.1);

    // three smooth texture bumps
    struct Bump { double cy, cx, sy, sx, amp; };
    Bump bumps[3];
    for (Bump& bmp : bumps)
      bmp = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.1, 0.3),
             rng.uniform(0.1, 0.3), rng.uniform(-0.05, 0.05)};

    // pathology features
    struct Feature { PathologySpot spot; double sigma, amp, jy, jx; };
    std::vector<Feature> feats;
    for (int j = 1; j < k; ++j) {
      if (!labels[static_cast<std::size_t>(j)]) continue;
      Feature f;
      f.spot = spot_for_class(j - 1, k - 1);
      f.sigma = rng.uniform(0.05, 0.075);
      // amplitudes sit well above the watermark budget (16/255): class
      // evidence cannot be erased inside the perturbation ball, so flipping a
      // classifier requires model-specific structure rather than feature
      // removal
      f.amp = config.label_feature_strength * rng.uniform(0.20, 0.30);
      f.jy = rng.uniform(-0.03, 0.03);
      f.jx = rng.uniform(-0.03, 0.03);
      feats.push_back(f);
    }

    Tensor img({r, r});
    std::uint64_t noise_tag = rng.next_u64();
    Rng noise(noise_tag);
    for (int y = 0; y < r; ++y) {
      double fy = (y + 0.5) / r;
      for (int x = 0; x < r; ++x) {
        double fx = (x + 0.5) / r;
        double v = 0.08;
        v += body * ellipse_soft(fy, fx, torso_cy, torso_cx, torso_ry, torso_rx, 0.04);
        v -= lung_drop * ellipse_soft(fy, fx, lung_cy, 0.5 - lung_dx, lung_ry, lung_rx, 0.06);
        v -= lung_drop * ellipse_soft(fy, fx, lung_cy, 0.5 + lung_dx, lung_ry, lung_rx, 0.06);
        for (const Bump& bmp : bumps) {
          double dy = (fy - bmp.cy) / bmp.sy, dx = (fx - bmp.cx) / bmp.sx;
          v += bmp.amp * std::exp(-0.5 * (dy * dy + dx * dx));
        }
        for (const Feature& f : feats) {
          double dy = fy - (f.spot.cy + f.jy), dx = fx - (f.spot.cx + f.jx);
          double d = std::sqrt(dy * dy + dx * dx);
          if (f.spot.ring) {
            double t = (d - 1.6 * f.sigma) / (0.45 * f.sigma);
            v += f.amp * std::exp(-0.5 * t * t);
          } else {
            double t = d / f.sigma;
            v += f.amp * std::exp(-0.5 * t * t);
          }
        }
        v += noise.normal(0.0, 0.015);
        img.at2(y, x) = static_cast<float>(std::min(1.0, std::max(0.0, v)));
      }
    }

    ImageSample s;
    std::ostringstream id;
    id << "toy-" << std::setw(5) << std::setfill('0') << i;
    s.id = id.str();
    s.pixels = std::move(img);
    s.labels = std::move(labels);
    s.rel_path = "images/" + s.id + ".png";
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

Dataset load_manifest(const std::string& manifest_path) {
  auto rows = io::read_csv(manifest_path);
  XM_CHECK(!rows.empty(), "manifest is empty: ", manifest_path);
  const auto& header = rows[0];
  XM_CHECK(header.size() >= 4, "manifest header needs id,path,split and at least one label column");
  XM_CHECK(header[0] == "id" && header[1] == "path" && header[2] == "split",
           "manifest header must start with id,path,split");

  Dataset ds;
  for (std::size_t c = 3; c < header.size(); ++c) ds.label_names.push_back(header[c]);
  int k = ds.num_classes();
  fs::path base = fs::path(manifest_path).parent_path();

  std::set<std::string> seen;
  for (std::size_t rix = 1; rix < rows.size(); ++rix) {
    const auto& row = rows[rix];
    std::size_t rownum = rix + 1;  // 1-based, header is row 1
    XM_CHECK(row.size() == header.size(), "manifest row ", rownum, ": expected ", header.size(),
             " fields, got ", row.size());
    ImageSample s;
    s.id = row[0];
    XM_CHECK(!s.id.empty(), "manifest row ", rownum, ": empty id");
    XM_CHECK(seen.insert(s.id).second, "manifest row ", rownum, ": duplicate id '", s.id, "'");
    s.rel_path = row[1];
    try {
      s.split = split_from_name(row[2]);
    } catch (const Error& e) {
      fail("manifest row ", rownum, ": ", e.what());
    }
    for (int j = 0; j < k; ++j) {
      const std::string& v = row[static_cast<std::size_t>(3 + j)];
      XM_CHECK(v == "0" || v == "1", "manifest row ", rownum, ": label '", header[static_cast<std::size_t>(3 + j)],
               "' value '", v, "' not in {0,1}");
      s.labels.push_back(v == "1" ? 1 : 0);
    }
    fs::path img_path = base / s.rel_path;
    try {
      s.pixels = io::read_png_gray(img_path.string());
    } catch (const Error& e) {
      fail("manifest row ", rownum, ": ", e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

std::string serialize_manifest(const Dataset& ds) {
  std::ostringstream out;
  out << "id,path,split";
  for (const std::string& name : ds.label_names) out << ',' << name;
  out << '\n';
  for (const ImageSample& s : ds.samples) {
    out << s.id << ',' << (s.rel_path.empty() ? "images/" + s.id + ".png" : s.rel_path) << ','
        << split_name(s.split);
    for (int v : s.labels) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

void save_dataset(const Dataset& ds, const std::string& out_dir, const std::string& manifest_name) {
  fs::create_directories(fs::path(out_dir) / "images");
  for (const ImageSample& s : ds.samples) {
    std::string rel = s.rel_path.empty() ? "images/" + s.id + ".png" : s.rel_path;
    fs::path p = fs::path(out_dir) / rel;
    fs::create_directories(p.parent_path());
    io::write_png_gray8(p.string(), s.pixels);
  }
  io::write_text_file((fs::path(out_dir) / manifest_name).string(), serialize_manifest(ds));
}

void split(Dataset& ds, double train_frac, double val_frac, double test_frac, std::int64_t seed) {
  XM_CHECK(!ds.samples.empty(), "split: empty dataset");
  XM_CHECK(train_frac >= 0 && val_frac >= 0 && test_frac >= 0, "split: negative fraction");
  XM_CHECK(std::fabs(train_frac + val_frac + test_frac - 1.0) < 1e-9,
           "split: fractions must sum to 1");

  // stratify by exact label vector; per-stratum proportional counts with
  // largest-remainder rounding so global split sizes are exact
  std::map<std::string, std::vector<int>> strata;
  for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i) {
    std::string key;
    for (int v : ds.samples[static_cast<std::size_t>(i)].labels) key += v ? '1' : '0';
    strata[key].push_back(i);
  }
  Rng rng(static_cast<std::uint64_t>(seed) ^ 0x5eedULL);
  struct Group {
    std::vector<int> idx;
    std::size_t n_train = 0, n_val = 0;
    double train_frac_part = 0, val_frac_part = 0;
  };
  std::vector<Group> groups;
  for (auto& [key, idxs] : strata) {
    Group g;
    g.idx = idxs;
    rng.shuffle(g.idx);
    groups.push_back(std::move(g));
  }

  std::size_t n = ds.samples.size();
  std::size_t want_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  std::size_t want_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
  if (want_train + want_val > n) want_val = n - want_train;

  std::size_t got_train = 0, got_val = 0;
  for (Group& g : groups) {
    double t = train_frac * static_cast<double>(g.idx.size());
    double v = val_frac * static_cast<double>(g.idx.size());
    g.n_train = static_cast<std::size_t>(std::floor(t));
    g.n_val = static_cast<std::size_t>(std::floor(v));
    g.train_frac_part = t - std::floor(t);
    g.val_frac_part = v - std::floor(v);
    got_train += g.n_train;
    got_val += g.n_val;
  }
  auto distribute = [&groups](std::size_t want, std::size_t got, bool is_train) {
    while (got < want) {
      Group* best = nullptr;
      for (Group& g : groups) {
        if (g.n_train + g.n_val >= g.idx.size()) continue;
        if (!best) {
          best = &g;
          continue;
        }
        double a = is_train ? g.train_frac_part : g.val_frac_part;
        double b = is_train ? best->train_frac_part : best->val_frac_part;
        if (a > b) best = &g;
      }
      if (!best) break;
      if (is_train) {
        ++best->n_train;
        best->train_frac_part = -1.0;
      } else {
        ++best->n_val;
        best->val_frac_part = -1.0;
      }
      ++got;
    }
  };
  distribute(want_train, got_train, true);
  distribute(want_val, got_val, false);

  for (Group& g : groups)
    for (std::size_t pos = 0; pos < g.idx.size(); ++pos) {
      Split s = pos < g.n_train ? Split::train
                                : (pos < g.n_train + g.n_val ? Split::val : Split::test);
      ds.samples[static_cast<std::size_t>(g.idx[pos])].split = s;
    }
}

}  // namespace xmark::data
