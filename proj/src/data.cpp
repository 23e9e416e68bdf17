#include "quadnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace quadnet {

namespace {

constexpr int kSize = 48;

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

}  // namespace

// ---- partitions -----------------------------------------------------------

const char* partition_name(Split split, bool seen) {
  switch (split) {
    case Split::Train: return seen ? "phi_s" : "phi_u";
    case Split::Val: return seen ? "psi_s" : "psi_u";
    case Split::Test: return seen ? "omega_s" : "omega_u";
  }
  return "?";
}

std::pair<Split, bool> parse_partition(const std::string& name) {
  for (const Split s : {Split::Train, Split::Val, Split::Test}) {
    if (name == partition_name(s, true)) return {s, true};
    if (name == partition_name(s, false)) return {s, false};
  }
  throw std::runtime_error("dataset: unknown partition '" + name + "'");
}

std::vector<int> DatasetBundle::class_ids() const {
  std::vector<int> ids;
  for (const auto& [cid, img] : templates) ids.push_back(cid);
  return ids;
}

std::vector<SampleRef> DatasetBundle::members(Split split) const {
  std::vector<SampleRef> out;
  for (const auto& [cid, split_tags] : splits)
    for (size_t i = 0; i < split_tags.size(); ++i)
      if (split_tags[i] == split) out.push_back({cid, static_cast<int>(i)});
  return out;
}

std::vector<SampleRef> DatasetBundle::members(Split split, bool seen) const {
  std::vector<SampleRef> out;
  for (const auto& [cid, split_tags] : splits) {
    if (is_seen(cid) != seen) continue;
    for (size_t i = 0; i < split_tags.size(); ++i)
      if (split_tags[i] == split) out.push_back({cid, static_cast<int>(i)});
  }
  return out;
}

void DatasetBundle::recompute_channel_means() {
  double acc[3] = {0, 0, 0};
  long count = 0;
  for (const auto& [cid, images] : reals) {
    if (!is_seen(cid)) continue;
    const auto& tags = splits.at(cid);
    for (size_t i = 0; i < images.size(); ++i) {
      if (tags[i] != Split::Train && tags[i] != Split::Val) continue;
      const Image& img = images[i];
      for (int c = 0; c < 3; ++c)
        acc[c] += img.values().segment(c * kSize * kSize, kSize * kSize).sum();
      ++count;
    }
  }
  if (count == 0) throw std::runtime_error("dataset: no seen train/val samples to average");
  for (int c = 0; c < 3; ++c) channel_means[c] = acc[c] / (count * kSize * kSize);
}

void DatasetBundle::validate() const {
  for (const auto& [cid, images] : reals) {
    if (templates.count(cid) == 0)
      throw std::runtime_error("dataset: class " + std::to_string(cid) + " has no template");
    if (splits.at(cid).size() != images.size())
      throw std::runtime_error("dataset: split tags out of step for class " + std::to_string(cid));
  }
  for (const auto& [cid, img] : templates)
    if (img.shape() != std::vector<int>{3, kSize, kSize})
      throw std::runtime_error("dataset: template for class " + std::to_string(cid) +
                               " is not 3x48x48");
}

// ---- shape membership ------------------------------------------------------

namespace {

bool inside_triangle_up(double u, double v) {
  // vertices (0,-0.92), (-0.92,0.80), (0.92,0.80); v grows downward
  const double ax = 0.0, ay = -0.92, bx = -0.92, by = 0.80, cx = 0.92, cy = 0.80;
  const auto side = [](double px, double py, double qx, double qy, double rx, double ry) {
    return (qx - px) * (ry - py) - (qy - py) * (rx - px);
  };
  const double d1 = side(ax, ay, bx, by, u, v);
  const double d2 = side(bx, by, cx, cy, u, v);
  const double d3 = side(cx, cy, ax, ay, u, v);
  const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
  const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
  return !(has_neg && has_pos);
}

bool inside_shape(BorderShape shape, double u, double v) {
  switch (shape) {
    case BorderShape::Circle: return u * u + v * v <= 0.88 * 0.88;
    case BorderShape::Triangle: return inside_triangle_up(u, v);
    case BorderShape::InvertedTriangle: return inside_triangle_up(u, -v);
    case BorderShape::Square: return std::max(std::abs(u), std::abs(v)) <= 0.80;
    case BorderShape::Diamond: return std::abs(u) + std::abs(v) <= 0.92;
    case BorderShape::Octagon:
      return std::max(std::abs(u), std::abs(v)) <= 0.84 && std::abs(u) + std::abs(v) <= 1.12;
  }
  return false;
}

struct Stroke {
  double x0, y0, x1, y1, halfwidth;
};

std::vector<Stroke> glyph_strokes(int glyph_id) {
  Rng rng(0x517cc1b727220a95ull ^ static_cast<uint64_t>(glyph_id));
  const int n = 2 + glyph_id % 3;
  std::vector<Stroke> strokes;
  for (int i = 0; i < n; ++i) {
    Stroke s;
    s.x0 = rng.uniform(-0.45, 0.45);
    s.y0 = rng.uniform(-0.45, 0.45);
    s.x1 = rng.uniform(-0.45, 0.45);
    s.y1 = rng.uniform(-0.45, 0.45);
    s.halfwidth = rng.uniform(0.05, 0.10);
    strokes.push_back(s);
  }
  return strokes;
}

bool hits_stroke(const std::vector<Stroke>& strokes, double u, double v) {
  for (const Stroke& s : strokes) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((u - s.x0) * dx + (v - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double px = s.x0 + t * dx, py = s.y0 + t * dy;
    const double d2 = (u - px) * (u - px) + (v - py) * (v - py);
    if (d2 <= s.halfwidth * s.halfwidth) return true;
  }
  return false;
}

// Premultiplied sign raster plus coverage, 4x4 supersampled.
struct SignRaster {
  std::vector<float> pm_rgb;  // 3 * 48 * 48, planar, premultiplied by alpha
  std::vector<float> alpha;   // 48 * 48
};

SignRaster render_sign(const SignSpec& spec) {
  constexpr int kSs = 4;
  const auto strokes = glyph_strokes(spec.glyph_id);
  const Rgb glyph_color{spec.border_color.r * 0.35f, spec.border_color.g * 0.35f,
                        spec.border_color.b * 0.35f};
  SignRaster raster;
  raster.pm_rgb.assign(3 * kSize * kSize, 0.0f);
  raster.alpha.assign(kSize * kSize, 0.0f);
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      double r = 0, g = 0, b = 0, a = 0;
      for (int sy = 0; sy < kSs; ++sy) {
        for (int sx = 0; sx < kSs; ++sx) {
          const double u = ((x + (sx + 0.5) / kSs) / kSize) * 2.0 - 1.0;
          const double v = ((y + (sy + 0.5) / kSs) / kSize) * 2.0 - 1.0;
          if (!inside_shape(spec.border_shape, u, v)) continue;
          const bool inner = inside_shape(spec.border_shape, u / 0.72, v / 0.72);
          Rgb c = spec.border_color;
          if (inner) c = hits_stroke(strokes, u, v) ? glyph_color : spec.fill_color;
          r += c.r;
          g += c.g;
          b += c.b;
          a += 1.0;
        }
      }
      const double inv = 1.0 / (kSs * kSs);
      raster.pm_rgb[(0 * kSize + y) * kSize + x] = static_cast<float>(r * inv);
      raster.pm_rgb[(1 * kSize + y) * kSize + x] = static_cast<float>(g * inv);
      raster.pm_rgb[(2 * kSize + y) * kSize + x] = static_cast<float>(b * inv);
      raster.alpha[static_cast<size_t>(y * kSize + x)] = static_cast<float>(a * inv);
    }
  }
  return raster;
}

constexpr float kNeutralBackground = 0.72f;

Image composite(const SignRaster& raster, const Rgb& bg) {
  Image out = Image::zeros({3, kSize, kSize});
  const float bgc[3] = {bg.r, bg.g, bg.b};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < kSize * kSize; ++i) {
      const float a = raster.alpha[static_cast<size_t>(i)];
      out.at(c * kSize * kSize + i) =
          raster.pm_rgb[static_cast<size_t>(c * kSize * kSize + i)] + bgc[c] * (1.0f - a);
    }
  return out;
}

}  // namespace

Image render_template(const SignSpec& spec) {
  return composite(render_sign(spec), Rgb{kNeutralBackground, kNeutralBackground, kNeutralBackground});
}

double template_coverage(const SignSpec& spec) {
  const SignRaster raster = render_sign(spec);
  double covered = 0;
  for (const float a : raster.alpha) covered += (a > 0.5f) ? 1.0 : 0.0;
  return covered / (kSize * kSize);
}

Image synthesize_real(const SignSpec& spec, Rng& rng, double severity) {
  if (severity < 0.0 || severity > 1.0)
    throw std::invalid_argument("synthesize_real: severity must be in [0,1]");
  const SignRaster raster = render_sign(spec);

  // Scene background: a random color whenever any corruption is active.
  // Only the degenerate severity-0 sample keeps the template's neutral
  // backdrop; severity scales the sensor-style degradations below, not
  // the presence of a scene.
  const double bg_mix = severity > 0.0 ? 1.0 : 0.0;
  const Rgb bg{
      static_cast<float>(kNeutralBackground + bg_mix * (rng.uniform() - kNeutralBackground)),
      static_cast<float>(kNeutralBackground + bg_mix * (rng.uniform() - kNeutralBackground)),
      static_cast<float>(kNeutralBackground + bg_mix * (rng.uniform() - kNeutralBackground))};

  // affine jitter, magnitudes scaled by severity
  const double tx = rng.uniform(-1.0, 1.0) * 0.10 * severity * kSize;
  const double ty = rng.uniform(-1.0, 1.0) * 0.10 * severity * kSize;
  const double angle = rng.uniform(-1.0, 1.0) * (10.0 * 3.14159265358979323846 / 180.0) * severity;
  const double scale_f = 1.0 + rng.uniform(-1.0, 1.0) * 0.2 * severity;
  const double cosa = std::cos(angle), sina = std::sin(angle);
  const double center = kSize / 2.0;

  Image out = Image::zeros({3, kSize, kSize});
  auto sample_plane = [&](const std::vector<float>& plane, double sx, double sy) -> float {
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0, fy = sy - y0;
    float acc = 0.0f;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int xx = x0 + dx, yy = y0 + dy;
        if (xx < 0 || xx >= kSize || yy < 0 || yy >= kSize) continue;
        const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
        acc += static_cast<float>(w) * plane[static_cast<size_t>(yy * kSize + xx)];
      }
    return acc;
  };

  std::vector<float> plane(static_cast<size_t>(kSize * kSize));
  const float bgc[3] = {bg.r, bg.g, bg.b};
  std::vector<float> alpha_out(static_cast<size_t>(kSize * kSize));
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x) {
      const double dx = (x + 0.5) - center - tx;
      const double dy = (y + 0.5) - center - ty;
      const double rx = (cosa * dx + sina * dy) / scale_f;
      const double ry = (-sina * dx + cosa * dy) / scale_f;
      const double sx = rx + center - 0.5;
      const double sy = ry + center - 0.5;
      alpha_out[static_cast<size_t>(y * kSize + x)] = sample_plane(raster.alpha, sx, sy);
      for (int c = 0; c < 3; ++c) {
        std::copy(raster.pm_rgb.begin() + c * kSize * kSize,
                  raster.pm_rgb.begin() + (c + 1) * kSize * kSize, plane.begin());
        out.at((c * kSize + y) * kSize + x) = sample_plane(plane, sx, sy);
      }
    }
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < kSize * kSize; ++i) {
      float& px = out.at(c * kSize * kSize + i);
      px = px + bgc[c] * (1.0f - alpha_out[static_cast<size_t>(i)]);
    }

  // Illumination: per-channel brightness/contrast, biased toward the
  // dark, washed-out look of street captures, so the real samples sit
  // systematically offset from the crisp template, not centered on it.
  float brightness[3], contrast[3];
  for (int c = 0; c < 3; ++c)
    brightness[c] = static_cast<float>(severity * (-0.35 + 0.45 * rng.uniform()));
  for (int c = 0; c < 3; ++c)
    contrast[c] = static_cast<float>(1.0 + severity * (-0.5 + 0.65 * rng.uniform()));
  for (int c = 0; c < 3; ++c) {
    if (brightness[c] == 0.0f && contrast[c] == 1.0f) continue;
    for (int i = 0; i < kSize * kSize; ++i) {
      float& px = out.at(c * kSize * kSize + i);
      px = (px - 0.5f) * contrast[c] + 0.5f + brightness[c];
    }
  }

  // gaussian blur, never fully absent when severity is on: captured
  // instances are low-resolution
  const double sigma = severity * (0.3 + 1.5 * rng.uniform());
  if (sigma > 0.05) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
    std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
    double total = 0;
    for (int i = -radius; i <= radius; ++i) {
      const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
      kernel[static_cast<size_t>(i + radius)] = static_cast<float>(v);
      total += v;
    }
    for (auto& v : kernel) v = static_cast<float>(v / total);
    std::vector<float> tmp(static_cast<size_t>(kSize * kSize));
    for (int c = 0; c < 3; ++c) {
      float* base = out.data() + c * kSize * kSize;
      for (int y = 0; y < kSize; ++y)
        for (int x = 0; x < kSize; ++x) {
          float acc = 0;
          for (int i = -radius; i <= radius; ++i) {
            const int xx = std::clamp(x + i, 0, kSize - 1);
            acc += kernel[static_cast<size_t>(i + radius)] * base[y * kSize + xx];
          }
          tmp[static_cast<size_t>(y * kSize + x)] = acc;
        }
      for (int y = 0; y < kSize; ++y)
        for (int x = 0; x < kSize; ++x) {
          float acc = 0;
          for (int i = -radius; i <= radius; ++i) {
            const int yy = std::clamp(y + i, 0, kSize - 1);
            acc += kernel[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(yy * kSize + x)];
          }
          base[y * kSize + x] = acc;
        }
    }
  }

  // partial shading: a darkened bar across the sign
  if (rng.bernoulli(0.5 * severity)) {
    const bool horizontal = rng.bernoulli(0.5);
    const int pos = rng.uniform_int(kSize);
    const int half = 1 + rng.uniform_int(2 + static_cast<int>(4 * severity));
    const float shade = static_cast<float>(0.25 + 0.35 * rng.uniform());
    for (int c = 0; c < 3; ++c)
      for (int k = -half; k <= half; ++k) {
        const int line = pos + k;
        if (line < 0 || line >= kSize) continue;
        for (int i = 0; i < kSize; ++i) {
          const int y = horizontal ? line : i;
          const int x = horizontal ? i : line;
          out.at((c * kSize + y) * kSize + x) *= shade;
        }
      }
  }

  // additive noise
  const double noise_amp = 0.08 * severity;
  if (noise_amp > 0.0)
    for (int i = 0; i < out.size(); ++i)
      out.at(i) += static_cast<float>(noise_amp * rng.normal());

  for (int i = 0; i < out.size(); ++i) out.at(i) = clamp01(out[i]);
  return out;
}

// ---- class spec assignment ------------------------------------------------

std::vector<SignSpec> make_class_specs(int num_classes, uint64_t seed) {
  static const Rgb kBorders[] = {
      {0.78f, 0.08f, 0.10f}, {0.10f, 0.22f, 0.75f}, {0.07f, 0.52f, 0.16f}, {0.88f, 0.72f, 0.05f},
      {0.85f, 0.42f, 0.04f}, {0.48f, 0.12f, 0.62f}, {0.05f, 0.58f, 0.62f}, {0.45f, 0.28f, 0.12f},
  };
  static const Rgb kFills[] = {
      {0.96f, 0.96f, 0.96f}, {0.98f, 0.92f, 0.70f}, {0.84f, 0.92f, 0.98f}, {0.92f, 0.86f, 0.92f}};
  Rng rng = Rng::stream(seed, "classes");
  std::vector<SignSpec> specs;
  for (int i = 0; i < num_classes; ++i) {
    SignSpec s;
    s.border_shape = static_cast<BorderShape>(i % 6);
    s.border_color = kBorders[rng.uniform_int(8)];
    s.fill_color = kFills[rng.uniform_int(4)];
    s.glyph_id = i;  // distinct per class, so spec triples are distinct
    specs.push_back(s);
  }
  return specs;
}

// ---- generation ----------------------------------------------------------

void GenerateConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("gen-data: need at least 2 classes");
  if (num_seen < 1 || num_seen >= num_classes)
    throw std::invalid_argument("gen-data: num_seen must be in [1, num_classes)");
  if (samples_per_class < 1) throw std::invalid_argument("gen-data: samples_per_class must be >= 1");
  if (val_fraction <= 0.0 || val_fraction >= 1.0 || test_fraction <= 0.0 || test_fraction >= 1.0 ||
      val_fraction + test_fraction >= 1.0)
    throw std::invalid_argument("gen-data: fractions must lie in (0,1) and sum below 1");
  if (severity < 0.0 || severity > 1.0)
    throw std::invalid_argument("gen-data: severity must be in [0,1]");
}

DatasetBundle generate_dataset(const GenerateConfig& cfg) {
  cfg.validate();
  const auto specs = make_class_specs(cfg.num_classes, cfg.seed);
  DatasetBundle bundle;
  bundle.generator_seed = cfg.seed;

  const int n = cfg.samples_per_class;
  const int n_val = static_cast<int>(std::lround(cfg.val_fraction * n));
  const int n_test = static_cast<int>(std::lround(cfg.test_fraction * n));
  const int n_train = n - n_val - n_test;
  if (n_train < 1) throw std::invalid_argument("gen-data: fractions leave no training samples");

  for (int cid = 0; cid < cfg.num_classes; ++cid) {
    Image tmpl = render_template(specs[static_cast<size_t>(cid)]);
    quantize_to_u8_grid(tmpl);
    bundle.templates[cid] = tmpl;
    if (cid < cfg.num_seen) bundle.seen_classes.insert(cid);

    Rng rng = Rng::stream(cfg.seed, "reals/" + std::to_string(cid));
    std::vector<Image> images;
    std::vector<Split> tags;
    for (int i = 0; i < n; ++i) {
      Image img = synthesize_real(specs[static_cast<size_t>(cid)], rng, cfg.severity);
      quantize_to_u8_grid(img);
      images.push_back(std::move(img));
      tags.push_back(i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test));
    }
    bundle.reals[cid] = std::move(images);
    bundle.splits[cid] = std::move(tags);
  }
  bundle.recompute_channel_means();
  bundle.validate();
  return bundle;
}

void write_dataset(const DatasetBundle& bundle, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "templates");
  std::ostringstream index;
  index << "path,class_id,partition\n";
  for (const auto& [cid, tmpl] : bundle.templates) {
    write_ppm((fs::path(dir) / "templates" / (std::to_string(cid) + ".ppm")).string(), tmpl);
    if (bundle.reals.count(cid) == 0) continue;
    fs::create_directories(fs::path(dir) / "real" / std::to_string(cid));
    const auto& images = bundle.reals.at(cid);
    const auto& tags = bundle.splits.at(cid);
    for (size_t i = 0; i < images.size(); ++i) {
      const std::string rel = "real/" + std::to_string(cid) + "/" + std::to_string(i) + ".ppm";
      write_ppm((fs::path(dir) / rel).string(), images[i]);
      index << rel << ',' << cid << ',' << partition_name(tags[i], bundle.is_seen(cid)) << '\n';
    }
  }
  std::ofstream icsv(fs::path(dir) / "index.csv", std::ios::binary);
  icsv << index.str();
  if (!icsv) throw std::runtime_error("dataset: cannot write index.csv under " + dir);

  json meta;
  meta["channel_means"] = {bundle.channel_means[0], bundle.channel_means[1],
                           bundle.channel_means[2]};
  json classes = json::array();
  for (const auto& [cid, tmpl] : bundle.templates)
    classes.push_back({{"id", cid}, {"seen", bundle.is_seen(cid)}});
  meta["classes"] = classes;
  meta["generator_seed"] = bundle.generator_seed;
  std::ofstream mjson(fs::path(dir) / "meta.json", std::ios::binary);
  mjson << meta.dump(2) << '\n';
  if (!mjson) throw std::runtime_error("dataset: cannot write meta.json under " + dir);
}

DatasetBundle generate_dataset(const GenerateConfig& cfg, const std::string& dir) {
  DatasetBundle bundle = generate_dataset(cfg);
  write_dataset(bundle, dir);
  return bundle;
}

// ---- loading ----------------------------------------------------------------

DatasetBundle load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream mjson(root / "meta.json");
  if (!mjson) throw std::runtime_error("dataset: missing meta.json under " + dir);
  json meta = json::parse(mjson);

  DatasetBundle bundle;
  bundle.generator_seed = meta.value("generator_seed", 0ull);
  for (const auto& cls : meta.at("classes")) {
    const int cid = cls.at("id").get<int>();
    const bool seen = cls.at("seen").get<bool>();
    if (seen) bundle.seen_classes.insert(cid);
    const fs::path tpath = root / "templates" / (std::to_string(cid) + ".ppm");
    if (!fs::exists(tpath))
      throw std::runtime_error("dataset: missing template for class " + std::to_string(cid));
    bundle.templates[cid] = read_ppm(tpath.string());
    bundle.reals[cid] = {};
    bundle.splits[cid] = {};
  }

  std::ifstream icsv(root / "index.csv");
  if (!icsv) throw std::runtime_error("dataset: missing index.csv under " + dir);
  std::string line;
  if (!std::getline(icsv, line) || line != "path,class_id,partition")
    throw std::runtime_error("dataset: malformed index.csv header");
  std::set<std::string> seen_paths;
  while (std::getline(icsv, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::runtime_error("dataset: malformed index row '" + line + "'");
    const std::string path = line.substr(0, c1);
    const int cid = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
    const auto [split, seen] = parse_partition(line.substr(c2 + 1));
    if (!seen_paths.insert(path).second)
      throw std::runtime_error("dataset: duplicate index entry '" + path + "'");
    if (bundle.templates.count(cid) == 0)
      throw std::runtime_error("dataset: index refers to unknown class " + std::to_string(cid));
    if (seen != bundle.is_seen(cid))
      throw std::runtime_error("dataset: partition tag of '" + path +
                               "' contradicts the seen marking of class " + std::to_string(cid));
    bundle.reals[cid].push_back(read_ppm((root / path).string()));
    bundle.splits[cid].push_back(split);
  }
  bundle.recompute_channel_means();
  bundle.validate();
  return bundle;
}

std::string dataset_hash(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const char* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, dir).generic_string();
    mix(rel.data(), rel.size());
    std::ifstream in(f, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    mix(bytes.data(), bytes.size());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- preprocessing ----------------------------------------------------------

Tensor<float> preprocess(const Image& image, const std::array<double, 3>& means) {
  if (image.shape() != std::vector<int>{3, kSize, kSize})
    throw std::invalid_argument("preprocess: expected [3,48,48], got " + shape_str(image.shape()));
  Tensor<float> out = image.clone();
  for (int c = 0; c < 3; ++c)
    out.values().segment(c * kSize * kSize, kSize * kSize) -= static_cast<float>(means[c]);
  return out;
}

// ---- PPM ---------------------------------------------------------------------

void quantize_to_u8_grid(Image& image) {
  for (int i = 0; i < image.size(); ++i) {
    const float v = clamp01(image[i]);
    image.at(i) = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
  }
}

void write_ppm(const std::string& path, const Image& image) {
  if (image.shape() != std::vector<int>{3, kSize, kSize})
    throw std::invalid_argument("write_ppm: expected [3,48,48], got " + shape_str(image.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << "P6\n" << kSize << ' ' << kSize << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(kSize * 3));
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = clamp01(image[(c * kSize + y) * kSize + x]);
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a binary PPM: " + path);
  int w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  is.get();  // single whitespace after header
  if (w != kSize || h != kSize || maxval != 255)
    throw std::runtime_error("read_ppm: " + path + " is not a 48x48 8-bit image");
  std::vector<unsigned char> raw(static_cast<size_t>(kSize * kSize * 3));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw std::runtime_error("read_ppm: truncated file " + path);
  Image img = Image::zeros({3, kSize, kSize});
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x)
      for (int c = 0; c < 3; ++c)
        img.at((c * kSize + y) * kSize + x) =
            static_cast<float>(raw[static_cast<size_t>((y * kSize + x) * 3 + c)]) / 255.0f;
  return img;
}

}  // namespace quadnet
