#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "quadnet/rng.hpp"
#include "quadnet/tensor.hpp"

namespace quadnet {

// Planar [3,48,48] float image with values in [0,1].
using Image = Tensor<float>;

enum class BorderShape { Circle, Triangle, InvertedTriangle, Square, Diamond, Octagon };

struct Rgb {
  float r = 0, g = 0, b = 0;
};

// Procedural description of one sign class: a colored border shape, a
// fill, and a deterministic stroke pattern selected by glyph_id.
struct SignSpec {
  BorderShape border_shape = BorderShape::Circle;
  Rgb border_color;
  Rgb fill_color;
  int glyph_id = 0;
};

enum class Split { Train, Val, Test };

const char* partition_name(Split split, bool seen);
std::pair<Split, bool> parse_partition(const std::string& name);

struct SampleRef {
  int class_id = 0;
  int sample_index = 0;
};

// Template set, real set, and the six-way partition over the reals.
// Bundles are immutable after construction and shared read-only.
struct DatasetBundle {
  std::map<int, Image> templates;
  std::map<int, std::vector<Image>> reals;
  std::map<int, std::vector<Split>> splits;  // parallel to reals
  std::set<int> seen_classes;
  std::array<double, 3> channel_means = {0, 0, 0};
  uint64_t generator_seed = 0;

  bool is_seen(int class_id) const { return seen_classes.count(class_id) > 0; }
  std::vector<int> class_ids() const;
  std::vector<SampleRef> members(Split split) const;          // both seen and unseen classes
  std::vector<SampleRef> members(Split split, bool seen) const;
  void recompute_channel_means();  // over seen train + val
  void validate() const;
};

// ---- rendering -----------------------------------------------------------

Image render_template(const SignSpec& spec);
Image synthesize_real(const SignSpec& spec, Rng& rng, double severity);

// fraction of image pixels covered by the sign (templates only)
double template_coverage(const SignSpec& spec);

std::vector<SignSpec> make_class_specs(int num_classes, uint64_t seed);

// ---- dataset generation / loading -----------------------------------------

struct GenerateConfig {
  int num_classes = 12;
  int num_seen = 8;
  int samples_per_class = 60;
  double val_fraction = 0.2;
  double test_fraction = 0.3;
  double severity = 0.5;
  uint64_t seed = 1;

  void validate() const;
};

DatasetBundle generate_dataset(const GenerateConfig& cfg);
void write_dataset(const DatasetBundle& bundle, const std::string& dir);
// generate + write in one step
DatasetBundle generate_dataset(const GenerateConfig& cfg, const std::string& dir);

DatasetBundle load_dataset(const std::string& dir);

// FNV-1a over the directory contents, for run manifests.
std::string dataset_hash(const std::string& dir);

// ---- preprocessing -----------------------------------------------------

// Per-channel mean subtraction; the only preprocessing applied.
Tensor<float> preprocess(const Image& image, const std::array<double, 3>& means);

// ---- PPM (P6, 8-bit) -------------------------------------------------------

void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

// Snap values onto the 8-bit grid used by the on-disk carrier so that
// in-memory bundles equal their round-tripped form exactly.
void quantize_to_u8_grid(Image& image);

}  // namespace quadnet
