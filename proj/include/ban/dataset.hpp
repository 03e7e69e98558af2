#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ban/geometry.hpp"
#include "ban/tensor.hpp"

namespace ban {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

struct GroundTruth {
  int class_id = 1;  // 1..C
  Box box;
};

struct Sample {
  std::string image_id;
  Image image;
  std::vector<GroundTruth> objects;
};

struct Dataset {
  std::vector<std::string> class_names;  // index c-1 names class c
  std::vector<Sample> samples;
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct SyntheticSpec {
  int num_images = 100;
  int image_size = 128;
  std::vector<std::string> classes{"circle", "square", "triangle"};
  int min_objects = 1;
  int max_objects = 4;
  int min_size = 16;
  int max_size = 48;
  int noise = 16;            // per-channel uniform noise amplitude
  double max_overlap = 0.5;  // IoU cap between objects of one image
  std::uint64_t seed = 42;

  void validate() const;
};

// Shapes the generator can draw.
const std::vector<std::string>& supported_shapes();

// Renders the dataset in memory. Placement and pixel values use only the
// integer RNG stream, so the bytes are identical across platforms.
Dataset generate_samples(const SyntheticSpec& spec);

// Writes images/<id>.ppm, annotations.csv (image_id,class_id,x1,y1,x2,y2),
// manifest.csv (image_id,file,width,height) and classes.txt. Returns the
// manifest rows.
std::vector<std::string> generate_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);
void write_dataset(const Dataset& data, const std::filesystem::path& out_dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
std::string encode_ppm(const Image& image);

// [1,3,H,W] with pixel/255 - 0.5.
Tensor image_tensor(const Image& image);

}  // namespace ban
