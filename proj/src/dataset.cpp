#include "ban/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "ban/error.hpp"
#include "ban/rng.hpp"

namespace ban {

namespace fs = std::filesystem;

namespace {

struct Rgb {
  int r, g, b;
};

int luma(const Rgb& c) { return (299 * c.r + 587 * c.g + 114 * c.b) / 1000; }

// Pixel-center membership tests in doubled integer coordinates: pixel (x,y)
// has center (2x+1, 2y+1) against a shape spanning [2x0, 2x0+2w].
bool inside_ellipse(std::int64_t px, std::int64_t py, int x0, int y0, int w, int h) {
  const std::int64_t dx = (px - (2 * x0 + w)) * h;
  const std::int64_t dy = (py - (2 * y0 + h)) * w;
  const std::int64_t r = static_cast<std::int64_t>(w) * h;
  return dx * dx + dy * dy <= r * r;
}

std::int64_t edge(std::int64_t ax, std::int64_t ay, std::int64_t bx, std::int64_t by, std::int64_t px,
                  std::int64_t py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

bool inside_triangle(std::int64_t px, std::int64_t py, int x0, int y0, int w, int h) {
  const std::int64_t ax = 2 * x0 + w, ay = 2 * y0;                // apex
  const std::int64_t bx = 2 * x0 + 2 * w, by = 2 * y0 + 2 * h;    // base right
  const std::int64_t cx = 2 * x0, cy = 2 * y0 + 2 * h;            // base left
  const std::int64_t e0 = edge(ax, ay, bx, by, px, py);
  const std::int64_t e1 = edge(bx, by, cx, cy, px, py);
  const std::int64_t e2 = edge(cx, cy, ax, ay, px, py);
  return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

bool inside_shape(const std::string& shape, int x, int y, int x0, int y0, int w, int h) {
  const std::int64_t px = 2 * static_cast<std::int64_t>(x) + 1;
  const std::int64_t py = 2 * static_cast<std::int64_t>(y) + 1;
  if (shape == "square") return true;
  if (shape == "circle") return inside_ellipse(px, py, x0, y0, w, h);
  if (shape == "triangle") return inside_triangle(px, py, x0, y0, w, h);
  if (shape == "diamond") {
    const std::int64_t dx = std::abs(px - (2 * x0 + w)) * h;
    const std::int64_t dy = std::abs(py - (2 * y0 + h)) * w;
    return dx + dy <= static_cast<std::int64_t>(w) * h;
  }
  throw ConfigError("unsupported shape '" + shape + "'");
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

std::string format_coord(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%06zu", i);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace

const std::vector<std::string>& supported_shapes() {
  static const std::vector<std::string> shapes{"circle", "square", "triangle", "diamond"};
  return shapes;
}

void SyntheticSpec::validate() const {
  if (num_images < 1) throw ConfigError("num_images must be >= 1");
  if (image_size < 8) throw ConfigError("image_size must be >= 8");
  if (classes.empty()) throw ConfigError("at least one class is required");
  for (const auto& c : classes)
    if (std::find(supported_shapes().begin(), supported_shapes().end(), c) == supported_shapes().end())
      throw ConfigError("unsupported shape '" + c + "'");
  if (min_objects < 1 || max_objects < min_objects) throw ConfigError("need 1 <= min_objects <= max_objects");
  if (min_size < 2 || max_size < min_size || max_size > image_size)
    throw ConfigError("need 2 <= min_size <= max_size <= image_size");
  if (noise < 0 || noise > 127) throw ConfigError("noise must lie in [0,127]");
  if (max_overlap < 0 || max_overlap > 1) throw ConfigError("max_overlap must lie in [0,1]");
}

Dataset generate_samples(const SyntheticSpec& spec) {
  spec.validate();
  Dataset data;
  data.class_names = spec.classes;
  Rng rng(spec.seed);
  const int n = spec.image_size;
  for (int i = 0; i < spec.num_images; ++i) {
    Sample s;
    s.image_id = image_name(i);
    s.image.width = n;
    s.image.height = n;
    const Rgb bg{static_cast<int>(rng.uniform_int(30, 225)), static_cast<int>(rng.uniform_int(30, 225)),
                 static_cast<int>(rng.uniform_int(30, 225))};
    std::vector<int> canvas(static_cast<std::size_t>(n) * n * 3);
    for (std::size_t p = 0; p < canvas.size(); p += 3) {
      canvas[p] = bg.r;
      canvas[p + 1] = bg.g;
      canvas[p + 2] = bg.b;
    }
    const int count = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
    for (int o = 0; o < count; ++o) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        const int w = static_cast<int>(rng.uniform_int(spec.min_size, spec.max_size));
        const int h = static_cast<int>(rng.uniform_int(spec.min_size, spec.max_size));
        const int x0 = static_cast<int>(rng.uniform_int(0, n - w));
        const int y0 = static_cast<int>(rng.uniform_int(0, n - h));
        const int cls = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(spec.classes.size())));
        Rgb color{};
        do {
          color = {static_cast<int>(rng.uniform_int(0, 255)), static_cast<int>(rng.uniform_int(0, 255)),
                   static_cast<int>(rng.uniform_int(0, 255))};
        } while (std::abs(luma(color) - luma(bg)) < 60);
        const Box box = Box::from_corners(x0, y0, x0 + w, y0 + h);
        const bool clash = std::any_of(s.objects.begin(), s.objects.end(),
                                       [&](const GroundTruth& g) { return iou(g.box, box) > spec.max_overlap; });
        if (clash) continue;
        const std::string& shape = spec.classes[cls - 1];
        for (int y = y0; y < y0 + h; ++y)
          for (int x = x0; x < x0 + w; ++x)
            if (inside_shape(shape, x, y, x0, y0, w, h)) {
              const std::size_t p = (static_cast<std::size_t>(y) * n + x) * 3;
              canvas[p] = color.r;
              canvas[p + 1] = color.g;
              canvas[p + 2] = color.b;
            }
        s.objects.push_back({cls, box});
        break;
      }
    }
    s.image.rgb.resize(canvas.size());
    for (std::size_t p = 0; p < canvas.size(); ++p) {
      const int v = canvas[p] + static_cast<int>(rng.uniform_int(-spec.noise, spec.noise));
      s.image.rgb[p] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

void write_dataset(const Dataset& data, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  std::ostringstream manifest, annotations, classes;
  for (const auto& name : data.class_names) classes << name << '\n';
  for (const auto& s : data.samples) {
    const std::string file = "images/" + s.image_id + ".ppm";
    write_ppm(out_dir / file, s.image);
    manifest << s.image_id << ',' << file << ',' << s.image.width << ',' << s.image.height << '\n';
    for (const auto& o : s.objects) {
      const Corners c = o.box.corners();
      annotations << s.image_id << ',' << o.class_id << ',' << format_coord(c.x1) << ',' << format_coord(c.y1) << ','
                  << format_coord(c.x2) << ',' << format_coord(c.y2) << '\n';
    }
  }
  write_text(out_dir / "manifest.csv", manifest.str());
  write_text(out_dir / "annotations.csv", annotations.str());
  write_text(out_dir / "classes.txt", classes.str());
}

std::vector<std::string> generate_dataset(const SyntheticSpec& spec, const fs::path& out_dir) {
  const Dataset data = generate_samples(spec);
  write_dataset(data, out_dir);
  std::vector<std::string> rows;
  for (const auto& s : data.samples)
    rows.push_back(s.image_id + ",images/" + s.image_id + ".ppm," + std::to_string(s.image.width) + "," +
                   std::to_string(s.image.height));
  return rows;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  {
    std::ifstream is(dir / "classes.txt");
    if (!is) throw IoError("cannot open " + (dir / "classes.txt").string());
    for (std::string line; std::getline(is, line);)
      if (!line.empty()) data.class_names.push_back(line);
  }
  std::map<std::string, std::size_t> index;
  {
    std::ifstream is(dir / "manifest.csv");
    if (!is) throw IoError("cannot open " + (dir / "manifest.csv").string());
    for (std::string line; std::getline(is, line);) {
      if (line.empty()) continue;
      const auto f = split(line, ',');
      if (f.size() != 4) throw IoError("malformed manifest line: " + line);
      Sample s;
      s.image_id = f[0];
      s.image = read_ppm(dir / f[1]);
      index.emplace(s.image_id, data.samples.size());
      data.samples.push_back(std::move(s));
    }
  }
  std::ifstream is(dir / "annotations.csv");
  if (!is) throw IoError("cannot open " + (dir / "annotations.csv").string());
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw IoError("malformed annotation line: " + line);
    auto it = index.find(f[0]);
    if (it == index.end()) throw IoError("annotation for unknown image " + f[0]);
    try {
      const int cls = std::stoi(f[1]);
      if (cls < 1 || cls > data.num_classes()) throw IoError("class id out of range: " + line);
      data.samples[it->second].objects.push_back(
          {cls, Box::from_corners(std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]))});
    } catch (const std::logic_error&) {
      throw IoError("malformed annotation line: " + line);
    }
  }
  return data;
}

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

void write_ppm(const fs::path& path, const Image& image) {
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw DimensionError("write_ppm: pixel buffer does not match extents");
  write_text(path, encode_ppm(image));
}

Image read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  Image img;
  is >> magic >> img.width >> img.height >> maxval;
  if (magic != "P6" || maxval != 255 || img.width <= 0 || img.height <= 0)
    throw IoError("unsupported PPM header in " + path.string());
  is.get();
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!is) throw IoError("truncated PPM " + path.string());
  return img;
}

Tensor image_tensor(const Image& image) {
  const std::size_t h = image.height, w = image.width;
  Tensor t({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        t[(c * h + y) * w + x] = static_cast<Scalar>(image.rgb[(y * w + x) * 3 + c]) / Scalar(255) - Scalar(0.5);
  return t;
}

}  // namespace ban
