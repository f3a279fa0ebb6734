#include "flicklab/video.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace flicklab {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) { throw std::runtime_error(message); }

// --- PPM (P6, maxval 255) ---

void skip_ppm_whitespace(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

Frame read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open frame file: " + path.string());

  std::string magic;
  in >> magic;
  if (magic != "P6") fail("malformed PPM header (expected P6): " + path.string());

  int width = 0, height = 0, maxval = 0;
  skip_ppm_whitespace(in);
  in >> width;
  skip_ppm_whitespace(in);
  in >> height;
  skip_ppm_whitespace(in);
  in >> maxval;
  if (!in || width <= 0 || height <= 0) fail("malformed PPM dimensions: " + path.string());
  if (maxval != 255) fail("unsupported PPM maxval (need 255): " + path.string());
  in.get();  // single whitespace before raster

  const std::size_t bytes = static_cast<std::size_t>(width) * height * 3;
  std::vector<std::uint8_t> raw(bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) fail("truncated PPM raster: " + path.string());

  Frame frame;
  frame.width = width;
  frame.height = height;
  frame.channels = 3;
  frame.samples.resize(bytes);
  for (std::size_t i = 0; i < bytes; ++i) frame.samples[i] = raw[i] / 255.0;
  return frame;
}

void write_ppm(const Frame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write frame file: " + path.string());
  out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
  std::vector<std::uint8_t> raw(frame.samples.size());
  for (std::size_t i = 0; i < frame.samples.size(); ++i) {
    const long v = std::lround(frame.samples[i] * 255.0);
    raw[i] = static_cast<std::uint8_t>(std::min(255L, std::max(0L, v)));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail("short write on frame file: " + path.string());
}

}  // namespace

Frame Frame::constant(int width, int height, int channels, double value) {
  Frame f;
  f.width = width;
  f.height = height;
  f.channels = channels;
  f.samples.assign(static_cast<std::size_t>(width) * height * channels, value);
  return f;
}

void VideoClip::validate() const {
  if (frames.empty()) fail("clip has no frames");
  const Frame& first = frames.front();
  if (first.channels != 3) fail("clip must have 3 channels");
  for (const Frame& f : frames) {
    if (!f.same_shape(first)) fail("clip frames disagree on dimensions");
    if (f.samples.size() != static_cast<std::size_t>(f.width) * f.height * f.channels)
      fail("frame sample count does not match its dimensions");
    for (double v : f.samples)
      if (!(v >= 0.0 && v <= 1.0)) fail("frame sample outside [0,1]");
  }
}

VideoClip load_clip(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail("cannot open clip manifest: " + manifest_path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail("malformed clip manifest " + manifest_path.string() + ": " + e.what());
  }

  VideoClip clip;
  const int width = doc.at("width").get<int>();
  const int height = doc.at("height").get<int>();
  clip.fps = doc.at("fps").get<double>();
  if (doc.contains("label") && !doc["label"].is_null()) clip.label = doc["label"].get<int>();

  const auto dir = manifest_path.parent_path();
  for (const auto& name : doc.at("frames")) {
    Frame frame = read_ppm(dir / name.get<std::string>());
    if (frame.width != width || frame.height != height)
      fail("frame dimensions disagree with manifest: " + name.get<std::string>());
    clip.frames.push_back(std::move(frame));
  }
  if (clip.frames.empty()) fail("clip manifest lists no frames: " + manifest_path.string());
  return clip;
}

void save_clip(const VideoClip& clip, const std::filesystem::path& manifest_path) {
  clip.validate();
  const auto dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const std::string stem = manifest_path.stem().string();

  json doc;
  doc["width"] = clip.width();
  doc["height"] = clip.height();
  doc["fps"] = clip.fps;
  if (clip.label) doc["label"] = *clip.label;
  json names = json::array();
  for (int t = 0; t < clip.frame_count(); ++t) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_%04d.ppm", t);
    const std::string name = stem + suffix;
    write_ppm(clip.frames[t], dir / name);
    names.push_back(name);
  }
  doc["frames"] = std::move(names);

  std::ofstream out(manifest_path);
  if (!out) fail("cannot write clip manifest: " + manifest_path.string());
  out << doc.dump(2) << "\n";
}

double mse(const Frame& a, const Frame& b) {
  if (!a.same_shape(b)) fail("mse: frame shapes disagree");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const double d = a.samples[i] - b.samples[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.samples.size());
}

double mse(const VideoClip& a, const VideoClip& b) {
  if (a.frame_count() != b.frame_count()) fail("mse: clip lengths disagree");
  if (a.frame_count() == 0) fail("mse: empty clip");
  double sum = 0.0;
  for (int t = 0; t < a.frame_count(); ++t) sum += mse(a.frames[t], b.frames[t]);
  return sum / a.frame_count();
}

double psnr_from_mse(double mse_value) {
  if (mse_value <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse_value));
}

double psnr(const Frame& reference, const Frame& test) { return psnr_from_mse(mse(reference, test)); }

double psnr(const VideoClip& reference, const VideoClip& test) {
  return psnr_from_mse(mse(reference, test));
}

std::vector<GopView> partition_gops(int frame_count, int gop_size) {
  if (gop_size < 1) throw std::invalid_argument("gop_size must be >= 1");
  if (frame_count < 1) throw std::invalid_argument("frame_count must be >= 1");
  std::vector<GopView> gops;
  for (int first = 0, g = 0; first < frame_count; first += gop_size, ++g) {
    gops.push_back({g, first, std::min(gop_size, frame_count - first)});
  }
  return gops;
}

std::vector<GopView> partition_gops(const VideoClip& clip, int gop_size) {
  return partition_gops(clip.frame_count(), gop_size);
}

}  // namespace flicklab
