#include "salaudit/serialize.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "salaudit/metrics.hpp"

namespace salaudit {

namespace {

[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& msg) {
  throw ValidationError(path.string() + ": " + msg);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open for writing");
  return f;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) io_fail(path, "cannot open for reading");
  return f;
}

void put_u32(std::ofstream& f, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) io_fail(path, "truncated file");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void put_f32_array(std::ofstream& f, std::span<const float> v) {
  static_assert(sizeof(float) == 4);
  for (float x : v) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put_u32(f, bits);
  }
}

void get_f32_array(std::ifstream& f, const std::filesystem::path& path, std::span<float> v) {
  for (float& x : v) {
    const uint32_t bits = get_u32(f, path);
    std::memcpy(&x, &bits, 4);
  }
}

}  // namespace

void pgm_write(const std::filesystem::path& path, int h, int w, std::span<const uint8_t> pixels) {
  if (static_cast<size_t>(h) * static_cast<size_t>(w) != pixels.size())
    io_fail(path, "pixel count does not match dimensions");
  auto f = open_out(path);
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) io_fail(path, "write failed");
}

PgmImage pgm_read(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::string magic;
  f >> magic;
  if (magic != "P5") io_fail(path, "not a binary PGM (P5) file");
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0) io_fail(path, "bad PGM header");
  if (maxval != 255) io_fail(path, "unsupported maxval " + std::to_string(maxval));
  f.get();  // single whitespace after header
  PgmImage img;
  img.h = h;
  img.w = w;
  img.pixels.resize(static_cast<size_t>(h) * w);
  if (!f.read(reinterpret_cast<char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size())))
    io_fail(path, "truncated pixel data");
  return img;
}

void map_pgm_write(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) io_fail(path, "map must be 2-d, got " + shape_str(map.shape));
  const auto norm = minmax_normalize(map.data);
  std::vector<uint8_t> px(norm.size());
  for (size_t i = 0; i < norm.size(); ++i)
    px[i] = static_cast<uint8_t>(std::lround(norm[i] * 255.0));
  pgm_write(path, map.shape[0], map.shape[1], px);
}

void salf_write(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) io_fail(path, "map must be 2-d, got " + shape_str(map.shape));
  auto f = open_out(path);
  const char magic[8] = {'S', 'A', 'L', 'F', '1', 0, 0, 0};
  f.write(magic, 8);
  put_u32(f, static_cast<uint32_t>(map.shape[0]));
  put_u32(f, static_cast<uint32_t>(map.shape[1]));
  put_f32_array(f, map.data);
  if (!f) io_fail(path, "write failed");
}

Tensor salf_read(const std::filesystem::path& path) {
  auto f = open_in(path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, "SALF1\0\0\0", 8) != 0)
    io_fail(path, "bad magic, not a raw saliency map file");
  const uint32_t h = get_u32(f, path);
  const uint32_t w = get_u32(f, path);
  if (h == 0 || w == 0 || static_cast<uint64_t>(h) * w > (1u << 26))
    io_fail(path, "implausible dimensions");
  Tensor t({static_cast<int>(h), static_cast<int>(w)});
  get_f32_array(f, path, t.data);
  return t;
}

void weights_write(const std::filesystem::path& path, const WeightStore& store) {
  auto f = open_out(path);
  f.write("SALW1\n", 6);
  for (const auto& name : store.names()) {
    const auto& t = store.get(name);
    put_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(f, static_cast<uint32_t>(d));
    put_f32_array(f, t.data);
  }
  if (!f) io_fail(path, "write failed");
}

WeightStore weights_read(const std::filesystem::path& path) {
  auto f = open_in(path);
  char magic[6];
  if (!f.read(magic, 6) || std::memcmp(magic, "SALW1\n", 6) != 0)
    io_fail(path, "bad magic, not a weight file");
  WeightStore store;
  while (f.peek() != std::char_traits<char>::eof()) {
    const uint32_t name_len = get_u32(f, path);
    if (name_len == 0 || name_len > 4096) io_fail(path, "implausible tensor name length");
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) io_fail(path, "truncated tensor name");
    const uint32_t rank = get_u32(f, path);
    if (rank == 0 || rank > 8) io_fail(path, "implausible tensor rank");
    std::vector<int> shape(rank);
    uint64_t count = 1;
    for (auto& d : shape) {
      const uint32_t v = get_u32(f, path);
      if (v == 0 || count * v > (1u << 28)) io_fail(path, "implausible tensor dimension");
      d = static_cast<int>(v);
      count *= v;
    }
    Tensor t(shape);
    get_f32_array(f, path, t.data);
    if (store.contains(name)) io_fail(path, "duplicate tensor '" + name + "'");
    store.put(name, std::move(t));
  }
  return store;
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  auto f = open_out(path);
  f << j.dump(2) << "\n";
  if (!f) io_fail(path, "write failed");
}

Json read_json_file(const std::filesystem::path& path) {
  auto f = open_in(path);
  Json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    io_fail(path, std::string("JSON parse error: ") + e.what());
  }
  return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto f = open_out(path);
  f << text;
  if (!f) io_fail(path, "write failed");
}

}  // namespace salaudit
