#include "mtj/heatmap.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace mtj {

ProbabilityMap make_soft_label(const std::optional<Point>& position, int width, int height) {
  ProbabilityMap map(width, height);
  if (!position) return map;
  const Point c = *position;
  if (!(c.x >= 0.0 && c.x < width && c.y >= 0.0 && c.y < height))
    throw DataError("soft label: position (" + std::to_string(c.x) + ", " + std::to_string(c.y) +
                    ") outside the map");
  for (int y = 0; y < height; ++y) {
    const double dy = y - c.y;
    for (int x = 0; x < width; ++x) {
      const double dx = x - c.x;
      map.at(x, y) = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2.0 * kLabelVariance)));
    }
  }
  return map;
}

Peak peak(const Grid& map) {
  if (map.empty()) throw DataError("peak: empty map");
  Peak best{{0.0, 0.0}, map.at(0, 0)};
  // Row-major scan with strict comparison keeps the first (smallest y, then x) maximum.
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      if (map.at(x, y) > best.value) best = {{static_cast<double>(x), static_cast<double>(y)}, map.at(x, y)};
  return best;
}

namespace {

static_assert(std::endian::native == std::endian::little, "pmap and mtjw I/O assume a little-endian host");

}  // namespace

void save_pmap(const std::filesystem::path& path, const Grid& map) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("pmap: cannot open '" + path.string() + "' for writing");
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(map.width()), static_cast<std::uint32_t>(map.height())};
  os.write(reinterpret_cast<const char*>(dims), sizeof dims);
  os.write(reinterpret_cast<const char*>(map.values().data()), static_cast<std::streamsize>(map.size() * sizeof(float)));
  if (!os) throw DataError("pmap: write to '" + path.string() + "' failed");
}

ProbabilityMap load_pmap(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("pmap: cannot open '" + path.string() + "'");
  std::uint32_t dims[2] = {0, 0};
  if (!is.read(reinterpret_cast<char*>(dims), sizeof dims)) throw DataError("pmap: truncated header");
  if (dims[0] > (1u << 16) || dims[1] > (1u << 16)) throw DataError("pmap: implausible dimensions");
  std::vector<float> values(static_cast<std::size_t>(dims[0]) * dims[1]);
  if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float))))
    throw DataError("pmap: truncated raster");
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("pmap: trailing bytes");
  return ProbabilityMap(static_cast<int>(dims[0]), static_cast<int>(dims[1]), std::move(values));
}

}  // namespace mtj
