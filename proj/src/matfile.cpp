#include "matfile.hpp"

#include "advgen/error.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <string_view>

namespace advgen::data::detail {
namespace {

enum : std::uint32_t {
  miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
  miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14, miCOMPRESSED = 15,
};
constexpr std::uint8_t mxUINT8_CLASS = 9;

struct Element {
  std::uint32_t type = 0;
  std::string_view data;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ >= bytes_.size(); }

  Element next(bool pad) {
    std::uint32_t first = read_u32();
    Element e;
    if ((first >> 16) != 0) {  // small data element: size in the upper half, data in 4 bytes
      e.type = first & 0xFFFF;
      const std::uint32_t size = first >> 16;
      if (pos_ + 4 > bytes_.size() || size > 4) throw Error("mat: bad small element");
      e.data = bytes_.substr(pos_, size);
      pos_ += 4;
      return e;
    }
    e.type = first;
    const std::uint32_t size = read_u32();
    if (pos_ + size > bytes_.size()) throw Error("mat: element exceeds file");
    e.data = bytes_.substr(pos_, size);
    pos_ += size;
    // Compressed elements are stored back to back without alignment padding.
    if (pad && e.type != miCOMPRESSED) pos_ = (pos_ + 7) & ~std::size_t{7};
    return e;
  }

 private:
  std::uint32_t read_u32() {
    if (pos_ + 4 > bytes_.size()) throw Error("mat: truncated tag");
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string inflate_all(std::string_view compressed) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw Error("mat: inflateInit failed");
  std::string out;
  char buf[1 << 16];
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error("mat: corrupt compressed element");
    }
    out.append(buf, sizeof(buf) - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;
  }
  inflateEnd(&zs);
  return out;
}

template <typename T>
void widen(std::string_view data, std::vector<double>& out) {
  const std::size_t n = data.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, data.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

void decode_numeric(const Element& e, MatArray& array, bool want_u8) {
  if (want_u8 && e.type == miUINT8) {
    array.u8.assign(e.data.begin(), e.data.end());
    return;
  }
  std::vector<double> values;
  switch (e.type) {
    case miINT8: widen<std::int8_t>(e.data, values); break;
    case miUINT8: widen<std::uint8_t>(e.data, values); break;
    case miINT16: widen<std::int16_t>(e.data, values); break;
    case miUINT16: widen<std::uint16_t>(e.data, values); break;
    case miINT32: widen<std::int32_t>(e.data, values); break;
    case miUINT32: widen<std::uint32_t>(e.data, values); break;
    case miSINGLE: widen<float>(e.data, values); break;
    case miDOUBLE: widen<double>(e.data, values); break;
    case miINT64: widen<std::int64_t>(e.data, values); break;
    case miUINT64: widen<std::uint64_t>(e.data, values); break;
    default: throw Error("mat: unsupported numeric storage type " + std::to_string(e.type));
  }
  if (want_u8) {
    array.u8.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) array.u8[i] = static_cast<std::uint8_t>(values[i]);
  } else {
    array.f64 = std::move(values);
  }
}

bool parse_matrix(std::string_view body, MatArray& array) {
  Reader r(body);
  const auto flags = r.next(true);
  if (flags.data.size() < 8) throw Error("mat: bad array flags");
  const auto mx_class = static_cast<std::uint8_t>(flags.data[0]);
  if (mx_class < 6 || mx_class > 15) return false;  // cells, structs, chars, sparse: not numeric
  const auto dims = r.next(true);
  for (std::size_t i = 0; i + 4 <= dims.data.size(); i += 4) {
    std::int32_t d;
    std::memcpy(&d, dims.data.data() + i, 4);
    array.dims.push_back(d);
  }
  const auto name = r.next(true);
  array.name = std::string(name.data);
  array.is_uint8 = mx_class == mxUINT8_CLASS;
  decode_numeric(r.next(true), array, array.is_uint8);
  return true;
}

void collect(std::string_view bytes, std::map<std::string, MatArray>& out) {
  Reader r(bytes);
  while (!r.done()) {
    const auto e = r.next(true);
    if (e.type == miCOMPRESSED) {
      collect(inflate_all(e.data), out);
    } else if (e.type == miMATRIX) {
      MatArray array;
      if (parse_matrix(e.data, array)) out[array.name] = std::move(array);
    }
  }
}

}  // namespace

std::int64_t MatArray::numel() const {
  return std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>());
}

std::map<std::string, MatArray> read_mat_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 128) throw Error("mat: file shorter than header");
  if (bytes[126] != 'I' || bytes[127] != 'M') throw Error("mat: only little-endian level-5 files are supported");
  std::map<std::string, MatArray> out;
  collect(std::string_view(bytes).substr(128), out);
  return out;
}

}  // namespace advgen::data::detail
