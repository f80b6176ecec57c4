#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace advgen::data::detail {

/// Numeric array from a MATLAB level-5 file. Dimensions are column-major as stored.
/// uint8 arrays keep their bytes; every other numeric class is widened to double.
struct MatArray {
  std::string name;
  std::vector<std::int64_t> dims;
  bool is_uint8 = false;
  std::vector<std::uint8_t> u8;
  std::vector<double> f64;

  std::int64_t numel() const;
};

/// Reads every top-level numeric matrix, inflating miCOMPRESSED elements.
std::map<std::string, MatArray> read_mat_file(const std::filesystem::path& path);

}  // namespace advgen::data::detail
