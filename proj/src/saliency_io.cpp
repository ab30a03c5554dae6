#include "bvsviz/saliency_io.hpp"

#include <cstdint>
#include <cstring>
#include <stdexcept>

#include "bvsviz/config.hpp"
#include "bvsviz/image_io.hpp"

namespace bvsviz {
namespace {
constexpr std::string_view kEndHeader = "end_header\n";
}  // namespace

std::string_view to_string(SignMode m) { return m == SignMode::Negative ? "neg" : "pos"; }

SignMode parse_sign_mode(std::string_view s) {
  if (s == "neg") return SignMode::Negative;
  if (s == "pos") return SignMode::Positive;
  throw std::invalid_argument("unknown sign mode '" + std::string(s) + "' (neg|pos)");
}

void write_saliency(const std::filesystem::path& dir, const std::string& stem,
                    const SaliencyExport& map) {
  if (map.values.size() != static_cast<std::size_t>(map.rows) * map.cols) {
    throw std::invalid_argument("saliency values do not match " + std::to_string(map.rows) +
                                "x" + std::to_string(map.cols));
  }
  std::filesystem::create_directories(dir);
  KeyValues h;
  h["rows"] = std::to_string(map.rows);
  h["cols"] = std::to_string(map.cols);
  h["class"] = std::string(to_string(map.source_class));
  h["k"] = std::to_string(map.k_shifts);
  h["patch"] = std::to_string(map.patch_size);
  h["mode"] = std::string(to_string(map.mode));
  h["empty"] = map.empty ? "1" : "0";
  h["dtype"] = "float32";
  h["endian"] = "little";
  const std::string text = format_key_values(h) + std::string(kEndHeader);
  std::vector<char> bytes(text.begin(), text.end());
  for (float v : map.values) {
    std::uint32_t b;
    std::memcpy(&b, &v, 4);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((b >> (8 * i)) & 0xff));
  }
  write_file(dir / (stem + ".sal"), bytes);
  write_png_gray8(dir / (stem + ".png"), map.rows, map.cols,
                  to_u8(normalize_for_display(map.values)));
}

SaliencyExport read_saliency(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string_view all(bytes.data(), bytes.size());
  const std::size_t end = all.find(kEndHeader);
  if (end == std::string_view::npos) throw IoError(path.string() + ": missing end_header");
  const KeyValues h = parse_key_values(all.substr(0, end));
  SaliencyExport m;
  m.rows = get_int(h, "rows", 0);
  m.cols = get_int(h, "cols", 0);
  m.source_class = parse_label(get_string(h, "class", ""));
  m.k_shifts = get_int(h, "k", 0);
  m.patch_size = get_int(h, "patch", 0);
  m.mode = parse_sign_mode(get_string(h, "mode", ""));
  m.empty = get_int(h, "empty", 0) != 0;
  const std::size_t start = end + kEndHeader.size();
  const std::size_t count = static_cast<std::size_t>(m.rows) * m.cols;
  if (m.rows <= 0 || m.cols <= 0 || bytes.size() - start != count * 4) {
    throw IoError(path.string() + ": payload size does not match the header");
  }
  m.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t b = 0;
    for (int k = 0; k < 4; ++k) {
      b |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[start + 4 * i + k]))
           << (8 * k);
    }
    std::memcpy(&m.values[i], &b, 4);
  }
  return m;
}

}  // namespace bvsviz
