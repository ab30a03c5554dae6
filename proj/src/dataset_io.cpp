#include "bvsviz/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "bvsviz/image_io.hpp"

namespace bvsviz {
namespace {

namespace fs = std::filesystem;

std::string numbered(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.%s", stem, i, ext);
  return buf;
}

std::string pullback_key(std::size_t i, const char* field) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "pullback.%03zu.%s", i, field);
  return buf;
}

std::string need(const KeyValues& kv, const std::string& key, const fs::path& file) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError(file.string() + " lacks '" + key + "'");
  return it->second;
}

}  // namespace

void write_dataset(const fs::path& root, const StoredDataset& data) {
  fs::create_directories(root);
  KeyValues manifest;
  manifest["format_version"] = "1";
  manifest["spec_hash"] = spec_hash(data.spec);
  manifest["seed"] = std::to_string(data.seed);
  manifest["pullbacks"] = std::to_string(data.pullbacks.size());
  for (std::size_t i = 0; i < data.pullbacks.size(); ++i) {
    const PullbackDataset& pb = data.pullbacks[i];
    manifest[pullback_key(i, "id")] = pb.id;
    manifest[pullback_key(i, "label")] = std::string(to_string(pb.label));
    manifest[pullback_key(i, "slices")] = std::to_string(pb.slices.size());

    const fs::path dir = root / pb.id;
    fs::create_directories(dir);
    std::ofstream lumen(dir / "lumen.txt");
    if (!lumen) throw IoError("cannot write " + (dir / "lumen.txt").string());
    for (const PolarImage& s : pb.slices) {
      write_png_gray16(dir / numbered("slice", s.slice_index, "png"), s.rows, s.cols,
                       to_u16(s.pixels));
      if (s.strut_mask) {
        std::vector<std::uint8_t> m(s.strut_mask->size());
        for (std::size_t j = 0; j < m.size(); ++j) m[j] = (*s.strut_mask)[j] ? 255 : 0;
        write_png_gray8(dir / numbered("mask", s.slice_index, "png"), s.rows, s.cols, m);
      }
      if (s.lumen_boundary) {
        for (std::size_t r = 0; r < s.lumen_boundary->size(); ++r) {
          lumen << (r ? " " : "") << (*s.lumen_boundary)[r];
        }
      }
      lumen << '\n';
    }
  }
  write_key_values(root / "manifest.txt", manifest);
  write_key_values(root / "spec.txt", to_key_values(data.spec));
}

StoredDataset read_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.txt";
  if (!fs::exists(manifest_path)) throw IoError("no dataset manifest at " + manifest_path.string());
  const KeyValues manifest = read_key_values(manifest_path);
  StoredDataset data;
  data.spec.seed = 0;
  apply_key_values(data.spec, read_key_values(root / "spec.txt"));
  if (need(manifest, "spec_hash", manifest_path) != spec_hash(data.spec)) {
    throw IoError(manifest_path.string() + ": spec hash does not match spec.txt");
  }
  data.seed = std::stoull(need(manifest, "seed", manifest_path));
  const int n = std::stoi(need(manifest, "pullbacks", manifest_path));
  for (int i = 0; i < n; ++i) {
    PullbackDataset pb;
    pb.id = need(manifest, pullback_key(i, "id"), manifest_path);
    pb.label = parse_label(need(manifest, pullback_key(i, "label"), manifest_path));
    const int slices = std::stoi(need(manifest, pullback_key(i, "slices"), manifest_path));
    const fs::path dir = root / pb.id;
    std::ifstream lumen(dir / "lumen.txt");
    for (int s = 0; s < slices; ++s) {
      PolarImage img = read_slice_png(dir / numbered("slice", s, "png"));
      img.label = pb.label;
      img.pullback_id = pb.id;
      img.slice_index = s;
      const fs::path mask_path = dir / numbered("mask", s, "png");
      if (fs::exists(mask_path)) {
        int r = 0, c = 0, depth = 0;
        const auto raw = read_png_gray_raw(mask_path, r, c, depth);
        if (r != img.rows || c != img.cols) {
          throw IoError(mask_path.string() + " size differs from its slice");
        }
        std::vector<std::uint8_t> m(raw.size());
        for (std::size_t j = 0; j < m.size(); ++j) m[j] = raw[j] ? 1 : 0;
        img.strut_mask = std::move(m);
      }
      std::string line;
      if (lumen && std::getline(lumen, line) && !line.empty()) {
        std::istringstream ls(line);
        std::vector<int> b;
        int v = 0;
        while (ls >> v) b.push_back(v);
        if (static_cast<int>(b.size()) != img.rows) {
          throw IoError((dir / "lumen.txt").string() + ": line " + std::to_string(s + 1) +
                        " has " + std::to_string(b.size()) + " entries");
        }
        img.lumen_boundary = std::move(b);
      }
      pb.slices.push_back(std::move(img));
    }
    data.pullbacks.push_back(std::move(pb));
  }
  return data;
}

PolarImage read_slice_png(const fs::path& path) {
  GrayImage g = read_png_gray(path);
  PolarImage img;
  img.rows = g.rows;
  img.cols = g.cols;
  img.pixels = std::move(g.pixels);
  return img;
}

}  // namespace bvsviz
