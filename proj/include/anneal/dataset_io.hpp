#pragma once

// Manifest and feature-matrix files.
//
// Feature file layout (all integers little-endian):
//   offset 0   4 bytes  magic "ANFM"
//   offset 4   uint64   row count
//   offset 12  uint32   dimension
//   offset 16  rows*dim IEEE-754 binary32 values, row-major
//
// The manifest is a JSON document:
//   {"format": "anneal-manifest", "version": 1, "num_classes": C,
//    "feature_file": "<path relative to the manifest>",
//    "items": [{"id": "...", "class": 0, "split": "train", "image_uri": "..."}, ...]}
// "split" and "image_uri" are optional. Row i of the feature file belongs to items[i].

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "anneal/core.hpp"
#include "json.hpp"

namespace anneal {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kFeatureMagic{'A', 'N', 'F', 'M'};
inline constexpr int kManifestVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(const unsigned char* b) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

struct FeatureMatrix {
  std::uint64_t rows = 0;
  std::uint32_t dim = 0;
  std::vector<float> values;
};

inline void write_feature_file(const fs::path& path, std::span<const float> values, std::uint32_t dim) {
  if (dim == 0 || values.size() % dim != 0) throw DimensionMismatch("feature buffer is not a whole number of rows");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(kFeatureMagic.data(), 4);
  detail::put_u64(out, values.size() / dim);
  detail::put_u32(out, dim);
  for (float f : values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline FeatureMatrix read_feature_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing feature file '" + path.string() + "'");
  unsigned char header[16];
  if (!in.read(reinterpret_cast<char*>(header), 16)) throw FormatError("truncated header in '" + path.string() + "'");
  if (std::memcmp(header, kFeatureMagic.data(), 4) != 0) throw FormatError("bad magic in '" + path.string() + "'");
  FeatureMatrix m;
  m.rows = detail::get_u64(header + 4);
  m.dim = detail::get_u32(header + 12);
  if (m.dim == 0) throw FormatError("zero feature dimension in '" + path.string() + "'");
  const std::uint64_t count = m.rows * m.dim;
  std::vector<unsigned char> raw(count * 4);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DimensionMismatch("feature file '" + path.string() + "' holds fewer values than its header declares");
  m.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) m.values[i] = std::bit_cast<float>(detail::get_u32(raw.data() + 4 * i));
  return m;
}

inline Dataset load_manifest(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(detail::read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest '" + path.string() + "' does not parse: " + e.what());
  }
  try {
    if (doc.value("format", "") != "anneal-manifest") throw FormatError("'" + path.string() + "' is not a manifest");
    if (doc.value("version", 0) != kManifestVersion) throw FormatError("unsupported manifest version");

    const fs::path feature_path = path.parent_path() / doc.at("feature_file").get<std::string>();
    FeatureMatrix fm = read_feature_file(feature_path);

    std::vector<Item> items;
    for (const auto& j : doc.at("items")) {
      Item it;
      it.id = j.at("id").get<std::string>();
      it.class_label = j.at("class").get<int>();
      if (j.contains("split") && !j["split"].is_null()) it.split = parse_split(j["split"].get<std::string>());
      if (j.contains("image_uri") && !j["image_uri"].is_null()) it.image_uri = j["image_uri"].get<std::string>();
      items.push_back(std::move(it));
    }
    if (fm.rows != items.size()) {
      throw DimensionMismatch("manifest lists " + std::to_string(items.size()) + " items but '" +
                              feature_path.string() + "' has " + std::to_string(fm.rows) + " rows");
    }
    return Dataset(std::move(items), doc.at("num_classes").get<int>(), fm.dim, std::move(fm.values));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
}

/// Writes the manifest and its feature file; the feature file name is stored relative to the manifest.
inline void save_manifest(const Dataset& ds, const fs::path& manifest_path, const std::string& feature_file_name) {
  nlohmann::json doc;
  doc["format"] = "anneal-manifest";
  doc["version"] = kManifestVersion;
  doc["num_classes"] = ds.num_classes();
  doc["feature_file"] = feature_file_name;
  auto& items = doc["items"] = nlohmann::json::array();
  for (const auto& it : ds.items()) {
    nlohmann::json j{{"id", it.id}, {"class", it.class_label}};
    if (it.split != Split::unassigned) j["split"] = std::string(to_string(it.split));
    if (it.image_uri) j["image_uri"] = *it.image_uri;
    items.push_back(std::move(j));
  }
  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  write_feature_file(manifest_path.parent_path() / feature_file_name, ds.features(),
                     static_cast<std::uint32_t>(ds.dim()));
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + manifest_path.string() + "'");
  out << doc.dump(1) << '\n';
}

}  // namespace anneal
