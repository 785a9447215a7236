#include "faithcam/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "faithcam/image.hpp"
#include "faithcam/rng.hpp"

namespace faithcam {

namespace fs = std::filesystem;

std::vector<std::string> DatasetIndex::class_names() const {
  std::vector<std::string> names;
  for (const auto& f : families) names.push_back(f.name);
  return names;
}

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  return entries;
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw DatasetError("dataset root does not exist or is not a directory: " + root.string());
  }
  DatasetIndex index;
  auto warn = [&](std::string msg) {
    spdlog::warn("{}", msg);
    index.warnings.push_back(std::move(msg));
  };

  for (const auto& family_dir : sorted_entries(root)) {
    if (!fs::is_directory(family_dir)) {
      warn("skipping non-directory entry at dataset root: " + family_dir.string());
      continue;
    }
    const std::string family = family_dir.filename().string();
    std::size_t count = 0;
    for (const auto& file : sorted_entries(family_dir)) {
      if (!fs::is_regular_file(file) || !has_image_extension(file)) {
        warn("skipping non-image file: " + file.string());
        continue;
      }
      try {
        decode_image(file);
      } catch (const ImageError& e) {
        warn(fmt::format("skipping undecodable image: {}", e.what()));
        continue;
      }
      index.records.push_back({file.generic_string(), family});
      ++count;
    }
    if (count == 0) warn("family '" + family + "' has no decodable images");
    index.families.push_back({family, count});
  }
  if (index.families.empty()) throw DatasetError("dataset root has no family directories: " + root.string());
  if (index.records.empty()) throw DatasetError("dataset root has no decodable images: " + root.string());
  return index;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValueError(fmt::format("unknown split '{}'; valid splits: train, val, test", name));
}

SplitCounts split_counts(std::size_t n) {
  const std::size_t train = n * 70 / 100;
  const std::size_t val = n * 15 / 100;
  return {train, val, n - train - val};
}

std::vector<ManifestRecord> SplitManifest::select(Split split) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::vector<std::string> SplitManifest::families() const {
  std::vector<std::string> names;
  for (const auto& r : records) names.push_back(r.family);
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

std::vector<std::pair<std::string, SplitCounts>> SplitManifest::counts() const {
  std::map<std::string, SplitCounts> by_family;
  for (const auto& r : records) {
    auto& c = by_family[r.family];
    switch (r.split) {
      case Split::train: ++c.train; break;
      case Split::val: ++c.val; break;
      case Split::test: ++c.test; break;
    }
  }
  return {by_family.begin(), by_family.end()};
}

SplitManifest stratified_split(const DatasetIndex& index, std::uint64_t seed) {
  SplitManifest manifest;
  manifest.seed = seed;
  Rng rng(seed);
  for (const auto& family : index.families) {
    std::vector<std::string> paths;
    for (const auto& r : index.records) {
      if (r.family == family.name) paths.push_back(r.path);
    }
    std::sort(paths.begin(), paths.end());
    rng.shuffle(std::span<std::string>(paths));

    const SplitCounts counts = split_counts(paths.size());
    std::vector<ManifestRecord> rows;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const Split split = i < counts.train ? Split::train
                          : i < counts.train + counts.val ? Split::val
                                                          : Split::test;
      rows.push_back({paths[i], family.name, split});
    }
    std::sort(rows.begin(), rows.end(), [](const ManifestRecord& a, const ManifestRecord& b) {
      return std::tie(a.split, a.path) < std::tie(b.split, b.path);
    });
    manifest.records.insert(manifest.records.end(), rows.begin(), rows.end());
  }
  return manifest;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
std::vector<std::string> csv_split(const std::string& line, std::size_t line_no, const fs::path& path) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      if (!fields.back().empty()) {
        throw ManifestError(fmt::format("{}:{}: stray quote inside field", path.string(), line_no));
      }
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw ManifestError(fmt::format("{}:{}: unterminated quoted field", path.string(), line_no));
  return fields;
}

}  // namespace

void write_manifest(const SplitManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << "# seed=" << manifest.seed << '\n';
  out << fmt::format("# ratios={:.2f},{:.2f},{:.2f}\n", manifest.train_ratio, manifest.val_ratio,
                     manifest.test_ratio);
  out << "path,family,split\n";
  for (const auto& r : manifest.records) {
    out << csv_field(r.path) << ',' << csv_field(r.family) << ',' << split_name(r.split) << '\n';
  }
  if (!out) throw IoError("failed writing manifest: " + path.string());
}

SplitManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot open manifest: " + path.string());
  SplitManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen && line.starts_with('#')) {
      const auto eq = line.find('=');
      const std::string key = eq == std::string::npos ? "" : line.substr(1, eq - 1);
      const std::string value = eq == std::string::npos ? "" : line.substr(eq + 1);
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t") + 1);
        return s;
      };
      try {
        if (trim(key) == "seed") {
          manifest.seed = std::stoull(trim(value));
        } else if (trim(key) == "ratios") {
          const auto parts = csv_split(trim(value), line_no, path);
          if (parts.size() != 3) throw std::invalid_argument("ratios");
          manifest.train_ratio = std::stod(parts[0]);
          manifest.val_ratio = std::stod(parts[1]);
          manifest.test_ratio = std::stod(parts[2]);
        }
      } catch (const std::logic_error&) {
        throw ManifestError(fmt::format("{}:{}: malformed metadata line '{}'", path.string(), line_no, line));
      }
      continue;
    }
    if (!header_seen) {
      if (line != "path,family,split") {
        throw ManifestError(fmt::format("{}:{}: expected header 'path,family,split', got '{}'",
                                        path.string(), line_no, line));
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = csv_split(line, line_no, path);
    if (fields.size() != 3) {
      throw ManifestError(fmt::format("{}:{}: expected 3 fields, got {}", path.string(), line_no, fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw ManifestError(fmt::format("{}:{}: empty path or family", path.string(), line_no));
    }
    Split split;
    try {
      split = parse_split(fields[2]);
    } catch (const ValueError&) {
      throw ManifestError(fmt::format("{}:{}: unknown split '{}'", path.string(), line_no, fields[2]));
    }
    manifest.records.push_back({fields[0], fields[1], split});
  }
  if (!header_seen) throw ManifestError(path.string() + ": missing header row");
  if (manifest.records.empty()) throw ManifestError(path.string() + ": manifest has no records");
  return manifest;
}

void write_split_table(const SplitManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write split table: " + path.string());
  out << "family,train,val,test,total\n";
  SplitCounts total;
  for (const auto& [family, c] : manifest.counts()) {
    out << csv_field(family) << ',' << c.train << ',' << c.val << ',' << c.test << ','
        << c.train + c.val + c.test << '\n';
    total.train += c.train, total.val += c.val, total.test += c.test;
  }
  out << "Total," << total.train << ',' << total.val << ',' << total.test << ','
      << total.train + total.val + total.test << '\n';
}

template <typename T>
Tensor<T> load_image(const fs::path& path, std::size_t size) {
  if (size == 0) throw ValueError("load_image: target size must be positive");
  const Image8 img = decode_image(path);
  const std::size_t h = img.height, w = img.width;
  std::vector<T> planes(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) planes[c * h * w + i] = static_cast<T>(img.rgb[i * 3 + c]) / T(255);
  }
  if (h != size || w != size) planes = resize_bilinear<T>(planes, 3, h, w, size, size);
  return Tensor<T>(Shape{3, size, size}, std::move(planes));
}

template Tensor<float> load_image(const fs::path&, std::size_t);
template Tensor<double> load_image(const fs::path&, std::size_t);

}  // namespace faithcam
