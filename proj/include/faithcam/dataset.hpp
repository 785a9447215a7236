#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faithcam/tensor.hpp"

namespace faithcam {

struct ImageRecord {
  std::string path;
  std::string family;

  bool operator==(const ImageRecord&) const = default;
};

struct FamilyCount {
  std::string name;
  std::size_t count = 0;

  bool operator==(const FamilyCount&) const = default;
};

struct DatasetIndex {
  std::vector<ImageRecord> records;  // sorted by family, then path
  std::vector<FamilyCount> families;  // sorted by name; empty families kept
  std::vector<std::string> warnings;  // skipped files and empty families

  std::size_t size() const { return records.size(); }
  // Family names in label order (lexicographic).
  std::vector<std::string> class_names() const;
};

// Scans root/<Family>/<image>.{png,jpg,jpeg}. Every candidate is fully
// decoded; undecodable files and non-image files are skipped with a warning.
// Throws DatasetError if root is missing, has no family directories, or
// yields no decodable image.
DatasetIndex scan_dataset(const std::filesystem::path& root);

enum class Split { train, val, test };

std::string_view split_name(Split split);
// Throws ValueError for anything other than "train", "val", "test".
Split parse_split(std::string_view name);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;

  bool operator==(const SplitCounts&) const = default;
};

// floor(0.70 n), floor(0.15 n), remainder; computed in integers.
SplitCounts split_counts(std::size_t n);

struct ManifestRecord {
  std::string path;
  std::string family;
  Split split = Split::train;

  bool operator==(const ManifestRecord&) const = default;
};

struct SplitManifest {
  std::vector<ManifestRecord> records;
  std::uint64_t seed = 0;
  // Fixed fractions, stored for provenance.
  double train_ratio = 0.70, val_ratio = 0.15, test_ratio = 0.15;

  std::vector<ManifestRecord> select(Split split) const;
  // Sorted unique family names present in the manifest.
  std::vector<std::string> families() const;
  // Per family (sorted by name), counts per split.
  std::vector<std::pair<std::string, SplitCounts>> counts() const;

  bool operator==(const SplitManifest&) const = default;
};

// Per family: seeded shuffle, then the first floor(0.70 n) records go to
// train, the next floor(0.15 n) to val, the rest to test. Output order is
// family, then split, then path.
SplitManifest stratified_split(const DatasetIndex& index, std::uint64_t seed);

// CSV with leading "# seed=" / "# ratios=" comment lines, then the mandatory
// header "path,family,split". Fields are quoted when they contain commas,
// quotes or newlines.
void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
// Throws ManifestError with the 1-based line number on malformed rows, and on
// a manifest with no records.
SplitManifest read_manifest(const std::filesystem::path& path);

// Per-family table of split counts with a total row, as CSV.
void write_split_table(const SplitManifest& manifest, const std::filesystem::path& path);

// Decodes an image and returns a 3 x size x size tensor with values in [0, 1]
// (plain division by 255, bilinear resize with no aspect preservation).
template <typename T>
Tensor<T> load_image(const std::filesystem::path& path, std::size_t size);

}  // namespace faithcam
