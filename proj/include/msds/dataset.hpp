#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msds/image.hpp"

namespace msds {

/// Whether larger subjective scores mean better quality (MOS) or worse (DMOS).
enum class MosOrientation { higher_better, lower_better };

struct ImagePair {
  std::string pair_id;
  std::filesystem::path ref_path;
  std::filesystem::path dist_path;
  double mos_raw = 0.0;
  std::string distortion_type;
  std::string content_id;
};

struct Manifest {
  std::string schema;
  MosOrientation orientation = MosOrientation::higher_better;
  std::vector<ImagePair> pairs;
};

/// Orientation of the published scores for a dataset layout id
/// ("live", "csiq", "tid2013", "kadid10k", "pipal", "generic").
MosOrientation schema_orientation(const std::string& schema);

/// Reads a CSV manifest with header
///   pair_id,ref_path,dist_path,mos,distortion_type,content_id
/// Relative paths are resolved against $MSDS_DATA_ROOT when set, otherwise
/// against the manifest's directory. Errors carry the 1-based line number.
Manifest load_manifest(const std::filesystem::path& path,
                       const std::string& schema,
                       bool check_paths = true);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// Content-disjoint train/val/test partition.
struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Sorts the distinct content ids, shuffles them with mt19937_64(seed) via a
/// Fisher-Yates pass (draws reduced by rejection, not std::shuffle, so the
/// plan is the same on every standard library), then takes floor(n * train)
/// and floor(n * val) ids; the rest go to test.
SplitPlan make_splits(const std::vector<ImagePair>& pairs, std::uint64_t seed,
                      const SplitFractions& fractions = {});

/// PNG, BMP or binary PPM/PGM; 8-bit samples map to v / 255, 16-bit to
/// v / 65535. Grayscale stays one channel, color comes back as RGB.
RasterImage decode_image(const std::filesystem::path& path);

/// One line of the JSON-lines score cache.
struct CacheRecord {
  std::string pair_id;
  std::string ref;
  std::string dist;
  std::vector<double> scores;
  double mos_raw = 0.0;
  double mos_norm = 0.0;
  std::string distortion_type;
  std::string content_id;

  int depth() const { return static_cast<int>(scores.size()); }
};

std::string to_json_line(const CacheRecord& record);
CacheRecord parse_cache_line(const std::string& line);

std::vector<CacheRecord> read_cache(const std::filesystem::path& path);

/// Appends records to a cache file. Single writer: callers serialize.
class CacheWriter {
 public:
  explicit CacheWriter(const std::filesystem::path& path);
  void append(const CacheRecord& record);

 private:
  std::filesystem::path path_;
};

/// Index lists (into `records`) for each partition of a plan.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

SplitIndices assign_split(const std::vector<CacheRecord>& records,
                          const SplitPlan& plan);

}  // namespace msds
