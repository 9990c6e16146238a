#include "msds/dataset.hpp"

#include <boost/tokenizer.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "msds/error.hpp"

namespace msds {
namespace {

constexpr std::array<const char*, 6> kManifestColumns = {
    "pair_id", "ref_path", "dist_path", "mos", "distortion_type", "content_id"};

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line, std::size_t line_no) {
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  try {
    Tokenizer tok(line, boost::escaped_list_separator<char>('\\', ',', '"'));
    std::vector<std::string> fields;
    for (const auto& f : tok) fields.push_back(trim(f));
    return fields;
  } catch (const boost::escaped_list_error& e) {
    fail(ErrorKind::validation,
         "line " + std::to_string(line_no) + ": malformed CSV (" + e.what() + ")");
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& p,
                              const std::filesystem::path& manifest_dir) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("MSDS_DATA_ROOT"); root && *root) {
    return std::filesystem::path(root) / p;
  }
  return manifest_dir / p;
}

// Uniform draw in [0, bound) by rejection; identical on every platform.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return draw % bound;
}

enum class ImageFormat { png, bmp, pnm, unknown };

ImageFormat sniff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::validation, "cannot open image " + path.string());
  unsigned char head[8] = {};
  in.read(reinterpret_cast<char*>(head), sizeof head);
  const auto got = in.gcount();
  if (got >= 8 && head[0] == 0x89 && head[1] == 'P' && head[2] == 'N' &&
      head[3] == 'G') {
    return ImageFormat::png;
  }
  if (got >= 2 && head[0] == 'B' && head[1] == 'M') return ImageFormat::bmp;
  if (got >= 2 && head[0] == 'P' && head[1] >= '1' && head[1] <= '6') {
    return ImageFormat::pnm;
  }
  return ImageFormat::unknown;
}

// OpenCV zero-fills short binary PNM payloads, so check the length here.
void check_pnm_length(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") return;
  std::array<long, 3> fields{};
  for (long& f : fields) {
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    if (!(in >> f)) fail(ErrorKind::validation, "truncated file " + path.string());
  }
  in.get();  // single whitespace before the raster
  const long channels = magic == "P6" ? 3 : 1;
  const long bytes_per_sample = fields[2] > 255 ? 2 : 1;
  const auto header = static_cast<long>(in.tellg());
  const auto size = static_cast<long>(std::filesystem::file_size(path));
  if (size - header < fields[0] * fields[1] * channels * bytes_per_sample) {
    fail(ErrorKind::validation, "truncated file " + path.string());
  }
}

}  // namespace

MosOrientation schema_orientation(const std::string& schema) {
  const std::string s = lower(schema);
  if (s == "live" || s == "csiq") return MosOrientation::lower_better;
  if (s == "tid2013" || s == "kadid10k" || s == "kadid-10k" || s == "pipal" ||
      s == "generic") {
    return MosOrientation::higher_better;
  }
  fail(ErrorKind::validation, "unknown dataset schema '" + schema + "'");
}

Manifest load_manifest(const std::filesystem::path& path,
                       const std::string& schema, bool check_paths) {
  Manifest manifest;
  manifest.schema = lower(schema);
  manifest.orientation = schema_orientation(schema);

  std::ifstream in(path);
  if (!in) fail(ErrorKind::validation, "cannot open manifest " + path.string());
  const auto dir = path.parent_path();

  std::string line;
  std::size_t line_no = 0;
  std::unordered_map<std::string, std::size_t> column;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line, line_no);

    if (column.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i) column[fields[i]] = i;
      for (const char* name : kManifestColumns) {
        if (!column.contains(name)) {
          fail(ErrorKind::validation, "line " + std::to_string(line_no) +
                                          ": missing column '" + name + "'");
        }
      }
      continue;
    }

    auto field = [&](const char* name) -> const std::string& {
      const std::size_t i = column.at(name);
      if (i >= fields.size()) {
        fail(ErrorKind::validation, "line " + std::to_string(line_no) +
                                        ": missing value for '" + name + "'");
      }
      return fields[i];
    };

    ImagePair pair;
    pair.pair_id = field("pair_id");
    if (pair.pair_id.empty()) {
      fail(ErrorKind::validation, "line " + std::to_string(line_no) + ": empty pair_id");
    }
    if (!seen.insert(pair.pair_id).second) {
      fail(ErrorKind::validation, "line " + std::to_string(line_no) +
                                      ": duplicate pair_id '" + pair.pair_id + "'");
    }
    const std::string& mos = field("mos");
    char* end = nullptr;
    pair.mos_raw = std::strtod(mos.c_str(), &end);
    if (mos.empty() || end != mos.c_str() + mos.size() || !std::isfinite(pair.mos_raw)) {
      fail(ErrorKind::validation, "line " + std::to_string(line_no) +
                                      ": non-numeric mos '" + mos + "'");
    }
    pair.ref_path = resolve(field("ref_path"), dir);
    pair.dist_path = resolve(field("dist_path"), dir);
    pair.distortion_type = field("distortion_type");
    pair.content_id = field("content_id");
    if (pair.content_id.empty()) {
      fail(ErrorKind::validation, "line " + std::to_string(line_no) + ": empty content_id");
    }
    if (check_paths) {
      for (const auto* p : {&pair.ref_path, &pair.dist_path}) {
        if (!std::filesystem::is_regular_file(*p)) {
          fail(ErrorKind::validation, "line " + std::to_string(line_no) +
                                          ": unresolvable path " + p->string());
        }
      }
    }
    manifest.pairs.push_back(std::move(pair));
  }
  if (column.empty()) fail(ErrorKind::validation, "empty manifest " + path.string());
  return manifest;
}

SplitPlan make_splits(const std::vector<ImagePair>& pairs, std::uint64_t seed,
                      const SplitFractions& fractions) {
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
      std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
    fail(ErrorKind::validation, "split fractions must be non-negative and sum to 1");
  }
  const std::set<std::string> distinct = [&] {
    std::set<std::string> ids;
    for (const auto& p : pairs) ids.insert(p.content_id);
    return ids;
  }();
  if (distinct.size() < 10) {
    fail(ErrorKind::validation, "insufficient content diversity: " +
                                    std::to_string(distinct.size()) +
                                    " distinct contents, need 10");
  }
  std::vector<std::string> ids(distinct.begin(), distinct.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    std::swap(ids[i], ids[bounded(rng, i + 1)]);
  }

  // The epsilon absorbs representation error (0.7 * 10 = 6.999...).
  const auto n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::floor(n * fractions.train + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(n * fractions.val + 1e-9));

  SplitPlan plan;
  plan.seed = seed;
  plan.train.assign(ids.begin(), ids.begin() + n_train);
  plan.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  plan.test.assign(ids.begin() + n_train + n_val, ids.end());
  return plan;
}

RasterImage decode_image(const std::filesystem::path& path) {
  const ImageFormat format = sniff(path);
  if (format == ImageFormat::unknown) {
    fail(ErrorKind::validation, "unsupported format: " + path.string());
  }
  if (format == ImageFormat::pnm) check_pnm_length(path);

  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception&) {
    mat.release();
  }
  if (mat.empty()) fail(ErrorKind::validation, "truncated or corrupt file " + path.string());

  double scale = 0.0;
  switch (mat.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: fail(ErrorKind::validation, "unsupported sample depth in " + path.string());
  }
  if (mat.channels() == 4) {
    cv::cvtColor(mat, mat, cv::COLOR_BGRA2RGB);
  } else if (mat.channels() == 3) {
    cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
  } else if (mat.channels() != 1) {
    fail(ErrorKind::validation, "unsupported channel layout in " + path.string());
  }
  cv::Mat real;
  mat.convertTo(real, CV_64F, scale);

  RasterImage image(real.cols, real.rows, real.channels());
  for (int y = 0; y < real.rows; ++y) {
    const double* row = real.ptr<double>(y);
    std::copy(row, row + static_cast<std::size_t>(real.cols) * real.channels(),
              image.data.begin() + static_cast<std::ptrdiff_t>(image.index(0, y, 0)));
  }
  return image;
}

std::string to_json_line(const CacheRecord& r) {
  const nlohmann::json j = {
      {"pair_id", r.pair_id},
      {"ref", r.ref},
      {"dist", r.dist},
      {"K", r.depth()},
      {"scores", r.scores},
      {"mos_raw", r.mos_raw},
      {"mos_norm", r.mos_norm},
      {"distortion_type", r.distortion_type},
      {"content_id", r.content_id},
  };
  return j.dump();
}

CacheRecord parse_cache_line(const std::string& line) {
  CacheRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.pair_id = j.at("pair_id").get<std::string>();
    r.ref = j.at("ref").get<std::string>();
    r.dist = j.at("dist").get<std::string>();
    r.scores = j.at("scores").get<std::vector<double>>();
    r.mos_raw = j.at("mos_raw").get<double>();
    r.mos_norm = j.at("mos_norm").get<double>();
    r.distortion_type = j.at("distortion_type").get<std::string>();
    r.content_id = j.at("content_id").get<std::string>();
    if (j.at("K").get<int>() != r.depth()) {
      fail(ErrorKind::validation, "cache record " + r.pair_id + ": K disagrees with scores");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("malformed cache record: ") + e.what());
  }
  if (r.scores.empty()) fail(ErrorKind::validation, "cache record " + r.pair_id + ": no scales");
  return r;
}

std::vector<CacheRecord> read_cache(const std::filesystem::path& path) {
  std::vector<CacheRecord> records;
  std::ifstream in(path);
  if (!in) return records;
  std::string line;
  std::size_t line_no = 0;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      records.push_back(parse_cache_line(line));
    } catch (const Error& e) {
      fail(ErrorKind::validation,
           path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(records.back().pair_id).second) {
      fail(ErrorKind::validation, path.string() + " line " + std::to_string(line_no) +
                                      ": duplicate pair_id " + records.back().pair_id);
    }
  }
  return records;
}

CacheWriter::CacheWriter(const std::filesystem::path& path) : path_(path) {
  std::ofstream touch(path_, std::ios::app);
  if (!touch) fail(ErrorKind::pipeline, "cannot write cache " + path_.string());
}

void CacheWriter::append(const CacheRecord& record) {
  std::ofstream out(path_, std::ios::app);
  out << to_json_line(record) << '\n';
  out.flush();
  if (!out) fail(ErrorKind::pipeline, "cannot append to cache " + path_.string());
}

SplitIndices assign_split(const std::vector<CacheRecord>& records,
                          const SplitPlan& plan) {
  std::unordered_map<std::string, int> where;
  for (const auto& id : plan.train) where[id] = 0;
  for (const auto& id : plan.val) where[id] = 1;
  for (const auto& id : plan.test) where[id] = 2;
  SplitIndices out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto it = where.find(records[i].content_id);
    if (it == where.end()) {
      fail(ErrorKind::validation, "content id '" + records[i].content_id +
                                      "' is not in the split plan");
    }
    (it->second == 0 ? out.train : it->second == 1 ? out.val : out.test).push_back(i);
  }
  return out;
}

}  // namespace msds
