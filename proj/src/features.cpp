#include "msds/features.hpp"

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <random>
#include <string>

#include "msds/error.hpp"

namespace msds {
namespace {

bool all_finite(const std::vector<double>& values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorKind::pipeline,
         "backend load failure: cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

RasterImage preprocess(const RasterImage& image, const InputSpec& spec) {
  if (image.channels != 1 && image.channels != spec.channels) {
    fail(ErrorKind::validation, "channel count incompatible with backend");
  }
  RasterImage out(image.width, image.height, spec.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < spec.channels; ++c) {
        const double v = image.at(x, y, image.channels == 1 ? 0 : c);
        out.at(x, y, c) = (v - spec.mean[c]) / spec.stddev[c];
      }
    }
  }
  return out;
}

FeatureMap extract(const FeatureBackend& backend, const RasterImage& image) {
  const InputSpec spec = backend.input_spec();
  if (std::min(image.width, image.height) < spec.min_size) {
    fail(ErrorKind::validation,
         "input below backend minimum: " + std::to_string(image.width) + "x" +
             std::to_string(image.height) + " < " +
             std::to_string(spec.min_size));
  }
  FeatureMap features = backend.forward(preprocess(image, spec));
  if (features.data.size() != static_cast<std::size_t>(features.channels) *
                                  features.height * features.width) {
    fail(ErrorKind::pipeline, "backend returned malformed feature map");
  }
  if (!all_finite(features.data)) {
    fail(ErrorKind::pipeline, "numeric fault in backend " + backend.id());
  }
  return features;
}

// ---------------------------------------------------------------------------
// SeededConvBackend

SeededConvBackend::SeededConvBackend(std::uint64_t seed) : seed_(seed) {
  std::mt19937_64 rng(seed);
  const int widths[] = {3, 8, 16, 16};
  for (int l = 0; l < 3; ++l) {
    Layer layer{widths[l], widths[l + 1], l < 2, {}, {}};
    const double bound = std::sqrt(6.0 / (layer.in_channels * 9));
    layer.weights.resize(static_cast<std::size_t>(layer.out_channels) *
                         layer.in_channels * 9);
    for (double& w : layer.weights) w = (2.0 * unit_draw(rng) - 1.0) * bound;
    layer.bias.resize(layer.out_channels);
    for (double& b : layer.bias) b = (2.0 * unit_draw(rng) - 1.0) * 0.1;
    layers_.push_back(std::move(layer));
  }
}

std::string SeededConvBackend::id() const {
  return "seeded-conv:" + std::to_string(seed_);
}

InputSpec SeededConvBackend::input_spec() const {
  InputSpec spec = kImageNetInput;
  spec.min_size = 8;
  return spec;
}

FeatureMap SeededConvBackend::forward(const RasterImage& normalized) const {
  FeatureMap current(normalized.channels, normalized.height, normalized.width);
  for (int y = 0; y < normalized.height; ++y) {
    for (int x = 0; x < normalized.width; ++x) {
      for (int c = 0; c < normalized.channels; ++c) {
        current.at(c, y, x) = normalized.at(x, y, c);
      }
    }
  }

  for (const Layer& layer : layers_) {
    if (current.channels != layer.in_channels) {
      fail(ErrorKind::validation, "channel count incompatible with backend");
    }
    const int out_h = (current.height + 1) / 2;
    const int out_w = (current.width + 1) / 2;
    FeatureMap next(layer.out_channels, out_h, out_w);
    for (int o = 0; o < layer.out_channels; ++o) {
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          double acc = layer.bias[o];
          for (int i = 0; i < layer.in_channels; ++i) {
            const double* kernel =
                &layer.weights[(static_cast<std::size_t>(o) * layer.in_channels + i) * 9];
            for (int ky = 0; ky < 3; ++ky) {
              const int y = 2 * oy + ky - 1;
              if (y < 0 || y >= current.height) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const int x = 2 * ox + kx - 1;
                if (x < 0 || x >= current.width) continue;
                acc += kernel[ky * 3 + kx] * current.at(i, y, x);
              }
            }
          }
          next.at(o, oy, ox) = layer.relu ? std::max(acc, 0.0) : acc;
        }
      }
    }
    current = std::move(next);
  }
  return current;
}

// ---------------------------------------------------------------------------
// OnnxVggBackend

struct OnnxVggBackend::NetPool {
  std::vector<std::uint8_t> model_bytes;
  std::mutex mutex;
  std::vector<std::unique_ptr<cv::dnn::Net>> idle;

  std::unique_ptr<cv::dnn::Net> load() const {
    try {
      auto net = std::make_unique<cv::dnn::Net>(cv::dnn::readNetFromONNX(
          reinterpret_cast<const char*>(model_bytes.data()),
          model_bytes.size()));
      if (net->empty()) {
        fail(ErrorKind::pipeline, "backend load failure: empty network");
      }
      return net;
    } catch (const cv::Exception& e) {
      fail(ErrorKind::pipeline, std::string("backend load failure: ") + e.what());
    }
  }

  std::unique_ptr<cv::dnn::Net> acquire() {
    {
      std::lock_guard lock(mutex);
      if (!idle.empty()) {
        auto net = std::move(idle.back());
        idle.pop_back();
        return net;
      }
    }
    return load();
  }

  void release(std::unique_ptr<cv::dnn::Net> net) {
    std::lock_guard lock(mutex);
    idle.push_back(std::move(net));
  }
};

OnnxVggBackend::OnnxVggBackend(const std::filesystem::path& model_path)
    : model_name_(model_path.filename().string()),
      pool_(std::make_unique<NetPool>()) {
  pool_->model_bytes = read_bytes(model_path);
  if (pool_->model_bytes.empty()) {
    fail(ErrorKind::pipeline, "backend load failure: empty model file");
  }
  // Probe once so a broken graph fails at construction, not mid-run.
  RasterImage probe(kImageNetInput.min_size, kImageNetInput.min_size, 3, 0.0);
  const FeatureMap out = forward(probe);
  if (out.channels != 512 || out.height != probe.height / kStride ||
      out.width != probe.width / kStride) {
    fail(ErrorKind::pipeline,
         "backend load failure: unexpected output geometry " +
             std::to_string(out.channels) + "x" + std::to_string(out.height) +
             "x" + std::to_string(out.width));
  }
}

OnnxVggBackend::~OnnxVggBackend() = default;

std::string OnnxVggBackend::id() const { return "vgg16-conv5_1:" + model_name_; }

InputSpec OnnxVggBackend::input_spec() const { return kImageNetInput; }

FeatureMap OnnxVggBackend::forward(const RasterImage& normalized) const {
  const int h = normalized.height;
  const int w = normalized.width;
  const int dims[] = {1, 3, h, w};
  cv::Mat blob(4, dims, CV_32F);
  auto* dst = blob.ptr<float>();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        *dst++ = static_cast<float>(normalized.at(x, y, c));
      }
    }
  }

  auto net = pool_->acquire();
  cv::Mat out;
  try {
    net->setInput(blob, "image");
    out = net->forward("features");
  } catch (const cv::Exception& e) {
    fail(ErrorKind::pipeline, std::string("backend inference failed: ") + e.what());
  }
  pool_->release(std::move(net));

  if (out.dims != 4 || out.size[0] != 1 || out.type() != CV_32F) {
    fail(ErrorKind::pipeline, "backend returned an unexpected tensor");
  }
  FeatureMap features(out.size[1], out.size[2], out.size[3]);
  const float* src = out.ptr<float>();
  std::copy(src, src + features.data.size(), features.data.begin());
  return features;
}

std::unique_ptr<FeatureBackend> make_backend(const std::string& spec) {
  const std::string prefix = "seeded-conv";
  if (spec.rfind(prefix, 0) == 0) {
    if (spec.size() == prefix.size()) return std::make_unique<SeededConvBackend>();
    if (spec[prefix.size()] == ':') {
      try {
        return std::make_unique<SeededConvBackend>(
            std::stoull(spec.substr(prefix.size() + 1)));
      } catch (const std::logic_error&) {
        fail(ErrorKind::validation, "bad seeded-conv seed in '" + spec + "'");
      }
    }
  }
  return std::make_unique<OnnxVggBackend>(spec);
}

// ---------------------------------------------------------------------------
// Fixtures

namespace {

static_assert(std::endian::native == std::endian::little,
              "fixture reader assumes a little-endian host");

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(ErrorKind::validation, "truncated fixture file");
  return value;
}

Tensor read_tensor(std::istream& in) {
  Tensor t;
  const auto rank = read_pod<std::uint32_t>(in);
  if (rank == 0 || rank > 8) fail(ErrorKind::validation, "bad fixture tensor rank");
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.dims.push_back(read_pod<std::uint32_t>(in));
    count *= t.dims.back();
  }
  t.values.resize(count);
  in.read(reinterpret_cast<char*>(t.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) fail(ErrorKind::validation, "truncated fixture file");
  return t;
}

}  // namespace

Fixture read_fixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::validation, "cannot open fixture " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, "MSDSFIX1", 8) != 0) {
    fail(ErrorKind::validation, "not a fixture file: " + path.string());
  }
  Fixture fixture;
  fixture.input = read_tensor(in);
  fixture.output = read_tensor(in);
  return fixture;
}

double replay_fixture(const FeatureBackend& backend, const Fixture& fixture) {
  const auto& in = fixture.input;
  if (in.dims.size() != 4 || in.dims[0] != 1) {
    fail(ErrorKind::validation, "fixture input must be 1xCxHxW");
  }
  const int c = static_cast<int>(in.dims[1]);
  const int h = static_cast<int>(in.dims[2]);
  const int w = static_cast<int>(in.dims[3]);
  RasterImage normalized(w, h, c);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        normalized.at(x, y, ch) =
            in.values[(static_cast<std::size_t>(ch) * h + y) * w + x];
      }
    }
  }
  const FeatureMap out = backend.forward(normalized);
  const auto& ref = fixture.output;
  if (ref.dims.size() != 4 || static_cast<int>(ref.dims[1]) != out.channels ||
      static_cast<int>(ref.dims[2]) != out.height ||
      static_cast<int>(ref.dims[3]) != out.width) {
    fail(ErrorKind::pipeline, "fixture output geometry mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    worst = std::max(worst, std::abs(out.data[i] - ref.values[i]));
  }
  return worst;
}

}  // namespace msds
