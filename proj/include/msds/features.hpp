#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "msds/image.hpp"

namespace msds {

/// Planar (channel-major) activations: value (c, y, x) at
/// data[(c * height + y) * width + x].
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  std::size_t plane_size() const {
    return static_cast<std::size_t>(height) * width;
  }
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

/// What a backend expects to be fed.
struct InputSpec {
  int channels = 3;
  std::array<double, 3> mean = {0.0, 0.0, 0.0};
  std::array<double, 3> stddev = {1.0, 1.0, 1.0};
  int min_size = 1;
};

inline constexpr InputSpec kImageNetInput{
    3, {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}, 64};

/// Frozen feature extractor. forward() receives an already preprocessed
/// image and must be safe to call concurrently.
class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;

  virtual std::string id() const = 0;
  virtual InputSpec input_spec() const = 0;
  virtual FeatureMap forward(const RasterImage& normalized) const = 0;
};

/// Channel replication for grayscale, then (v - mean) / std per channel.
/// The result is no longer confined to [0, 1].
RasterImage preprocess(const RasterImage& image, const InputSpec& spec);

/// Size check, preprocess, forward, finiteness check.
FeatureMap extract(const FeatureBackend& backend, const RasterImage& image);

/// Deterministic desk-scale backend: three 3x3 stride-2 convolutions
/// (3 -> 8 -> 16 -> 16 channels, zero padding 1, ReLU after the first two)
/// with weights drawn from a seeded mt19937_64. Each 64-bit draw u is mapped
/// to (u >> 11) * 2^-53 in [0, 1) and scaled to [-a, a] with
/// a = sqrt(6 / fan_in); biases are drawn the same way scaled by 0.1.
class SeededConvBackend final : public FeatureBackend {
 public:
  explicit SeededConvBackend(std::uint64_t seed = 20250101);

  std::string id() const override;
  InputSpec input_spec() const override;
  FeatureMap forward(const RasterImage& normalized) const override;

 private:
  struct Layer {
    int in_channels;
    int out_channels;
    bool relu;
    std::vector<double> weights;  // [out][in][3][3]
    std::vector<double> bias;
  };

  std::uint64_t seed_;
  std::vector<Layer> layers_;
};

/// VGG-16 truncated after the conv5_1 ReLU, loaded from an ONNX file with
/// input "image" (1x3xHxW) and output "features" (1x512xH/16xW/16).
/// Inference goes through OpenCV's dnn module. cv::dnn::Net is not
/// reentrant, so each concurrent caller borrows a private network instance
/// from an internal pool (built lazily from the cached model bytes).
class OnnxVggBackend final : public FeatureBackend {
 public:
  explicit OnnxVggBackend(const std::filesystem::path& model_path);
  ~OnnxVggBackend() override;

  OnnxVggBackend(const OnnxVggBackend&) = delete;
  OnnxVggBackend& operator=(const OnnxVggBackend&) = delete;

  std::string id() const override;
  InputSpec input_spec() const override;
  FeatureMap forward(const RasterImage& normalized) const override;

  static constexpr int kStride = 16;

 private:
  struct NetPool;

  std::string model_name_;
  std::unique_ptr<NetPool> pool_;
};

/// "seeded-conv" (optionally "seeded-conv:<seed>") or a path to an ONNX model.
std::unique_ptr<FeatureBackend> make_backend(const std::string& spec);

/// Cross-runtime fixture: an input tensor and the reference output the
/// exporter computed for it. Layout (little-endian):
///   8 bytes magic "MSDSFIX1"
///   tensor input, tensor output, where tensor =
///     u32 rank, rank x u32 dims, prod(dims) x f32 values
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Fixture {
  Tensor input;
  Tensor output;
};

Fixture read_fixture(const std::filesystem::path& path);

/// Runs the fixture input (already normalized, NCHW) through the backend and
/// returns the maximum absolute deviation from the stored output.
double replay_fixture(const FeatureBackend& backend, const Fixture& fixture);

}  // namespace msds
