#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "msds/error.hpp"
#include "msds/features.hpp"

using namespace msds;

namespace {

const std::filesystem::path kData = MSDS_TEST_DATA;

RasterImage noise(int w, int h, int c, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RasterImage img(w, h, c);
  for (double& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("preprocess applies ImageNet constants per channel") {
  const RasterImage out = preprocess(RasterImage(4, 3, 3, 0.5), kImageNetInput);
  // (0.5 - mean) / std by hand
  const double expected[] = {0.0655021834, 0.1964285714, 0.4177777778};
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(out.at(x, y, c) == doctest::Approx(expected[c]).epsilon(1e-9));
}

TEST_CASE("preprocess of a zero image gives -mean/std") {
  const RasterImage out = preprocess(RasterImage(2, 2, 3, 0.0), kImageNetInput);
  for (int c = 0; c < 3; ++c) {
    CHECK(out.at(1, 1, c) == doctest::Approx(-kImageNetInput.mean[c] / kImageNetInput.stddev[c]));
  }
}

TEST_CASE("identity normalization leaves the image unchanged") {
  const RasterImage img = noise(5, 4, 3, 1);
  const RasterImage out = preprocess(img, InputSpec{});
  CHECK(out.data == img.data);
}

TEST_CASE("grayscale input is replicated to three channels") {
  const RasterImage gray = noise(6, 5, 1, 2);
  const RasterImage out = preprocess(gray, InputSpec{});
  REQUIRE(out.channels == 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) CHECK(out.at(x, y, c) == gray.at(x, y, 0));
}

TEST_CASE("seeded-conv backend is deterministic and seed-dependent") {
  const SeededConvBackend a(42), b(42), c(43);
  const RasterImage img = noise(40, 30, 3, 3);
  const FeatureMap fa = extract(a, img);
  const FeatureMap fb = extract(b, img);
  CHECK(fa.data == fb.data);
  CHECK(fa.channels == 16);
  CHECK(fa.height == 4);  // 30 -> 15 -> 8 -> 4
  CHECK(fa.width == 5);   // 40 -> 20 -> 10 -> 5
  CHECK(extract(c, img).data != fa.data);
  CHECK(a.id() == "seeded-conv:42");
}

TEST_CASE("undersized input is rejected") {
  const SeededConvBackend backend;
  CHECK_THROWS_WITH_AS(extract(backend, RasterImage(7, 20, 3)),
                       doctest::Contains("input below backend minimum"), Error);
}

TEST_CASE("make_backend parses seeded-conv specs") {
  CHECK(make_backend("seeded-conv")->id() == SeededConvBackend().id());
  CHECK(make_backend("seeded-conv:9")->id() == "seeded-conv:9");
  CHECK_THROWS_AS(make_backend("seeded-conv:x"), Error);
}

TEST_CASE("missing or corrupt model file is a load failure") {
  CHECK_THROWS_WITH_AS(OnnxVggBackend("/nonexistent/model.onnx"),
                       doctest::Contains("backend load failure"), Error);
  const auto bad = std::filesystem::temp_directory_path() / "msds_bad_model.onnx";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "this is not a protobuf";
  }
  CHECK_THROWS_WITH_AS(OnnxVggBackend{bad}, doctest::Contains("backend load failure"), Error);
  std::filesystem::remove(bad);
}

TEST_CASE("ONNX backend output is 512 x floor(H/16) x floor(W/16)") {
  const OnnxVggBackend backend(kData / "tiny_vgg.onnx");
  struct Case { int w, h; };
  for (const Case c : {Case{224, 224}, Case{64, 96}, Case{70, 100}, Case{64, 64}, Case{130, 77}}) {
    const FeatureMap f = extract(backend, noise(c.w, c.h, 3, 4));
    CHECK(f.channels == 512);
    CHECK(f.height == c.h / 16);
    CHECK(f.width == c.w / 16);
  }
  CHECK_THROWS_AS(extract(backend, RasterImage(63, 200, 3)), Error);
}

TEST_CASE("ONNX backend is deterministic across calls and threads") {
  const OnnxVggBackend backend(kData / "tiny_vgg.onnx");
  const RasterImage img = noise(96, 80, 3, 5);
  const FeatureMap ref = extract(backend, img);
  std::vector<FeatureMap> results(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] { results[t] = extract(backend, img); });
  }
  for (auto& t : threads) t.join();
  for (const auto& r : results) CHECK(r.data == ref.data);
}

TEST_CASE("fixture replay matches the exporter within 1e-4") {
  const OnnxVggBackend backend(kData / "tiny_vgg.onnx");
  for (const char* name : {"tiny_vgg_fixture.bin", "tiny_vgg_zero_fixture.bin"}) {
    const Fixture fixture = read_fixture(kData / name);
    CHECK(fixture.input.dims == std::vector<std::uint32_t>{1, 3, 96, 64});
    CHECK(fixture.output.dims == std::vector<std::uint32_t>{1, 512, 6, 4});
    CHECK(replay_fixture(backend, fixture) < 1e-4);
  }
}

TEST_CASE("truncated fixture is rejected") {
  const auto src = kData / "tiny_vgg_fixture.bin";
  const auto cut = std::filesystem::temp_directory_path() / "msds_cut_fixture.bin";
  std::filesystem::copy_file(src, cut, std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(cut, 1000);
  CHECK_THROWS_WITH_AS(read_fixture(cut), doctest::Contains("truncated"), Error);
  std::filesystem::remove(cut);
}

namespace {

class NanBackend final : public FeatureBackend {
 public:
  std::string id() const override { return "nan"; }
  InputSpec input_spec() const override { return {}; }
  FeatureMap forward(const RasterImage&) const override {
    FeatureMap f(1, 1, 1);
    f.data[0] = std::nan("");
    return f;
  }
};

}  // namespace

TEST_CASE("non-finite activations are a numeric fault") {
  CHECK_THROWS_WITH_AS(extract(NanBackend{}, RasterImage(4, 4, 3)),
                       doctest::Contains("numeric fault"), Error);
}
