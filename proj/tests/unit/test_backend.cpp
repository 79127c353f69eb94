#include <doctest.h>

#include <chrono>
#include <fstream>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "mammoforge/backend.hpp"
#include "mammoforge/error.hpp"
#include "test_support.hpp"

using namespace mammoforge;
using namespace mammoforge::testing;
namespace fs = std::filesystem;

namespace {

ImageVolume random_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  const GridMeta m = make_grid({9, 7, 5}, Vec3(0.7, 0.9, 2.0), Vec3(-3, 4, 10));
  std::vector<float> v(m.voxel_count());
  for (auto& x : v) x = u(rng);
  return ImageVolume(m, std::move(v));
}

BackendDescriptor descriptor(const fs::path& exe, std::string name = "stub") {
  BackendDescriptor d;
  d.name = std::move(name);
  d.executable = exe;
  d.model_id = "stub-model";
  d.timeout_s = 30;
  d.expected_labels = {labels::lesion};
  return d;
}

ErrorKind failure_kind(const BackendDescriptor& d, const ImageVolume& img, const fs::path& work) {
  try {
    run_backend(d, img, {labels::lesion}, {.case_id = "c1", .work_root = work});
  } catch (const BackendError& e) {
    CHECK(fs::exists(e.workdir()));
    return e.kind();
  }
  FAIL("backend call did not fail");
  return ErrorKind::validation;
}

std::size_t entries(const fs::path& dir) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

}  // namespace

TEST_CASE("threshold stub matches a local oracle") {
  TempDir tmp("backend");
  const fs::path work = tmp / "work";
  fs::create_directories(work);
  const ImageVolume img = random_image(1);
  const LabelVolume out =
      run_backend(descriptor(write_stub_backend(tmp.path(), "threshold", 0.6)), img, {labels::lesion},
                  {.case_id = "c1", .work_root = work});
  CHECK(out.meta().dims == img.meta().dims);
  CHECK(out.meta().origin == img.meta().origin);
  CHECK(out.meta().spacing == img.meta().spacing);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(out[i] == (img[i] >= 0.6f ? labels::lesion : 0));
  CHECK(entries(work) == 0);
}

TEST_CASE("protocol violations") {
  TempDir tmp("backend");
  const ImageVolume img = random_image(2);
  for (std::string mode : {"wrong-dims", "bad-json", "no-output", "old-protocol", "bad-labels"}) {
    CAPTURE(mode);
    CHECK(failure_kind(descriptor(write_stub_backend(tmp.path(), mode)), img, tmp.path()) == ErrorKind::protocol);
  }
}

TEST_CASE("backend failures") {
  TempDir tmp("backend");
  const ImageVolume img = random_image(3);
  for (std::string mode : {"error-status", "exit-code"}) {
    CAPTURE(mode);
    CHECK(failure_kind(descriptor(write_stub_backend(tmp.path(), mode)), img, tmp.path()) == ErrorKind::backend);
  }
}

TEST_CASE("failed runs keep the log") {
  TempDir tmp("backend");
  try {
    run_backend(descriptor(write_stub_backend(tmp.path(), "exit-code")), random_image(4), {labels::lesion},
                {.work_root = tmp.path()});
    FAIL("expected failure");
  } catch (const BackendError& e) {
    std::ifstream in(e.workdir() / "backend.log");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(text.find("exit-code") != std::string::npos);
    CHECK(std::string(e.what()).find("exit code 7") != std::string::npos);
  }
}

TEST_CASE("timeouts kill the backend") {
  TempDir tmp("backend");
  BackendDescriptor d = descriptor(write_stub_backend(tmp.path(), "sleep"));
  d.timeout_s = 1;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    run_backend(d, random_image(5), {labels::lesion}, {.work_root = tmp.path()});
    FAIL("expected timeout");
  } catch (const BackendError& e) {
    CHECK(e.kind() == ErrorKind::backend);
    CHECK(e.timed_out());
  }
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(10));
}

TEST_CASE("request validation") {
  TempDir tmp("backend");
  const ImageVolume img = random_image(6);
  const BackendDescriptor d = descriptor(write_stub_backend(tmp.path(), "threshold"));
  CHECK_THROWS_AS(run_backend(d, img, {labels::fibroglandular}, {.work_root = tmp.path()}), ValidationError);
  CHECK_THROWS_AS(run_backend(d, img, {}, {.work_root = tmp.path()}), ValidationError);
  BackendDescriptor missing = d;
  missing.executable = tmp / "does-not-exist.sh";
  CHECK_THROWS_AS(run_backend(missing, img, {labels::lesion}, {.work_root = tmp.path()}), ValidationError);
  BackendDescriptor bad = d;
  bad.timeout_s = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = d;
  bad.max_concurrency = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = d;
  bad.expected_labels = {9};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("concurrency limit serialises runs of one backend") {
  TempDir tmp("backend");
  const fs::path log = tmp / "events.log";
  const std::string prelude =
      fmt::format("echo start >> '{0}'\nsleep 0.2\necho end >> '{0}'\n", log.string());
  const BackendDescriptor d = descriptor(write_stub_backend(tmp.path(), "threshold", 0.5, prelude), "gated");
  const ImageVolume img = random_image(7);
  std::vector<std::thread> threads;
  for (int i = 0; i < 3; ++i)
    threads.emplace_back([&] { run_backend(d, img, {labels::lesion}, {.work_root = tmp.path()}); });
  for (auto& t : threads) t.join();
  std::ifstream in(log);
  std::vector<std::string> events;
  for (std::string line; std::getline(in, line);) events.push_back(line);
  REQUIRE(events.size() == 6);
  for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i] == (i % 2 == 0 ? "start" : "end"));
}
