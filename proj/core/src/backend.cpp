#include "mammoforge/backend.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "mammoforge/error.hpp"
#include "mammoforge/manifest.hpp"
#include "mammoforge/nifti.hpp"

extern char** environ;

namespace mammoforge {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Counting gate keyed by descriptor name.
class ConcurrencyGate {
 public:
  void acquire(const std::string& name, int limit) {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return active_[name] < limit; });
    ++active_[name];
  }
  void release(const std::string& name) {
    {
      std::lock_guard lock(mutex_);
      --active_[name];
    }
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::string, int> active_;
};

ConcurrencyGate& gate() {
  static ConcurrencyGate g;
  return g;
}

struct GateSlot {
  GateSlot(const std::string& n, int limit) : name(n) { gate().acquire(name, limit); }
  ~GateSlot() { gate().release(name); }
  std::string name;
};

fs::path make_workdir(const BackendDescriptor& d, const BackendRunOptions& options) {
  static std::atomic<unsigned> counter{0};
  const fs::path root = options.work_root.empty() ? fs::temp_directory_path() : options.work_root;
  fs::create_directories(root);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const fs::path dir = root / fmt::format("mammoforge-{}-{}-{}", d.name, ::getpid(), counter++);
    if (fs::create_directory(dir)) return dir;
  }
  throw IoError(fmt::format("cannot create a work directory under '{}'", root.string()));
}

std::string log_tail(const fs::path& log) {
  std::ifstream in(log, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t kMax = 2000;
  if (text.size() > kMax) text = text.substr(text.size() - kMax);
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

[[noreturn]] void fail(ErrorKind kind, const fs::path& workdir, const std::string& what, bool timed_out = false) {
  throw BackendError(kind, what, workdir, timed_out);
}

}  // namespace

void BackendDescriptor::validate() const {
  if (name.empty()) throw ValidationError("backend name must not be empty");
  if (model_id.empty()) throw ValidationError(fmt::format("backend '{}': model_id must not be empty", name));
  if (timeout_s <= 0) throw ValidationError(fmt::format("backend '{}': timeout_s must be positive", name));
  if (max_concurrency <= 0) throw ValidationError(fmt::format("backend '{}': max_concurrency must be positive", name));
  if (expected_labels.empty()) throw ValidationError(fmt::format("backend '{}': expected_labels is empty", name));
  for (Label l : expected_labels) {
    if (!labels::is_registered(l) || l == labels::background) {
      throw ValidationError(fmt::format("backend '{}': label {} is not a dictionary label", name, l));
    }
  }
}

LabelVolume run_backend(const BackendDescriptor& d, const ImageVolume& input, const std::set<Label>& request_labels,
                        const BackendRunOptions& options) {
  d.validate();
  if (!fs::is_regular_file(d.executable) || ::access(d.executable.c_str(), X_OK) != 0) {
    throw ValidationError(fmt::format("backend '{}': executable '{}' not found", d.name, d.executable.string()));
  }
  if (request_labels.empty()) throw ValidationError("backend request needs at least one label");
  for (Label l : request_labels) {
    if (!d.expected_labels.count(l)) {
      throw ValidationError(fmt::format("backend '{}' does not produce label {}", d.name, l));
    }
  }

  GateSlot slot(d.name, d.max_concurrency);
  const fs::path workdir = make_workdir(d, options);
  write_nifti(input, workdir / "input.nii");
  json req;
  req["protocol_version"] = kBackendProtocolVersion;
  req["model_id"] = d.model_id;
  req["labels_requested"] = std::vector<int>(request_labels.begin(), request_labels.end());
  req["case_id"] = options.case_id;
  write_text_atomic(workdir / "request.json", req.dump(2) + "\n");

  const std::string exe = d.executable.string();
  const std::string dir = workdir.string();
  const std::string log = (workdir / "backend.log").string();
  std::vector<char*> argv{const_cast<char*>(exe.c_str()), const_cast<char*>("--workdir"),
                          const_cast<char*>(dir.c_str()), nullptr};
  posix_spawn_file_actions_t actions;
  posix_spawnattr_t attr;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, exe.c_str(), &actions, &attr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) fail(ErrorKind::backend, workdir, fmt::format("backend '{}': spawn failed (errno {})", d.name, rc));

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(d.timeout_s);
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) fail(ErrorKind::backend, workdir, "waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      fail(ErrorKind::backend, workdir, fmt::format("backend '{}' timed out after {} s", d.name, d.timeout_s), true);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  // Stray grandchildren must not outlive the call.
  ::kill(-pid, SIGKILL);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    const std::string how = WIFEXITED(status) ? fmt::format("exit code {}", WEXITSTATUS(status))
                                              : fmt::format("signal {}", WTERMSIG(status));
    fail(ErrorKind::backend, workdir, fmt::format("backend '{}' failed with {}: {}", d.name, how, log_tail(log)));
  }

  json resp;
  try {
    resp = json::parse(read_text(workdir / "response.json"));
  } catch (const std::exception& ex) {
    fail(ErrorKind::protocol, workdir, fmt::format("backend '{}': unreadable response.json: {}", d.name, ex.what()));
  }
  try {
    if (resp.at("protocol_version").get<int>() != kBackendProtocolVersion) {
      fail(ErrorKind::protocol, workdir, fmt::format("backend '{}': protocol version {}", d.name,
                                                     resp.at("protocol_version").dump()));
    }
    const std::string st = resp.at("status").get<std::string>();
    const std::string message = resp.at("message").get<std::string>();
    resp.at("labels_emitted").get<std::vector<int>>();
    if (st == "error") fail(ErrorKind::backend, workdir, fmt::format("backend '{}' reported: {}", d.name, message));
    if (st != "ok") fail(ErrorKind::protocol, workdir, fmt::format("backend '{}': status '{}'", d.name, st));
  } catch (const json::exception& ex) {
    fail(ErrorKind::protocol, workdir, fmt::format("backend '{}': malformed response.json: {}", d.name, ex.what()));
  }

  std::optional<AnyVolume> out;
  try {
    out.emplace(read_nifti(workdir / "output.nii"));
  } catch (const Error& ex) {
    fail(ErrorKind::protocol, workdir, fmt::format("backend '{}': bad output.nii: {}", d.name, ex.what()));
  }
  const auto* mask = std::get_if<LabelVolume>(&*out);
  if (mask == nullptr) fail(ErrorKind::protocol, workdir, fmt::format("backend '{}': output is not a label map", d.name));
  if (!same_grid(mask->meta(), input.meta())) {
    const auto& a = mask->meta().dims;
    const auto& b = input.meta().dims;
    fail(ErrorKind::protocol, workdir,
         fmt::format("backend '{}': output geometry {}x{}x{} does not match input {}x{}x{}", d.name, a[0], a[1], a[2],
                     b[0], b[1], b[2]));
  }
  for (Label l : mask->data()) {
    if (l != labels::background && !d.expected_labels.count(l)) {
      fail(ErrorKind::protocol, workdir, fmt::format("backend '{}': unexpected label {} in output", d.name, l));
    }
  }
  // Echo the caller's geometry exactly; NIfTI stores it in single precision.
  LabelVolume result(input.meta(), mask->copy_data());
  std::error_code ec;
  fs::remove_all(workdir, ec);
  return result;
}

}  // namespace mammoforge
