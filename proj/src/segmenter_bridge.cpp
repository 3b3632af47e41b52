#include "marker_track/segmenter_bridge.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "marker_track/errors.hpp"

extern char** environ;

namespace mtrack {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<RleRun> encode_rle(std::span<const PixelIndex> pixels) {
  std::vector<PixelIndex> sorted(pixels.begin(), pixels.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const PixelIndex& a, const PixelIndex& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::vector<RleRun> runs;
  for (const auto& p : sorted) {
    if (!runs.empty() && runs.back().row == p.row && runs.back().col_start + runs.back().length == p.col) {
      ++runs.back().length;
    } else {
      runs.push_back({p.row, p.col, 1});
    }
  }
  return runs;
}

std::vector<PixelIndex> decode_rle(std::span<const RleRun> runs) {
  std::vector<PixelIndex> pixels;
  for (const auto& run : runs) {
    if (run.length <= 0) throw InputError("rle run with non-positive length");
    for (int k = 0; k < run.length; ++k) pixels.push_back({run.col_start + k, run.row});
  }
  return pixels;
}

json rle_to_json(std::span<const RleRun> runs) {
  json out = json::array();
  for (const auto& r : runs) out.push_back({r.row, r.col_start, r.length});
  return out;
}

std::vector<RleRun> rle_from_json(const json& j) {
  if (!j.is_array()) throw InputError("rle must be an array");
  std::vector<RleRun> runs;
  for (const auto& item : j) {
    if (!item.is_array() || item.size() != 3) throw InputError("rle run must be [row, col_start, length]");
    runs.push_back({item[0].get<int>(), item[1].get<int>(), item[2].get<int>()});
  }
  return runs;
}

void write_frame_f64(const Image<double>& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AdapterError("cannot write frame file " + path.string());
  for (double v : image.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(v));
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    out.write(bytes, 8);
  }
}

Image<double> read_frame_f64(const fs::path& path, int rows, int cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open frame file " + path.string());
  Image<double> image(rows, cols);
  for (double& v : image.data()) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw InputError("frame file too short: " + path.string());
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    std::memcpy(&v, &bits, sizeof(v));
  }
  return image;
}

ExternalSegmenter::ExternalSegmenter(std::string command) : command_(std::move(command)) {
  // a dead child must surface as a write error, not kill the process
  std::signal(SIGPIPE, SIG_IGN);
}

ExternalSegmenter::~ExternalSegmenter() {
  try {
    stop();
  } catch (...) {
  }
}

void ExternalSegmenter::start() {
  int to[2], from[2];
  if (pipe2(to, O_CLOEXEC) != 0) throw AdapterError("cannot create pipe for adapter '" + command_ + "'");
  if (pipe2(from, O_CLOEXEC) != 0) {
    close(to[0]);
    close(to[1]);
    throw AdapterError("cannot create pipe for adapter '" + command_ + "'");
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, to[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, from[1], STDOUT_FILENO);

  std::string shell = "/bin/sh", flag = "-c";
  char* argv[] = {shell.data(), flag.data(), command_.data(), nullptr};
  const int rc = posix_spawn(&child_pid_, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  close(to[0]);
  close(from[1]);
  if (rc != 0) {
    close(to[1]);
    close(from[0]);
    child_pid_ = -1;
    throw AdapterError("cannot start adapter '" + command_ + "': " + std::strerror(rc));
  }
  to_child_ = fdopen(to[1], "w");
  from_child_ = fdopen(from[0], "r");

  static std::atomic<int> session{0};
  frame_dir_ = fs::temp_directory_path() /
               ("mtrack-frames-" + std::to_string(getpid()) + "-" + std::to_string(session.fetch_add(1)));
  fs::create_directories(frame_dir_);
}

void ExternalSegmenter::stop() {
  if (to_child_) {
    std::fputs("{\"kind\":\"shutdown\"}\n", to_child_);
    std::fclose(to_child_);
    to_child_ = nullptr;
  }
  if (from_child_) {
    std::fclose(from_child_);
    from_child_ = nullptr;
  }
  if (child_pid_ > 0) {
    int status = 0;
    waitpid(child_pid_, &status, 0);
    child_pid_ = -1;
  }
  if (!frame_dir_.empty()) {
    std::error_code ec;
    fs::remove_all(frame_dir_, ec);
    frame_dir_.clear();
  }
}

json ExternalSegmenter::request(const json& message) {
  if (!to_child_ || !from_child_) throw AdapterError("adapter '" + command_ + "' is not running");
  const std::string line = message.dump() + "\n";
  if (std::fputs(line.c_str(), to_child_) < 0 || std::fflush(to_child_) != 0)
    throw AdapterError("adapter '" + command_ + "' closed its input and stopped accepting requests");

  char* buf = nullptr;
  std::size_t cap = 0;
  const ssize_t n = getline(&buf, &cap, from_child_);
  std::string reply = n > 0 ? std::string(buf, static_cast<std::size_t>(n)) : std::string();
  std::free(buf);
  if (n <= 0) throw AdapterError("adapter '" + command_ + "' closed its output");

  json parsed;
  try {
    parsed = json::parse(reply);
  } catch (const json::exception&) {
    throw AdapterError("adapter '" + command_ + "' sent a malformed record");
  }
  if (parsed.value("kind", "") == "error")
    throw AdapterError("adapter '" + command_ + "' reported: " + parsed.value("message", "unknown error"));
  return parsed;
}

void ExternalSegmenter::begin_scan(const ScanSet& scan) {
  stop();
  start();
  last_frame_ = -1;
  const auto& g = scan.geometry;
  const json ack = request({{"kind", "init"},
                            {"protocol", kBridgeProtocolVersion},
                            {"scan_id", scan.scan_id},
                            {"geometry",
                             {{"sad_mm", g.sad},
                              {"sid_mm", g.sid},
                              {"cols", g.detector_cols},
                              {"rows", g.detector_rows},
                              {"pixel_pitch_mm", g.pixel_pitch}}}});
  if (ack.value("kind", "") != "ack") throw AdapterError("adapter '" + command_ + "' did not acknowledge init");
  model_ = ack.value("model", "");
}

std::vector<MarkerMask> ExternalSegmenter::segment(const ProjectionFrame& frame, const GradientImage& gbar,
                                                   std::span<const PointPrompt> prompts) {
  if (frame.index <= last_frame_) throw AdapterError("frames must reach the adapter in increasing index order");
  last_frame_ = frame.index;

  const fs::path path = frame_dir_ / ("gbar_" + std::to_string(frame.index) + ".f64");
  write_frame_f64(gbar.values, path);
  const json ack = request({{"kind", "add_frame"},
                            {"frame_index", frame.index},
                            {"path", path.string()},
                            {"rows", gbar.values.rows()},
                            {"cols", gbar.values.cols()},
                            {"dtype", "f64le"}});
  if (ack.value("kind", "") != "ack" || ack.value("frame_index", -1) != frame.index)
    throw AdapterError("adapter '" + command_ + "' did not acknowledge frame " + std::to_string(frame.index));

  std::vector<MarkerMask> masks;
  if (!prompts.empty()) {
    json pj = json::array();
    for (const auto& p : prompts) pj.push_back({{"marker_id", p.marker_id}, {"col", p.pixel.col}, {"row", p.pixel.row}});
    const json result = request({{"kind", "prompt"}, {"frame_index", frame.index}, {"prompts", pj}});
    if (result.value("kind", "") != "result" || result.value("frame_index", -1) != frame.index)
      throw AdapterError("adapter '" + command_ + "' sent no result for frame " + std::to_string(frame.index));

    for (const auto& p : prompts) {
      MarkerMask mask{p.marker_id, frame.index, {}};
      for (const auto& m : result.value("masks", json::array())) {
        if (m.value("marker_id", "") != p.marker_id) continue;
        try {
          mask.pixels = decode_rle(rle_from_json(m.at("rle")));
        } catch (const std::exception& e) {
          throw AdapterError("adapter '" + command_ + "' sent a bad mask: " + e.what());
        }
        for (const auto& px : mask.pixels) {
          if (px.col < 0 || px.row < 0 || px.col >= gbar.values.cols() || px.row >= gbar.values.rows())
            throw AdapterError("adapter '" + command_ + "' sent a mask outside the frame");
        }
        break;
      }
      masks.push_back(std::move(mask));
    }
  }
  std::error_code ec;
  fs::remove(path, ec);
  return masks;
}

void ExternalSegmenter::end_scan() { stop(); }

}  // namespace mtrack
