#pragma once

#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "marker_track/projection_tracker.hpp"

namespace mtrack {

// Wire protocol between the tracker and an external segmenter process.
//
// One JSON object per line on the child's stdin/stdout. Requests:
//   {"kind":"init","scan_id":..,"geometry":{..},"protocol":1}
//   {"kind":"add_frame","frame_index":i,"path":..,"rows":r,"cols":c,"dtype":"f64le"}
//   {"kind":"prompt","frame_index":i,"prompts":[{"marker_id":..,"col":..,"row":..}]}
//   {"kind":"shutdown"}
// Responses:
//   {"kind":"ack","model":..}                 (init)
//   {"kind":"ack","frame_index":i}            (add_frame, shutdown)
//   {"kind":"result","frame_index":i,"masks":[{"marker_id":..,"rle":[[row,col_start,length],..]}]}
//   {"kind":"error","message":..}
// Frames are the unsuppressed gradient image written to `path` as raw
// little-endian float64, row-major. An empty rle list is a miss.

inline constexpr int kBridgeProtocolVersion = 1;

struct RleRun {
  int row = 0;
  int col_start = 0;
  int length = 0;
  friend bool operator==(const RleRun&, const RleRun&) = default;
};

/// Row-major runs of the mask's pixels; duplicate pixels collapse.
std::vector<RleRun> encode_rle(std::span<const PixelIndex> pixels);
/// Pixels in row-major order. Throws InputError on non-positive run lengths.
std::vector<PixelIndex> decode_rle(std::span<const RleRun> runs);

nlohmann::json rle_to_json(std::span<const RleRun> runs);
std::vector<RleRun> rle_from_json(const nlohmann::json& j);

/// Raw float64 frame file as sent with add_frame.
void write_frame_f64(const Image<double>& image, const std::filesystem::path& path);
Image<double> read_frame_f64(const std::filesystem::path& path, int rows, int cols);

/// Segmenter backed by a child process speaking the protocol above. The
/// command runs under /bin/sh -c. Transport problems raise AdapterError.
class ExternalSegmenter final : public Segmenter {
 public:
  explicit ExternalSegmenter(std::string command);
  ~ExternalSegmenter() override;
  ExternalSegmenter(const ExternalSegmenter&) = delete;
  ExternalSegmenter& operator=(const ExternalSegmenter&) = delete;

  void begin_scan(const ScanSet& scan) override;
  std::vector<MarkerMask> segment(const ProjectionFrame& frame, const GradientImage& gbar,
                                  std::span<const PointPrompt> prompts) override;
  void end_scan() override;
  [[nodiscard]] std::string name() const override { return "external:" + command_; }

  /// Model identifier reported in the init handshake.
  [[nodiscard]] const std::string& model() const { return model_; }

 private:
  void start();
  void stop();
  nlohmann::json request(const nlohmann::json& message);

  std::string command_;
  std::string model_;
  std::filesystem::path frame_dir_;
  int child_pid_ = -1;
  std::FILE* to_child_ = nullptr;
  std::FILE* from_child_ = nullptr;
  int last_frame_ = -1;
};

}  // namespace mtrack
