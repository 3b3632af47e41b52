// Segmenter server speaking the bridge protocol on stdin/stdout. Masks come
// from the built-in baseline, so a tracker driven through this process must
// reproduce the baseline detections exactly. Used for protocol tests and
// golden transcripts; needs no model weights.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "marker_track/projection_tracker.hpp"
#include "marker_track/segmenter_bridge.hpp"

namespace {

using nlohmann::json;

json error(const std::string& message) { return {{"kind", "error"}, {"message", message}}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Baseline-backed segmenter server for the bridge protocol"};
  std::string model = "stub-baseline";
  mtrack::BaselineParams params;
  bool fail_init = false;
  int crash_at = -1;
  app.add_option("--model", model, "Model identifier reported on init");
  app.add_option("--window", params.window, "Search window (px, odd)");
  app.add_option("--rho", params.growth_ratio, "Region growth ratio");
  app.add_option("--max-area", params.max_area, "Mask area cap (px)");
  app.add_flag("--fail-init", fail_init, "Answer init with an error and exit (model-load failure)");
  app.add_option("--crash-at", crash_at, "Exit without answering when this frame index arrives");
  CLI11_PARSE(app, argc, argv);

  int rows = 0, cols = 0, last_frame = -1;
  std::optional<mtrack::GradientImage> frame;

  auto reply = [](const json& j) { std::cout << j.dump() << '\n' << std::flush; };

  std::string line;
  while (std::getline(std::cin, line)) {
    json msg;
    try {
      msg = json::parse(line);
    } catch (const json::exception&) {
      reply(error("malformed message"));
      continue;
    }
    const std::string kind = msg.is_object() ? msg.value("kind", "") : "";
    try {
      if (kind == "init") {
        if (fail_init) {
          reply(error("model could not be loaded"));
          return 1;
        }
        rows = msg.at("geometry").at("rows").get<int>();
        cols = msg.at("geometry").at("cols").get<int>();
        last_frame = -1;
        frame.reset();
        reply({{"kind", "ack"}, {"model", model}});
      } else if (kind == "add_frame") {
        const int index = msg.at("frame_index").get<int>();
        if (index == crash_at) return 3;
        if (index <= last_frame) {
          reply(error("ordering violation"));
          continue;
        }
        if (msg.value("dtype", "") != "f64le") {
          reply(error("unsupported dtype"));
          continue;
        }
        const int r = msg.value("rows", rows), c = msg.value("cols", cols);
        frame = mtrack::GradientImage{mtrack::read_frame_f64(msg.at("path").get<std::string>(), r, c), false, 0.0};
        last_frame = index;
        reply({{"kind", "ack"}, {"frame_index", index}});
      } else if (kind == "prompt") {
        const int index = msg.at("frame_index").get<int>();
        if (!frame || index != last_frame) {
          reply(error("prompt for a frame that was not added last"));
          continue;
        }
        std::vector<mtrack::PointPrompt> prompts;
        for (const auto& p : msg.at("prompts"))
          prompts.push_back({p.at("marker_id").get<std::string>(), index, {p.at("col").get<double>(), p.at("row").get<double>()}});
        json masks = json::array();
        for (const auto& m : mtrack::baseline_segment(*frame, prompts, params))
          masks.push_back({{"marker_id", m.marker_id}, {"rle", mtrack::rle_to_json(mtrack::encode_rle(m.pixels))}});
        reply({{"kind", "result"}, {"frame_index", index}, {"masks", masks}});
      } else if (kind == "shutdown") {
        reply({{"kind", "ack"}});
        return 0;
      } else {
        reply(error("unknown kind '" + kind + "'"));
      }
    } catch (const std::exception& e) {
      reply(error(e.what()));
    }
  }
  return 0;
}
