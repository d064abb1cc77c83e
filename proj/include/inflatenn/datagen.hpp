#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "inflatenn/tensor.hpp"

namespace inflatenn {

// Synthetic face-stream corpus. Each video renders a smoothly drifting
// background level plus one soft blob moving at a smoothly varying speed;
// labels are exact functionals of the rendered pixels:
//   valence(f) = 2 * mean(frame f) - 1
//   arousal(f) = 2 * clamp(kMotionGain * mean|frame f - frame f-1|, 0, 1) - 1
// (frame 0 reuses frame 1's motion term). Valence tracks appearance, arousal
// tracks motion, so single-frame models can learn the first but not the
// second.
struct SynthSpec {
  int num_videos = 50;
  int frames_per_video = 300;
  int height = 32;
  int width = 24;
  int fps = 10;  // 10 or 50
  std::uint64_t seed = 0;
  double dropout_rate = 0.0;  // probability a frame is marked invalid, <= 0.3

  void validate() const;
};

constexpr double kMotionGain = 12.0;

struct SynthVideo {
  std::string id;
  std::vector<Tensor> frames;  // [H, W, 3], values in [0,1]
  std::vector<std::uint8_t> valid;
  std::vector<double> valence;
  std::vector<double> arousal;
};

SynthVideo generate_video(const SynthSpec& spec, int video_index);

// The label functionals, shared by the generator and the verification oracle.
std::pair<std::vector<double>, std::vector<double>> label_functionals(
    const std::vector<Tensor>& frames);

// Writes video_###.fpk + video_###.csv per video and manifest.json.
void generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace inflatenn
