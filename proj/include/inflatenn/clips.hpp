#pragma once

#include <optional>
#include <string>
#include <vector>

#include "inflatenn/tensor.hpp"

namespace inflatenn {

// One source frame. frame_index counts source-video positions and is strictly
// increasing within a stream; invalid frames carry no face tensor.
struct FrameRecord {
  int frame_index = 0;
  double timestamp_ms = 0.0;
  bool valid = false;
  std::optional<Tensor> face;  // [H, W, 3] in [0,1]
};

struct AnnotationTrack {
  int rate_fps = 10;               // 10 or 50
  std::vector<double> valence;     // per frame, in [-1,1]
  std::vector<double> arousal;
};

enum class FusionMode { Mean, Extremum };

FusionMode parse_fusion_mode(const std::string& s);

struct WindowConfig {
  int fps = 10;
  int seq_len = 16;
  double overlap_ratio = 0.5;
  FusionMode fusion = FusionMode::Mean;
  int gap_tolerance = 2;  // max frame_index gap between consecutive kept frames, source units

  // stride = round(seq_len * (1 - overlap)), at least 1
  int stride() const;
  void validate() const;
};

struct Clip {
  std::string source;
  std::vector<int> frame_indices;   // strictly increasing, length seq_len
  std::vector<int> stream_positions;  // positions into the source stream
  double fused_valence = 0.0;
  double fused_arousal = 0.0;
};

// 10->50 replicates each label five times, 50->10 keeps the first of each
// group of five, identity otherwise; other pairs are unsupported.
AnnotationTrack resample_annotations(const AnnotationTrack& track, int to_fps);

// Slides a seq_len window with the derived stride over the valid-frame
// subsequence; a window is emitted iff every consecutive frame_index gap is
// within gap_tolerance. Track values pair with stream positions.
std::vector<Clip> window_clips(const std::string& source, const std::vector<FrameRecord>& stream,
                               const AnnotationTrack& track, const WindowConfig& cfg);

// mean -> arithmetic mean; extremum -> the signed value of largest absolute
// magnitude (earliest index on ties).
double fuse_labels(const std::vector<double>& values, FusionMode mode);

}  // namespace inflatenn
