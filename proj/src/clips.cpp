#include "inflatenn/clips.hpp"

#include <cmath>

namespace inflatenn {

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "mean") return FusionMode::Mean;
  if (s == "extremum") return FusionMode::Extremum;
  throw ConfigError("unknown fusion mode '" + s + "' (mean|extremum)");
}

int WindowConfig::stride() const {
  const int s = static_cast<int>(std::lround(seq_len * (1.0 - overlap_ratio)));
  return s < 1 ? 1 : s;
}

void WindowConfig::validate() const {
  if (fps != 10 && fps != 50) throw ConfigError("fps must be 10 or 50, got " + std::to_string(fps));
  if (seq_len < 1) throw ConfigError("seq_len must be positive");
  if (overlap_ratio < 0.0 || overlap_ratio >= 1.0) {
    throw ConfigError("overlap ratio must be in [0,1), got " + std::to_string(overlap_ratio));
  }
  if (gap_tolerance < 1) throw ConfigError("gap tolerance must be at least the nominal step");
}

AnnotationTrack resample_annotations(const AnnotationTrack& track, int to_fps) {
  if (track.valence.size() != track.arousal.size()) {
    throw DimensionError("annotation track columns differ in length");
  }
  if (track.rate_fps == to_fps) return track;
  AnnotationTrack out;
  out.rate_fps = to_fps;
  if (track.rate_fps == 10 && to_fps == 50) {
    out.valence.reserve(track.valence.size() * 5);
    out.arousal.reserve(track.arousal.size() * 5);
    for (std::size_t i = 0; i < track.valence.size(); ++i) {
      for (int r = 0; r < 5; ++r) {
        out.valence.push_back(track.valence[i]);
        out.arousal.push_back(track.arousal[i]);
      }
    }
    return out;
  }
  if (track.rate_fps == 50 && to_fps == 10) {
    for (std::size_t i = 0; i < track.valence.size(); i += 5) {
      out.valence.push_back(track.valence[i]);
      out.arousal.push_back(track.arousal[i]);
    }
    return out;
  }
  throw ConfigError("unsupported annotation rate pair " + std::to_string(track.rate_fps) + "->" +
                    std::to_string(to_fps));
}

double fuse_labels(const std::vector<double>& values, FusionMode mode) {
  if (values.empty()) throw DomainError("cannot fuse an empty label list");
  if (mode == FusionMode::Mean) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
  }
  double best = values[0];
  for (double v : values) {
    if (std::fabs(v) > std::fabs(best)) best = v;
  }
  return best;
}

std::vector<Clip> window_clips(const std::string& source, const std::vector<FrameRecord>& stream,
                               const AnnotationTrack& track, const WindowConfig& cfg) {
  cfg.validate();
  if (track.rate_fps != cfg.fps) {
    throw ConfigError("annotation track at " + std::to_string(track.rate_fps) +
                      " fps but window config wants " + std::to_string(cfg.fps));
  }
  if (track.valence.size() < stream.size()) {
    throw DimensionError("annotation track shorter than frame stream");
  }

  std::vector<int> valid_pos;
  valid_pos.reserve(stream.size());
  int prev_index = -1;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (prev_index >= 0 && stream[i].frame_index <= prev_index) {
      throw DomainError("frame_index not strictly increasing at stream position " +
                        std::to_string(i));
    }
    prev_index = stream[i].frame_index;
    if (stream[i].valid) valid_pos.push_back(static_cast<int>(i));
  }

  std::vector<Clip> clips;
  const int stride = cfg.stride();
  const int total = static_cast<int>(valid_pos.size());
  for (int start = 0; start + cfg.seq_len <= total; start += stride) {
    bool gaps_ok = true;
    for (int k = 1; k < cfg.seq_len; ++k) {
      const int gap = stream[static_cast<std::size_t>(valid_pos[start + k])].frame_index -
                      stream[static_cast<std::size_t>(valid_pos[start + k - 1])].frame_index;
      if (gap > cfg.gap_tolerance) {
        gaps_ok = false;
        break;
      }
    }
    if (!gaps_ok) continue;
    Clip clip;
    clip.source = source;
    std::vector<double> val, aro;
    for (int k = 0; k < cfg.seq_len; ++k) {
      const int pos = valid_pos[start + k];
      clip.frame_indices.push_back(stream[static_cast<std::size_t>(pos)].frame_index);
      clip.stream_positions.push_back(pos);
      val.push_back(track.valence[static_cast<std::size_t>(pos)]);
      aro.push_back(track.arousal[static_cast<std::size_t>(pos)]);
    }
    clip.fused_valence = fuse_labels(val, cfg.fusion);
    clip.fused_arousal = fuse_labels(aro, cfg.fusion);
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace inflatenn
