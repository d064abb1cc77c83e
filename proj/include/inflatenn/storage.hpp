#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "inflatenn/clips.hpp"
#include "inflatenn/postprocess.hpp"
#include "inflatenn/tensor.hpp"
#include "inflatenn/train.hpp"

namespace inflatenn {

// Binary formats are little-endian regardless of host and validated on read.
// Writes are atomic (temp file + rename), so a crashed run never leaves a
// partial file with valid magic.

// "FPK1" | u32 frame_count,height,width,channels | validity bitmap
// (ceil(frame_count/8) bytes, LSB-first) | f32 frames, row-major [h][w][c]
struct FramePack {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> valid;  // one byte per frame, 0 or 1
  std::vector<float> data;          // frame-major

  int frame_count() const { return static_cast<int>(valid.size()); }
  std::int64_t frame_size() const {
    return static_cast<std::int64_t>(height) * width * channels;
  }
  Tensor frame(int index) const;  // [H, W, C]
};

void write_frame_pack(const std::filesystem::path& path, const FramePack& pack);
FramePack read_frame_pack(const std::filesystem::path& path, bool allow_nan = false);

// "WPK1" | u32 entry count | per entry: u32 name length, name bytes,
// u32 rank, u32 extents, f32 payload. Entries sorted by name; names unique.
void write_weight_pack(const std::filesystem::path& path,
                       const std::map<std::string, Tensor>& entries);
std::map<std::string, Tensor> read_weight_pack(const std::filesystem::path& path,
                                               bool allow_nan = false);

// annotation CSV: frame_index,timestamp_ms,valence,arousal,valid
struct AnnotationRow {
  int frame_index = 0;
  double timestamp_ms = 0.0;
  double valence = 0.0;
  double arousal = 0.0;
  bool valid = true;
};

void write_annotation_csv(const std::filesystem::path& path, const std::vector<AnnotationRow>& rows);
std::vector<AnnotationRow> read_annotation_csv(const std::filesystem::path& path);

// predictions CSV: frame_index,valence_pred,arousal_pred
struct PredictionRow {
  int frame_index = 0;
  double valence = 0.0;
  double arousal = 0.0;
};

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);

// labels CSV shares the predictions schema: frame_index,valence,arousal
void write_labels_csv(const std::filesystem::path& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_labels_csv(const std::filesystem::path& path);

// stats CSV: target,label_mean,label_std,pred_mean
struct NamedStats {
  TargetStats valence;
  TargetStats arousal;
};

void write_stats_csv(const std::filesystem::path& path, const NamedStats& stats);
NamedStats read_stats_csv(const std::filesystem::path& path);

// clip manifest: source,fused_valence,fused_arousal,indices (';'-joined)
void write_clip_manifest(const std::filesystem::path& path, const std::vector<Clip>& clips);
std::vector<Clip> read_clip_manifest(const std::filesystem::path& path);

// run-config: "key = value" lines, '#' comments
using RunConfigMap = std::map<std::string, std::string>;
void write_run_config(const std::filesystem::path& path, const RunConfigMap& config);
RunConfigMap read_run_config(const std::filesystem::path& path);

void atomic_write_text(const std::filesystem::path& path, const std::string& text);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace inflatenn
