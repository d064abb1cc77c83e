#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "inflatenn/clips.hpp"

using namespace inflatenn;

namespace {

std::vector<FrameRecord> make_stream(int n, const std::vector<int>& invalid = {}) {
  std::vector<FrameRecord> stream;
  for (int i = 0; i < n; ++i) {
    FrameRecord rec;
    rec.frame_index = i;
    rec.timestamp_ms = i * 100.0;
    rec.valid = true;
    stream.push_back(rec);
  }
  for (int i : invalid) stream[static_cast<std::size_t>(i)].valid = false;
  return stream;
}

AnnotationTrack make_track(int n, int fps = 10) {
  AnnotationTrack track;
  track.rate_fps = fps;
  for (int i = 0; i < n; ++i) {
    track.valence.push_back(std::sin(i * 0.1));
    track.arousal.push_back(std::cos(i * 0.07));
  }
  return track;
}

// Independent enumeration: recompute the valid subsequence and check each
// stride-anchored window naively.
std::vector<std::vector<int>> window_oracle(const std::vector<FrameRecord>& stream,
                                            const WindowConfig& cfg) {
  std::vector<int> valid;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (stream[i].valid) valid.push_back(static_cast<int>(i));
  }
  std::vector<std::vector<int>> windows;
  for (std::size_t start = 0; start + static_cast<std::size_t>(cfg.seq_len) <= valid.size();
       start += static_cast<std::size_t>(cfg.stride())) {
    std::vector<int> win(valid.begin() + static_cast<std::ptrdiff_t>(start),
                         valid.begin() + static_cast<std::ptrdiff_t>(start) + cfg.seq_len);
    bool ok = true;
    for (std::size_t k = 1; k < win.size(); ++k) {
      if (stream[static_cast<std::size_t>(win[k])].frame_index -
              stream[static_cast<std::size_t>(win[k - 1])].frame_index >
          cfg.gap_tolerance) {
        ok = false;
      }
    }
    if (ok) windows.push_back(std::move(win));
  }
  return windows;
}

}  // namespace

TEST_CASE("annotation resampling 10 -> 50 replicates labels five times") {
  AnnotationTrack track = make_track(23, 10);
  AnnotationTrack up = resample_annotations(track, 50);
  REQUIRE(up.valence.size() == 115);
  for (std::size_t i = 0; i < up.valence.size(); ++i) {
    CHECK(up.valence[i] == track.valence[i / 5]);
    CHECK(up.arousal[i] == track.arousal[i / 5]);
  }
}

TEST_CASE("annotation resampling 50 -> 10 keeps the first of each group") {
  AnnotationTrack track;
  track.rate_fps = 50;
  for (double v : {0.1, 0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.2, 0.2}) {
    track.valence.push_back(v);
    track.arousal.push_back(-v);
  }
  AnnotationTrack down = resample_annotations(track, 10);
  REQUIRE(down.valence.size() == 2);
  CHECK(down.valence[0] == 0.1);
  CHECK(down.valence[1] == 0.2);
}

TEST_CASE("identity resampling is bit-identical; unsupported pairs rejected") {
  AnnotationTrack track = make_track(9, 10);
  AnnotationTrack same = resample_annotations(track, 10);
  CHECK(same.valence == track.valence);
  CHECK(same.arousal == track.arousal);
  AnnotationTrack odd;
  odd.rate_fps = 25;
  odd.valence = {0.0};
  odd.arousal = {0.0};
  CHECK_THROWS_AS(resample_annotations(odd, 10), ConfigError);
}

TEST_CASE("window counts on fully valid streams follow the closed form") {
  WindowConfig cfg;
  cfg.fps = 10;
  cfg.seq_len = 16;

  SUBCASE("overlap 0.5 -> stride 8 -> 11 clips from 100 frames") {
    cfg.overlap_ratio = 0.5;
    CHECK(cfg.stride() == 8);
    auto clips = window_clips("v", make_stream(100), make_track(100), cfg);
    CHECK(clips.size() == 11);
  }
  SUBCASE("overlap 0.2 -> stride 13 -> 7 clips from 100 frames") {
    cfg.overlap_ratio = 0.2;
    CHECK(cfg.stride() == 13);
    auto clips = window_clips("v", make_stream(100), make_track(100), cfg);
    CHECK(clips.size() == 7);
  }
  SUBCASE("too few valid frames -> empty result, not an error") {
    auto clips = window_clips("v", make_stream(10), make_track(10), cfg);
    CHECK(clips.empty());
  }
}

TEST_CASE("invalid frames: clip set equals the enumeration oracle") {
  WindowConfig cfg;
  cfg.fps = 10;
  cfg.seq_len = 8;
  cfg.overlap_ratio = 0.5;
  cfg.gap_tolerance = 1;  // one nominal step: any dropped frame breaks a window
  auto stream = make_stream(60, {25});
  auto clips = window_clips("v", stream, make_track(60), cfg);
  auto oracle = window_oracle(stream, cfg);
  REQUIRE(clips.size() == oracle.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    CHECK(clips[i].stream_positions == oracle[i]);
  }
  // with tolerance 2 the gap is allowed and more clips appear
  cfg.gap_tolerance = 2;
  auto relaxed = window_clips("v", stream, make_track(60), cfg);
  CHECK(relaxed.size() > clips.size());
  CHECK(relaxed.size() == window_oracle(stream, cfg).size());
}

TEST_CASE("randomized invalid patterns match the oracle across the config grid") {
  RngStream rng(77);
  for (int seq_len : {16, 32}) {
    for (double overlap : {0.2, 0.5, 0.8}) {
      WindowConfig cfg;
      cfg.fps = 10;
      cfg.seq_len = seq_len;
      cfg.overlap_ratio = overlap;
      cfg.gap_tolerance = 2;
      std::vector<int> invalid;
      for (int i = 0; i < 200; ++i) {
        if (rng.next_float() < 0.08f) invalid.push_back(i);
      }
      auto stream = make_stream(200, invalid);
      auto clips = window_clips("v", stream, make_track(200), cfg);
      auto oracle = window_oracle(stream, cfg);
      REQUIRE(clips.size() == oracle.size());
      for (std::size_t i = 0; i < clips.size(); ++i) {
        CHECK(clips[i].stream_positions == oracle[i]);
      }
    }
  }
}

TEST_CASE("emitted clips satisfy their invariants") {
  WindowConfig cfg;
  cfg.fps = 10;
  cfg.seq_len = 16;
  cfg.overlap_ratio = 0.8;
  cfg.gap_tolerance = 2;
  auto stream = make_stream(150, {10, 11, 40, 90});
  auto clips = window_clips("v", stream, make_track(150), cfg);
  REQUIRE(!clips.empty());
  int prev_first = -1;
  for (const auto& clip : clips) {
    CHECK(clip.frame_indices.size() == 16);
    for (std::size_t k = 1; k < clip.frame_indices.size(); ++k) {
      CHECK(clip.frame_indices[k] > clip.frame_indices[k - 1]);
      CHECK(clip.frame_indices[k] - clip.frame_indices[k - 1] <= cfg.gap_tolerance);
    }
    CHECK(clip.fused_valence >= -1.0);
    CHECK(clip.fused_valence <= 1.0);
    CHECK(clip.frame_indices.front() > prev_first);  // order-preserving
    prev_first = clip.frame_indices.front();
  }
}

TEST_CASE("clip count is monotone in overlap and fps on fully valid streams") {
  const int seconds = 20;
  for (int seq_len : {16, 32, 64}) {
    std::size_t prev = 0;
    for (double overlap : {0.2, 0.5, 0.8}) {
      WindowConfig cfg;
      cfg.fps = 10;
      cfg.seq_len = seq_len;
      cfg.overlap_ratio = overlap;
      auto clips10 = window_clips("v", make_stream(10 * seconds), make_track(10 * seconds), cfg);
      CHECK(clips10.size() >= prev);
      prev = clips10.size();

      WindowConfig cfg50 = cfg;
      cfg50.fps = 50;
      auto clips50 = window_clips("v", make_stream(50 * seconds),
                                  make_track(50 * seconds, 50), cfg50);
      CHECK(clips50.size() >= clips10.size());
    }
  }
}

TEST_CASE("label fusion closed forms") {
  CHECK(fuse_labels({0.2, 0.4, 0.6}, FusionMode::Mean) == doctest::Approx(0.4));
  CHECK(fuse_labels({0.2, -0.7, 0.5}, FusionMode::Extremum) == doctest::Approx(-0.7));
  CHECK(fuse_labels({0.3, 0.3, 0.3}, FusionMode::Mean) == doctest::Approx(0.3));
  CHECK(fuse_labels({0.3, 0.3, 0.3}, FusionMode::Extremum) == doctest::Approx(0.3));
  // earliest index wins ties
  CHECK(fuse_labels({0.5, -0.5}, FusionMode::Extremum) == doctest::Approx(0.5));
  CHECK_THROWS_AS(fuse_labels({}, FusionMode::Mean), DomainError);
}

TEST_CASE("fusion bounds") {
  RngStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> values;
    const int n = 1 + static_cast<int>(rng.next_below(10));
    double lo = 1.0, hi = -1.0;
    for (int i = 0; i < n; ++i) {
      values.push_back(rng.uniform(-1.0f, 1.0f));
      lo = std::min(lo, values.back());
      hi = std::max(hi, values.back());
    }
    const double mean = fuse_labels(values, FusionMode::Mean);
    CHECK(mean >= lo - 1e-12);
    CHECK(mean <= hi + 1e-12);
    const double ext = fuse_labels(values, FusionMode::Extremum);
    CHECK(std::count(values.begin(), values.end(), ext) >= 1);
  }
}

TEST_CASE("window config validation") {
  WindowConfig cfg;
  cfg.fps = 25;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.fps = 10;
  cfg.overlap_ratio = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.overlap_ratio = 0.5;
  cfg.gap_tolerance = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("non-increasing frame indices are rejected") {
  auto stream = make_stream(10);
  stream[5].frame_index = 3;
  WindowConfig cfg;
  cfg.seq_len = 4;
  CHECK_THROWS_AS(window_clips("v", stream, make_track(10), cfg), DomainError);
}
