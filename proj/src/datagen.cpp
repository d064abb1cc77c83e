#include "inflatenn/datagen.hpp"

#include <cmath>

#include "inflatenn/storage.hpp"

#include <json.hpp>

namespace inflatenn {

namespace {

constexpr double kTau = 6.283185307179586;

struct Sinusoid {
  double amp, freq_hz, phase;
  double at(double seconds) const { return amp * std::sin(kTau * freq_hz * seconds + phase); }
};

Sinusoid random_sinusoid(RngStream& rng, double amp_lo, double amp_hi, double f_lo, double f_hi) {
  return {rng.uniform(static_cast<float>(amp_lo), static_cast<float>(amp_hi)),
          rng.uniform(static_cast<float>(f_lo), static_cast<float>(f_hi)),
          rng.uniform(0.0f, static_cast<float>(kTau))};
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

void SynthSpec::validate() const {
  if (num_videos < 1 || frames_per_video < 2 || height < 8 || width < 8) {
    throw ConfigError("synthetic spec needs >=1 video, >=2 frames, extents >=8");
  }
  if (fps != 10 && fps != 50) throw ConfigError("fps must be 10 or 50");
  if (dropout_rate < 0.0 || dropout_rate > 0.3) {
    throw ConfigError("dropout rate must be in [0,0.3], got " + std::to_string(dropout_rate));
  }
}

std::pair<std::vector<double>, std::vector<double>> label_functionals(
    const std::vector<Tensor>& frames) {
  if (frames.size() < 2) throw DomainError("label functionals need at least 2 frames");
  std::vector<double> valence(frames.size()), arousal(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    valence[f] = 2.0 * reduce_moments(frames[f]).mean - 1.0;
  }
  for (std::size_t f = 1; f < frames.size(); ++f) {
    if (!frames[f].same_shape(frames[f - 1])) {
      throw DimensionError("frames must share one shape");
    }
    double sum = 0.0;
    for (std::int64_t i = 0; i < frames[f].size(); ++i) {
      sum += std::fabs(static_cast<double>(frames[f][i]) - static_cast<double>(frames[f - 1][i]));
    }
    const double motion = sum / static_cast<double>(frames[f].size());
    arousal[f] = 2.0 * clamp01(kMotionGain * motion) - 1.0;
  }
  arousal[0] = arousal[1];
  return {valence, arousal};
}

SynthVideo generate_video(const SynthSpec& spec, int video_index) {
  spec.validate();
  RngStream rng = RngStream(spec.seed).split(static_cast<std::uint64_t>(video_index));

  // background level trajectory in [0.08, 0.92]
  std::vector<Sinusoid> bg;
  for (int k = 0; k < 3; ++k) bg.push_back(random_sinusoid(rng, 0.06, 0.14, 0.02, 0.15));
  // blob speed (pixels per frame) and heading drift
  std::vector<Sinusoid> speed;
  for (int k = 0; k < 2; ++k) speed.push_back(random_sinusoid(rng, 0.2, 0.42, 0.03, 0.22));
  const Sinusoid heading = random_sinusoid(rng, 1.2, 2.4, 0.01, 0.08);
  const double heading0 = rng.uniform(0.0f, static_cast<float>(kTau));
  const double base_level = rng.uniform(0.35f, 0.65f);
  const double sigma = rng.uniform(2.2f, 3.2f);
  const double max_speed = 6.0;

  SynthVideo video;
  char id[32];
  std::snprintf(id, sizeof(id), "video_%03d", video_index);
  video.id = id;

  RngStream dropout_rng = rng.split(0xD0u);
  double px = spec.width / 2.0, py = spec.height / 2.0;
  for (int f = 0; f < spec.frames_per_video; ++f) {
    const double seconds = static_cast<double>(f) / spec.fps;
    double level = base_level;
    for (const auto& s : bg) level += s.at(seconds);
    level = std::min(0.92, std::max(0.08, level));

    double speed_frac = 0.5;
    for (const auto& s : speed) speed_frac += s.at(seconds);
    const double v = max_speed * clamp01(speed_frac);
    const double theta = heading0 + heading.at(seconds);
    px += v * std::cos(theta);
    py += v * std::sin(theta);
    px = std::fmod(px + spec.width * 64.0, static_cast<double>(spec.width));
    py = std::fmod(py + spec.height * 64.0, static_cast<double>(spec.height));

    // blob contrast pushes away from the background level; torus rendering
    const double blob = level < 0.5 ? 0.55 : -0.55;
    Tensor frame({spec.height, spec.width, 3});
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        double dx = std::fabs(x - px), dy = std::fabs(y - py);
        dx = std::min(dx, spec.width - dx);
        dy = std::min(dy, spec.height - dy);
        const double d2 = dx * dx + dy * dy;
        const double value = clamp01(level + blob * std::exp(-d2 / (2.0 * sigma * sigma)));
        const float fv = static_cast<float>(value);
        float* px3 = frame.data() + (static_cast<std::int64_t>(y) * spec.width + x) * 3;
        px3[0] = fv;
        px3[1] = fv;
        px3[2] = fv;
      }
    }
    video.frames.push_back(std::move(frame));
    video.valid.push_back(dropout_rng.next_float() < spec.dropout_rate ? 0 : 1);
  }

  auto [valence, arousal] = label_functionals(video.frames);
  video.valence = std::move(valence);
  video.arousal = std::move(arousal);
  return video;
}

void generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  nlohmann::json manifest;
  manifest["spec"] = {{"num_videos", spec.num_videos},
                      {"frames_per_video", spec.frames_per_video},
                      {"height", spec.height},
                      {"width", spec.width},
                      {"fps", spec.fps},
                      {"seed", spec.seed},
                      {"dropout_rate", spec.dropout_rate}};
  manifest["videos"] = nlohmann::json::array();

  for (int vi = 0; vi < spec.num_videos; ++vi) {
    SynthVideo video = generate_video(spec, vi);
    FramePack pack;
    pack.height = spec.height;
    pack.width = spec.width;
    pack.channels = 3;
    pack.valid = video.valid;
    pack.data.reserve(video.frames.size() * static_cast<std::size_t>(pack.frame_size()));
    const double ms_per_frame = 1000.0 / spec.fps;
    std::vector<AnnotationRow> rows;
    for (std::size_t f = 0; f < video.frames.size(); ++f) {
      if (video.valid[f]) {
        const float* src = video.frames[f].data();
        pack.data.insert(pack.data.end(), src, src + pack.frame_size());
      } else {
        pack.data.insert(pack.data.end(), static_cast<std::size_t>(pack.frame_size()), 0.0f);
      }
      rows.push_back({static_cast<int>(f), ms_per_frame * static_cast<double>(f),
                      video.valence[f], video.arousal[f], video.valid[f] != 0});
    }
    write_frame_pack(out_dir / (video.id + ".fpk"), pack);
    write_annotation_csv(out_dir / (video.id + ".csv"), rows);
    manifest["videos"].push_back({{"id", video.id},
                                  {"frames", spec.frames_per_video},
                                  {"framepack", video.id + ".fpk"},
                                  {"annotations", video.id + ".csv"}});
  }
  atomic_write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace inflatenn
