#include "inflatenn/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "inflatenn/clips.hpp"
#include "inflatenn/datagen.hpp"
#include "inflatenn/inflate.hpp"
#include "inflatenn/metrics.hpp"
#include "inflatenn/model.hpp"
#include "inflatenn/postprocess.hpp"
#include "inflatenn/storage.hpp"
#include "inflatenn/train.hpp"

namespace inflatenn {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// corpus access

struct VideoFiles {
  std::string id;
  fs::path framepack;
  fs::path annotations;
};

struct CorpusIndex {
  int fps = 10;
  std::vector<VideoFiles> videos;
};

CorpusIndex load_corpus_index(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open '" + manifest_path.string() + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  CorpusIndex index;
  index.fps = manifest.at("spec").at("fps").get<int>();
  for (const auto& v : manifest.at("videos")) {
    index.videos.push_back({v.at("id").get<std::string>(),
                            dir / v.at("framepack").get<std::string>(),
                            dir / v.at("annotations").get<std::string>()});
  }
  if (index.videos.empty()) throw DataError(manifest_path.string() + ": no videos listed");
  return index;
}

// Stream + track at the requested rate. A 50 fps corpus serves a 10 fps
// request by keeping every 5th frame (frame_index stays in source units);
// anything else must match the corpus rate.
struct VideoStream {
  std::string id;
  std::vector<FrameRecord> stream;
  std::vector<int> pack_frame;  // stream position -> frame pack index
  AnnotationTrack track;
};

VideoStream make_stream(const std::string& id, const std::vector<AnnotationRow>& rows,
                        int corpus_fps, int want_fps) {
  int step = 1;
  if (corpus_fps != want_fps) {
    if (corpus_fps == 50 && want_fps == 10) {
      step = 5;
    } else {
      throw ConfigError("corpus at " + std::to_string(corpus_fps) + " fps cannot serve " +
                        std::to_string(want_fps) + " fps");
    }
  }
  VideoStream vs;
  vs.id = id;
  vs.track.rate_fps = want_fps;
  for (std::size_t i = 0; i < rows.size(); i += static_cast<std::size_t>(step)) {
    FrameRecord rec;
    rec.frame_index = rows[i].frame_index;
    rec.timestamp_ms = rows[i].timestamp_ms;
    rec.valid = rows[i].valid;
    vs.stream.push_back(rec);
    vs.pack_frame.push_back(static_cast<int>(i));
    vs.track.valence.push_back(rows[i].valence);
    vs.track.arousal.push_back(rows[i].arousal);
  }
  return vs;
}

Tensor to_chw(const Tensor& hwc) {
  const int h = hwc.extent(0), w = hwc.extent(1), c = hwc.extent(2);
  Tensor out({c, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        out[(static_cast<std::int64_t>(ch) * h + y) * w + x] =
            hwc[(static_cast<std::int64_t>(y) * w + x) * c + ch];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// run-config

struct RunSettings {
  std::string task = "cascade";  // cascade | i3d | frame2d | classify2d
  std::string arch = "desk";     // desk | paper
  bool batchnorm = false;
  std::string data_dir;
  double train_fraction = 0.8;
  WindowConfig window;
  int gap_steps = 2;
  int frame_stride = 3;
  InflationConfig inflation;
  std::string base_weights;
  TrainConfig train;
  int lstm_units = 64;
  std::string split = "val";  // eval split
};

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad number '" + value + "'");
  }
}

int to_int(const std::string& key, const std::string& value) {
  const double v = to_double(key, value);
  if (v != std::floor(v)) throw ConfigError("config key '" + key + "': expected integer");
  return static_cast<int>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected on/off, got '" + value + "'");
}

std::vector<int> parse_dilation(const std::string& value) {
  std::vector<int> out;
  std::string cur;
  for (char c : value + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(to_int("dilation", cur));
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (out.empty()) throw ConfigError("dilation schedule is empty");
  return out;
}

RunSettings parse_settings(const RunConfigMap& map) {
  RunSettings s;
  bool batch_set = false;
  for (const auto& [key, value] : map) {
    if (key == "task") s.task = value;
    else if (key == "arch") s.arch = value;
    else if (key == "batchnorm") s.batchnorm = to_bool(key, value);
    else if (key == "data_dir") s.data_dir = value;
    else if (key == "train_fraction") s.train_fraction = to_double(key, value);
    else if (key == "fps") s.window.fps = to_int(key, value);
    else if (key == "seq_len") s.window.seq_len = to_int(key, value);
    else if (key == "overlap") s.window.overlap_ratio = to_double(key, value);
    else if (key == "fusion") s.window.fusion = parse_fusion_mode(value);
    else if (key == "gap_steps") s.gap_steps = to_int(key, value);
    else if (key == "frame_stride") s.frame_stride = to_int(key, value);
    else if (key == "inflate_mode") s.inflation.mode = parse_inflate_mode(value);
    else if (key == "init") s.inflation.off_center_init = parse_off_center_init(value);
    else if (key == "mask") s.inflation.masking = to_bool(key, value);
    else if (key == "dilation") s.inflation.dilation_schedule = parse_dilation(value);
    else if (key == "multiplier") s.inflation.target_multiplier = to_double(key, value);
    else if (key == "temporal_extent") s.inflation.temporal_extent = to_int(key, value);
    else if (key == "copied_rescale") s.inflation.copied_rescale = to_bool(key, value);
    else if (key == "base_weights") s.base_weights = value;
    else if (key == "loss") {
      if (value == "mse") s.train.loss = LossKind::Mse;
      else if (value == "wce") s.train.loss = LossKind::WeightedCrossEntropy;
      else throw ConfigError("config key 'loss': expected mse|wce");
    } else if (key == "lr") s.train.learning_rate = to_double(key, value);
    else if (key == "batch_size") { s.train.batch_size = to_int(key, value); batch_set = true; }
    else if (key == "epochs") s.train.epochs = to_int(key, value);
    else if (key == "seed") s.train.seed = static_cast<std::uint64_t>(to_double(key, value));
    else if (key == "lstm_units") s.lstm_units = to_int(key, value);
    else if (key == "split") s.split = value;
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (s.task != "cascade" && s.task != "i3d" && s.task != "frame2d" && s.task != "classify2d") {
    throw ConfigError("task must be cascade|i3d|frame2d|classify2d, got '" + s.task + "'");
  }
  if (s.arch != "desk" && s.arch != "paper") throw ConfigError("arch must be desk|paper");
  if (s.data_dir.empty()) throw ConfigError("config needs data_dir");
  if (s.train_fraction <= 0.0 || s.train_fraction >= 1.0) {
    throw ConfigError("train_fraction must be in (0,1)");
  }
  if (!batch_set && s.task == "i3d") s.train.batch_size = 8;
  const int step = s.window.fps == 10 ? 1 : 1;  // frame_index is in stream units here
  s.window.gap_tolerance = s.gap_steps * step;
  s.train.target_multiplier = s.inflation.target_multiplier;
  return s;
}

RunConfigMap settings_echo(const RunSettings& s) {
  RunConfigMap map;
  map["task"] = s.task;
  map["arch"] = s.arch;
  map["batchnorm"] = s.batchnorm ? "on" : "off";
  map["data_dir"] = s.data_dir;
  map["train_fraction"] = std::to_string(s.train_fraction);
  map["fps"] = std::to_string(s.window.fps);
  map["seq_len"] = std::to_string(s.window.seq_len);
  map["overlap"] = std::to_string(s.window.overlap_ratio);
  map["fusion"] = s.window.fusion == FusionMode::Mean ? "mean" : "extremum";
  map["gap_steps"] = std::to_string(s.gap_steps);
  map["frame_stride"] = std::to_string(s.frame_stride);
  map["inflate_mode"] = s.inflation.mode == InflateMode::Centered ? "centered" : "copied";
  map["init"] = s.inflation.off_center_init == OffCenterInit::Zero ? "zero" : "random";
  map["mask"] = s.inflation.masking ? "on" : "off";
  std::string dil;
  for (std::size_t i = 0; i < s.inflation.dilation_schedule.size(); ++i) {
    if (i) dil += ",";
    dil += std::to_string(s.inflation.dilation_schedule[i]);
  }
  map["dilation"] = dil;
  map["multiplier"] = std::to_string(s.inflation.target_multiplier);
  map["temporal_extent"] = std::to_string(s.inflation.temporal_extent);
  map["copied_rescale"] = s.inflation.copied_rescale ? "on" : "off";
  if (!s.base_weights.empty()) map["base_weights"] = s.base_weights;
  map["loss"] = s.train.loss == LossKind::Mse ? "mse" : "wce";
  map["lr"] = std::to_string(s.train.learning_rate);
  map["batch_size"] = std::to_string(s.train.batch_size);
  map["epochs"] = std::to_string(s.train.epochs);
  map["seed"] = std::to_string(s.train.seed);
  map["lstm_units"] = std::to_string(s.lstm_units);
  return map;
}

// ---------------------------------------------------------------------------
// dataset assembly

constexpr int kNumClasses = 7;

int valence_class(double valence) {
  int bin = static_cast<int>(std::floor((valence + 1.0) / 2.0 * kNumClasses));
  if (bin < 0) bin = 0;
  if (bin >= kNumClasses) bin = kNumClasses - 1;
  return bin;
}

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  // per-clip metadata for eval output, parallel to the chosen split
  std::vector<Clip> train_clips;
  std::vector<Clip> val_clips;
};

Tensor clip_tensor_cascade(const FramePack& pack, const std::vector<int>& pack_frames) {
  const int t = static_cast<int>(pack_frames.size());
  const int h = pack.height, w = pack.width, c = pack.channels;
  Tensor out({t, c, h, w});
  for (int f = 0; f < t; ++f) {
    Tensor chw = to_chw(pack.frame(pack_frames[static_cast<std::size_t>(f)]));
    std::copy_n(chw.data(), static_cast<std::size_t>(chw.size()),
                out.data() + static_cast<std::int64_t>(f) * chw.size());
  }
  return out;
}

Tensor clip_tensor_i3d(const FramePack& pack, const std::vector<int>& pack_frames) {
  const int t = static_cast<int>(pack_frames.size());
  const int h = pack.height, w = pack.width, c = pack.channels;
  Tensor out({c, t, h, w});
  for (int f = 0; f < t; ++f) {
    const Tensor hwc = pack.frame(pack_frames[static_cast<std::size_t>(f)]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch) {
          out[((static_cast<std::int64_t>(ch) * t + f) * h + y) * w + x] =
              hwc[(static_cast<std::int64_t>(y) * w + x) * c + ch];
        }
      }
    }
  }
  return out;
}

Dataset assemble_dataset(const RunSettings& s) {
  const CorpusIndex index = load_corpus_index(s.data_dir);
  const int n_videos = static_cast<int>(index.videos.size());
  int n_train = static_cast<int>(std::floor(s.train_fraction * n_videos));
  if (n_train < 1) n_train = 1;
  if (n_train >= n_videos) n_train = n_videos - 1;
  if (n_videos < 2) throw DataError("corpus needs at least 2 videos to split");

  Dataset ds;
  for (int vi = 0; vi < n_videos; ++vi) {
    const bool is_train = vi < n_train;
    const VideoFiles& files = index.videos[static_cast<std::size_t>(vi)];
    const auto rows = read_annotation_csv(files.annotations);
    const VideoStream vs = make_stream(files.id, rows, index.fps, s.window.fps);

    if (s.task == "frame2d" || s.task == "classify2d") {
      const FramePack pack = read_frame_pack(files.framepack);
      for (std::size_t p = 0; p < vs.stream.size(); p += static_cast<std::size_t>(s.frame_stride)) {
        if (!vs.stream[p].valid) continue;
        Sample sample;
        sample.input = to_chw(pack.frame(vs.pack_frame[p]));
        sample.valence = static_cast<float>(vs.track.valence[p]);
        sample.arousal = static_cast<float>(vs.track.arousal[p]);
        sample.class_index = valence_class(vs.track.valence[p]);
        (is_train ? ds.train : ds.val).push_back(std::move(sample));
        Clip meta;
        meta.source = vs.id;
        meta.frame_indices = {vs.stream[p].frame_index};
        meta.fused_valence = vs.track.valence[p];
        meta.fused_arousal = vs.track.arousal[p];
        (is_train ? ds.train_clips : ds.val_clips).push_back(std::move(meta));
      }
      continue;
    }

    const std::vector<Clip> clips = window_clips(vs.id, vs.stream, vs.track, s.window);
    if (clips.empty()) continue;
    const FramePack pack = read_frame_pack(files.framepack);
    for (const Clip& clip : clips) {
      std::vector<int> pack_frames;
      for (int pos : clip.stream_positions) {
        pack_frames.push_back(vs.pack_frame[static_cast<std::size_t>(pos)]);
      }
      Sample sample;
      sample.input = s.task == "i3d" ? clip_tensor_i3d(pack, pack_frames)
                                     : clip_tensor_cascade(pack, pack_frames);
      sample.valence = static_cast<float>(clip.fused_valence);
      sample.arousal = static_cast<float>(clip.fused_arousal);
      sample.class_index = valence_class(clip.fused_valence);
      (is_train ? ds.train : ds.val).push_back(std::move(sample));
      (is_train ? ds.train_clips : ds.val_clips).push_back(clip);
    }
  }
  if (ds.train.empty() || ds.val.empty()) {
    throw DataError("windowing produced an empty train or val split");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// model assembly

void bind_weights(ModelSpec& model, const std::map<std::string, Tensor>& pack,
                  const std::string& what) {
  int bound = 0;
  for (const auto& [name, tensor] : pack) {
    auto it = model.weights.find(name);
    if (it == model.weights.end()) continue;
    if (!it->second.same_shape(tensor)) {
      throw ConfigError(what + ": entry '" + name + "' has shape " + shape_str(tensor.shape()) +
                        ", model expects " + shape_str(it->second.shape()));
    }
    it->second = tensor;
    ++bound;
  }
  if (bound == 0) throw ConfigError(what + ": no entries match the model");
}

ModelSpec build_task_model(const RunSettings& s, RngStream& rng) {
  const Scale scale = s.arch == "paper" ? Scale::Paper : Scale::Desk;
  const std::vector<int> cascade_fc =
      scale == Scale::Paper ? std::vector<int>{512, 256, 2} : std::vector<int>{32, 16, 2};

  std::map<std::string, Tensor> base;
  bool base_is_3d = false;
  if (!s.base_weights.empty()) {
    base = read_weight_pack(s.base_weights);
    for (const auto& [name, tensor] : base) {
      if (name.size() > 7 && name.rfind(".weight") == name.size() - 7 && tensor.rank() == 5) {
        base_is_3d = true;
      }
    }
  }

  if (s.task == "frame2d" || s.task == "classify2d") {
    ModelSpec model = build_vgg_mini(scale, s.task == "frame2d" ? Head::Regression
                                                                : Head::Classification,
                                     s.batchnorm, rng);
    if (!base.empty()) bind_weights(model, base, s.base_weights);
    return model;
  }

  ModelSpec trunk = build_vgg_trunk(scale, s.batchnorm, rng);
  if (s.task == "cascade") {
    if (!base.empty()) bind_weights(trunk, base, s.base_weights);
    return build_cnn_lstm(trunk, s.lstm_units, cascade_fc, rng);
  }
  // i3d: rank-4 base binds before inflation, rank-5 binds after
  if (!base.empty() && !base_is_3d) bind_weights(trunk, base, s.base_weights);
  ModelSpec model = build_i3d(trunk, s.inflation, rng);
  if (!base.empty() && base_is_3d) bind_weights(model, base, s.base_weights);
  return model;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_data(const std::string& out_dir, const SynthSpec& spec) {
  generate_corpus(spec, out_dir);
  std::cout << "wrote " << spec.num_videos << " videos to " << out_dir << "\n";
  return 0;
}

int cmd_window(const std::string& data_dir, WindowConfig cfg, int gap_steps,
               const std::string& fusion, const std::string& out_path,
               const std::string& counts_path, bool grid) {
  cfg.fusion = parse_fusion_mode(fusion);
  cfg.gap_tolerance = gap_steps;
  const CorpusIndex index = load_corpus_index(data_dir);

  std::vector<Clip> clips;
  std::string counts = "fps,seq_len,overlap,clips\n";
  const std::vector<int> seq_lens = grid ? std::vector<int>{16, 32, 64} : std::vector<int>{cfg.seq_len};
  const std::vector<double> overlaps =
      grid ? std::vector<double>{0.2, 0.5, 0.8} : std::vector<double>{cfg.overlap_ratio};
  for (int seq_len : seq_lens) {
    for (double overlap : overlaps) {
      WindowConfig wc = cfg;
      wc.seq_len = seq_len;
      wc.overlap_ratio = overlap;
      std::vector<Clip> grid_clips;
      for (const auto& files : index.videos) {
        const auto rows = read_annotation_csv(files.annotations);
        const VideoStream vs = make_stream(files.id, rows, index.fps, wc.fps);
        auto video_clips = window_clips(vs.id, vs.stream, vs.track, wc);
        grid_clips.insert(grid_clips.end(), video_clips.begin(), video_clips.end());
      }
      char line[96];
      std::snprintf(line, sizeof(line), "%d,%d,%.1f,%zu\n", wc.fps, seq_len, overlap,
                    grid_clips.size());
      counts += line;
      if (seq_len == cfg.seq_len && overlap == cfg.overlap_ratio) clips = std::move(grid_clips);
    }
  }
  std::cout << counts;
  if (!counts_path.empty()) atomic_write_text(counts_path, counts);
  if (!out_path.empty()) write_clip_manifest(out_path, clips);
  return 0;
}

int cmd_inflate(const std::string& base_path, const std::string& arch, bool batchnorm,
                const InflationConfig& cfg, std::uint64_t seed, const std::string& out_path) {
  RngStream rng(seed);
  ModelSpec trunk = build_vgg_trunk(arch == "paper" ? Scale::Paper : Scale::Desk, batchnorm, rng);
  bind_weights(trunk, read_weight_pack(base_path), base_path);
  RngStream inflate_rng = rng.split(1);
  ModelSpec inflated = inflate_model(trunk, cfg, inflate_rng);
  write_weight_pack(out_path, inflated.weights);
  std::cout << "inflated " << trunk.layers.size() << " trunk layers -> " << out_path << "\n";
  return 0;
}

int cmd_describe(const std::string& task, const std::string& arch, bool batchnorm,
                 const InflationConfig& cfg, int lstm_units, const std::string& weights_path) {
  RngStream rng(0);
  const Scale scale = arch == "paper" ? Scale::Paper : Scale::Desk;
  if (!task.empty()) {
    ModelSpec model;
    if (task == "2d") {
      model = build_vgg_mini(scale, Head::Regression, batchnorm, rng);
    } else if (task == "classify2d") {
      model = build_vgg_mini(scale, Head::Classification, batchnorm, rng);
    } else if (task == "trunk") {
      model = build_vgg_trunk(scale, batchnorm, rng);
    } else if (task == "cascade") {
      ModelSpec trunk = build_vgg_trunk(scale, batchnorm, rng);
      const std::vector<int> fc = scale == Scale::Paper ? std::vector<int>{512, 256, 2}
                                                        : std::vector<int>{32, 16, 2};
      model = build_cnn_lstm(trunk, lstm_units, fc, rng);
    } else if (task == "i3d") {
      ModelSpec trunk = build_vgg_trunk(scale, batchnorm, rng);
      model = build_i3d(trunk, cfg, rng);
    } else {
      throw ConfigError("describe: unknown task '" + task + "'");
    }
    if (!weights_path.empty()) bind_weights(model, read_weight_pack(weights_path), weights_path);
    std::cout << describe_model(model);
  }
  if (!weights_path.empty()) {
    std::cout << "weights: " << weights_path << "\n";
    for (const auto& [name, tensor] : read_weight_pack(weights_path)) {
      std::cout << "  " << name << "\trank-" << tensor.rank() << " " << shape_str(tensor.shape())
                << "\n";
    }
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  RunSettings s = parse_settings(read_run_config(config_path));
  if (s.task == "classify2d" && s.train.loss == LossKind::Mse) {
    s.train.loss = LossKind::WeightedCrossEntropy;
  }
  fs::create_directories(out_dir);
  Dataset ds = assemble_dataset(s);

  RngStream rng(s.train.seed);
  ModelSpec model = build_task_model(s, rng);

  if (s.task == "i3d" && s.inflation.masking) {
    s.train.gradient_mask = build_gradient_mask(model, s.inflation);
  }
  if (s.train.loss == LossKind::WeightedCrossEntropy && s.train.class_weights.empty()) {
    std::vector<std::int64_t> counts(kNumClasses, 1);  // +1 smoothing keeps weights finite
    for (const auto& sample : ds.train) counts[static_cast<std::size_t>(sample.class_index)] += 1;
    s.train.class_weights = class_weights_from_counts(counts);
  }

  const FitResult result = fit(model, ds.train, ds.val, s.train);

  write_run_config(fs::path(out_dir) / "config.txt", settings_echo(s));
  atomic_write_text(fs::path(out_dir) / "log.csv", log_csv(result.log));
  write_weight_pack(fs::path(out_dir) / "best.wpk", model.weights);
  if (result.has_stats) {
    write_stats_csv(fs::path(out_dir) / "train_stats.csv",
                    {result.valence_stats, result.arousal_stats});
  }
  std::cout << "trained " << model.name << ": " << ds.train.size() << " train / " << ds.val.size()
            << " val samples, best epoch " << result.best_epoch << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& weights_path,
             const std::string& out_dir) {
  const RunSettings s = parse_settings(read_run_config(config_path));
  if (s.train.loss != LossKind::Mse) {
    throw ConfigError("eval supports regression (mse) configurations");
  }
  fs::create_directories(out_dir);
  Dataset ds = assemble_dataset(s);
  const auto& samples = s.split == "train" ? ds.train : ds.val;
  const auto& clips = s.split == "train" ? ds.train_clips : ds.val_clips;

  RngStream rng(s.train.seed);
  ModelSpec model = build_task_model(s, rng);
  bind_weights(model, read_weight_pack(weights_path), weights_path);

  const Predictions preds = predict(model, samples, s.train);
  SeriesPair valence, arousal;
  std::vector<PredictionRow> pred_rows, label_rows;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    valence.labels.push_back(samples[i].valence);
    valence.preds.push_back(preds.valence[i]);
    arousal.labels.push_back(samples[i].arousal);
    arousal.preds.push_back(preds.arousal[i]);
    const int frame_index = clips[i].frame_indices.front();
    pred_rows.push_back({frame_index, preds.valence[i], preds.arousal[i]});
    label_rows.push_back({frame_index, samples[i].valence, samples[i].arousal});
  }

  std::vector<std::pair<std::string, MetricReport>> reports;
  reports.emplace_back("valence", evaluate_series(valence));
  reports.emplace_back("arousal", evaluate_series(arousal));
  atomic_write_text(fs::path(out_dir) / "report.csv", report_csv(reports));
  atomic_write_text(fs::path(out_dir) / "report.txt", report_text(reports));
  write_predictions_csv(fs::path(out_dir) / "preds.csv", pred_rows);
  write_labels_csv(fs::path(out_dir) / "labels.csv", label_rows);
  std::cout << report_text(reports);
  return 0;
}

int cmd_postprocess(const std::string& preds_path, const std::string& labels_path,
                    const std::string& stats_path, const std::string& steps_arg,
                    const std::string& out_path, const std::string& delay_path) {
  PostprocessSteps steps;
  std::string cur;
  for (char c : steps_arg + ",") {
    if (c == ',') {
      if (cur == "sn") steps.scale_normalize = true;
      else if (cur == "mf") steps.mean_filter = true;
      else if (cur == "mfswap") { steps.mean_filter = true; steps.mean_filter_swapped = true; }
      else if (cur == "td") steps.time_delay = true;
      else if (!cur.empty()) throw ConfigError("unknown postprocess step '" + cur + "'");
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }

  const auto pred_rows = read_predictions_csv(preds_path);
  const auto label_rows = read_labels_csv(labels_path);
  if (pred_rows.size() != label_rows.size()) {
    throw DataError("prediction and label series differ in length");
  }
  const NamedStats stats = read_stats_csv(stats_path);

  std::vector<double> pv, pa, lv, la;
  for (std::size_t i = 0; i < pred_rows.size(); ++i) {
    pv.push_back(pred_rows[i].valence);
    pa.push_back(pred_rows[i].arousal);
    lv.push_back(label_rows[i].valence);
    la.push_back(label_rows[i].arousal);
  }
  const PostprocessResult rv = postprocess_chain(lv, pv, stats.valence, steps);
  const PostprocessResult ra = postprocess_chain(la, pa, stats.arousal, steps);

  std::vector<PredictionRow> out_rows;
  auto overlap_index = [&](const PostprocessResult& r, std::size_t i) {
    const int t = r.delay_applied ? r.delay.best_t : 0;
    return static_cast<std::size_t>(std::max(0, -t)) + i;
  };
  const std::size_t n_out = std::min(rv.preds.size(), ra.preds.size());
  for (std::size_t i = 0; i < n_out; ++i) {
    out_rows.push_back({label_rows[overlap_index(rv, i)].frame_index, rv.preds[i],
                        i < ra.preds.size() ? ra.preds[i] : 0.0});
  }
  write_predictions_csv(out_path, out_rows);

  if (!delay_path.empty()) {
    std::string delay_csv = "target,best_t,aligned_n,ccc\n";
    char line[96];
    if (rv.delay_applied) {
      std::snprintf(line, sizeof(line), "valence,%d,%d,%.6f\n", rv.delay.best_t,
                    rv.delay.aligned_length, rv.delay.ccc_at_best);
      delay_csv += line;
    }
    if (ra.delay_applied) {
      std::snprintf(line, sizeof(line), "arousal,%d,%d,%.6f\n", ra.delay.best_t,
                    ra.delay.aligned_length, ra.delay.ccc_at_best);
      delay_csv += line;
    }
    atomic_write_text(delay_path, delay_csv);
  }
  std::cout << "postprocessed " << n_out << " rows -> " << out_path << "\n";
  return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale spatiotemporal valence/arousal regression lab"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic annotated corpus");
  SynthSpec synth;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--videos", synth.num_videos);
  gen->add_option("--frames", synth.frames_per_video);
  gen->add_option("--height", synth.height);
  gen->add_option("--width", synth.width);
  gen->add_option("--fps", synth.fps);
  gen->add_option("--seed", synth.seed);
  gen->add_option("--dropout-rate", synth.dropout_rate);

  // window
  auto* win = app.add_subcommand("window", "window a corpus into labeled clips");
  std::string win_data, win_out, win_counts, win_fusion = "mean";
  WindowConfig win_cfg;
  int win_gap_steps = 2;
  bool win_grid = false;
  win->add_option("--data", win_data, "corpus directory")->required();
  win->add_option("--seq-len", win_cfg.seq_len);
  win->add_option("--overlap", win_cfg.overlap_ratio);
  win->add_option("--fps", win_cfg.fps);
  win->add_option("--fusion", win_fusion, "mean|extremum");
  win->add_option("--gap-tolerance", win_gap_steps, "allowed gap in nominal steps");
  win->add_option("--out", win_out, "clip manifest path");
  win->add_option("--counts", win_counts, "count table path");
  win->add_flag("--grid", win_grid, "count every seq-len x overlap combination");

  // inflate
  auto* inf = app.add_subcommand("inflate", "inflate a 2D trunk weight pack to 3D");
  std::string inf_base, inf_out, inf_arch = "desk", inf_mode = "centered", inf_init = "zero";
  std::string inf_dilation = "1,1,1,1", inf_mask = "off";
  bool inf_bn = false, inf_rescale = false;
  double inf_multiplier = 1.0;
  int inf_extent = 3;
  std::uint64_t inf_seed = 0;
  inf->add_option("--base", inf_base, "2D trunk weight pack")->required();
  inf->add_option("--out", inf_out, "inflated weight pack")->required();
  inf->add_option("--arch", inf_arch, "desk|paper");
  inf->add_flag("--batchnorm", inf_bn);
  inf->add_option("--inflate-mode", inf_mode, "centered|copied");
  inf->add_option("--init", inf_init, "zero|random");
  inf->add_option("--mask", inf_mask, "on|off (recorded for training)");
  inf->add_option("--dilation", inf_dilation, "per-block schedule, e.g. 1,2,4,8");
  inf->add_option("--multiplier", inf_multiplier);
  inf->add_option("--temporal-extent", inf_extent);
  inf->add_flag("--copied-rescale", inf_rescale);
  inf->add_option("--seed", inf_seed);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a run-config");
  std::string train_config, train_out;
  train_cmd->add_option("--config", train_config, "run-config file")->required();
  train_cmd->add_option("--out-dir", train_out, "output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained model");
  std::string eval_config, eval_weights, eval_out;
  eval_cmd->add_option("--config", eval_config, "run-config file")->required();
  eval_cmd->add_option("--weights", eval_weights, "weight pack")->required();
  eval_cmd->add_option("--out-dir", eval_out, "output directory")->required();

  // postprocess
  auto* post = app.add_subcommand("postprocess", "repair a prediction series");
  std::string post_preds, post_labels, post_stats, post_steps = "sn,mf,td", post_out, post_delay;
  post->add_option("--preds", post_preds)->required();
  post->add_option("--labels", post_labels)->required();
  post->add_option("--stats", post_stats)->required();
  post->add_option("--steps", post_steps, "subset of sn,mf,mfswap,td");
  post->add_option("--out", post_out)->required();
  post->add_option("--delay-out", post_delay);

  // describe
  auto* desc = app.add_subcommand("describe", "print a model manifest");
  std::string desc_task, desc_arch = "desk", desc_weights;
  std::string desc_mode = "centered", desc_init = "zero", desc_dilation = "1,1,1,1";
  bool desc_bn = false;
  int desc_extent = 3, desc_lstm = 64;
  desc->add_option("--task", desc_task, "2d|classify2d|trunk|cascade|i3d");
  desc->add_option("--arch", desc_arch, "desk|paper");
  desc->add_flag("--batchnorm", desc_bn);
  desc->add_option("--inflate-mode", desc_mode);
  desc->add_option("--init", desc_init);
  desc->add_option("--dilation", desc_dilation);
  desc->add_option("--temporal-extent", desc_extent);
  desc->add_option("--lstm-units", desc_lstm);
  desc->add_option("--weights", desc_weights, "weight pack to list");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, synth);
    if (win->parsed()) {
      return cmd_window(win_data, win_cfg, win_gap_steps, win_fusion, win_out, win_counts,
                        win_grid);
    }
    if (inf->parsed()) {
      InflationConfig cfg;
      cfg.mode = parse_inflate_mode(inf_mode);
      cfg.off_center_init = parse_off_center_init(inf_init);
      cfg.masking = inf_mask == "on";
      cfg.dilation_schedule = parse_dilation(inf_dilation);
      cfg.target_multiplier = inf_multiplier;
      cfg.temporal_extent = inf_extent;
      cfg.copied_rescale = inf_rescale;
      return cmd_inflate(inf_base, inf_arch, inf_bn, cfg, inf_seed, inf_out);
    }
    if (train_cmd->parsed()) return cmd_train(train_config, train_out);
    if (eval_cmd->parsed()) return cmd_eval(eval_config, eval_weights, eval_out);
    if (post->parsed()) {
      return cmd_postprocess(post_preds, post_labels, post_stats, post_steps, post_out,
                             post_delay);
    }
    if (desc->parsed()) {
      InflationConfig cfg;
      cfg.mode = parse_inflate_mode(desc_mode);
      cfg.off_center_init = parse_off_center_init(desc_init);
      cfg.dilation_schedule = parse_dilation(desc_dilation);
      cfg.temporal_extent = desc_extent;
      return cmd_describe(desc_task, desc_arch, desc_bn, cfg, desc_lstm, desc_weights);
    }
    std::cerr << app.help();
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cli_dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args);
}

}  // namespace inflatenn
