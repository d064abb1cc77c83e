#include "inflatenn/storage.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace inflatenn {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  void expect_magic(const char* magic) {
    if (data_.size() < 4 || std::memcmp(data_.data(), magic, 4) != 0) {
      throw FormatError(what_ + ": bad magic at offset 0 (expected \"" + magic + "\")");
    }
    pos_ = 4;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<std::uint8_t>(data_[pos_ + static_cast<std::size_t>(i)]);
    }
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void read_f32_block(float* dst, std::size_t count) {
    need(count * 4);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) {
        bits = (bits << 8) | static_cast<std::uint8_t>(data_[pos_ + i * 4 + static_cast<std::size_t>(b)]);
      }
      std::memcpy(dst + i, &bits, 4);
    }
    pos_ += count * 4;
  }

  void expect_end() {
    if (pos_ != data_.size()) {
      throw LengthError(what_ + ": " + std::to_string(data_.size() - pos_) +
                        " trailing bytes after payload");
    }
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw LengthError(what_ + ": truncated payload at offset " + std::to_string(pos_) +
                        " (need " + std::to_string(n) + " more bytes)");
    }
  }

  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void atomic_write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void check_finite(const float* data, std::size_t count, const std::string& what, bool allow_nan) {
  if (allow_nan) return;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(data[i])) {
      throw DataError(what + ": non-finite value at element " + std::to_string(i) +
                      " (pass allow_nan to accept)");
    }
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void expect_header(const std::vector<std::string>& lines, const std::string& header,
                   const std::filesystem::path& path) {
  if (lines.empty() || lines[0] != header) {
    throw FormatError(path.string() + ": expected header '" + header + "'");
  }
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ": bad numeric field '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ": bad integer field '" + s + "'");
  }
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

Tensor FramePack::frame(int index) const {
  Tensor out({height, width, channels});
  std::copy_n(data.data() + static_cast<std::int64_t>(index) * frame_size(),
              static_cast<std::size_t>(frame_size()), out.data());
  return out;
}

void write_frame_pack(const std::filesystem::path& path, const FramePack& pack) {
  const std::size_t frames = pack.valid.size();
  if (pack.data.size() != frames * static_cast<std::size_t>(pack.frame_size())) {
    throw DimensionError("frame pack payload does not match frame_count*h*w*c");
  }
  std::string out;
  out.reserve(20 + (frames + 7) / 8 + pack.data.size() * 4);
  out += "FPK1";
  put_u32(out, static_cast<std::uint32_t>(frames));
  put_u32(out, static_cast<std::uint32_t>(pack.height));
  put_u32(out, static_cast<std::uint32_t>(pack.width));
  put_u32(out, static_cast<std::uint32_t>(pack.channels));
  std::string bitmap((frames + 7) / 8, '\0');
  for (std::size_t i = 0; i < frames; ++i) {
    if (pack.valid[i]) bitmap[i / 8] = static_cast<char>(bitmap[i / 8] | (1 << (i % 8)));
  }
  out += bitmap;
  for (float v : pack.data) put_f32(out, v);
  atomic_write_bytes(path, out);
}

FramePack read_frame_pack(const std::filesystem::path& path, bool allow_nan) {
  Reader r(read_file(path), path.string());
  r.expect_magic("FPK1");
  FramePack pack;
  const std::uint32_t frames = r.u32();
  pack.height = static_cast<int>(r.u32());
  pack.width = static_cast<int>(r.u32());
  pack.channels = static_cast<int>(r.u32());
  if (pack.height <= 0 || pack.width <= 0 || pack.channels <= 0) {
    throw FormatError(path.string() + ": non-positive frame dimensions");
  }
  const std::string bitmap = r.bytes((frames + 7) / 8);
  pack.valid.resize(frames);
  for (std::uint32_t i = 0; i < frames; ++i) {
    pack.valid[i] = (static_cast<std::uint8_t>(bitmap[i / 8]) >> (i % 8)) & 1;
  }
  pack.data.resize(static_cast<std::size_t>(frames) * static_cast<std::size_t>(pack.frame_size()));
  r.read_f32_block(pack.data.data(), pack.data.size());
  r.expect_end();
  check_finite(pack.data.data(), pack.data.size(), path.string(), allow_nan);
  return pack;
}

void write_weight_pack(const std::filesystem::path& path,
                       const std::map<std::string, Tensor>& entries) {
  std::string out;
  out += "WPK1";
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (int e : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (std::int64_t i = 0; i < tensor.size(); ++i) put_f32(out, tensor[i]);
  }
  atomic_write_bytes(path, out);
}

std::map<std::string, Tensor> read_weight_pack(const std::filesystem::path& path, bool allow_nan) {
  Reader r(read_file(path), path.string());
  r.expect_magic("WPK1");
  const std::uint32_t count = r.u32();
  std::map<std::string, Tensor> entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError(path.string() + ": implausible rank " + std::to_string(rank));
    std::vector<int> shape;
    std::int64_t size = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t extent = r.u32();
      if (extent == 0) throw FormatError(path.string() + ": zero extent in entry '" + name + "'");
      shape.push_back(static_cast<int>(extent));
      size *= extent;
    }
    Tensor tensor(shape.empty() ? std::vector<int>{1} : shape);
    r.read_f32_block(tensor.data(), static_cast<std::size_t>(size));
    check_finite(tensor.data(), static_cast<std::size_t>(size), path.string() + " entry '" + name + "'",
                 allow_nan);
    if (!entries.emplace(name, std::move(tensor)).second) {
      throw FormatError(path.string() + ": duplicate entry name '" + name + "'");
    }
  }
  r.expect_end();
  return entries;
}

void write_annotation_csv(const std::filesystem::path& path,
                          const std::vector<AnnotationRow>& rows) {
  std::string out = "frame_index,timestamp_ms,valence,arousal,valid\n";
  for (const auto& row : rows) {
    out += std::to_string(row.frame_index) + "," + fmt(row.timestamp_ms) + "," +
           fmt(row.valence) + "," + fmt(row.arousal) + "," + (row.valid ? "1" : "0") + "\n";
  }
  atomic_write_text(path, out);
}

std::vector<AnnotationRow> read_annotation_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  expect_header(lines, "frame_index,timestamp_ms,valence,arousal,valid", path);
  std::vector<AnnotationRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_csv_line(lines[i]);
    if (fields.size() != 5) {
      throw FormatError(path.string() + ": line " + std::to_string(i + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected 5");
    }
    AnnotationRow row;
    row.frame_index = parse_int(fields[0], path);
    row.timestamp_ms = parse_double(fields[1], path);
    row.valence = parse_double(fields[2], path);
    row.arousal = parse_double(fields[3], path);
    row.valid = parse_int(fields[4], path) != 0;
    if (row.valence < -1.0 || row.valence > 1.0 || row.arousal < -1.0 || row.arousal > 1.0) {
      throw DataError(path.string() + ": annotation outside [-1,1] at line " +
                      std::to_string(i + 1));
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

void write_index_value_csv(const std::filesystem::path& path, const std::string& header,
                           const std::vector<PredictionRow>& rows) {
  std::string out = header + "\n";
  for (const auto& row : rows) {
    out += std::to_string(row.frame_index) + "," + fmt(row.valence) + "," + fmt(row.arousal) + "\n";
  }
  atomic_write_text(path, out);
}

std::vector<PredictionRow> read_index_value_csv(const std::filesystem::path& path,
                                                const std::string& header) {
  const auto lines = read_lines(path);
  expect_header(lines, header, path);
  std::vector<PredictionRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_csv_line(lines[i]);
    if (fields.size() != 3) {
      throw FormatError(path.string() + ": line " + std::to_string(i + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected 3");
    }
    rows.push_back({parse_int(fields[0], path), parse_double(fields[1], path),
                    parse_double(fields[2], path)});
  }
  return rows;
}

}  // namespace

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<PredictionRow>& rows) {
  write_index_value_csv(path, "frame_index,valence_pred,arousal_pred", rows);
}

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
  return read_index_value_csv(path, "frame_index,valence_pred,arousal_pred");
}

void write_labels_csv(const std::filesystem::path& path, const std::vector<PredictionRow>& rows) {
  write_index_value_csv(path, "frame_index,valence,arousal", rows);
}

std::vector<PredictionRow> read_labels_csv(const std::filesystem::path& path) {
  return read_index_value_csv(path, "frame_index,valence,arousal");
}

void write_stats_csv(const std::filesystem::path& path, const NamedStats& stats) {
  std::string out = "target,label_mean,label_std,pred_mean\n";
  out += "valence," + fmt(stats.valence.label_mean) + "," + fmt(stats.valence.label_std) + "," +
         fmt(stats.valence.pred_mean) + "\n";
  out += "arousal," + fmt(stats.arousal.label_mean) + "," + fmt(stats.arousal.label_std) + "," +
         fmt(stats.arousal.pred_mean) + "\n";
  atomic_write_text(path, out);
}

NamedStats read_stats_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  expect_header(lines, "target,label_mean,label_std,pred_mean", path);
  NamedStats stats;
  bool have_v = false, have_a = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_csv_line(lines[i]);
    if (fields.size() != 4) {
      throw FormatError(path.string() + ": line " + std::to_string(i + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected 4");
    }
    const TargetStats ts{parse_double(fields[1], path), parse_double(fields[2], path),
                         parse_double(fields[3], path)};
    if (fields[0] == "valence") {
      stats.valence = ts;
      have_v = true;
    } else if (fields[0] == "arousal") {
      stats.arousal = ts;
      have_a = true;
    } else {
      throw FormatError(path.string() + ": unknown target '" + fields[0] + "'");
    }
  }
  if (!have_v || !have_a) {
    throw DataError(path.string() + ": stats file must cover valence and arousal");
  }
  return stats;
}

void write_clip_manifest(const std::filesystem::path& path, const std::vector<Clip>& clips) {
  std::string out = "source,fused_valence,fused_arousal,indices\n";
  for (const auto& clip : clips) {
    out += clip.source + "," + fmt(clip.fused_valence) + "," + fmt(clip.fused_arousal) + ",";
    for (std::size_t i = 0; i < clip.frame_indices.size(); ++i) {
      if (i) out += ";";
      out += std::to_string(clip.frame_indices[i]);
    }
    out += "\n";
  }
  atomic_write_text(path, out);
}

std::vector<Clip> read_clip_manifest(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  expect_header(lines, "source,fused_valence,fused_arousal,indices", path);
  std::vector<Clip> clips;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_csv_line(lines[i]);
    if (fields.size() != 4) {
      throw FormatError(path.string() + ": line " + std::to_string(i + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected 4");
    }
    Clip clip;
    clip.source = fields[0];
    clip.fused_valence = parse_double(fields[1], path);
    clip.fused_arousal = parse_double(fields[2], path);
    std::string cur;
    for (char c : fields[3] + ";") {
      if (c == ';') {
        if (!cur.empty()) clip.frame_indices.push_back(parse_int(cur, path));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

void write_run_config(const std::filesystem::path& path, const RunConfigMap& config) {
  std::string out;
  for (const auto& [key, value] : config) out += key + " = " + value + "\n";
  atomic_write_text(path, out);
}

RunConfigMap read_run_config(const std::filesystem::path& path) {
  RunConfigMap config;
  for (const auto& raw : read_lines(path)) {
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char c : line) {
        if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
      }
      if (blank) continue;
      throw ConfigError(path.string() + ": malformed line '" + raw + "'");
    }
    auto trim = [](std::string s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path.string() + ": empty key in '" + raw + "'");
    config[key] = value;
  }
  return config;
}

void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  atomic_write_bytes(path, text);
}

}  // namespace inflatenn
