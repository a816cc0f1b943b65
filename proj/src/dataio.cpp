// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#include "beyond/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace beyond::io {

namespace fs = std::filesystem;

namespace {

constexpr char kDatasetMagic[4] = {'B', 'Y', 'N', 'D'};
constexpr std::uint16_t kDatasetVersion = 1;
constexpr const char* kCheckpointMagic = "BYNDCKPT v1";

void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(reinterpret_cast<const char*>(p), n);
}

template <class T>
void put_le(std::string& out, T v) {
  // Host is little-endian on every supported target; memcpy keeps it explicit.
  put_bytes(out, &v, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, const char* what) : buf_(buf), what_(what) {}

  void read(void* dst, std::size_t n) {
    if (at_ + n > buf_.size())
      throw Error("data-io", "truncated", std::string(what_) + ": unexpected end of file");
    std::memcpy(dst, buf_.data() + at_, n);
    at_ += n;
  }

  template <class T>
  T le() {
    T v;
    read(&v, sizeof(T));
    return v;
  }

  std::size_t at() const { return at_; }
  std::size_t remaining() const { return buf_.size() - at_; }

 private:
  const std::string& buf_;
  const char* what_;
  std::size_t at_ = 0;
};

std::string slurp(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("data-io", "io", std::string(what) + ": cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("data-io", "io", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("data-io", "io", "short write to " + path.string());
}

// write-then-rename so readers never observe partial files
void spit_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  spit(tmp, bytes);
  fs::rename(tmp, path);
}

std::uint64_t fnv1a(const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// ---- dataset container ----

models::Dataset DatasetContainer::to_dataset() const {
  models::Dataset d;
  d.images.reserve(count());
  d.labels.reserve(count());
  for (std::uint32_t i = 0; i < count(); ++i) {
    d.images.push_back(image(i));
    d.labels.push_back(static_cast<int>(labels[i]));
  }
  return d;
}

Tensor DatasetContainer::image(std::uint32_t index) const {
  const Index per = static_cast<Index>(channels) * height * width;
  Tensor t = ndt::zeros({static_cast<Index>(channels), static_cast<Index>(height),
                         static_cast<Index>(width)});
  const std::uint8_t* src = pixels.data() + static_cast<std::size_t>(index) * static_cast<std::size_t>(per);
  for (Index i = 0; i < per; ++i) t.data[i] = static_cast<double>(src[i]) / 255.0;
  return t;
}

DatasetContainer DatasetContainer::from_images(const std::vector<Tensor>& images,
                                               const std::vector<int>& labels, int num_classes,
                                               std::string provenance) {
  if (images.empty() || images.size() != labels.size())
    throw Error("data-io", "shape", "from_images: empty batch or image/label mismatch");
  const ndt::Shape& s = images[0].shape;
  DatasetContainer d;
  d.height = static_cast<std::uint16_t>(s[1]);
  d.width = static_cast<std::uint16_t>(s[2]);
  d.channels = static_cast<std::uint8_t>(s[0]);
  d.num_classes = static_cast<std::uint8_t>(num_classes);
  d.provenance = std::move(provenance);
  d.pixels.reserve(images.size() * static_cast<std::size_t>(images[0].size()));
  for (const Tensor& im : images) {
    if (im.shape != s) throw Error("data-io", "shape", "from_images: inconsistent shapes");
    for (Index i = 0; i < im.size(); ++i) {
      const double v = std::min(1.0, std::max(0.0, im.data[i]));
      d.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes)
      throw Error("data-io", "label", "from_images: label outside [0,num_classes)");
    d.labels.push_back(static_cast<std::uint8_t>(l));
  }
  return d;
}

void save_dataset(const std::string& path, const DatasetContainer& data) {
  const std::size_t per =
      static_cast<std::size_t>(data.channels) * data.height * data.width;
  if (data.pixels.size() != per * data.count())
    throw Error("data-io", "shape", "save_dataset: payload does not match header");

  std::string out;
  put_bytes(out, kDatasetMagic, 4);
  put_le<std::uint16_t>(out, data.version);
  put_le<std::uint32_t>(out, data.count());
  put_le<std::uint16_t>(out, data.height);
  put_le<std::uint16_t>(out, data.width);
  put_le<std::uint8_t>(out, data.channels);
  put_le<std::uint8_t>(out, data.num_classes);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(data.provenance.size()));
  put_bytes(out, data.provenance.data(), data.provenance.size());
  put_bytes(out, data.pixels.data(), data.pixels.size());
  put_bytes(out, data.labels.data(), data.labels.size());
  spit_atomic(path, out);
}

DatasetContainer load_dataset(const std::string& path) {
  std::string buf = slurp(path, "load_dataset");
  Reader r(buf, "load_dataset");

  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw Error("data-io", "bad-magic", "load_dataset: not a BYND container: " + path);

  DatasetContainer d;
  d.version = r.le<std::uint16_t>();
  if (d.version != kDatasetVersion)
    throw Error("data-io", "version-mismatch",
                "load_dataset: version " + std::to_string(d.version) + " unsupported");
  const std::uint32_t count = r.le<std::uint32_t>();
  d.height = r.le<std::uint16_t>();
  d.width = r.le<std::uint16_t>();
  d.channels = r.le<std::uint8_t>();
  d.num_classes = r.le<std::uint8_t>();
  const std::uint16_t plen = r.le<std::uint16_t>();
  d.provenance.resize(plen);
  if (plen) r.read(d.provenance.data(), plen);

  const std::size_t per = static_cast<std::size_t>(d.channels) * d.height * d.width;
  d.pixels.resize(per * count);
  if (!d.pixels.empty()) r.read(d.pixels.data(), d.pixels.size());
  d.labels.resize(count);
  if (count) r.read(d.labels.data(), count);
  if (r.remaining() != 0)
    throw Error("data-io", "truncated", "load_dataset: trailing bytes after payload");
  for (std::uint8_t l : d.labels)
    if (l >= d.num_classes)
      throw Error("data-io", "label", "load_dataset: label exceeds num_classes");
  return d;
}

// ---- checkpoints ----

namespace {

nlohmann::json trunk_topology(const models::Trunk& t) {
  return {{"in_channels", t.in_channels},
          {"height", t.height},
          {"width", t.width},
          {"feature_dim", t.feature_dim}};
}

void append_params_f32(std::string& blob,
                       const std::vector<std::pair<std::string, Tensor*>>& params) {
  for (const auto& [name, tensor] : params) {
    (void)name;
    for (Index i = 0; i < tensor->size(); ++i) {
      const float f = static_cast<float>(tensor->data[i]);
      put_le<float>(blob, f);
    }
  }
}

std::size_t read_params_f32(Reader& r, const std::vector<std::pair<std::string, Tensor*>>& params) {
  std::size_t n = 0;
  for (const auto& [name, tensor] : params) {
    (void)name;
    for (Index i = 0; i < tensor->size(); ++i) {
      tensor->data[i] = static_cast<double>(r.le<float>());
      ++n;
    }
  }
  return n;
}

std::size_t param_count(const std::vector<std::pair<std::string, Tensor*>>& params) {
  std::size_t n = 0;
  for (const auto& [name, tensor] : params) {
    (void)name;
    n += static_cast<std::size_t>(tensor->size());
  }
  return n;
}

}  // namespace

void save_checkpoint(const std::string& path, models::ModelBundle& bundle, BundleParts parts,
                     const nlohmann::json& extra_meta) {
  nlohmann::json meta;
  meta["format"] = "f32-le";
  meta["components"] = nlohmann::json::array();
  std::string blob;

  if (parts.classifier) {
    meta["components"].push_back("classifier");
    meta["classifier"] = trunk_topology(bundle.classifier.trunk);
    meta["classifier"]["num_classes"] = bundle.classifier.num_classes;
    append_params_f32(blob, models::named_params(bundle.classifier));
  }
  if (parts.encoder) {
    meta["components"].push_back("encoder");
    meta["encoder"] = trunk_topology(bundle.encoder.trunk);
    meta["encoder"]["embed_dim"] = bundle.encoder.embed_dim;
    meta["encoder"]["pred_hidden"] = bundle.encoder.predictor.l1.out;
    append_params_f32(blob, models::named_params(bundle.encoder));
  }
  if (parts.head) {
    meta["components"].push_back("head");
    meta["head"] = {{"feature_dim", bundle.head.fc.in}, {"num_classes", bundle.head.num_classes}};
    append_params_f32(blob, models::named_params(bundle.head));
  }
  if (!extra_meta.empty()) meta["meta"] = extra_meta;

  std::string out;
  out += kCheckpointMagic;
  out += '\n';
  out += meta.dump();
  out += '\n';
  out += "BLOB " + std::to_string(blob.size()) + "\n";
  const std::uint64_t checksum = fnv1a(blob.data(), blob.size());
  out += blob;
  put_le<std::uint64_t>(out, checksum);
  spit_atomic(path, out);
}

BundleParts load_checkpoint(const std::string& path, models::ModelBundle& bundle) {
  std::string buf = slurp(path, "load_checkpoint");

  std::size_t line1 = buf.find('\n');
  if (line1 == std::string::npos || buf.substr(0, line1) != kCheckpointMagic)
    throw Error("data-io", "bad-magic", "load_checkpoint: not a checkpoint file: " + path);
  std::size_t line2 = buf.find('\n', line1 + 1);
  if (line2 == std::string::npos)
    throw Error("data-io", "truncated", "load_checkpoint: missing header document");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(buf.substr(line1 + 1, line2 - line1 - 1));
  } catch (const nlohmann::json::exception& e) {
    throw Error("data-io", "bad-header", std::string("load_checkpoint: ") + e.what());
  }
  std::size_t line3 = buf.find('\n', line2 + 1);
  if (line3 == std::string::npos)
    throw Error("data-io", "truncated", "load_checkpoint: missing blob marker");
  const std::string marker = buf.substr(line2 + 1, line3 - line2 - 1);
  if (marker.rfind("BLOB ", 0) != 0)
    throw Error("data-io", "bad-header", "load_checkpoint: expected BLOB marker");
  const std::size_t blob_len = static_cast<std::size_t>(std::stoull(marker.substr(5)));

  const std::size_t blob_at = line3 + 1;
  if (blob_at + blob_len + 8 != buf.size())
    throw Error("data-io", "truncated", "load_checkpoint: blob length does not match file size");
  const std::uint64_t want = fnv1a(buf.data() + blob_at, blob_len);
  std::uint64_t got;
  std::memcpy(&got, buf.data() + blob_at + blob_len, 8);
  if (want != got)
    throw Error("data-io", "checksum", "load_checkpoint: blob checksum mismatch");

  std::string blob = buf.substr(blob_at, blob_len);
  Reader r(blob, "load_checkpoint");

  BundleParts parts;
  std::size_t expect = 0;
  for (const auto& comp : meta.value("components", nlohmann::json::array())) {
    const std::string name = comp.get<std::string>();
    if (name == "classifier") {
      const auto& c = meta.at("classifier");
      bundle.classifier = models::make_classifier(c.at("in_channels"), c.at("height"),
                                                  c.at("width"), c.at("num_classes"), 0);
      expect += param_count(models::named_params(bundle.classifier));
      read_params_f32(r, models::named_params(bundle.classifier));
      parts.classifier = true;
    } else if (name == "encoder") {
      const auto& c = meta.at("encoder");
      bundle.encoder =
          models::make_ssl_encoder(c.at("in_channels"), c.at("height"), c.at("width"), 0,
                                   c.at("feature_dim"), c.at("embed_dim"), c.at("pred_hidden"));
      expect += param_count(models::named_params(bundle.encoder));
      read_params_f32(r, models::named_params(bundle.encoder));
      parts.encoder = true;
    } else if (name == "head") {
      const auto& c = meta.at("head");
      bundle.head = models::make_class_head(c.at("feature_dim"), c.at("num_classes"), 0);
      expect += param_count(models::named_params(bundle.head));
      read_params_f32(r, models::named_params(bundle.head));
      parts.head = true;
    } else {
      throw Error("data-io", "bad-header", "load_checkpoint: unknown component " + name);
    }
  }
  if (expect * 4 != blob_len)
    throw Error("data-io", "topology-mismatch",
                "load_checkpoint: header topology implies " + std::to_string(expect * 4) +
                    " blob bytes, file has " + std::to_string(blob_len));
  return parts;
}

// ---- results ----

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

namespace {

std::string table_csv(const ResultsTable& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (i) out += ",";
    out += csv_escape(t.columns[i]);
  }
  out += "\n";
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size())
      throw Error("data-io", "shape", "table '" + t.name + "': ragged row");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      out += csv_escape(row[i]);
    }
    out += "\n";
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string curve_csv(const CurveData& c) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : c.points)
    out += fmt_double(p[0]) + "," + fmt_double(p[1]) + "," + fmt_double(p[2]) + "\n";
  return out;
}

// Minimal static SVG; no timestamps or generator metadata so reruns are
// byte-identical.
std::string curve_svg(const CurveData& c) {
  const double w = 480, h = 360, m = 40;
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" "
         "viewBox=\"0 0 480 360\">\n";
  out += "<rect width=\"480\" height=\"360\" fill=\"white\"/>\n";
  auto X = [&](double fpr) { return m + fpr * (w - 2 * m); };
  auto Y = [&](double tpr) { return h - m - tpr * (h - 2 * m); };
  out += "<line x1=\"" + fmt_double(X(0)) + "\" y1=\"" + fmt_double(Y(0)) + "\" x2=\"" +
         fmt_double(X(1)) + "\" y2=\"" + fmt_double(Y(0)) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fmt_double(X(0)) + "\" y1=\"" + fmt_double(Y(0)) + "\" x2=\"" +
         fmt_double(X(0)) + "\" y2=\"" + fmt_double(Y(1)) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + fmt_double(X(0)) + "\" y1=\"" + fmt_double(Y(0)) + "\" x2=\"" +
         fmt_double(X(1)) + "\" y2=\"" + fmt_double(Y(1)) + "\" stroke=\"#bbbbbb\" "
         "stroke-dasharray=\"4 4\"/>\n";
  out += "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" points=\"";
  for (const auto& p : c.points) out += fmt_double(X(p[0])) + "," + fmt_double(Y(p[1])) + " ";
  out += "\"/>\n";
  out += "<text x=\"" + fmt_double(w / 2) + "\" y=\"" + fmt_double(h - 8) +
         "\" font-size=\"12\" text-anchor=\"middle\">false positive rate</text>\n";
  out += "<text x=\"12\" y=\"" + fmt_double(h / 2) +
         "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 12 " +
         fmt_double(h / 2) + ")\">true positive rate</text>\n";
  out += "<text x=\"" + fmt_double(w / 2) + "\" y=\"20\" font-size=\"13\" "
         "text-anchor=\"middle\">" + c.name + "</text>\n";
  out += "</svg>\n";
  return out;
}

}  // namespace

void write_results(const std::string& out_root, const std::string& run_id, bool force,
                   const ResultsBundle& results,
                   const std::function<void(const std::string&)>& fault_hook) {
  const fs::path root(out_root);
  const fs::path target = root / run_id;
  const fs::path staging = root / (".staging-" + run_id);
  const fs::path trash = root / (".trash-" + run_id);

  if (fs::exists(target) && !force)
    throw Error("data-io", "run-exists",
                "write_results: run '" + run_id + "' already exists (use force)");

  std::error_code ec;
  fs::remove_all(staging, ec);
  fs::remove_all(trash, ec);
  fs::create_directories(staging);

  struct StagingGuard {
    fs::path dir;
    bool armed = true;
    ~StagingGuard() {
      if (armed) {
        std::error_code e;
        fs::remove_all(dir, e);
      }
    }
  } guard{staging};

  auto emit = [&](const std::string& name, const std::string& bytes) {
    if (fault_hook) fault_hook("write:" + name);
    spit(staging / name, bytes);
  };

  for (const ResultsTable& t : results.tables) emit(t.name + ".csv", table_csv(t));
  for (const CurveData& c : results.curves) {
    emit(c.name + ".csv", curve_csv(c));
    emit(c.name + ".svg", curve_svg(c));
  }
  for (const auto& [name, bytes] : results.raw_files) emit(name, bytes);
  emit("summary.json", results.summary.dump(2) + "\n");

  if (fault_hook) fault_hook("commit");
  if (fs::exists(target)) {
    fs::rename(target, trash);
    fs::rename(staging, target);
    fs::remove_all(trash);
  } else {
    fs::rename(staging, target);
  }
  guard.armed = false;
}

}  // namespace beyond::io
