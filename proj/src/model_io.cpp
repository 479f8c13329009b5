#include "retf/model_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <set>

namespace retf {

namespace {

constexpr std::uint8_t kMagic[4] = {'R', 'E', 'T', 'F'};

const std::set<std::string> kRequiredKeys = {"vocab_size", "max_seq_len", "d_model",
                                             "n_heads",    "d_ff",        "n_layers"};
const std::set<std::string> kOptionalKeys = {"use_bias", "d_head", "layer_heads"};

std::size_t unsigned_field(const nlohmann::json& doc, const std::string& key) {
  const nlohmann::json& v = doc.at(key);
  if (!v.is_number_unsigned()) {
    throw FormatError("config key '" + key + "' must be a non-negative integer, got " + v.dump());
  }
  return v.get<std::size_t>();
}

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("model file truncated while reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

void write_header(Writer& w, std::uint32_t version, const ModelConfig& cfg) {
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(version);
  if (version == kQuantizedModelVersion) w.u8(kInt8ElementTag);
  const std::string json = config_to_json(cfg).dump();
  w.u32(static_cast<std::uint32_t>(json.size()));
  w.bytes(json.data(), json.size());
}

struct Header {
  std::uint32_t version = 0;
  ModelConfig config;
};

Header read_header(Reader& r) {
  for (std::uint8_t expected : kMagic) {
    if (r.u8("magic") != expected) throw FormatError("not a RETF model file (bad magic)");
  }
  Header h;
  h.version = r.u32("version");
  if (h.version != kFloatModelVersion && h.version != kQuantizedModelVersion) {
    throw FormatError("unsupported RETF format version " + std::to_string(h.version));
  }
  if (h.version == kQuantizedModelVersion) {
    const std::uint8_t tag = r.u8("element type");
    if (tag != kInt8ElementTag) {
      throw FormatError("unsupported element type tag " + std::to_string(tag));
    }
  }
  const std::uint32_t len = r.u32("config length");
  const std::string text = r.str(len, "config JSON");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("embedded config is not valid JSON: ") + e.what());
  }
  h.config = config_from_json(doc);
  return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json doc = {
      {"vocab_size", cfg.vocab_size}, {"max_seq_len", cfg.max_seq_len},
      {"d_model", cfg.d_model},       {"n_heads", cfg.n_heads},
      {"d_ff", cfg.d_ff},             {"n_layers", cfg.n_layers},
      {"use_bias", cfg.use_bias},
  };
  if (cfg.d_head != 0) doc["d_head"] = cfg.d_head;
  if (!cfg.layer_heads.empty()) doc["layer_heads"] = cfg.layer_heads;
  return doc;
}

ModelConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw FormatError("config document must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!kRequiredKeys.contains(key) && !kOptionalKeys.contains(key)) {
      throw FormatError("unknown config key '" + key + "'");
    }
  }
  for (const std::string& key : kRequiredKeys) {
    if (!doc.contains(key)) throw FormatError("missing config key '" + key + "'");
  }
  ModelConfig cfg;
  cfg.vocab_size = unsigned_field(doc, "vocab_size");
  cfg.max_seq_len = unsigned_field(doc, "max_seq_len");
  cfg.d_model = unsigned_field(doc, "d_model");
  cfg.n_heads = unsigned_field(doc, "n_heads");
  cfg.d_ff = unsigned_field(doc, "d_ff");
  cfg.n_layers = unsigned_field(doc, "n_layers");
  if (doc.contains("use_bias")) {
    if (!doc["use_bias"].is_boolean()) throw FormatError("config key 'use_bias' must be a boolean");
    cfg.use_bias = doc["use_bias"].get<bool>();
  }
  if (doc.contains("d_head")) cfg.d_head = unsigned_field(doc, "d_head");
  if (doc.contains("layer_heads")) {
    const nlohmann::json& heads = doc["layer_heads"];
    if (!heads.is_array()) throw FormatError("config key 'layer_heads' must be an array");
    for (const auto& h : heads) {
      if (!h.is_number_unsigned()) {
        throw FormatError("config key 'layer_heads' must contain non-negative integers");
      }
      cfg.layer_heads.push_back(h.get<std::size_t>());
    }
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

ModelConfig load_config(const std::string& path_or_preset) {
  const std::filesystem::path path(path_or_preset);
  if (!std::filesystem::exists(path)) {
    if (auto cfg = preset(path_or_preset)) return *cfg;
    throw FormatError("config file not found and not a preset: " + path_or_preset);
  }
  std::ifstream in(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path_or_preset + ": invalid JSON: " + e.what());
  }
  return config_from_json(doc);
}

std::vector<std::uint8_t> encode_model(const ParamSet& p) {
  Writer w;
  write_header(w, kFloatModelVersion, p.config);
  p.for_each_tensor([&](const std::string&, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
  });
  return w.take();
}

std::vector<std::uint8_t> encode_model(const QuantizedModel& q) {
  Writer w;
  write_header(w, kQuantizedModelVersion, q.config);
  for (const QuantizedTensor& t : q.tensors) {
    w.f64(t.scale);
    w.bytes(t.values.data(), static_cast<std::size_t>(t.values.size()));
  }
  return w.take();
}

LoadedModel decode_model(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const Header h = read_header(r);
  ParamSet shapes = zero_params(h.config);
  if (h.version == kFloatModelVersion) {
    shapes.for_each_tensor([&](const std::string& name, Matrix& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64(name.c_str());
    });
    if (!r.at_end()) throw FormatError("trailing bytes after float payload");
    return shapes;
  }
  QuantizedModel q;
  q.config = h.config;
  shapes.for_each_tensor([&](const std::string& name, const Matrix& m) {
    QuantizedTensor t;
    t.scale = r.f64(name.c_str());
    if (!(t.scale > 0.0)) throw FormatError("tensor " + name + " has a non-positive scale");
    t.values.resize(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto v = static_cast<std::int8_t>(r.u8(name.c_str()));
      if (v == -128) throw FormatError("tensor " + name + " contains -128");
      t.values.data()[i] = v;
    }
    q.tensors.push_back(std::move(t));
  });
  if (!r.at_end()) throw FormatError("trailing bytes after int8 payload");
  return q;
}

std::size_t payload_offset(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  read_header(r);
  return r.position();
}

void save_model(const std::filesystem::path& path, const ParamSet& p) {
  write_file(path, encode_model(p));
}

void save_model(const std::filesystem::path& path, const QuantizedModel& q) {
  write_file(path, encode_model(q));
}

LoadedModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace retf
