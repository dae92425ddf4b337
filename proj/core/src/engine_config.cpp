#include "bisenet/engine_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bisenet {

std::string_view to_string(DataSource s) { return s == DataSource::kManifest ? "manifest" : "synthetic"; }

std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

Resolution padded(const Resolution& r, std::int64_t multiple) {
  return Resolution{round_up(r.width, multiple), round_up(r.height, multiple)};
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  fail(ErrorKind::kConfig, "key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, sep)) parts.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename C>
std::string join(const C& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ", ";
    out += fmt(v);
  }
  return out;
}

template <std::size_t N>
std::array<std::int64_t, N> int_array(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != N) bad_value(key, v, (std::to_string(N) + " comma-separated integers").c_str());
  std::array<std::int64_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = to_int(key, parts[i]);
  return out;
}

std::vector<double> double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& p : split(v, ',')) out.push_back(to_double(key, p));
  return out;
}

template <typename E>
E to_enum(const std::string& key, const std::string& v, std::initializer_list<E> options) {
  std::string expected;
  for (E e : options) {
    if (to_string(e) == v) return e;
    expected += (expected.empty() ? "" : " | ") + std::string(to_string(e));
  }
  bad_value(key, v, expected.c_str());
}

std::vector<Resolution> resolutions(const std::string& key, const std::string& v) {
  std::vector<Resolution> out;
  for (const auto& p : split(v, ',')) {
    const auto x = p.find('x');
    if (x == std::string::npos) bad_value(key, p, "WIDTHxHEIGHT");
    out.push_back(Resolution{to_int(key, p.substr(0, x)), to_int(key, p.substr(x + 1))});
  }
  return out;
}

std::string fmt_res(const std::vector<Resolution>& rs) {
  std::string out;
  for (const auto& r : rs) {
    if (!out.empty()) out += ", ";
    out += std::to_string(r.width) + "x" + std::to_string(r.height);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const EngineConfig&)> get;
  std::function<void(EngineConfig&, const std::string&, const std::string&)> set;
};

#define INT_FIELD(KEY, MEMBER)                                                                      \
  Field {                                                                                           \
    KEY, [](const EngineConfig& c) { return fmt(static_cast<std::int64_t>(c.MEMBER)); },            \
        [](EngineConfig& c, const std::string& k, const std::string& v) {                            \
          c.MEMBER = static_cast<decltype(c.MEMBER)>(to_int(k, v));                                  \
        }                                                                                           \
  }
#define DOUBLE_FIELD(KEY, MEMBER)                                                                            \
  Field {                                                                                                    \
    KEY, [](const EngineConfig& c) { return fmt(c.MEMBER); },                                                \
        [](EngineConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_double(k, v); }      \
  }
#define BOOL_FIELD(KEY, MEMBER)                                                                              \
  Field {                                                                                                    \
    KEY, [](const EngineConfig& c) { return fmt(c.MEMBER); },                                                \
        [](EngineConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_bool(k, v); }        \
  }
#define STRING_FIELD(KEY, MEMBER)                                                                            \
  Field {                                                                                                    \
    KEY, [](const EngineConfig& c) { return c.MEMBER; },                                                     \
        [](EngineConfig& c, const std::string&, const std::string& v) { c.MEMBER = v; }                      \
  }
#define ARRAY3_FIELD(KEY, MEMBER)                                                                            \
  Field {                                                                                                    \
    KEY, [](const EngineConfig& c) { return join(c.MEMBER); },                                               \
        [](EngineConfig& c, const std::string& k, const std::string& v) { c.MEMBER = int_array<3>(k, v); }   \
  }
#define ENUM_FIELD(KEY, MEMBER, ...)                                                                         \
  Field {                                                                                                    \
    KEY, [](const EngineConfig& c) { return std::string(to_string(c.MEMBER)); },                             \
        [](EngineConfig& c, const std::string& k, const std::string& v) {                                    \
          c.MEMBER = to_enum(k, v, {__VA_ARGS__});                                                           \
        }                                                                                                    \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed", [](const EngineConfig& c) { return std::to_string(c.seed); },
            [](EngineConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
      BOOL_FIELD("strict_determinism", strict_determinism),

      INT_FIELD("model.num_classes", model.num_classes),
      ARRAY3_FIELD("model.sp_channels", model.sp_channels),
      INT_FIELD("model.cp_channels", model.cp_channels),
      INT_FIELD("model.ffm_channels", model.ffm_channels),
      INT_FIELD("model.ffm_reduction", model.ffm_reduction),
      INT_FIELD("model.head_channels", model.head_channels),
      BOOL_FIELD("model.use_spatial_path", model.use_spatial_path),
      ENUM_FIELD("model.fusion", model.fusion, Fusion::kSum, Fusion::kFfm),
      BOOL_FIELD("model.use_global_pool", model.use_global_pool),
      BOOL_FIELD("model.use_arm", model.use_arm),
      ENUM_FIELD("model.context_fusion", model.context_fusion, ContextFusion::kUShape8s, ContextFusion::kUShape4s),
      ENUM_FIELD("model.arm_gate", model.arm_gate, ArmGate::kSigmoid, ArmGate::kRelu),
      ENUM_FIELD("model.aux_tap", model.aux_tap, AuxTap::kRaw, AuxTap::kRefined),
      DOUBLE_FIELD("model.aux_loss_weight", model.aux_loss_weight),
      ENUM_FIELD("model.loss_mode", model.loss_mode, LossMode::kPlain, LossMode::kBootstrap),
      ENUM_FIELD("model.loss_resolution", model.loss_resolution, LossResolution::kDownsampleLabels,
                 LossResolution::kUpsampleLogits),
      DOUBLE_FIELD("model.bootstrap_keep_fraction", model.bootstrap_keep_fraction),
      INT_FIELD("model.bootstrap_min_kept", model.bootstrap_min_kept),
      INT_FIELD("model.ignore_index", model.ignore_index),
      INT_FIELD("model.backbone.input_channels", model.backbone.input_channels),
      INT_FIELD("model.backbone.stem_channels", model.backbone.stem_channels),
      ARRAY3_FIELD("model.backbone.stage_channels", model.backbone.stage_channels),
      ARRAY3_FIELD("model.backbone.blocks_per_stage", model.backbone.blocks_per_stage),

      DOUBLE_FIELD("sgd.base_lr", sgd.base_lr),
      DOUBLE_FIELD("sgd.momentum", sgd.momentum),
      DOUBLE_FIELD("sgd.weight_decay", sgd.weight_decay),
      DOUBLE_FIELD("sgd.power", sgd.power),
      INT_FIELD("sgd.max_iter", sgd.max_iter),

      Field{"augment.mean", [](const EngineConfig& c) { return join(c.augment.mean); },
            [](EngineConfig& c, const std::string& k, const std::string& v) {
              const auto l = double_list(k, v);
              if (l.size() != 3) bad_value(k, v, "3 comma-separated numbers");
              c.augment.mean = {l[0], l[1], l[2]};
            }},
      DOUBLE_FIELD("augment.hflip_prob", augment.hflip_prob),
      Field{"augment.scales", [](const EngineConfig& c) { return join(c.augment.scales); },
            [](EngineConfig& c, const std::string& k, const std::string& v) { c.augment.scales = double_list(k, v); }},
      INT_FIELD("augment.crop_h", augment.crop_h),
      INT_FIELD("augment.crop_w", augment.crop_w),
      Field{"augment.seed", [](const EngineConfig& c) { return std::to_string(c.augment.seed); },
            [](EngineConfig& c, const std::string& k, const std::string& v) { c.augment.seed = to_u64(k, v); }},

      ENUM_FIELD("train.source", train.source, DataSource::kManifest, DataSource::kSynthetic),
      STRING_FIELD("train.manifest", train.manifest),
      INT_FIELD("train.synth_count", train.synth_count),
      INT_FIELD("train.synth_height", train.synth_height),
      INT_FIELD("train.synth_width", train.synth_width),
      INT_FIELD("train.batch_size", train.batch_size),
      BOOL_FIELD("train.augment", train.augment),
      STRING_FIELD("train.log_path", train.log_path),
      STRING_FIELD("train.checkpoint_path", train.checkpoint_path),
      INT_FIELD("train.checkpoint_every", train.checkpoint_every),

      Field{"bench.resolutions", [](const EngineConfig& c) { return fmt_res(c.bench.resolutions); },
            [](EngineConfig& c, const std::string& k, const std::string& v) { c.bench.resolutions = resolutions(k, v); }},
      INT_FIELD("bench.warmup_iters", bench.warmup_iters),
      INT_FIELD("bench.timed_iters", bench.timed_iters),
      INT_FIELD("bench.batch", bench.batch),
      BOOL_FIELD("bench.end_to_end", bench.end_to_end),
  };
  return table;
}

const Field& field(const std::string& key, int line) {
  static const auto index = [] {
    std::map<std::string, const Field*> m;
    for (const auto& f : fields()) m[f.key] = &f;
    return m;
  }();
  auto it = index.find(key);
  if (it == index.end())
    fail(ErrorKind::kConfig, (line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + "unknown key '" +
                                 key + "'");
  return *it->second;
}

struct Assignment {
  std::string key;
  std::string value;
  int line = 0;
};

std::vector<Assignment> parse_text(const std::string& text) {
  std::vector<Assignment> out;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        fail(ErrorKind::kConfig, "line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::kConfig, "line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) fail(ErrorKind::kConfig, "line " + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    out.push_back({key, trim(std::string_view(line).substr(eq + 1)), lineno});
  }
  return out;
}

void flatten(const nlohmann::json& j, const std::string& prefix, std::vector<Assignment>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    return;
  }
  const auto scalar = [&](const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    if (v.is_number_float()) return fmt(v.get<double>());
    if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer())
      return v[0].dump() + "x" + v[1].dump();
    fail(ErrorKind::kConfig, "key '" + prefix + "': unsupported JSON value " + v.dump());
  };
  if (j.is_array()) {
    std::string joined;
    for (const auto& v : j) joined += (joined.empty() ? "" : ", ") + scalar(v);
    out.push_back({prefix, joined, 0});
    return;
  }
  out.push_back({prefix, scalar(j), 0});
}

}  // namespace

void EngineConfig::validate() const {
  model.validate();
  sgd.validate();
  augment.validate();
  const auto bad = [](const std::string& msg) { fail(ErrorKind::kConfig, msg); };
  if (train.batch_size < 1) bad("train.batch_size must be >= 1");
  if (train.source == DataSource::kManifest && train.manifest.empty())
    bad("train.manifest is required when train.source = manifest");
  if (train.synth_count < 1 || train.synth_height < 1 || train.synth_width < 1)
    bad("train.synth_count / synth_height / synth_width must be >= 1");
  if (train.checkpoint_every < 0) bad("train.checkpoint_every must be >= 0");
  if (bench.resolutions.empty()) bad("bench.resolutions must not be empty");
  for (const auto& r : bench.resolutions)
    if (r.width < 1 || r.height < 1) bad("bench.resolutions entries must be positive");
  if (bench.warmup_iters < 1) bad("bench.warmup_iters must be >= 1");
  if (bench.timed_iters < 10) bad("bench.timed_iters must be >= 10");
  if (bench.batch < 1) bad("bench.batch must be >= 1");
}

EngineConfig parse_config(const std::string& text) {
  std::vector<Assignment> assignments;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kConfig, std::string("invalid JSON config: ") + e.what());
    }
    if (!j.is_object()) fail(ErrorKind::kConfig, "JSON config must be an object");
    flatten(j, "", assignments);
  } else {
    assignments = parse_text(text);
  }
  EngineConfig cfg;
  std::set<std::string> seen;
  for (const auto& a : assignments) {
    const Field& f = field(a.key, a.line);
    if (!seen.insert(a.key).second)
      fail(ErrorKind::kConfig, (a.line > 0 ? "line " + std::to_string(a.line) + ": " : std::string()) +
                                   "duplicate key '" + a.key + "'");
    f.set(cfg, a.key, a.value);
  }
  cfg.validate();
  return cfg;
}

EngineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const EngineConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const EngineConfig& cfg) {
  std::string canon = "seed = " + std::to_string(cfg.seed) + "\n";
  for (const auto& f : fields())
    if (f.key.rfind("model.", 0) == 0) canon += f.key + " = " + f.get(cfg) + "\n";
  return fnv1a64(canon);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace bisenet
