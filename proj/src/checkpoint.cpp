#include "acn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "acn/errors.hpp"

namespace acn {

namespace {

constexpr char kMagic[8] = {'A', 'C', 'N', 'C', 'K', 'P', 'T', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_, what + " (at byte " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["n_layer"] = c.n_layer;
  j["n_head"] = c.n_head;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["vocab_size"] = c.vocab_size;
  j["max_positions"] = c.max_positions;
  j["adapter_size"] = c.adapter_size;
  j["adapter_enabled"] = c.adapter_enabled;
  j["copy_enabled"] = c.copy_enabled;
  j["ln_eps"] = c.ln_eps;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    auto size = [&](std::size_t& field) {
      if (!value.is_number_unsigned()) throw ConfigError("model config '" + key + "' must be a non-negative integer");
      field = value.get<std::size_t>();
    };
    auto flag = [&](bool& field) {
      if (!value.is_boolean()) throw ConfigError("model config '" + key + "' must be a boolean");
      field = value.get<bool>();
    };
    if (key == "n_layer") size(c.n_layer);
    else if (key == "n_head") size(c.n_head);
    else if (key == "d_model") size(c.d_model);
    else if (key == "d_ff") size(c.d_ff);
    else if (key == "vocab_size") size(c.vocab_size);
    else if (key == "max_positions") size(c.max_positions);
    else if (key == "adapter_size") size(c.adapter_size);
    else if (key == "adapter_enabled") flag(c.adapter_enabled);
    else if (key == "copy_enabled") flag(c.copy_enabled);
    else if (key == "ln_eps") {
      if (!value.is_number()) throw ConfigError("model config 'ln_eps' must be a number");
      c.ln_eps = value.get<double>();
    } else {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string serialize_checkpoint(const Model& model, std::uint64_t vocab_hash) {
  nlohmann::ordered_json header;
  header["format"] = "acn-checkpoint";
  header["config"] = config_to_json(model.config());
  header["vocab_hash"] = hex64(vocab_hash);
  nlohmann::ordered_json groups = nlohmann::ordered_json::object();
  for (const auto& p : model.params()) groups[p.name] = to_string(p.group);
  header["groups"] = groups;
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.value.dim()));
    for (auto d : p.value.shape()) put_u64(out, d);
    for (double v : p.value.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(out, bits);
    }
  }
  return out;
}

LoadedCheckpoint parse_checkpoint(const std::string& bytes, const std::string& source) {
  Reader in(bytes, source);
  if (in.take(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) in.fail("not an acn checkpoint");
  const auto version = in.uint(4, "version");
  if (version != kCheckpointVersion) in.fail("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = in.uint(4, "header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take(header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    in.fail(std::string("invalid header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "acn-checkpoint" || !header.contains("config") ||
      !header.contains("vocab_hash") || !header["vocab_hash"].is_string() || !header.contains("groups")) {
    in.fail("header lacks format, config, vocab_hash or groups");
  }
  LoadedCheckpoint ckpt{Model(config_from_json(header["config"]), 0), 0};
  try {
    ckpt.vocab_hash = std::stoull(header["vocab_hash"].get<std::string>(), nullptr, 16);
  } catch (const std::exception&) {
    in.fail("vocab_hash is not hexadecimal");
  }
  const auto count = in.uint(4, "parameter count");
  if (count != ckpt.model.params().size()) {
    in.fail("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
            std::to_string(ckpt.model.params().size()));
  }
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = in.take(in.uint(4, "name length"), "parameter name");
    if (!seen.insert(name).second) in.fail("parameter '" + name + "' appears twice");
    NamedParam* target = nullptr;
    for (auto& p : ckpt.model.params()) {
      if (p.name == name) target = &p;
    }
    if (!target) in.fail("unknown parameter '" + name + "'");
    if (!header["groups"].contains(name) || header["groups"][name] != to_string(target->group)) {
      in.fail("group label of '" + name + "' does not match the model");
    }
    const auto rank = in.uint(4, "rank");
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(in.uint(8, "dimension"));
    if (shape != target->value.shape()) {
      in.fail("parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
              shape_str(target->value.shape()));
    }
    auto data = target->value.mutable_data();
    for (auto& v : data) {
      const std::uint64_t bits = in.uint(8, "parameter data");
      std::memcpy(&v, &bits, sizeof v);
    }
  }
  if (!in.done()) in.fail("trailing bytes after the last parameter");
  return ckpt;
}

void save_checkpoint(const Model& model, std::uint64_t vocab_hash, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, "cannot open for writing");
  const std::string bytes = serialize_checkpoint(model, vocab_hash);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError(path, "write failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open checkpoint");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

void require_vocab(const LoadedCheckpoint& ckpt, const Vocab& vocab) {
  if (ckpt.vocab_hash != vocab.hash()) {
    throw ConfigError("vocabulary hash " + hex64(vocab.hash()) + " does not match the checkpoint's " +
                      hex64(ckpt.vocab_hash));
  }
  if (vocab.size() != ckpt.model.config().vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " tokens, checkpoint expects " +
                      std::to_string(ckpt.model.config().vocab_size));
  }
}

}  // namespace acn
