#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "canopy/dsnn.hpp"
#include "canopy/error.hpp"

namespace canopy::dsnn {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'N', 'O', 'P', 'Y', 'M', 'D'};
constexpr int kFormatVersion = 1;

using json = nlohmann::ordered_json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_le(const unsigned char* p, int n) {
  std::uint64_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

json config_json(const NetworkConfig& c) {
  return json{{"hsi_dims", c.hsi_dims},         {"als_dims", c.als_dims},
              {"decoder_dims", c.decoder_dims}, {"dropout", c.dropout},
              {"batch_size", c.batch_size},     {"epochs", c.epochs},
              {"lr", c.lr},                     {"weight_decay", c.weight_decay},
              {"seed", c.seed},                 {"bn_momentum", c.bn_momentum},
              {"bn_eps", c.bn_eps},             {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},     {"adam_eps", c.adam_eps}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.hsi_dims = j.at("hsi_dims").get<std::vector<int>>();
  c.als_dims = j.at("als_dims").get<std::vector<int>>();
  c.decoder_dims = j.at("decoder_dims").get<std::vector<int>>();
  c.dropout = j.at("dropout");
  c.batch_size = j.at("batch_size");
  c.epochs = j.at("epochs");
  c.lr = j.at("lr");
  c.weight_decay = j.at("weight_decay");
  c.seed = j.at("seed");
  c.bn_momentum = j.at("bn_momentum");
  c.bn_eps = j.at("bn_eps");
  c.adam_beta1 = j.at("adam_beta1");
  c.adam_beta2 = j.at("adam_beta2");
  c.adam_eps = j.at("adam_eps");
  return c;
}

json standardizer_json(const std::optional<geodata::Standardizer>& s) {
  if (!s) return nullptr;
  return json{{"mean", s->mean}, {"stddev", s->stddev}};
}

std::optional<geodata::Standardizer> standardizer_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  geodata::Standardizer s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  if (s.mean.size() != s.stddev.size())
    fail(ErrorKind::Validation, "checkpoint standardizer mean/stddev lengths differ");
  return s;
}

template <typename Fn>
void for_each_running(ModelState<float>& s, Fn&& fn) {
  for (auto* stream : {&s.encoder_hsi, &s.encoder_als, &s.decoder})
    for (auto& l : *stream)
      if (l.hidden) {
        fn(l.running_mean);
        fn(l.running_var);
      }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto& state = const_cast<ModelState<float>&>(ckpt.state);
  json header;
  header["format"] = kFormatVersion;
  header["config"] = config_json(state.config);
  header["step"] = state.step;
  json params = json::array();
  std::vector<float> blob;
  for (const auto& p : std::as_const(state).parameters()) {
    params.push_back(json{{"name", p.name}, {"size", p.values.size()}});
    blob.insert(blob.end(), p.values.begin(), p.values.end());
  }
  header["params"] = params;
  for_each_running(state, [&](std::vector<float>& v) { blob.insert(blob.end(), v.begin(), v.end()); });
  header["blob_floats"] = blob.size();
  std::ostringstream rng;
  rng << state.rng;
  header["rng_state"] = rng.str();
  header["hsi_standardizer"] = standardizer_json(ckpt.hsi_standardizer);
  header["als_standardizer"] = standardizer_json(ckpt.als_standardizer);
  header["classes"] = ckpt.classes;

  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + blob.size() * 4);
  for (float f : blob) put_u32(out, std::bit_cast<std::uint32_t>(f));

  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    fail(ErrorKind::Unsupported, path.string() + " is not a canopy checkpoint");
  const auto hlen = get_le(p + 8, 8);
  if (hlen > bytes.size() - 16) fail(ErrorKind::Validation, "checkpoint header is truncated");

  json header;
  try {
    header = json::parse(bytes.substr(16, hlen));
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, "checkpoint header is not valid JSON: " + std::string(e.what()));
  }

  Checkpoint ck;
  try {
    if (header.at("format").get<int>() != kFormatVersion)
      fail(ErrorKind::Unsupported, "unsupported checkpoint format version");
    const auto cfg = config_from_json(header.at("config"));
    ck.state = init_model<float>(cfg, cfg.seed);
    ck.state.step = header.at("step");
    std::istringstream rng(header.at("rng_state").get<std::string>());
    rng >> ck.state.rng;
    ck.hsi_standardizer = standardizer_from_json(header.at("hsi_standardizer"));
    ck.als_standardizer = standardizer_from_json(header.at("als_standardizer"));
    ck.classes = header.at("classes").get<std::vector<std::string>>();

    const std::size_t floats = header.at("blob_floats");
    if (bytes.size() - 16 - hlen != floats * 4)
      fail(ErrorKind::Validation, "checkpoint blob holds " +
                                      std::to_string(bytes.size() - 16 - hlen) +
                                      " bytes, header declares " + std::to_string(floats * 4));
    const unsigned char* cur = p + 16 + hlen;
    std::size_t remaining = floats;
    auto take = [&](std::span<float> dst, const std::string& what) {
      if (dst.size() > remaining) fail(ErrorKind::Validation, "checkpoint blob too short for " + what);
      for (auto& v : dst) {
        v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(cur, 4)));
        cur += 4;
      }
      remaining -= dst.size();
    };
    auto params = ck.state.parameters();
    const auto& declared = header.at("params");
    if (declared.size() != params.size())
      fail(ErrorKind::Validation, "checkpoint declares " + std::to_string(declared.size()) +
                                      " tensors, architecture has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (declared[i].at("name") != params[i].name ||
          declared[i].at("size").get<std::size_t>() != params[i].values.size())
        fail(ErrorKind::Validation, "checkpoint tensor " + std::to_string(i) +
                                        " does not match the architecture (" + params[i].name + ")");
      take(params[i].values, params[i].name);
    }
    for_each_running(ck.state, [&](std::vector<float>& v) { take(v, "running statistics"); });
    if (remaining != 0) fail(ErrorKind::Validation, "checkpoint blob has trailing values");
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, "malformed checkpoint header: " + std::string(e.what()));
  }
  ck.state.mode = Mode::Eval;
  return ck;
}

}  // namespace canopy::dsnn
