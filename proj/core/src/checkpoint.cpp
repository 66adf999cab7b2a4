#include "imbal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "imbal/errors.hpp"

namespace imbal {

namespace {

constexpr const char* kMagic = "IMBALCKPT";
constexpr int kVersion = 1;

using json = nlohmann::json;

json config_to_json(const ModelConfig& c) {
  return json{{"var_hidden", c.var_hidden},
              {"static_hidden", c.static_hidden},
              {"embed_hidden", c.embed_hidden},
              {"embed_dim", c.embed_dim},
              {"attn_dim", c.attn_dim},
              {"top_k", c.top_k},
              {"action_scale_mw", c.action_scale_mw},
              {"si_scale_mw", c.si_scale_mw},
              {"price_scale_eur_mwh", c.price_scale},
              {"volume_scale_mw", c.volume_scale_mw}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.var_hidden = j.at("var_hidden").get<std::vector<int>>();
  c.static_hidden = j.at("static_hidden").get<std::vector<int>>();
  c.embed_hidden = j.at("embed_hidden").get<std::vector<int>>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.attn_dim = j.at("attn_dim").get<int>();
  c.top_k = j.at("top_k").get<std::array<int, kLadderCount>>();
  c.action_scale_mw = j.at("action_scale_mw").get<double>();
  c.si_scale_mw = j.at("si_scale_mw").get<double>();
  c.price_scale = j.at("price_scale_eur_mwh").get<double>();
  c.volume_scale_mw = j.at("volume_scale_mw").get<double>();
  c.validate();
  return c;
}

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian doubles");

}  // namespace

std::string model_config_json(const ModelConfig& config) { return config_to_json(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("model config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ckpt.params.validate();
  json header;
  header["version"] = kVersion;
  header["model"] = config_to_json(ckpt.params.config);
  header["config_hash"] = ckpt.config_hash;
  header["metadata"] = json::parse(ckpt.metadata_json);
  json tensors = json::array();
  for (const ad::Parameter* p : ckpt.params.all())
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()},
                       {"nonnegative", p->nonnegative}});
  header["tensors"] = tensors;
  const std::string h = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << kMagic << '\n' << h.size() << '\n' << h;
  for (const ad::Parameter* p : ckpt.params.all())
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * static_cast<Eigen::Index>(sizeof(double))));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint not found: " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) throw ParseError(0, "not a checkpoint file: " + path.string());
  std::string len_line;
  std::getline(in, len_line);
  std::size_t len = 0;
  try {
    len = std::stoul(len_line);
  } catch (const std::exception&) {
    throw ParseError(0, "corrupt checkpoint header length");
  }
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));

  Checkpoint ck;
  try {
    const json header = json::parse(h);
    if (header.at("version").get<int>() != kVersion) throw ParseError(0, "unsupported checkpoint version");
    const ModelConfig cfg = config_from_json(header.at("model"));
    ck.params = IcnnParams::init(cfg, 0);
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.metadata_json = header.at("metadata").dump();
    const json& tensors = header.at("tensors");
    auto all = ck.params.all();
    if (tensors.size() != all.size()) throw ShapeError("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < all.size(); ++i) {
      const json& t = tensors[i];
      if (t.at("name").get<std::string>() != all[i]->name || t.at("rows").get<Eigen::Index>() != all[i]->value.rows() ||
          t.at("cols").get<Eigen::Index>() != all[i]->value.cols())
        throw ShapeError("checkpoint tensor " + t.at("name").get<std::string>() + " does not match the model");
      in.read(reinterpret_cast<char*>(all[i]->value.data()),
              static_cast<std::streamsize>(all[i]->value.size() * static_cast<Eigen::Index>(sizeof(double))));
      all[i]->zero_grad();
    }
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("checkpoint header: ") + e.what());
  }
  if (!in) throw ParseError(0, "truncated checkpoint " + path.string());
  ck.params.validate();
  return ck;
}

}  // namespace imbal
