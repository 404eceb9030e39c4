#include "nlreg/checkpoint.hpp"
#include "nlreg/container.hpp"
#include "nlreg/errors.hpp"
#include "nlreg/funcs.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace nlreg {

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

void save_checkpoint(const NlistaModel& model, const std::filesystem::path& stem, const nlohmann::json& extra) {
  const auto bin = with_ext(stem, ".bin");
  {
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + bin.string() + "' for writing");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    io::write_u32(out, kCheckpointVersion);
    io::write_u32(out, static_cast<std::uint32_t>(model.layers.size()));
    io::write_u64(out, static_cast<std::uint64_t>(model.m()));
    io::write_u64(out, static_cast<std::uint64_t>(model.n()));
    for (const auto& layer : model.layers) {
      io::write_f64(out, layer.beta);
      io::write_f64(out, layer.theta);
      for (Index i = 0; i < layer.W.size(); ++i) io::write_f64(out, layer.W.data()[i]);
    }
    if (!out) throw std::runtime_error("write to '" + bin.string() + "' failed");
  }

  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["format_version"] = kCheckpointVersion;
  meta["f_id"] = model.f_id;
  meta["update_f_id"] = model.update_f_id;
  meta["m"] = model.m();
  meta["n"] = model.n();
  meta["layers"] = model.depth();
  meta["completed_stages"] = model.completed_stages;
  meta["dictionary_fingerprint"] = io::fingerprint(*model.A);
  auto log = nlohmann::json::array();
  for (const auto& e : model.train_log) log.push_back({e.step, e.stage, e.lr, e.val_loss});
  meta["train_log"] = std::move(log);
  io::write_json(with_ext(stem, ".json"), meta);
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& stem) {
  const auto json_path = with_ext(stem, ".json");
  if (!std::filesystem::exists(json_path) || !std::filesystem::exists(with_ext(stem, ".bin")))
    throw MissingCheckpointError("no checkpoint at '" + stem.string() + "'");
  return io::read_json(json_path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem, std::shared_ptr<const Matrix> A) {
  LoadedCheckpoint out;
  out.meta = read_checkpoint_meta(stem);
  const auto bin = with_ext(stem, ".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + bin.string() + "'");
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw FormatError("'" + bin.string() + "' is not an NLISTA checkpoint");
  const auto version = io::read_u32(in);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = io::read_u32(in);
  const auto m = static_cast<Index>(io::read_u64(in));
  const auto n = static_cast<Index>(io::read_u64(in));
  if (!A || A->rows() != m || A->cols() != n) throw DimensionError("checkpoint dimensions do not match the dictionary");

  NlistaModel& model = out.model;
  try {
    model.f_id = out.meta.at("f_id").get<std::string>();
    model.update_f_id = out.meta.at("update_f_id").get<std::string>();
    model.completed_stages = out.meta.at("completed_stages").get<int>();
    if (out.meta.at("dictionary_fingerprint").get<std::uint64_t>() != io::fingerprint(*A))
      throw FormatError("checkpoint '" + stem.string() + "' was trained against a different dictionary");
    for (const auto& e : out.meta.at("train_log"))
      model.train_log.push_back({e.at(0).get<long>(), e.at(1).get<int>(), e.at(2).get<double>(),
                                 e.at(3).is_null() ? std::nan("") : e.at(3).get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint metadata: " + std::string(e.what()));
  }
  get_function(model.f_id);
  get_function(model.update_f_id);

  model.layers.resize(count);
  for (auto& layer : model.layers) {
    layer.beta = io::read_f64(in);
    layer.theta = io::read_f64(in);
    layer.W.resize(m, n);
    for (Index i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = io::read_f64(in);
  }
  model.A = std::move(A);
  return out;
}

}  // namespace nlreg
