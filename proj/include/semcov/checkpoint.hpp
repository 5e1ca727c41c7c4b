#pragma once

// Model archive: magic, version, JSON config, then named little-endian f64
// arrays.

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "semcov/coverage.hpp"
#include "semcov/errors.hpp"
#include "semcov/io.hpp"
#include "semcov/model.hpp"

namespace semcov {

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'M', 'C', 'O', 'V', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline io::Json coverage_to_json(const CoverageTable& t) {
  io::Json values = io::Json::array(), counts = io::Json::array();
  for (const auto& e : t.entries) {
    values.push_back(e.coverage);
    counts.push_back(e.count);
  }
  return {{"T", t.dims.T}, {"K", t.dims.K}, {"S", t.dims.S}, {"coverage", values}, {"count", counts}};
}

inline CoverageTable coverage_from_json(const io::Json& j) {
  CoverageTable t;
  t.dims = {j.at("T").get<int>(), j.at("K").get<int>(), j.at("S").get<int>()};
  const auto& v = j.at("coverage");
  const auto& c = j.at("count");
  if (v.size() != t.dims.count() || c.size() != t.dims.count()) throw ParseError("coverage table size mismatch in archive");
  for (size_t i = 0; i < v.size(); ++i) t.entries.push_back({v[i].get<double>(), c[i].get<size_t>()});
  return t;
}

template <typename T>
struct Checkpoint {
  Model<T> model;
  std::optional<CoverageTable> training_coverage;
  io::Json extra = io::Json::object();  // free-form metadata (training config, best epoch)
};

template <typename T>
void write_checkpoint(std::ostream& out, const Checkpoint<T>& ck) {
  io::Json cfg;
  cfg["encoder"] = to_json(ck.model.config());
  cfg["dva_symmetric"] = ck.model.dva.symmetric;
  if (ck.training_coverage) cfg["training_coverage"] = coverage_to_json(*ck.training_coverage);
  cfg["extra"] = ck.extra;
  out.write(kCheckpointMagic, 8);
  io::write_u32(out, kCheckpointVersion);
  io::write_string64(out, cfg.dump());
  const auto params = ck.model.all_parameters();
  io::write_u64(out, params.size());
  for (const auto& p : params) {
    io::write_string64(out, p.name);
    io::write_u32(out, static_cast<uint32_t>(p.var.rank()));
    for (int d : p.var.shape()) io::write_u64(out, static_cast<uint64_t>(d));
    for (int64_t i = 0; i < p.var.size(); ++i) io::write_f64(out, static_cast<double>(p.var.value()(i)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

template <typename T>
Checkpoint<T> read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8)) throw ParseError("not a model checkpoint");
  const uint32_t version = io::read_u32(in);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  io::Json cfg;
  try {
    cfg = io::Json::parse(io::read_string64(in));
  } catch (const io::Json::exception& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  Checkpoint<T> ck;
  ck.model = Model<T>(encoder_config_from_json(cfg.at("encoder")), 0, cfg.value("dva_symmetric", false));
  if (cfg.contains("training_coverage")) ck.training_coverage = coverage_from_json(cfg.at("training_coverage"));
  if (cfg.contains("extra")) ck.extra = cfg.at("extra");

  std::map<std::string, ParamRef<T>> by_name;
  for (auto& p : ck.model.all_parameters()) by_name.emplace(p.name, p);
  const uint64_t n = io::read_u64(in);
  size_t loaded = 0;
  for (uint64_t k = 0; k < n; ++k) {
    const std::string name = io::read_string64(in);
    const uint32_t rank = io::read_u32(in);
    if (rank > 8) throw ParseError("implausible rank for " + name);
    Shape shape;
    for (uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(io::read_u64(in)));
    Array<T> values(ag::numel(shape));
    for (int64_t i = 0; i < values.size(); ++i) values(i) = static_cast<T>(io::read_f64(in));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint holds unknown parameter " + name);
    if (it->second.var.shape() != shape)
      throw ConfigError("checkpoint parameter " + name + " has shape " + ag::shape_str(shape) + ", model expects " +
                        ag::shape_str(it->second.var.shape()));
    it->second.var.mutable_value() = std::move(values);
    ++loaded;
  }
  if (loaded != by_name.size()) throw ConfigError("checkpoint is missing parameters");
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(out, ck);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint<T>(in);
}

}  // namespace semcov
