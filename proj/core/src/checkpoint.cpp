#include "relstm/checkpoint.hpp"

#include <fstream>

#include "binary_io.hpp"

namespace relstm {

namespace {

void write_record(std::ostream& os, const std::string& path, const Tensor& t) {
  io::write_string(os, path);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::int64_t i = 0; i < t.rank(); ++i) {
    io::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(t.extent(i)));
  }
  io::write_bytes(os, t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
}

struct Record {
  std::string path;
  Tensor tensor;
};

Record read_record(std::istream& is) {
  Record r;
  r.path = io::read_string(is, "parameter path");
  const auto rank = io::read_pod<std::uint32_t>(is, "parameter rank");
  std::vector<std::int64_t> shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape.push_back(static_cast<std::int64_t>(io::read_pod<std::uint64_t>(is, "parameter extent")));
  }
  Tensor t(shape);
  io::read_bytes(is, t.data(), static_cast<std::size_t>(t.size()) * sizeof(double),
                 "parameter payload");
  r.tensor = std::move(t);
  return r;
}

struct CheckpointData {
  ModelConfig config;
  std::vector<Record> params;
  std::vector<Record> stats;
  std::string rng_state;
};

CheckpointData read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  io::read_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != "RLSM") {
    throw FormatError("checkpoint: bad magic bytes in '" + path + "'");
  }
  const auto version = io::read_pod<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: version " + std::to_string(version) + " unsupported, expected " +
                      std::to_string(kCheckpointVersion));
  }
  CheckpointData data;
  data.config = config_from_json(io::read_string(is, "config"));
  const auto n_params = io::read_pod<std::uint64_t>(is, "parameter count");
  for (std::uint64_t i = 0; i < n_params; ++i) data.params.push_back(read_record(is));
  const auto n_stats = io::read_pod<std::uint64_t>(is, "stat count");
  for (std::uint64_t i = 0; i < n_stats; ++i) data.stats.push_back(read_record(is));
  data.rng_state = io::read_string(is, "rng state");
  return data;
}

void install_params(Model& model, const CheckpointData& data) {
  ag::ParamSet& ps = model.params();
  if (data.params.size() != ps.size()) {
    throw FormatError("checkpoint: holds " + std::to_string(data.params.size()) +
                      " parameters, model expects " + std::to_string(ps.size()));
  }
  for (const Record& r : data.params) {
    if (!ps.has(r.path)) {
      throw FormatError("checkpoint: unexpected parameter '" + r.path + "'");
    }
    Tensor& dst = ps.value(r.path);
    if (!dst.same_shape(r.tensor)) {
      throw ShapeError("checkpoint: parameter '" + r.path + "' has shape " +
                       r.tensor.shape_str() + ", model expects " + dst.shape_str());
    }
    dst = r.tensor;
  }
  for (const Record& r : data.stats) {
    Tensor* dst = nullptr;
    if (r.path == "bn.running_mean") dst = &model.bn_state().running_mean;
    else if (r.path == "bn.running_var") dst = &model.bn_state().running_var;
    else throw FormatError("checkpoint: unexpected statistic '" + r.path + "'");
    if (!dst->same_shape(r.tensor)) {
      throw ShapeError("checkpoint: statistic '" + r.path + "' has shape " +
                       r.tensor.shape_str() + ", model expects " + dst->shape_str());
    }
    *dst = r.tensor;
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  io::write_bytes(os, "RLSM", 4);
  io::write_pod<std::uint32_t>(os, kCheckpointVersion);
  io::write_string(os, config_to_json(model.config()));

  const ag::ParamSet& ps = model.params();
  const std::vector<std::string> paths = ps.paths();
  io::write_pod<std::uint64_t>(os, paths.size());
  for (const std::string& p : paths) write_record(os, p, ps.value(p));

  io::write_pod<std::uint64_t>(os, 2);
  write_record(os, "bn.running_mean", model.bn_state().running_mean);
  write_record(os, "bn.running_var", model.bn_state().running_var);

  io::write_string(os, model.rng_state());
  if (!os) throw DataError("checkpoint: write to '" + path + "' failed");
}

Model load_checkpoint(const std::string& path) {
  CheckpointData data = read_file(path);
  Model model(data.config);
  install_params(model, data);
  model.set_rng_state(data.rng_state);
  return model;
}

void load_params_into(Model& model, const std::string& path) {
  CheckpointData data = read_file(path);
  install_params(model, data);
}

}  // namespace relstm
