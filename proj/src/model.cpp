#include "clc/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace clc {

void MlpSpec::validate() const {
  if (layer_widths.size() < 2) {
    throw ConfigError("MlpSpec: need at least input and output widths");
  }
  for (std::size_t w : layer_widths) {
    if (w == 0) throw ConfigError("MlpSpec: zero layer width");
  }
  if (cluster_dim < 2) throw ConfigError("MlpSpec: cluster_dim must be >= 2");
  if (instance_dim < 1) throw ConfigError("MlpSpec: instance_dim must be >= 1");
  if (layer_widths.back() != cluster_dim + instance_dim) {
    throw ConfigError("MlpSpec: output width must equal cluster_dim + instance_dim");
  }
}

Params Params::init(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  Params p;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    const std::size_t fan_in = spec.layer_widths[l];
    const std::size_t fan_out = spec.layer_widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    p.weights.push_back(random_uniform(rng, fan_in, fan_out, -bound, bound));
    p.biases.push_back(random_uniform(rng, 1, fan_out, -bound, bound));
  }
  return p;
}

void Params::check_shapes(const MlpSpec& spec) const {
  if (weights.size() != spec.layer_count() || biases.size() != spec.layer_count()) {
    throw ShapeError("Params: layer count does not match spec");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != spec.layer_widths[l] ||
        weights[l].cols() != spec.layer_widths[l + 1] || biases[l].rows() != 1 ||
        biases[l].cols() != spec.layer_widths[l + 1]) {
      throw ShapeError("Params: layer " + std::to_string(l) + " shape does not match spec");
    }
  }
}

Representation forward(const MlpSpec& spec, const Params& params, const Matrix& x,
                       bool normalize_parts) {
  spec.validate();
  params.check_shapes(spec);
  if (x.cols() != spec.input_dim()) {
    throw ShapeError("forward: input width " + std::to_string(x.cols()) +
                     " does not match spec input " + std::to_string(spec.input_dim()));
  }
  Matrix h = x;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    Matrix z = matmul(h, params.weights[l]);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += params.biases[l](0, j);
    }
    if (l + 1 < params.weights.size()) {
      for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = std::tanh(z.data()[i]);
    }
    h = std::move(z);
  }
  const std::size_t k = spec.cluster_dim;
  Matrix zc(h.rows(), k), zn(h.rows(), spec.instance_dim);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    for (std::size_t j = 0; j < k; ++j) zc(i, j) = h(i, j);
    for (std::size_t j = 0; j < spec.instance_dim; ++j) zn(i, j) = h(i, k + j);
  }
  if (normalize_parts) {
    zc = row_l2_normalize(zc);
    zn = row_l2_normalize(zn);
  }
  return {std::move(zc), std::move(zn)};
}

ForwardVars forward_node(Tape& tape, const MlpSpec& spec, const Params& params,
                         const Matrix& x, bool normalize_parts) {
  spec.validate();
  params.check_shapes(spec);
  if (x.cols() != spec.input_dim()) {
    throw ShapeError("forward_node: input width does not match spec");
  }
  ForwardVars out;
  Var h = tape.constant(x);
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    Var w = tape.leaf(params.weights[l]);
    Var b = tape.leaf(params.biases[l]);
    out.weights.push_back(w);
    out.biases.push_back(b);
    Var z = tape.add_row_broadcast(tape.matmul(h, w), b);
    h = (l + 1 < params.weights.size()) ? tape.tanh(z) : z;
  }
  Var zc = tape.slice_cols(h, 0, spec.cluster_dim);
  Var zn = tape.slice_cols(h, spec.cluster_dim, spec.output_dim());
  if (normalize_parts) {
    zc = tape.row_l2_normalize(zc);
    zn = tape.row_l2_normalize(zn);
  }
  out.zc = zc;
  out.zn = zn;
  return out;
}

void ema_update(MomentumEncoder& key, const Params& query) {
  if (key.params.weights.size() != query.weights.size()) {
    throw ShapeError("ema_update: layer counts differ");
  }
  if (!(key.m >= 0.0 && key.m <= 1.0)) {
    throw ConfigError("ema_update: momentum must lie in [0, 1]");
  }
  auto blend = [&](Matrix& k, const Matrix& q) {
    if (!k.same_shape(q)) throw ShapeError("ema_update: parameter shapes differ");
    for (std::size_t i = 0; i < k.size(); ++i) {
      k.data()[i] = key.m * k.data()[i] + (1.0 - key.m) * q.data()[i];
    }
  };
  for (std::size_t l = 0; l < query.weights.size(); ++l) {
    blend(key.params.weights[l], query.weights[l]);
    blend(key.params.biases[l], query.biases[l]);
  }
}

void NegativeQueue::push(const Representation& keys) {
  if (keys.zc.cols() != cluster_dim_ || keys.zn.cols() != instance_dim_ ||
      keys.zc.rows() != keys.zn.rows()) {
    throw ShapeError("NegativeQueue::push: representation widths do not match queue");
  }
  for (std::size_t i = 0; i < keys.zc.rows(); ++i) {
    std::vector<double> row(cluster_dim_ + instance_dim_);
    for (std::size_t j = 0; j < cluster_dim_; ++j) row[j] = keys.zc(i, j);
    for (std::size_t j = 0; j < instance_dim_; ++j) row[cluster_dim_ + j] = keys.zn(i, j);
    entries_.push_back(std::move(row));
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

std::pair<Matrix, Matrix> NegativeQueue::negatives() const {
  Matrix zc(entries_.size(), cluster_dim_), zn(entries_.size(), instance_dim_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    for (std::size_t j = 0; j < cluster_dim_; ++j) zc(i, j) = entries_[i][j];
    for (std::size_t j = 0; j < instance_dim_; ++j) zn(i, j) = entries_[i][cluster_dim_ + j];
  }
  return {std::move(zc), std::move(zn)};
}

namespace {

constexpr char kMagic[4] = {'C', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("params read: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw IoError("params read: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_params(std::ostream& out, const MlpSpec& spec, const Params& params) {
  spec.validate();
  params.check_shapes(spec);
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, spec.cluster_dim);
  put_u64(out, spec.instance_dim);
  put_u64(out, spec.layer_widths.size());
  for (std::size_t w : spec.layer_widths) put_u64(out, w);
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    write_matrix(out, params.weights[l]);
    write_matrix(out, params.biases[l]);
  }
  if (!out) throw IoError("params write failed");
}

std::pair<MlpSpec, Params> read_params(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("params read: bad magic, expected CLCK");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw IoError("params read: unsupported version " + std::to_string(version));
  }
  MlpSpec spec;
  spec.cluster_dim = static_cast<std::size_t>(get_u64(in));
  spec.instance_dim = static_cast<std::size_t>(get_u64(in));
  const std::uint64_t n_widths = get_u64(in);
  if (n_widths < 2 || n_widths > 1024) throw IoError("params read: implausible layer count");
  for (std::uint64_t i = 0; i < n_widths; ++i) {
    spec.layer_widths.push_back(static_cast<std::size_t>(get_u64(in)));
  }
  spec.validate();
  Params params;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    params.weights.push_back(read_matrix(in));
    params.biases.push_back(read_matrix(in));
  }
  params.check_shapes(spec);
  return {std::move(spec), std::move(params)};
}

void save_params(const std::filesystem::path& path, const MlpSpec& spec, const Params& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_params(out, spec, params);
}

std::pair<MlpSpec, Params> load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return read_params(in);
}

}  // namespace clc
