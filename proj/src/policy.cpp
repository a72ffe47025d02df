#include "merlin/policy.hpp"

#include <bit>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "merlin/action_codec.hpp"
#include "merlin/errors.hpp"
#include "merlin/util.hpp"

namespace merlin {
namespace {

using ordered_json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "parameter files are little-endian");

Eigen::ArrayXXf sigmoid(const Eigen::ArrayXXf& z) { return 1.0f / (1.0f + (-z).exp()); }

}  // namespace

const char* to_string(ArchTag tag) {
  switch (tag) {
    case ArchTag::lstm: return "lstm";
    case ArchTag::mlp: return "mlp";
  }
  throw ConfigError("invalid arch tag value");
}

ArchTag arch_from_string(const std::string& name) {
  if (name == "lstm") return ArchTag::lstm;
  if (name == "mlp") return ArchTag::mlp;
  throw ConfigError("unknown architecture: " + name + " (expected lstm or mlp)");
}

std::vector<TensorSpec> policy_tensor_layout(const PolicyShape& shape) {
  if (shape.input < 1 || shape.hidden < 1 || shape.fc_dim < 1) {
    throw ConfigError("policy shape dimensions must be positive");
  }
  std::vector<TensorSpec> specs;
  int64_t offset = 0;
  auto add = [&](const char* name, int rows, int cols) {
    specs.push_back({name, rows, cols, offset});
    offset += static_cast<int64_t>(rows) * cols;
  };
  const int gate_rows = shape.arch == ArchTag::lstm ? 4 * shape.hidden : shape.hidden;
  add("w_x", gate_rows, shape.input);
  if (shape.arch == ArchTag::lstm) add("w_h", gate_rows, shape.hidden);
  add("b", gate_rows, 1);
  add("fc1_w", shape.fc_dim, shape.hidden);
  add("fc1_b", shape.fc_dim, 1);
  add("fc2_w", 1, shape.fc_dim);
  add("fc2_b", 1, 1);
  return specs;
}

PolicyParams::PolicyParams(const PolicyShape& shape)
    : shape_(shape), tensors_(policy_tensor_layout(shape)) {
  const TensorSpec& last = tensors_.back();
  flat_.assign(static_cast<size_t>(last.offset + last.rows * last.cols), 0.0f);
}

PolicyParams PolicyParams::init(const PolicyShape& shape, uint64_t seed) {
  PolicyParams p(shape);
  Rng rng = Rng(seed).fork(3000);
  for (const TensorSpec& spec : p.tensors_) {
    const bool is_bias = spec.cols == 1 && spec.name != "fc2_w";
    if (is_bias) continue;  // biases start at zero
    const double k = 1.0 / std::sqrt(static_cast<double>(spec.cols));
    float* data = p.flat_.data() + spec.offset;
    for (int64_t i = 0; i < static_cast<int64_t>(spec.rows) * spec.cols; ++i) {
      data[i] = static_cast<float>(rng.uniform(-k, k));
    }
  }
  if (shape.arch == ArchTag::lstm) {
    // Forget gate opens at init so early training does not wipe the cell.
    auto b = p.tensor("b");
    b.block(shape.hidden, 0, shape.hidden, 1).setOnes();
  }
  return p;
}

Eigen::Map<Eigen::MatrixXf> PolicyParams::tensor(std::string_view name) {
  for (const TensorSpec& spec : tensors_) {
    if (spec.name == name) {
      return {flat_.data() + spec.offset, spec.rows, spec.cols};
    }
  }
  throw ContractError("unknown parameter tensor: " + std::string(name));
}

Eigen::Map<const Eigen::MatrixXf> PolicyParams::tensor(std::string_view name) const {
  for (const TensorSpec& spec : tensors_) {
    if (spec.name == name) {
      return {flat_.data() + spec.offset, spec.rows, spec.cols};
    }
  }
  throw ContractError("unknown parameter tensor: " + std::string(name));
}

void save_params(const PolicyParams& params, const std::string& path) {
  ordered_json header;
  header["version"] = kVersion;
  header["kind"] = "policy";
  header["arch"] = to_string(params.shape().arch);
  header["input"] = params.shape().input;
  header["hidden"] = params.shape().hidden;
  header["fc_dim"] = params.shape().fc_dim;
  header["codec_min_kbps"] = kMinRateKbps;
  header["codec_max_kbps"] = kMaxRateKbps;
  header["layout"] = "f32_le";
  header["count"] = params.count();
  ordered_json tensors = ordered_json::array();
  for (const TensorSpec& spec : params.tensors()) {
    ordered_json t;
    t["name"] = spec.name;
    t["rows"] = spec.rows;
    t["cols"] = spec.cols;
    tensors.push_back(t);
  }
  header["tensors"] = tensors;

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot open for writing: " + path);
  const std::string line = header.dump() + "\n";
  bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
  ok = ok && std::fwrite(params.flat().data(), sizeof(float),
                         params.flat().size(), f) == params.flat().size();
  ok = std::fclose(f) == 0 && ok;
  if (!ok) throw DataError("short write to " + path);
}

PolicyParams load_params(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open: " + path);
  struct Closer {
    std::FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  std::string line;
  int c;
  while ((c = std::fgetc(f)) >= 0 && c != '\n') line.push_back(static_cast<char>(c));
  if (c < 0) throw DataError("policy file " + path + ": truncated header");
  PolicyShape shape;
  int64_t count = 0;
  try {
    const ordered_json header = ordered_json::parse(line);
    const std::string version = header.at("version").get<std::string>();
    if (version != kVersion) {
      throw DataError("policy file " + path + ": version mismatch: file written by " +
                      version + ", this build reads " + kVersion);
    }
    if (header.value("kind", "") != "policy") {
      throw DataError("policy file " + path + ": not a policy parameter file");
    }
    if (header.value("layout", "") != "f32_le") {
      throw DataError("policy file " + path + ": unsupported layout");
    }
    shape.arch = arch_from_string(header.at("arch").get<std::string>());
    shape.input = header.at("input").get<int>();
    shape.hidden = header.at("hidden").get<int>();
    shape.fc_dim = header.at("fc_dim").get<int>();
    if (header.at("codec_min_kbps").get<double>() != kMinRateKbps ||
        header.at("codec_max_kbps").get<double>() != kMaxRateKbps) {
      throw DataError("policy file " + path + ": action codec bounds mismatch");
    }
    count = header.at("count").get<int64_t>();
    const std::vector<TensorSpec> expect = policy_tensor_layout(shape);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != expect.size()) {
      throw DataError("policy file " + path + ": architecture mismatch: tensor table has " +
                      std::to_string(tensors.size()) + " entries, shape needs " +
                      std::to_string(expect.size()));
    }
    for (size_t i = 0; i < expect.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != expect[i].name ||
          t.at("rows").get<int>() != expect[i].rows ||
          t.at("cols").get<int>() != expect[i].cols) {
        throw DataError("policy file " + path + ": architecture mismatch at tensor " +
                        expect[i].name);
      }
    }
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("policy file " + path + ": malformed header: " + e.what());
  }

  PolicyParams params(shape);
  if (params.count() != count) {
    throw DataError("policy file " + path + ": header count " + std::to_string(count) +
                    " does not match shape (" + std::to_string(params.count()) + ")");
  }
  const size_t read =
      std::fread(params.flat().data(), sizeof(float), params.flat().size(), f);
  if (read != params.flat().size()) {
    throw DataError("policy file " + path + ": truncated parameter block (" +
                    std::to_string(read) + " of " + std::to_string(params.count()) +
                    " floats)");
  }
  if (std::fgetc(f) >= 0) {
    throw DataError("policy file " + path + ": trailing bytes after parameter block");
  }
  return params;
}

PolicyRunner::PolicyRunner(const PolicyParams& params) : p_(&params) { reset(); }

void PolicyRunner::reset() {
  const PolicyShape& s = p_->shape();
  h_ = Eigen::VectorXf::Zero(s.hidden);
  c_ = Eigen::VectorXf::Zero(s.hidden);
  z_ = Eigen::VectorXf::Zero(s.arch == ArchTag::lstm ? 4 * s.hidden : s.hidden);
  y_ = Eigen::VectorXf::Zero(s.fc_dim);
}

float PolicyRunner::step(const Observation& obs) {
  const PolicyShape& s = p_->shape();
  const Eigen::Map<const Eigen::VectorXf> x(obs.values.data(), s.input);
  const int H = s.hidden;
  if (s.arch == ArchTag::lstm) {
    z_.noalias() = p_->tensor("w_x") * x;
    z_.noalias() += p_->tensor("w_h") * h_;
    z_ += p_->tensor("b").col(0);
    const auto i = sigmoid(z_.segment(0, H).array());
    const auto f = sigmoid(z_.segment(H, H).array());
    const auto g = z_.segment(2 * H, H).array().tanh();
    const auto o = sigmoid(z_.segment(3 * H, H).array());
    c_.array() = f * c_.array() + i * g;
    h_.array() = o * c_.array().tanh();
  } else {
    z_.noalias() = p_->tensor("w_x") * x;
    z_ += p_->tensor("b").col(0);
    h_ = z_.cwiseMax(0.0f);
  }
  y_.noalias() = p_->tensor("fc1_w") * h_;
  y_ += p_->tensor("fc1_b").col(0);
  y_ = y_.cwiseMax(0.0f);
  const float pre = (p_->tensor("fc2_w") * y_)(0) + p_->tensor("fc2_b")(0, 0);
  return 1.0f / (1.0f + std::exp(-pre));
}

SequenceBatch::SequenceBatch(const PolicyParams& params,
                             std::vector<std::span<const TrajectoryStep>> seqs)
    : p_(&params), seqs_(std::move(seqs)) {
  if (seqs_.empty() || seqs_.size() > kChunkSize) {
    throw ContractError("sequence chunk must hold 1.." + std::to_string(kChunkSize) +
                        " sequences");
  }
  batch_ = static_cast<int>(seqs_.size());
  for (const auto& s : seqs_) {
    t_max_ = std::max(t_max_, static_cast<int>(s.size()));
  }
}

void SequenceBatch::forward() {
  const PolicyShape& s = p_->shape();
  const int H = s.hidden, D = s.fc_dim, B = batch_;
  const bool lstm = s.arch == ArchTag::lstm;
  const auto w_x = p_->tensor("w_x");
  const auto b = p_->tensor("b");
  const auto fc1_w = p_->tensor("fc1_w");
  const auto fc1_b = p_->tensor("fc1_b");
  const auto fc2_w = p_->tensor("fc2_w");
  const float fc2_b = p_->tensor("fc2_b")(0, 0);

  xs_.assign(static_cast<size_t>(t_max_), Eigen::MatrixXf::Zero(s.input, B));
  gates_.assign(static_cast<size_t>(t_max_),
                Eigen::MatrixXf::Zero(lstm ? 4 * H : H, B));
  if (lstm) {
    cs_.assign(static_cast<size_t>(t_max_), Eigen::MatrixXf::Zero(H, B));
    tanh_cs_.assign(static_cast<size_t>(t_max_), Eigen::MatrixXf::Zero(H, B));
  }
  hs_.assign(static_cast<size_t>(t_max_), Eigen::MatrixXf::Zero(H, B));
  pre1s_.assign(static_cast<size_t>(t_max_), Eigen::MatrixXf::Zero(D, B));
  as_.assign(static_cast<size_t>(t_max_), Eigen::RowVectorXf::Zero(B));
  actions_.assign(seqs_.size(), {});
  for (size_t i = 0; i < seqs_.size(); ++i) actions_[i].resize(seqs_[i].size());

  Eigen::MatrixXf h = Eigen::MatrixXf::Zero(H, B);
  Eigen::MatrixXf c = Eigen::MatrixXf::Zero(H, B);
  Eigen::MatrixXf z(lstm ? 4 * H : H, B), p1(D, B);
  for (int t = 0; t < t_max_; ++t) {
    Eigen::MatrixXf& x = xs_[static_cast<size_t>(t)];
    for (int col = 0; col < B; ++col) {
      const auto& seq = seqs_[static_cast<size_t>(col)];
      if (static_cast<size_t>(t) < seq.size()) {
        x.col(col) = Eigen::Map<const Eigen::VectorXf>(
            seq[static_cast<size_t>(t)].obs.values.data(), s.input);
      }
    }
    z.noalias() = w_x * x;
    if (lstm) z.noalias() += p_->tensor("w_h") * h;
    z.colwise() += b.col(0);
    Eigen::MatrixXf& gate = gates_[static_cast<size_t>(t)];
    if (lstm) {
      gate.topRows(H) = sigmoid(z.topRows(H).array());
      gate.middleRows(H, H) = sigmoid(z.middleRows(H, H).array());
      gate.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh();
      gate.bottomRows(H) = sigmoid(z.bottomRows(H).array());
      c.array() = gate.middleRows(H, H).array() * c.array() +
                  gate.topRows(H).array() * gate.middleRows(2 * H, H).array();
      cs_[static_cast<size_t>(t)] = c;
      tanh_cs_[static_cast<size_t>(t)] = c.array().tanh();
      h.array() = gate.bottomRows(H).array() * tanh_cs_[static_cast<size_t>(t)].array();
    } else {
      gate = z;
      h = z.cwiseMax(0.0f);
    }
    hs_[static_cast<size_t>(t)] = h;
    p1.noalias() = fc1_w * h;
    p1.colwise() += fc1_b.col(0);
    pre1s_[static_cast<size_t>(t)] = p1;
    const Eigen::RowVectorXf pre2 =
        (fc2_w * p1.cwiseMax(0.0f)).row(0).array() + fc2_b;
    as_[static_cast<size_t>(t)] = sigmoid(pre2.array());
    for (int col = 0; col < B; ++col) {
      if (static_cast<size_t>(t) < seqs_[static_cast<size_t>(col)].size()) {
        actions_[static_cast<size_t>(col)][static_cast<size_t>(t)] =
            as_[static_cast<size_t>(t)](col);
      }
    }
  }
}

void SequenceBatch::backward(const std::vector<std::vector<float>>& dlda,
                             std::vector<float>& grad) {
  const PolicyShape& s = p_->shape();
  const int H = s.hidden, D = s.fc_dim, B = batch_;
  const bool lstm = s.arch == ArchTag::lstm;
  if (dlda.size() != seqs_.size()) throw ContractError("dlda batch size mismatch");
  for (size_t i = 0; i < seqs_.size(); ++i) {
    if (dlda[i].size() != seqs_[i].size()) throw ContractError("dlda length mismatch");
  }
  if (grad.size() != static_cast<size_t>(p_->count())) {
    throw ContractError("gradient buffer size mismatch");
  }
  // Accumulate into Eigen-owned storage (fixed 64-byte alignment) so that
  // vectorized reductions always see the same peel boundaries; adding into
  // the caller's buffer element by element afterwards is rounding-exact.
  // This keeps gradients bit-identical across runs and heap layouts.
  Eigen::VectorXf gbuf = Eigen::VectorXf::Zero(p_->count());
  auto gmap = [&](const char* name) {
    for (const TensorSpec& spec : p_->tensors()) {
      if (spec.name == name) {
        return Eigen::Map<Eigen::MatrixXf>(gbuf.data() + spec.offset, spec.rows, spec.cols);
      }
    }
    throw ContractError(std::string("unknown gradient tensor: ") + name);
  };
  auto g_wx = gmap("w_x");
  auto g_b = gmap("b");
  auto g_fc1w = gmap("fc1_w");
  auto g_fc1b = gmap("fc1_b");
  auto g_fc2w = gmap("fc2_w");
  auto g_fc2b = gmap("fc2_b");
  const auto fc1_w = p_->tensor("fc1_w");
  const auto fc2_w = p_->tensor("fc2_w");

  Eigen::MatrixXf dh_next = Eigen::MatrixXf::Zero(H, B);
  Eigen::MatrixXf dc_next = Eigen::MatrixXf::Zero(H, B);
  Eigen::RowVectorXf da(B);
  for (int t = t_max_ - 1; t >= 0; --t) {
    da.setZero();
    for (int col = 0; col < B; ++col) {
      const auto& g = dlda[static_cast<size_t>(col)];
      if (static_cast<size_t>(t) < g.size()) da(col) = g[static_cast<size_t>(t)];
    }
    const Eigen::RowVectorXf& a = as_[static_cast<size_t>(t)];
    const Eigen::RowVectorXf ds2 =
        (da.array() * a.array() * (1.0f - a.array())).matrix();
    const Eigen::MatrixXf y1 = pre1s_[static_cast<size_t>(t)].cwiseMax(0.0f);
    g_fc2w.noalias() += ds2 * y1.transpose();
    g_fc2b(0, 0) += ds2.sum();
    Eigen::MatrixXf dp1 = fc2_w.transpose() * ds2;
    dp1.array() *=
        (pre1s_[static_cast<size_t>(t)].array() > 0.0f).cast<float>();
    g_fc1w.noalias() += dp1 * hs_[static_cast<size_t>(t)].transpose();
    g_fc1b.col(0) += dp1.rowwise().sum();
    Eigen::MatrixXf dh = fc1_w.transpose() * dp1;
    dh += dh_next;

    const Eigen::MatrixXf& gate = gates_[static_cast<size_t>(t)];
    if (lstm) {
      const auto i = gate.topRows(H).array();
      const auto f = gate.middleRows(H, H).array();
      const auto g = gate.middleRows(2 * H, H).array();
      const auto o = gate.bottomRows(H).array();
      const auto tanh_c = tanh_cs_[static_cast<size_t>(t)].array();
      const Eigen::MatrixXf c_prev =
          t > 0 ? cs_[static_cast<size_t>(t - 1)] : Eigen::MatrixXf::Zero(H, B);
      Eigen::MatrixXf dz(4 * H, B);
      const auto dc = (dc_next.array() + dh.array() * o * (1.0f - tanh_c.square())).eval();
      dz.topRows(H) = (dc * g * i * (1.0f - i)).matrix();
      dz.middleRows(H, H) = (dc * c_prev.array() * f * (1.0f - f)).matrix();
      dz.middleRows(2 * H, H) = (dc * i * (1.0f - g.square())).matrix();
      dz.bottomRows(H) = (dh.array() * tanh_c * o * (1.0f - o)).matrix();
      dc_next = (dc * f).matrix();
      g_wx.noalias() += dz * xs_[static_cast<size_t>(t)].transpose();
      const Eigen::MatrixXf h_prev =
          t > 0 ? hs_[static_cast<size_t>(t - 1)] : Eigen::MatrixXf::Zero(H, B);
      gmap("w_h").noalias() += dz * h_prev.transpose();
      g_b.col(0) += dz.rowwise().sum();
      dh_next.noalias() = p_->tensor("w_h").transpose() * dz;
    } else {
      Eigen::MatrixXf dz = dh;
      dz.array() *= (gate.array() > 0.0f).cast<float>();
      g_wx.noalias() += dz * xs_[static_cast<size_t>(t)].transpose();
      g_b.col(0) += dz.rowwise().sum();
      dh_next.setZero();
    }
  }
  const float* gb = gbuf.data();
  for (size_t i = 0; i < grad.size(); ++i) grad[i] += gb[i];
}

ReferenceNet::ReferenceNet(const PolicyShape& shape, std::vector<double> flat)
    : shape_(shape), tensors_(policy_tensor_layout(shape)), flat_(std::move(flat)) {
  const TensorSpec& last = tensors_.back();
  if (flat_.size() != static_cast<size_t>(last.offset + last.rows * last.cols)) {
    throw ContractError("reference net weight count mismatch");
  }
}

ReferenceNet ReferenceNet::from(const PolicyParams& params) {
  std::vector<double> flat(params.flat().begin(), params.flat().end());
  return {params.shape(), std::move(flat)};
}

double ReferenceNet::at(std::string_view name, int r, int c) const {
  for (const TensorSpec& spec : tensors_) {
    if (spec.name == name) {
      return flat_[static_cast<size_t>(spec.offset + static_cast<int64_t>(c) * spec.rows + r)];
    }
  }
  throw ContractError("unknown parameter tensor: " + std::string(name));
}

std::vector<double> ReferenceNet::forward(std::span<const TrajectoryStep> seq) const {
  const int H = shape_.hidden, D = shape_.fc_dim, in = shape_.input;
  const bool lstm = shape_.arch == ArchTag::lstm;
  const int gate_rows = lstm ? 4 * H : H;
  std::vector<double> h(static_cast<size_t>(H), 0.0), c(static_cast<size_t>(H), 0.0);
  std::vector<double> z(static_cast<size_t>(gate_rows)), y(static_cast<size_t>(D));
  std::vector<double> out;
  out.reserve(seq.size());
  for (const TrajectoryStep& step : seq) {
    for (int r = 0; r < gate_rows; ++r) {
      double acc = at("b", r, 0);
      for (int k = 0; k < in; ++k) {
        acc += at("w_x", r, k) * static_cast<double>(step.obs.values[static_cast<size_t>(k)]);
      }
      if (lstm) {
        for (int k = 0; k < H; ++k) acc += at("w_h", r, k) * h[static_cast<size_t>(k)];
      }
      z[static_cast<size_t>(r)] = acc;
    }
    if (lstm) {
      for (int r = 0; r < H; ++r) {
        const double i = 1.0 / (1.0 + std::exp(-z[static_cast<size_t>(r)]));
        const double f = 1.0 / (1.0 + std::exp(-z[static_cast<size_t>(H + r)]));
        const double g = std::tanh(z[static_cast<size_t>(2 * H + r)]);
        const double o = 1.0 / (1.0 + std::exp(-z[static_cast<size_t>(3 * H + r)]));
        c[static_cast<size_t>(r)] = f * c[static_cast<size_t>(r)] + i * g;
        h[static_cast<size_t>(r)] = o * std::tanh(c[static_cast<size_t>(r)]);
      }
    } else {
      for (int r = 0; r < H; ++r) h[static_cast<size_t>(r)] = std::max(z[static_cast<size_t>(r)], 0.0);
    }
    for (int r = 0; r < D; ++r) {
      double acc = at("fc1_b", r, 0);
      for (int k = 0; k < H; ++k) acc += at("fc1_w", r, k) * h[static_cast<size_t>(k)];
      y[static_cast<size_t>(r)] = std::max(acc, 0.0);
    }
    double pre = at("fc2_b", 0, 0);
    for (int k = 0; k < D; ++k) pre += at("fc2_w", 0, k) * y[static_cast<size_t>(k)];
    out.push_back(1.0 / (1.0 + std::exp(-pre)));
  }
  return out;
}

std::vector<double> ReferenceNet::backward(std::span<const TrajectoryStep> seq,
                                           std::span<const double> dlda) const {
  if (dlda.size() != seq.size()) throw ContractError("dlda length mismatch");
  // Re-run the forward pass keeping every activation, then reverse.
  const int H = shape_.hidden, D = shape_.fc_dim, in = shape_.input;
  const bool lstm = shape_.arch == ArchTag::lstm;
  const int gate_rows = lstm ? 4 * H : H;
  const int64_t T = static_cast<int64_t>(seq.size());
  auto idx = [](int64_t t, int r, int rows) { return static_cast<size_t>(t * rows + r); };

  std::vector<double> zs(static_cast<size_t>(T * gate_rows));
  std::vector<double> hs(static_cast<size_t>(T * H)), cs(lstm ? static_cast<size_t>(T * H) : 0);
  std::vector<double> p1s(static_cast<size_t>(T * D));
  std::vector<double> as(static_cast<size_t>(T));
  std::vector<double> h(static_cast<size_t>(H), 0.0), c(static_cast<size_t>(H), 0.0);
  for (int64_t t = 0; t < T; ++t) {
    const TrajectoryStep& step = seq[static_cast<size_t>(t)];
    for (int r = 0; r < gate_rows; ++r) {
      double acc = at("b", r, 0);
      for (int k = 0; k < in; ++k) {
        acc += at("w_x", r, k) * static_cast<double>(step.obs.values[static_cast<size_t>(k)]);
      }
      if (lstm) {
        for (int k = 0; k < H; ++k) acc += at("w_h", r, k) * h[static_cast<size_t>(k)];
      }
      zs[idx(t, r, gate_rows)] = acc;
    }
    if (lstm) {
      for (int r = 0; r < H; ++r) {
        const double i = 1.0 / (1.0 + std::exp(-zs[idx(t, r, gate_rows)]));
        const double f = 1.0 / (1.0 + std::exp(-zs[idx(t, H + r, gate_rows)]));
        const double g = std::tanh(zs[idx(t, 2 * H + r, gate_rows)]);
        const double o = 1.0 / (1.0 + std::exp(-zs[idx(t, 3 * H + r, gate_rows)]));
        c[static_cast<size_t>(r)] = f * c[static_cast<size_t>(r)] + i * g;
        h[static_cast<size_t>(r)] = o * std::tanh(c[static_cast<size_t>(r)]);
        cs[idx(t, r, H)] = c[static_cast<size_t>(r)];
      }
    } else {
      for (int r = 0; r < H; ++r) {
        h[static_cast<size_t>(r)] = std::max(zs[idx(t, r, gate_rows)], 0.0);
      }
    }
    for (int r = 0; r < H; ++r) hs[idx(t, r, H)] = h[static_cast<size_t>(r)];
    double pre2 = at("fc2_b", 0, 0);
    for (int r = 0; r < D; ++r) {
      double acc = at("fc1_b", r, 0);
      for (int k = 0; k < H; ++k) acc += at("fc1_w", r, k) * h[static_cast<size_t>(k)];
      p1s[idx(t, r, D)] = acc;
      pre2 += at("fc2_w", 0, r) * std::max(acc, 0.0);
    }
    as[static_cast<size_t>(t)] = 1.0 / (1.0 + std::exp(-pre2));
  }

  std::vector<double> grad(flat_.size(), 0.0);
  auto gref = [&](std::string_view name, int r, int cc) -> double& {
    for (const TensorSpec& spec : tensors_) {
      if (spec.name == name) {
        return grad[static_cast<size_t>(spec.offset + static_cast<int64_t>(cc) * spec.rows + r)];
      }
    }
    throw ContractError("unknown gradient tensor: " + std::string(name));
  };
  std::vector<double> dh_next(static_cast<size_t>(H), 0.0), dc_next(static_cast<size_t>(H), 0.0);
  std::vector<double> dh(static_cast<size_t>(H)), dz(static_cast<size_t>(gate_rows));
  for (int64_t t = T - 1; t >= 0; --t) {
    const TrajectoryStep& step = seq[static_cast<size_t>(t)];
    const double a = as[static_cast<size_t>(t)];
    const double ds2 = dlda[static_cast<size_t>(t)] * a * (1.0 - a);
    gref("fc2_b", 0, 0) += ds2;
    std::fill(dh.begin(), dh.end(), 0.0);
    for (int r = 0; r < D; ++r) {
      const double p1 = p1s[idx(t, r, D)];
      const double y1 = std::max(p1, 0.0);
      gref("fc2_w", 0, r) += ds2 * y1;
      if (p1 <= 0.0) continue;
      const double dp1 = at("fc2_w", 0, r) * ds2;
      gref("fc1_b", r, 0) += dp1;
      for (int k = 0; k < H; ++k) {
        gref("fc1_w", r, k) += dp1 * hs[idx(t, k, H)];
        dh[static_cast<size_t>(k)] += at("fc1_w", r, k) * dp1;
      }
    }
    for (int r = 0; r < H; ++r) dh[static_cast<size_t>(r)] += dh_next[static_cast<size_t>(r)];

    if (lstm) {
      for (int r = 0; r < gate_rows; ++r) dz[static_cast<size_t>(r)] = 0.0;
      std::vector<double> dh_prev(static_cast<size_t>(H), 0.0);
      for (int r = 0; r < H; ++r) {
        const double i = 1.0 / (1.0 + std::exp(-zs[idx(t, r, gate_rows)]));
        const double f = 1.0 / (1.0 + std::exp(-zs[idx(t, H + r, gate_rows)]));
        const double g = std::tanh(zs[idx(t, 2 * H + r, gate_rows)]);
        const double o = 1.0 / (1.0 + std::exp(-zs[idx(t, 3 * H + r, gate_rows)]));
        const double tanh_c = std::tanh(cs[idx(t, r, H)]);
        const double c_prev = t > 0 ? cs[idx(t - 1, r, H)] : 0.0;
        const double dc =
            dc_next[static_cast<size_t>(r)] +
            dh[static_cast<size_t>(r)] * o * (1.0 - tanh_c * tanh_c);
        dz[static_cast<size_t>(r)] = dc * g * i * (1.0 - i);
        dz[static_cast<size_t>(H + r)] = dc * c_prev * f * (1.0 - f);
        dz[static_cast<size_t>(2 * H + r)] = dc * i * (1.0 - g * g);
        dz[static_cast<size_t>(3 * H + r)] = dh[static_cast<size_t>(r)] * tanh_c * o * (1.0 - o);
        dc_next[static_cast<size_t>(r)] = dc * f;
      }
      for (int r = 0; r < gate_rows; ++r) {
        const double d = dz[static_cast<size_t>(r)];
        if (d == 0.0) continue;
        gref("b", r, 0) += d;
        for (int k = 0; k < in; ++k) {
          gref("w_x", r, k) += d * static_cast<double>(step.obs.values[static_cast<size_t>(k)]);
        }
        for (int k = 0; k < H; ++k) {
          const double h_prev = t > 0 ? hs[idx(t - 1, k, H)] : 0.0;
          gref("w_h", r, k) += d * h_prev;
          dh_prev[static_cast<size_t>(k)] += at("w_h", r, k) * d;
        }
      }
      dh_next = dh_prev;
    } else {
      for (int r = 0; r < H; ++r) {
        const double d = zs[idx(t, r, gate_rows)] > 0.0 ? dh[static_cast<size_t>(r)] : 0.0;
        if (d == 0.0) continue;
        gref("b", r, 0) += d;
        for (int k = 0; k < in; ++k) {
          gref("w_x", r, k) += d * static_cast<double>(step.obs.values[static_cast<size_t>(k)]);
        }
      }
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
    }
  }
  return grad;
}

PolicyEstimator::PolicyEstimator(std::shared_ptr<const PolicyParams> params)
    : params_(std::move(params)), runner_(*params_) {
  if (!params_) throw ContractError("policy estimator needs parameters");
}

void PolicyEstimator::set_exploration(double log_std) {
  explore_ = true;
  log_std_ = log_std;
}

void PolicyEstimator::clear_exploration() { explore_ = false; }

void PolicyEstimator::reset(uint64_t episode_seed) {
  runner_.reset();
  rng_ = Rng(episode_seed);
}

double PolicyEstimator::estimate_kbps(const Observation& obs, const StepContext&) {
  double a = static_cast<double>(runner_.step(obs));
  if (explore_) {
    a = std::clamp(a + std::exp(log_std_) * rng_.normal(), 0.0, 1.0);
  }
  return decode_action(a);
}

std::unique_ptr<Estimator> PolicyEstimator::clone() const {
  auto copy = std::make_unique<PolicyEstimator>(params_);
  copy->explore_ = explore_;
  copy->log_std_ = log_std_;
  return copy;
}

Adam::Adam(int64_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.assign(static_cast<size_t>(n), 0.0f);
  v_.assign(static_cast<size_t>(n), 0.0f);
}

void Adam::step(AlignedVec& params, const std::vector<float>& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ContractError("adam buffer size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double m = beta1_ * static_cast<double>(m_[i]) + (1.0 - beta1_) * g;
    const double v = beta2_ * static_cast<double>(v_[i]) + (1.0 - beta2_) * g * g;
    m_[i] = static_cast<float>(m);
    v_[i] = static_cast<float>(v);
    params[i] = static_cast<float>(static_cast<double>(params[i]) -
                                   lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
  }
}

double global_norm(const std::vector<float>& grad) {
  double sq = 0.0;
  for (float g : grad) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

void clip_global_norm(std::vector<float>& grad, double max_norm) {
  const double norm = global_norm(grad);
  if (norm <= max_norm || norm == 0.0) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (float& g : grad) g *= scale;
}

}  // namespace merlin
