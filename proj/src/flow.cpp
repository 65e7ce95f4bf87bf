#include "satflow/flow.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <optional>
#include <random>

#include "binary_io.hpp"

namespace satflow::flow {

using ad::Shape;

namespace {

constexpr char kMagic[4] = {'S', 'F', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHalf = kFeatureDim / 2;
constexpr std::size_t kQkInputDim = 3 + data::kCondDim;

}  // namespace

std::string head_name(Head h) {
  switch (h) {
    case Head::plain: return "plain";
    case Head::sa1: return "sa1";
    case Head::sa2: return "sa2";
  }
  return "?";
}

Head parse_head(const std::string& s) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  if (l == "plain") return Head::plain;
  if (l == "sa1") return Head::sa1;
  if (l == "sa2") return Head::sa2;
  throw std::invalid_argument("unknown head '" + s + "' (expected plain, sa1 or sa2)");
}

void ModelConfig::validate() const {
  if (n_coupling_layers < 1 || hidden_layers < 1 || hidden_units < 1 || steps < 1 || token_dim < 1) {
    throw std::invalid_argument("model config: all layer counts and sizes must be >= 1");
  }
  if (!(scale_clamp > 0.0)) throw std::invalid_argument("model config: scale_clamp must be positive");
  if (head != Head::plain && head != Head::sa1 && head != Head::sa2) {
    throw std::invalid_argument("model config: invalid head");
  }
}

Var scaled_dot_attention(Var q, Var k, Var v, Var* weights) {
  const double d = static_cast<double>(q.tape->shape(q).cols());
  Var a = ad::softmax(ad::bmm(q, k, true) * (1.0 / std::sqrt(d)));
  if (weights) *weights = a;
  return ad::bmm(a, v);
}

FlowModel::FlowModel(const ModelConfig& cfg, const data::Normalization& norm,
                     const data::ConditioningVector& cond_ref)
    : cfg_(cfg), norm_(norm), cond_ref_(cond_ref) {
  cfg_.validate();
  for (std::size_t j = 0; j < data::kInputDim; ++j) {
    if (!(norm.input_std[j] > 0.0)) throw std::invalid_argument("model: input_std must be positive");
    inv_std_.push_back(1.0 / norm.input_std[j]);
  }
  for (double s : norm.sigma_dw)
    if (!(s > 0.0)) throw std::invalid_argument("model: sigma_dw must be positive");
  for (double c : cond_ref) cond_scale_.push_back(c != 0.0 ? 1.0 / c : 1.0);
  torque_cols_ = {6, 7, 8};
  build();
}

FlowModel::Layer FlowModel::add_linear(const std::string& name, std::size_t in, std::size_t out,
                                       bool zero) {
  // Uniform(+-1/sqrt(fan_in)) for weight and bias, drawn in creation order.
  std::mt19937_64 rng(cfg_.seed * 0x9e3779b97f4a7c15ULL + params_.size());
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> d(-bound, bound);
  Tensor w(Shape{in, out});
  Tensor b(Shape{out});
  if (!zero) {
    for (auto& x : w.data) x = d(rng);
    for (auto& x : b.data) x = d(rng);
  }
  Layer l{params_.size(), params_.size() + 1};
  params_.emplace_back(name + ".weight", std::move(w));
  params_.emplace_back(name + ".bias", std::move(b));
  return l;
}

void FlowModel::build() {
  const std::size_t h = cfg_.hidden_units;
  for (std::uint32_t li = 0; li < cfg_.n_coupling_layers; ++li) {
    Coupling c;
    const std::size_t parity = li % 2;
    for (std::size_t j = 0; j < kFeatureDim; ++j) (j % 2 == parity ? c.pass : c.transform).push_back(j);
    c.restore.resize(kFeatureDim);
    for (std::size_t i = 0; i < kHalf; ++i) {
      c.restore[c.pass[i]] = i;
      c.restore[c.transform[i]] = kHalf + i;
    }
    const std::string base = "coupling" + std::to_string(li);
    for (const char* which : {"s", "t"}) {
      Mlp& m = which[0] == 's' ? c.s : c.t;
      std::size_t in = kHalf;
      for (std::uint32_t k = 0; k < cfg_.hidden_layers; ++k) {
        m.layers.push_back(add_linear(base + "." + which + ".fc" + std::to_string(k), in, h, false));
        in = h;
      }
      m.layers.push_back(add_linear(base + "." + which + ".out", in, kHalf, true));
    }
    couplings_.push_back(std::move(c));
  }

  const std::size_t z_dim = kFeatureDim + data::kCondDim;
  const std::size_t s = cfg_.steps, d = cfg_.token_dim;
  switch (cfg_.head) {
    case Head::plain:
      out_ = add_linear("head.out", z_dim + data::kInputDim, s * 3, true);
      break;
    case Head::sa1:
      tok_ = add_linear("head.tokens", z_dim, s * d, false);
      q_ = add_linear("head.query", d, d, false);
      k_ = add_linear("head.key", d, d, false);
      v_ = add_linear("head.value", d, d, false);
      out_ = add_linear("head.out", d, 3, true);
      break;
    case Head::sa2:
      tok_ = add_linear("head.tokens", z_dim, s * d, false);
      qk_q_ = add_linear("head.query", kQkInputDim, s * d, false);
      qk_k_ = add_linear("head.key", kQkInputDim, s * d, false);
      v_ = add_linear("head.value", d, d, false);
      out_ = add_linear("head.out", d, 3, true);
      break;
  }
}

std::vector<Parameter*> FlowModel::parameters() {
  std::vector<Parameter*> r;
  for (auto& p : params_) r.push_back(&p);
  return r;
}

std::vector<const Parameter*> FlowModel::parameters() const {
  std::vector<const Parameter*> r;
  for (const auto& p : params_) r.push_back(&p);
  return r;
}

Parameter* FlowModel::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

Var FlowModel::linear(Tape& t, const Layer& l, Var x) {
  return ad::affine(x, t.param(params_[l.w]), t.param(params_[l.b]));
}

Var FlowModel::mlp(Tape& t, const Mlp& m, Var x) {
  for (std::size_t i = 0; i + 1 < m.layers.size(); ++i) x = ad::relu(linear(t, m.layers[i], x));
  return linear(t, m.layers.back(), x);
}

Var FlowModel::couple(Tape& t, const Coupling& c, Var x, bool inverse) {
  Var xm = ad::select_cols(x, c.pass);
  Var xt = ad::select_cols(x, c.transform);
  Var s = ad::tanh(mlp(t, c.s, xm)) * cfg_.scale_clamp;
  Var shift = mlp(t, c.t, xm);
  Var y = inverse ? (xt - shift) * ad::exp(-s) : xt * ad::exp(s) + shift;
  return ad::select_cols(ad::concat(xm, y), c.restore);
}

Var FlowModel::head(Tape& t, Var z, Var input_n, Var cond_n, Var* attention) {
  const std::size_t batch = t.shape(z)[0];
  const std::size_t s = cfg_.steps, d = cfg_.token_dim;
  if (cfg_.head == Head::plain) return linear(t, out_, ad::concat(z, input_n));

  Var tokens = ad::reshape(linear(t, tok_, z), Shape{batch * s, d});
  Var v = ad::reshape(linear(t, v_, tokens), Shape{batch, s, d});
  Var q, k;
  if (cfg_.head == Head::sa1) {
    q = ad::reshape(linear(t, q_, tokens), Shape{batch, s, d});
    k = ad::reshape(linear(t, k_, tokens), Shape{batch, s, d});
  } else {
    Var qk_in = ad::concat(ad::select_cols(input_n, torque_cols_), cond_n);
    q = ad::reshape(linear(t, qk_q_, qk_in), Shape{batch, s, d});
    k = ad::reshape(linear(t, qk_k_, qk_in), Shape{batch, s, d});
  }
  Var o = ad::reshape(scaled_dot_attention(q, k, v, attention), Shape{batch * s, d});
  return ad::reshape(linear(t, out_, o), Shape{batch, s * 3});
}

Var FlowModel::forward(Tape& t, Var input_n, Var cond_n) {
  const Shape si = t.shape(input_n);
  const Shape sc = t.shape(cond_n);
  if (si.rank != 2 || si[1] != data::kInputDim || sc.rank != 2 || sc[1] != data::kCondDim ||
      sc[0] != si[0]) {
    throw ad::ShapeError("model forward: expected input [B,12] and cond [B,21], got " + si.str() +
                         " and " + sc.str());
  }
  Var x = couplings(t, ad::concat(input_n, ad::slice_cols(cond_n, 0, 12)));
  return head(t, ad::concat(x, cond_n), input_n, cond_n, nullptr);
}

Var FlowModel::normalize_input(Tape& t, Var raw_input) const {
  Var mean = t.constant(Tensor(Shape{data::kInputDim},
                               std::vector<double>(norm_.input_mean.begin(), norm_.input_mean.end())));
  Var inv = t.constant(Tensor(Shape{data::kInputDim}, inv_std_));
  return (raw_input - mean) * inv;
}

Var FlowModel::cond_features(Tape& t, const data::ConditioningVector& cond,
                             std::size_t batch) const {
  Tensor c(Shape{batch, data::kCondDim});
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < data::kCondDim; ++j) c.data[i * data::kCondDim + j] = cond[j] * cond_scale_[j];
  return t.constant(c);
}

Var FlowModel::normalize_cond(Tape& t, Var raw_cond) const {
  return raw_cond * t.constant(Tensor(Shape{data::kCondDim}, cond_scale_));
}

Var FlowModel::denormalize(Tape& t, Var out_n) const {
  Tensor scale(Shape{cfg_.steps * 3});
  for (std::size_t k = 0; k < cfg_.steps; ++k)
    for (std::size_t a = 0; a < 3; ++a) scale.data[k * 3 + a] = norm_.sigma_dw[a];
  return out_n * t.constant(scale);
}

Var FlowModel::predict(Tape& t, Var raw_input, const data::ConditioningVector& cond) {
  const std::size_t batch = t.shape(raw_input)[0];
  Var input_n = normalize_input(t, raw_input);
  return denormalize(t, forward(t, input_n, cond_features(t, cond, batch)));
}

Vec3 FlowModel::predict_next(const dynamics::BodyState& s, const Vec3& u_rw,
                             const data::ConditioningVector& cond) {
  thread_local Tape t;
  t.clear();
  t.set_param_grads(false);
  const double in[12] = {s.omega.x,    s.omega.y,    s.omega.z,    s.omega_rw.x,
                         s.omega_rw.y, s.omega_rw.z, u_rw.x,       u_rw.y,
                         u_rw.z,       s.omega_dot.x, s.omega_dot.y, s.omega_dot.z};
  const auto out = t.value(predict(t, t.input(Shape{1, 12}, in), cond));
  return {out[0], out[1], out[2]};
}

Var FlowModel::couplings(Tape& t, Var x, bool inverse) {
  const Shape s = t.shape(x);
  if (s.rank != 2 || s[1] != kFeatureDim) {
    throw ad::ShapeError("coupling stack: expected [B,24], got " + s.str());
  }
  if (inverse) {
    for (auto it = couplings_.rbegin(); it != couplings_.rend(); ++it) x = couple(t, *it, x, true);
  } else {
    for (const auto& c : couplings_) x = couple(t, c, x, false);
  }
  return x;
}

Tensor FlowModel::coupling_stack(const Tensor& features, bool inverse) {
  Tape t;
  t.set_param_grads(false);
  const auto v = t.value(couplings(t, t.input(features), inverse));
  return Tensor(features.shape, std::vector<double>(v.begin(), v.end()));
}

Tensor FlowModel::attention_weights(const Tensor& input_n, const Tensor& cond_n) {
  if (cfg_.head == Head::plain) return {};
  Tape t;
  t.set_param_grads(false);
  Var in = t.input(input_n);
  Var cn = t.input(cond_n);
  Var x = couplings(t, ad::concat(in, ad::slice_cols(cn, 0, 12)));
  Var a;
  head(t, ad::concat(x, cn), in, cn, &a);
  const auto v = t.value(a);
  return Tensor(t.shape(a), std::vector<double>(v.begin(), v.end()));
}

// ---------------------------------------------------------------------------

void save_weights(const FlowModel& m, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(kVersion);
  const auto& c = m.config();
  w.put(c.n_coupling_layers);
  w.put(c.hidden_layers);
  w.put(c.hidden_units);
  w.put(c.steps);
  w.put(static_cast<std::uint32_t>(c.head));
  w.put(c.token_dim);
  w.put(c.scale_clamp);
  w.put(c.seed);
  const auto& n = m.normalization();
  w.put_doubles(n.input_mean);
  w.put_doubles(n.input_std);
  w.put_doubles(n.sigma_dw);
  w.put_doubles(n.sigma_wdot);
  w.put_doubles(m.cond_ref());
  const auto params = m.parameters();
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.put_string(p->name);
    w.put(static_cast<std::uint32_t>(p->value.shape.rank));
    for (std::size_t i = 0; i < p->value.shape.rank; ++i) w.put(static_cast<std::uint64_t>(p->value.shape[i]));
    w.put_doubles(p->value.data);
  }
  w.finish();
}

FlowModel load_weights(const std::filesystem::path& path) {
  io::BinaryReader<FormatError> r(path);
  char magic[4];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw FormatError("not a weights file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported weights version " + std::to_string(version));
  ModelConfig c;
  c.n_coupling_layers = r.get<std::uint32_t>();
  c.hidden_layers = r.get<std::uint32_t>();
  c.hidden_units = r.get<std::uint32_t>();
  c.steps = r.get<std::uint32_t>();
  c.head = static_cast<Head>(r.get<std::uint32_t>());
  c.token_dim = r.get<std::uint32_t>();
  c.scale_clamp = r.get<double>();
  c.seed = r.get<std::uint64_t>();
  // Guard against absurd sizes before allocating anything.
  if (c.n_coupling_layers > 64 || c.hidden_layers > 64 || c.hidden_units > 4096 || c.steps > 1000 ||
      c.token_dim > 4096) {
    throw FormatError("weights header: implausible model config");
  }
  data::Normalization n;
  r.get_doubles(n.input_mean);
  r.get_doubles(n.input_std);
  r.get_doubles(n.sigma_dw);
  r.get_doubles(n.sigma_wdot);
  data::ConditioningVector cond_ref;
  r.get_doubles(cond_ref);

  std::optional<FlowModel> m;
  try {
    m.emplace(c, n, cond_ref);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("weights header: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  if (count != m->parameters().size()) {
    throw FormatError("weights file has " + std::to_string(count) + " tensors, config expects " +
                      std::to_string(m->parameters().size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string();
    Parameter* p = m->find(name);
    if (!p) throw FormatError("weights file: unknown tensor '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    if (rank != p->value.shape.rank) throw FormatError("weights file: rank mismatch for '" + name + "'");
    for (std::size_t d = 0; d < rank; ++d) {
      if (r.get<std::uint64_t>() != p->value.shape[d]) {
        throw FormatError("weights file: shape mismatch for '" + name + "', expected " +
                          p->value.shape.str());
      }
    }
    r.get_doubles(p->value.data);
  }
  if (r.remaining() != 0) throw FormatError("weights file: trailing bytes");
  return std::move(*m);
}

}  // namespace satflow::flow
