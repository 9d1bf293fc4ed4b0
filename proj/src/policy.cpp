#include "tsp/policy.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "tsp/config.hpp"
#include "tsp/error.hpp"

namespace tsp::policy {

std::string leaf_prefix(env::Branch b) { return std::string(kLeafPrefix) + std::to_string(env::branch_index(b)) + "."; }

HeadValues values_at(const HeadOutputs& out, std::size_t row) {
  HeadValues v;
  const auto r = out.root_logits.value().row(row);
  v.root_logits.assign(r.begin(), r.end());
  v.root_value = out.root_value.value().at(row, 0);
  for (std::size_t b = 0; b < env::kBranchCount; ++b) {
    const auto l = out.leaf_logits[b].value().row(row);
    v.leaf_logits[b].assign(l.begin(), l.end());
    v.leaf_value[b] = out.leaf_value[b].value().at(row, 0);
  }
  v.align_logit = out.align_logit.value().at(row, 0);
  return v;
}

TreePolicy::TreePolicy(int state_dim) {
  const auto d = static_cast<std::size_t>(state_dim);
  root_pi_ = {std::string(kRootPrefix) + "pi", d, env::kBranchCount};
  root_v_ = {std::string(kRootPrefix) + "v", d, 1};
  for (int b = 0; b < env::kBranchCount; ++b) {
    const auto pre = leaf_prefix(env::branch_from_index(b));
    const auto bi = static_cast<std::size_t>(b);
    leaf_pi_[bi] = {pre + "pi", d, static_cast<std::size_t>(env::kPrimitiveCounts[bi])};
    leaf_v_[bi] = {pre + "v", d, 1};
  }
  align_ = {std::string(kAlignPrefix) + "c", d, 1};
}

TreePolicy TreePolicy::create(num::ParamStore& store, int state_dim, Rng& rng) {
  TreePolicy p(state_dim);
  auto make = [&](const num::DenseLayer& l) { num::DenseLayer::create(store, l.prefix, l.in, l.out, rng); };
  make(p.root_pi_);
  make(p.root_v_);
  for (std::size_t b = 0; b < env::kBranchCount; ++b) {
    make(p.leaf_pi_[b]);
    make(p.leaf_v_[b]);
  }
  make(p.align_);
  return p;
}

HeadOutputs TreePolicy::forward(num::Tape& tape, num::Var state) const {
  HeadOutputs o;
  o.root_logits = root_pi_.forward(tape, state);
  o.root_value = root_v_.forward(tape, state);
  for (std::size_t b = 0; b < env::kBranchCount; ++b) {
    o.leaf_logits[b] = leaf_pi_[b].forward(tape, state);
    o.leaf_value[b] = leaf_v_[b].forward(tape, state);
  }
  o.align_logit = align_.forward(tape, state);
  return o;
}

ActResult act(const HeadValues& heads, ActMode mode, Rng& rng) {
  ActResult res;
  res.diag.root = mode == ActMode::Sample ? num::softmax_categorical(heads.root_logits, rng)
                                          : num::softmax_greedy(heads.root_logits);
  const std::size_t b = res.diag.root.sample;
  res.branch = env::branch_from_index(static_cast<int>(b));
  res.diag.leaf = mode == ActMode::Sample ? num::softmax_categorical(heads.leaf_logits[b], rng)
                                          : num::softmax_greedy(heads.leaf_logits[b]);
  res.action = {res.branch, static_cast<int>(res.diag.leaf.sample)};
  res.diag.root_value = heads.root_value;
  res.diag.leaf_value = heads.leaf_value[b];
  res.diag.align_logit = heads.align_logit;
  return res;
}

std::array<env::PrimitiveAction, env::kBranchCount> counterfactual_actions(const HeadValues& heads) {
  std::array<env::PrimitiveAction, env::kBranchCount> out;
  for (std::size_t b = 0; b < env::kBranchCount; ++b)
    out[b] = {env::branch_from_index(static_cast<int>(b)), static_cast<int>(num::argmax_first(heads.leaf_logits[b]))};
  return out;
}

// ---- Model -----------------------------------------------------------------

Model::Model(const enc::EncoderConfig& cfg, num::ParamStore store)
    : encoder_config(cfg), params(std::move(store)), encoder(cfg), policy(cfg.hidden_dim) {}

Model Model::create(const enc::EncoderConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  num::ParamStore store;
  enc::Encoder::create(store, cfg, rng);
  TreePolicy::create(store, cfg.hidden_dim, rng);
  return Model(cfg, std::move(store));
}

HeadValues Model::heads_for_state(std::span<const double> state) const {
  require(state.size() == static_cast<std::size_t>(encoder_config.hidden_dim), "state width mismatch");
  num::Tape tape(&params);
  num::Var s = tape.constant(num::Tensor({1, state.size()}, std::vector<double>(state.begin(), state.end())));
  return values_at(policy.forward(tape, s), 0);
}

// ---- Checkpoint --------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'S', 'P', 'C'};

struct Out {
  std::string buf;
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str32(const std::string& s) {
    le(s.size(), 4);
    buf += s;
  }
  void tensor(const num::Tensor& t) {
    for (double v : t.data()) f64(v);
  }
};

struct In {
  const std::string& buf;
  std::size_t pos = 0;
  std::uint64_t le(int n) {
    if (buf.size() - pos < static_cast<std::size_t>(n))
      throw ParseError(ParseError::Kind::Truncated, pos, "truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += static_cast<std::size_t>(n);
    return v;
  }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str(std::size_t n) {
    if (buf.size() - pos < n) throw ParseError(ParseError::Kind::Truncated, pos, "truncated checkpoint");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  void tensor(num::Tensor& t) {
    if ((buf.size() - pos) / 8 < t.size()) throw ParseError(ParseError::Kind::Truncated, pos, "truncated checkpoint");
    for (double& v : t.data()) v = f64();
  }
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Out o;
  o.buf.append(kMagic, 4);
  o.le(kCheckpointVersion, 4);
  nlohmann::json meta;
  meta["encoder"] = ckpt.encoder_config;
  meta["env"] = ckpt.env_config;
  meta["action_table_version"] = ckpt.action_table_version;
  meta["iteration"] = ckpt.iteration;
  meta["rng_state"] = ckpt.rng_state;
  meta["run_config"] = ckpt.run_config_json;
  o.str32(meta.dump());
  const auto names = ckpt.params.names();
  o.le(names.size(), 4);
  for (const auto& name : names) {
    const num::Tensor& t = ckpt.params.get(name);
    const num::AdamMoments& m = ckpt.params.moments(name);
    o.le(name.size(), 2);
    o.buf += name;
    o.le(t.rank(), 4);
    for (auto d : t.shape()) o.le(d, 4);
    o.tensor(t);
    o.le(m.step, 8);
    o.tensor(m.first);
    o.tensor(m.second);
  }
  return o.buf;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0)
    throw ParseError(ParseError::Kind::BadMagic, 0, "bad magic");
  In in{bytes, 4};
  const auto version = in.le(4);
  if (version != kCheckpointVersion)
    throw ParseError(ParseError::Kind::BadVersion, 4, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const std::size_t meta_at = in.pos;
  try {
    const auto meta = nlohmann::json::parse(in.str(in.le(4)));
    c.encoder_config = meta.at("encoder").get<enc::EncoderConfig>();
    c.env_config = meta.at("env").get<env::EnvConfig>();
    c.action_table_version = meta.at("action_table_version").get<int>();
    c.iteration = meta.at("iteration").get<std::uint64_t>();
    c.rng_state = meta.at("rng_state").get<std::string>();
    c.run_config_json = meta.at("run_config").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::BadValue, meta_at, std::string("bad checkpoint metadata: ") + e.what());
  }
  if (c.action_table_version != env::kActionTableVersion)
    throw ParseError(ParseError::Kind::BadVersion, meta_at,
                     "checkpoint action table version " + std::to_string(c.action_table_version) +
                         " does not match " + std::to_string(env::kActionTableVersion));
  const auto count = in.le(4);
  for (std::uint64_t p = 0; p < count; ++p) {
    const std::string name = in.str(in.le(2));
    const auto rank = in.le(4);
    num::Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(in.le(4));
    const std::size_t at = in.pos;
    num::Tensor t;
    try {
      t = num::Tensor(shape);
    } catch (const ContractViolation& e) {
      throw ParseError(ParseError::Kind::BadValue, at, "bad tensor shape for '" + name + "'");
    }
    in.tensor(t);
    c.params.add(name, t);
    auto& m = c.params.moments(name);
    m.step = in.le(8);
    in.tensor(m.first);
    in.tensor(m.second);
  }
  if (in.pos != bytes.size())
    throw ParseError(ParseError::Kind::DimensionMismatch, in.pos, "trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Model model_from_checkpoint(const Checkpoint& ckpt, const enc::EncoderConfig& expected) {
  // Build a reference layout and compare tensor by tensor.
  const Model ref = Model::create(expected, 0);
  for (const auto& name : ref.params.names()) {
    const auto& want = ref.params.get(name).shape();
    require(ckpt.params.contains(name), "checkpoint is missing parameter '" + name + "' of shape " +
                                            num::shape_str(want) + " required by the config");
    const auto& have = ckpt.params.get(name).shape();
    require(have == want, "checkpoint parameter '" + name + "' has shape " + num::shape_str(have) +
                              " but the config implies " + num::shape_str(want));
  }
  require(ckpt.params.size() == ref.params.size(), "checkpoint holds parameters the config does not define");
  return Model(expected, ckpt.params);
}

}  // namespace tsp::policy
