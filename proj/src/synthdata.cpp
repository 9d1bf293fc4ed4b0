#include "tsp/synthdata.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tsp/error.hpp"

namespace tsp::data {

void Episode::validate() const {
  require(unit_features.rank() == 2, "episode '" + id + "': unit features must be a matrix");
  require(num_clips() >= 8, "episode '" + id + "': needs at least 8 clips");
  require(unit_dim() >= 2, "episode '" + id + "': unit feature dim must be >= 2");
  require(query_dim() >= 2, "episode '" + id + "': query dim must be >= 2");
  require(unit_features.all_finite(), "episode '" + id + "': non-finite unit feature");
  for (double q : query) require(std::isfinite(q), "episode '" + id + "': non-finite query value");
  const auto& g = ground_truth;
  require(std::isfinite(g.start) && std::isfinite(g.end) && 0.0 <= g.start && g.start < g.end &&
              g.end <= num_clips(),
          "episode '" + id + "': ground truth outside [0, N]");
}

void GenSpec::validate() const {
  require(num_clips >= 8, "gen.num_clips must be >= 8");
  require(unit_dim >= 2, "gen.unit_dim must be >= 2");
  require(query_dim >= 2, "gen.query_dim must be >= 2");
  require(latent_dim >= 1, "gen.latent_dim must be >= 1");
  require(noise_sigma >= 0.0, "gen.noise_sigma must be non-negative");
  require(min_gt_width >= 1.0, "gen.min_gt_width must be >= 1");
  require(min_gt_width <= max_gt_width, "gen.min_gt_width must not exceed gen.max_gt_width");
  require(max_gt_width <= num_clips, "gen.max_gt_width must not exceed gen.num_clips");
  require(std::ceil(min_gt_width) <= std::floor(max_gt_width),
          "gen.min_gt_width..gen.max_gt_width contains no whole clip width");
}

Generator::Generator(GenSpec spec) : spec_(spec) {
  spec_.validate();
  Rng rng(spec_.seed ^ 0x5eed5eed5eed5eedULL);
  const auto dl = static_cast<std::size_t>(spec_.latent_dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dl));
  w_unit_ = num::Tensor({static_cast<std::size_t>(spec_.unit_dim), dl});
  for (double& x : w_unit_.data()) x = rng.normal(0.0, s);
  w_query_ = num::Tensor({static_cast<std::size_t>(spec_.query_dim), dl});
  for (double& x : w_query_.data()) x = rng.normal(0.0, s);
}

Episode Generator::generate(Rng& rng, const std::string& id) const {
  const auto n = static_cast<std::size_t>(spec_.num_clips);
  const auto du = static_cast<std::size_t>(spec_.unit_dim);
  const auto de = static_cast<std::size_t>(spec_.query_dim);
  const auto dl = static_cast<std::size_t>(spec_.latent_dim);

  std::vector<double> z(dl);
  for (double& v : z) v = rng.normal();

  const auto wmin = static_cast<std::uint64_t>(std::ceil(spec_.min_gt_width));
  const auto wmax = static_cast<std::uint64_t>(std::floor(spec_.max_gt_width));
  const std::uint64_t width = wmin + rng.below(wmax - wmin + 1);
  const std::uint64_t start = rng.below(n - width + 1);

  Episode ep;
  ep.id = id;
  ep.ground_truth = {static_cast<double>(start), static_cast<double>(start + width)};
  ep.unit_features = num::Tensor({n, du});
  for (std::size_t i = 0; i < n; ++i) {
    const bool inside = i >= start && i < start + width;
    for (std::size_t j = 0; j < du; ++j) {
      if (inside) {
        double v = 0.0;
        for (std::size_t k = 0; k < dl; ++k) v += w_unit_.at(j, k) * z[k];
        ep.unit_features.at(i, j) = v + spec_.noise_sigma * rng.normal();
      } else {
        ep.unit_features.at(i, j) = rng.normal();
      }
    }
  }
  ep.query.resize(de);
  for (std::size_t j = 0; j < de; ++j) {
    double v = 0.0;
    for (std::size_t k = 0; k < dl; ++k) v += w_query_.at(j, k) * z[k];
    ep.query[j] = v + spec_.noise_sigma * rng.normal();
  }
  return ep;
}

std::vector<Episode> Generator::generate_many(std::size_t count, const std::string& prefix,
                                             std::uint64_t stream) const {
  Rng rng(spec_.seed ^ (stream * 0x9e3779b97f4a7c15ULL));
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate(rng, prefix + std::to_string(i)));
  return out;
}

std::vector<double> Generator::query_in_unit_space(const std::vector<double>& query) const {
  const std::size_t du = w_unit_.rows(), dl = w_unit_.cols(), de = w_query_.rows();
  require(query.size() == de, "query dimension mismatch");
  std::vector<double> zhat(dl, 0.0);
  for (std::size_t k = 0; k < dl; ++k)
    for (std::size_t j = 0; j < de; ++j) zhat[k] += w_query_.at(j, k) * query[j];
  std::vector<double> out(du, 0.0);
  for (std::size_t j = 0; j < du; ++j)
    for (std::size_t k = 0; k < dl; ++k) out[j] += w_unit_.at(j, k) * zhat[k];
  return out;
}

// ---- Binary format ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'S', 'P', 'E'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  void need(std::size_t n, const char* what) {
    if (remaining() < n)
      throw ParseError(ParseError::Kind::Truncated, pos_, std::string("truncated payload reading ") + what);
  }
  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  double f64(const char* what) { return std::bit_cast<double>(le(8, what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_episodes(const std::vector<Episode>& episodes) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  require(episodes.size() <= 0xffffffffULL, "too many episodes for the file format");
  w.u32(static_cast<std::uint32_t>(episodes.size()));
  for (const Episode& ep : episodes) {
    require(ep.id.size() <= 0xffff, "episode id longer than 65535 bytes");
    require(ep.unit_features.rank() == 2, "episode '" + ep.id + "': unit features must be a matrix");
    w.u16(static_cast<std::uint16_t>(ep.id.size()));
    w.bytes(ep.id.data(), ep.id.size());
    w.u32(static_cast<std::uint32_t>(ep.unit_features.rows()));
    w.u32(static_cast<std::uint32_t>(ep.unit_features.cols()));
    w.u32(static_cast<std::uint32_t>(ep.query.size()));
    w.f64(ep.ground_truth.start);
    w.f64(ep.ground_truth.end);
    for (double v : ep.unit_features.data()) w.f64(v);
    for (double v : ep.query) w.f64(v);
  }
  return w.take();
}

std::vector<Episode> decode_episodes(const std::string& bytes) {
  Reader r(bytes);
  if (r.remaining() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ParseError(ParseError::Kind::BadMagic, 0, "bad magic");
  r.str(4, "magic");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw ParseError(ParseError::Kind::BadVersion, version_at, "unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("episode count");

  std::vector<Episode> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    Episode ep;
    const std::uint16_t id_len = r.u16("id length");
    ep.id = r.str(id_len, "id");
    const std::size_t dims_at = r.offset();
    const std::uint32_t n = r.u32("N");
    const std::uint32_t du = r.u32("d_u");
    const std::uint32_t de = r.u32("d_E");
    if (n == 0 || du == 0 || de == 0)
      throw ParseError(ParseError::Kind::BadValue, dims_at, "episode '" + ep.id + "' declares a zero dimension");
    ep.ground_truth.start = r.f64("g_s");
    ep.ground_truth.end = r.f64("g_e");

    const std::size_t values = static_cast<std::size_t>(n) * du + de;
    if (r.remaining() < values * 8) {
      // Whole f64 values missing means the declared dims disagree with the payload.
      if (e + 1 == count && r.remaining() % 8 == 0)
        throw ParseError(ParseError::Kind::DimensionMismatch, dims_at,
                         "dimension mismatch in episode '" + ep.id + "': header declares N=" + std::to_string(n) +
                             ", d_u=" + std::to_string(du) + ", d_E=" + std::to_string(de) + " (" +
                             std::to_string(values) + " values) but payload holds " +
                             std::to_string(r.remaining() / 8));
      throw ParseError(ParseError::Kind::Truncated, r.offset(), "truncated payload in episode '" + ep.id + "'");
    }
    ep.unit_features = num::Tensor({n, du});
    for (double& v : ep.unit_features.data()) v = r.f64("unit features");
    ep.query.resize(de);
    for (double& v : ep.query) v = r.f64("query");
    try {
      ep.validate();
    } catch (const ContractViolation& err) {
      throw ParseError(ParseError::Kind::BadValue, dims_at, err.what());
    }
    out.push_back(std::move(ep));
  }
  if (r.remaining() != 0)
    throw ParseError(ParseError::Kind::DimensionMismatch, r.offset(),
                     "dimension mismatch: " + std::to_string(r.remaining()) + " trailing bytes after last episode");
  return out;
}

void write_episodes(const std::filesystem::path& path, const std::vector<Episode>& episodes) {
  const std::string bytes = encode_episodes(episodes);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::vector<Episode> read_episodes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_episodes(bytes);
}

}  // namespace tsp::data
