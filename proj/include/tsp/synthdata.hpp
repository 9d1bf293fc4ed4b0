#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsp/env.hpp"
#include "tsp/numcore/tensor.hpp"
#include "tsp/rng.hpp"

namespace tsp::data {

/// One grounding problem: per-clip features, a query vector and the target.
struct Episode {
  std::string id;
  num::Tensor unit_features;  // [N, d_u]
  std::vector<double> query;  // [d_E]
  env::GroundTruth ground_truth;

  int num_clips() const { return static_cast<int>(unit_features.rows()); }
  std::size_t unit_dim() const { return unit_features.cols(); }
  std::size_t query_dim() const { return query.size(); }

  // Throws ContractViolation when any invariant is broken.
  void validate() const;

  friend bool operator==(const Episode&, const Episode&) = default;
};

struct GenSpec {
  int num_clips = 32;
  int unit_dim = 16;
  int query_dim = 16;
  int latent_dim = 8;
  double noise_sigma = 0.2;
  double min_gt_width = 4.0;
  double max_gt_width = 16.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Synthetic episode source.
///
/// A latent event vector z ~ N(0, I) is drawn per episode. Clips inside the
/// ground truth carry W_v z + noise, clips outside are N(0, I) distractors and
/// the query is W_q z + noise. W_v and W_q depend only on `spec.seed`, so
/// all episodes from one spec share the same projections. Ground-truth
/// endpoints are clip-aligned integers.
class Generator {
 public:
  explicit Generator(GenSpec spec);

  const GenSpec& spec() const { return spec_; }
  const num::Tensor& unit_projection() const { return w_unit_; }    // [d_u, d_latent]
  const num::Tensor& query_projection() const { return w_query_; }  // [d_E, d_latent]

  Episode generate(Rng& rng, const std::string& id) const;
  // `count` episodes with ids "<prefix><i>", drawn from one stream derived from
  // spec.seed. Different `stream` values give disjoint samples (train/test
  // splits) sharing the same projections.
  std::vector<Episode> generate_many(std::size_t count, const std::string& prefix = "ep",
                                     std::uint64_t stream = 0) const;

  // Query mapped into unit-feature space via W_v W_q^T E (test baseline support).
  std::vector<double> query_in_unit_space(const std::vector<double>& query) const;

 private:
  GenSpec spec_;
  num::Tensor w_unit_;
  num::Tensor w_query_;
};

inline Episode generate_episode(const GenSpec& spec, Rng& rng, const std::string& id = "ep") {
  return Generator(spec).generate(rng, id);
}

// Binary episode container; layout documented in the README.
void write_episodes(const std::filesystem::path& path, const std::vector<Episode>& episodes);
std::vector<Episode> read_episodes(const std::filesystem::path& path);

std::string encode_episodes(const std::vector<Episode>& episodes);
std::vector<Episode> decode_episodes(const std::string& bytes);

}  // namespace tsp::data
