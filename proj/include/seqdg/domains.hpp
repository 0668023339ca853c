#pragma once
// domains.hpp — multi-domain synthetic datasets and batch plumbing.
//
// The synthetic family is a set of Gaussian class clusters on a circle; each
// domain is the same draw rotated by a fixed step, so domain index is the
// single factor of variation and "how far" a held-out domain sits from the
// sources is controlled exactly.

#include <filesystem>
#include <utility>
#include <vector>

#include "seqdg/matrix.hpp"
#include "seqdg/model.hpp"
#include "seqdg/rng.hpp"

namespace seqdg {

struct Domain {
  int id = 0;
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct DomainSet {
  int num_classes = 0;
  std::vector<Domain> domains;

  int feature_dim() const {
    return domains.empty() ? 0 : static_cast<int>(domains[0].features.cols());
  }
  std::size_t num_domains() const { return domains.size(); }
};

// Class c is a Gaussian blob with sd noise_sd centred at angle 2*pi*c/K on
// the unit circle; domain i rotates every point of domain 0 by
// i * angle_step_deg. All domains share one draw, so angle_step_deg = 0
// yields identical domains. Per-class counts split n_per_domain as evenly as
// possible. Rejects configurations whose total rotation reaches the angular
// gap between classes (360/K degrees), where domains would alias.
DomainSet synth_rotated(int num_domains, int num_classes, int n_per_domain,
                        double angle_step_deg, double noise_sd, std::uint64_t seed);

// Class-stratified split. The train side receives round(frac * n) samples,
// apportioned to classes by largest remainder, shuffled within class by
// seed. Requires every class to keep at least one sample on each side.
std::pair<Domain, Domain> split_domain(const Domain& domain, double train_frac,
                                       std::uint64_t seed);

// Without-replacement epoch sampler: indices are reshuffled at every epoch
// boundary and a short final batch is emitted rather than dropped, so each
// epoch visits every sample exactly once.
class MinibatchSampler {
 public:
  MinibatchSampler(const Domain& domain, std::size_t batch_size, Rng rng);

  Batch next();
  int epochs_completed() const { return epochs_; }

 private:
  const Domain* domain_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int epochs_ = 0;
};

Batch domain_batch(const Domain& domain, std::span<const std::size_t> idx);
Batch full_batch(const Domain& domain);

using Permutation = std::vector<int>;

// Uniformly random permutation of {0..n-1} (Fisher-Yates).
Permutation sample_permutation(int n, Rng& rng);

// Binary container: text header "SEQDG1 <domains> <dim> <classes>", then per
// domain "DOM <id> <n>" followed by n records of dim little-endian f64
// features and one i32 label.
void save_domains(const DomainSet& set, const std::filesystem::path& path);
DomainSet load_domains(const std::filesystem::path& path);

}  // namespace seqdg
