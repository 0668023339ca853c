#include "seqdg/domains.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace seqdg {

namespace {

// Largest-remainder apportionment of `total` into `parts` shares of weight
// 1/parts each; ties go to the lower index. Guarantees the shares sum to
// exactly `total` and differ by at most one.
std::vector<int> even_shares(int total, int parts) {
  std::vector<int> shares(parts, total / parts);
  for (int i = 0; i < total % parts; ++i) ++shares[i];
  return shares;
}

void put_f64(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

void put_i32(std::ostream& os, std::int32_t v) {
  auto bits = static_cast<std::uint32_t>(v);
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 4);
}

double get_f64(std::istream& is) {
  char buf[8];
  if (!is.read(buf, 8)) throw std::runtime_error("domain file: truncated feature record");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::int32_t get_i32(std::istream& is) {
  char buf[4];
  if (!is.read(buf, 4)) throw std::runtime_error("domain file: truncated label record");
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return static_cast<std::int32_t>(bits);
}

}  // namespace

DomainSet synth_rotated(int num_domains, int num_classes, int n_per_domain,
                        double angle_step_deg, double noise_sd, std::uint64_t seed) {
  if (num_domains < 2) throw std::invalid_argument("synth_rotated: need at least two domains");
  if (num_classes < 2) throw std::invalid_argument("synth_rotated: need at least two classes");
  if (n_per_domain < num_classes)
    throw std::invalid_argument("synth_rotated: need at least one sample per class");
  if (noise_sd <= 0.0) throw std::invalid_argument("synth_rotated: noise_sd must be positive");
  const double class_gap_deg = 360.0 / num_classes;
  if (std::abs(angle_step_deg) * num_domains >= class_gap_deg)
    throw std::invalid_argument(
        "synth_rotated: total rotation reaches the gap between adjacent classes; "
        "domains would alias onto other classes");

  const auto shares = even_shares(n_per_domain, num_classes);
  Rng rng(seed, /*stream=*/0x73796e7468);

  // One base draw shared by all domains.
  Matrix base(static_cast<std::size_t>(n_per_domain), 2);
  std::vector<int> labels;
  labels.reserve(n_per_domain);
  std::size_t r = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double ang = 2.0 * std::numbers::pi * c / num_classes;
    const double cx = std::cos(ang), cy = std::sin(ang);
    for (int j = 0; j < shares[c]; ++j, ++r) {
      base(r, 0) = cx + noise_sd * rng.normal();
      base(r, 1) = cy + noise_sd * rng.normal();
      labels.push_back(c);
    }
  }

  DomainSet set;
  set.num_classes = num_classes;
  set.domains.reserve(num_domains);
  for (int d = 0; d < num_domains; ++d) {
    const double rot = d * angle_step_deg * std::numbers::pi / 180.0;
    const double cr = std::cos(rot), sr = std::sin(rot);
    Domain dom;
    dom.id = d;
    dom.features = Matrix(base.rows(), 2);
    dom.labels = labels;
    for (std::size_t j = 0; j < base.rows(); ++j) {
      dom.features(j, 0) = cr * base(j, 0) - sr * base(j, 1);
      dom.features(j, 1) = sr * base(j, 0) + cr * base(j, 1);
    }
    set.domains.push_back(std::move(dom));
  }
  return set;
}

std::pair<Domain, Domain> split_domain(const Domain& domain, double train_frac,
                                       std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("split_domain: train fraction must be inside (0,1)");
  const std::size_t n = domain.size();
  if (n == 0) throw std::invalid_argument("split_domain: empty domain");

  int num_classes = 0;
  for (int y : domain.labels) num_classes = std::max(num_classes, y + 1);
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t j = 0; j < n; ++j) by_class[domain.labels[j]].push_back(j);

  // Global train size is round(frac * n); distribute over classes by largest
  // remainder so stratification is as exact as integer counts allow.
  const auto target = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  std::vector<std::size_t> take(num_classes);
  std::vector<std::pair<double, int>> rem;
  std::size_t assigned = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double exact = train_frac * static_cast<double>(by_class[c].size());
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    rem.emplace_back(exact - std::floor(exact), c);
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < target && i < rem.size(); ++i, ++assigned)
    ++take[rem[i].second];

  for (int c = 0; c < num_classes; ++c) {
    if (by_class[c].empty()) continue;
    if (take[c] == 0 || take[c] >= by_class[c].size())
      throw std::invalid_argument(
          "split_domain: class " + std::to_string(c) +
          " would lose all samples on one side; not enough data to stratify");
  }

  Rng rng(seed, /*stream=*/0x73706c6974);
  std::vector<std::size_t> train_idx, test_idx;
  for (int c = 0; c < num_classes; ++c) {
    auto& idx = by_class[c];
    rng.shuffle(idx);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + take[c]);
    test_idx.insert(test_idx.end(), idx.begin() + take[c], idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto materialize = [&](const std::vector<std::size_t>& idx) {
    Domain out;
    out.id = domain.id;
    out.features = Matrix(idx.size(), domain.features.cols());
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto src = domain.features.row(idx[r]);
      std::copy(src.begin(), src.end(), out.features.row(r).begin());
      out.labels.push_back(domain.labels[idx[r]]);
    }
    return out;
  };
  return {materialize(train_idx), materialize(test_idx)};
}

MinibatchSampler::MinibatchSampler(const Domain& domain, std::size_t batch_size, Rng rng)
    : domain_(&domain), batch_size_(batch_size), rng_(rng) {
  if (domain.size() == 0) throw std::invalid_argument("MinibatchSampler: empty domain");
  if (batch_size == 0) throw std::invalid_argument("MinibatchSampler: zero batch size");
  if (batch_size > domain.size())
    throw std::invalid_argument("MinibatchSampler: batch size exceeds domain size");
  order_.resize(domain.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  rng_.shuffle(order_);
}

Batch MinibatchSampler::next() {
  const std::size_t take = std::min(batch_size_, order_.size() - cursor_);
  Batch b = domain_batch(*domain_, std::span(order_).subspan(cursor_, take));
  cursor_ += take;
  if (cursor_ == order_.size()) {
    cursor_ = 0;
    ++epochs_;
    rng_.shuffle(order_);
  }
  return b;
}

Batch domain_batch(const Domain& domain, std::span<const std::size_t> idx) {
  Batch b;
  b.features = Matrix(idx.size(), domain.features.cols());
  b.labels.reserve(idx.size());
  b.domain_ids.assign(idx.size(), domain.id);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = domain.features.row(idx[r]);
    std::copy(src.begin(), src.end(), b.features.row(r).begin());
    b.labels.push_back(domain.labels[idx[r]]);
  }
  return b;
}

Batch full_batch(const Domain& domain) {
  std::vector<std::size_t> idx(domain.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return domain_batch(domain, idx);
}

Permutation sample_permutation(int n, Rng& rng) {
  if (n < 0) throw std::invalid_argument("sample_permutation: negative size");
  Permutation p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  rng.shuffle(p);
  return p;
}

void save_domains(const DomainSet& set, const std::filesystem::path& path) {
  if (set.domains.size() < 2) throw std::invalid_argument("save_domains: a set needs two or more domains");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_domains: cannot open " + path.string());
  os << "SEQDG1 " << set.domains.size() << ' ' << set.feature_dim() << ' ' << set.num_classes
     << '\n';
  for (const Domain& d : set.domains) {
    os << "DOM " << d.id << ' ' << d.size() << '\n';
    for (std::size_t j = 0; j < d.size(); ++j) {
      for (double v : d.features.row(j)) put_f64(os, v);
      put_i32(os, d.labels[j]);
    }
  }
  if (!os) throw std::runtime_error("save_domains: write failed for " + path.string());
}

DomainSet load_domains(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_domains: cannot open " + path.string());

  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("domain file: missing header");
  std::istringstream hdr(line);
  std::string magic;
  long long nd = 0, dim = 0, k = 0;
  if (!(hdr >> magic >> nd >> dim >> k) || magic != "SEQDG1")
    throw std::runtime_error("domain file: bad header (expected 'SEQDG1 <domains> <dim> <classes>')");
  if (nd < 2 || dim < 1 || k < 2) throw std::runtime_error("domain file: implausible header counts");

  DomainSet set;
  set.num_classes = static_cast<int>(k);
  for (long long d = 0; d < nd; ++d) {
    if (!std::getline(is, line)) throw std::runtime_error("domain file: missing domain header");
    std::istringstream dh(line);
    std::string tag;
    long long id = 0, n = 0;
    if (!(dh >> tag >> id >> n) || tag != "DOM")
      throw std::runtime_error("domain file: bad domain header '" + line + "'");
    if (id != d)
      throw std::runtime_error("domain file: domain ids must be 0..N-1 in order");
    if (n < 1) throw std::runtime_error("domain file: empty domain " + std::to_string(id));

    Domain dom;
    dom.id = static_cast<int>(id);
    dom.features = Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(dim));
    dom.labels.reserve(static_cast<std::size_t>(n));
    for (long long j = 0; j < n; ++j) {
      for (long long f = 0; f < dim; ++f)
        dom.features(static_cast<std::size_t>(j), static_cast<std::size_t>(f)) = get_f64(is);
      const std::int32_t y = get_i32(is);
      if (y < 0 || y >= k)
        throw std::runtime_error("domain file: label out of range in domain " + std::to_string(id));
      dom.labels.push_back(y);
    }
    set.domains.push_back(std::move(dom));
  }
  return set;
}

}  // namespace seqdg
