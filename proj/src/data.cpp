// Copyright 2026 The PCD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pcd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "pcd/errors.hpp"

namespace pcd {
namespace {

constexpr char kFeatureMagic[4] = {'P', 'C', 'D', 'D'};

// Integer counts per class that sum to n (largest remainder).
std::vector<std::size_t> apportion(std::span<const double> p, std::size_t n) {
  std::vector<std::size_t> counts(p.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double exact = p[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    rema.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rema[i % rema.size()].second];
  return counts;
}

// Solves A x = b in place by Gaussian elimination with partial pivoting.
void solve_in_place(Matrix a, Matrix& b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    }
    if (std::abs(a(piv, col)) < 1e-14) throw std::runtime_error("generate: singular Cayley system");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      for (std::size_t c = 0; c < b.cols(); ++c) std::swap(b(col, c), b(piv, c));
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < b.cols(); ++c) b(r, c) -= f * b(col, c);
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) b(r, c) /= a(r, r);
  }
}

// Orthogonal matrix from the Cayley transform of a random skew-symmetric
// matrix: Q = (I - S)^{-1} (I + S). scale = 0 gives the identity.
Matrix random_orthogonal(std::size_t d, double scale, Rng rng) {
  Matrix s(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double g = scale * rng.normal();
      s(i, j) = g;
      s(j, i) = -g;
    }
  }
  Matrix lhs = Matrix::identity(d);
  Matrix rhs = Matrix::identity(d);
  for (std::size_t i = 0; i < d * d; ++i) {
    lhs.data()[i] -= s.data()[i];
    rhs.data()[i] += s.data()[i];
  }
  solve_in_place(lhs, rhs);
  return rhs;
}

FeatureDataset make_domain(const SyntheticSpec& spec, const Matrix& centroids, std::uint32_t domain,
                           std::size_t n, std::span<const double> proportions, double noise, Rng rng) {
  const std::size_t d = spec.dim;
  const Matrix q = random_orthogonal(d, spec.rotation_scale, rng.split(1));
  std::vector<double> shift(d);
  Rng trng = rng.split(2);
  for (double& t : shift) t = spec.translation_scale * trng.normal();

  const auto counts = apportion(proportions, n);
  std::vector<std::uint32_t> labels;
  for (std::size_t k = 0; k < counts.size(); ++k) labels.insert(labels.end(), counts[k], static_cast<std::uint32_t>(k));
  Rng prng = rng.split(3);
  const auto order = prng.permutation(labels.size());

  FeatureDataset out;
  out.domain = domain;
  out.features = Matrix(n, d);
  out.labels = std::vector<std::uint32_t>(n);
  out.ids.resize(n);
  Rng nrng = rng.split(4);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t y = labels[order[i]];
    (*out.labels)[i] = y;
    out.ids[i] = i;
    auto x = out.features.row(i);
    auto c = centroids.row(y);
    for (std::size_t r = 0; r < d; ++r) {
      double v = shift[r];
      for (std::size_t t = 0; t < d; ++t) v += q(r, t) * c[t];
      x[r] = v + noise * nrng.normal();
    }
  }
  return out;
}

}  // namespace

void FeatureDataset::validate(std::optional<std::size_t> k) const {
  if (features.rows() == 0 || features.cols() == 0) throw std::invalid_argument("FeatureDataset: empty dataset");
  if (!features.all_finite()) throw std::invalid_argument("FeatureDataset: non-finite feature");
  if (ids.size() != features.rows()) throw std::invalid_argument("FeatureDataset: id count mismatch");
  if (labels) {
    if (labels->size() != features.rows()) throw std::invalid_argument("FeatureDataset: label count mismatch");
    if (k) {
      for (auto y : *labels) {
        if (y >= *k) throw std::invalid_argument("FeatureDataset: label " + std::to_string(y) + " outside [0, K)");
      }
    }
  }
}

FeatureDataset FeatureDataset::subset(std::span<const std::size_t> rows) const {
  FeatureDataset out;
  out.domain = domain;
  out.features = features.gather_rows(rows);
  out.ids.reserve(rows.size());
  if (labels) out.labels = std::vector<std::uint32_t>();
  for (std::size_t r : rows) {
    out.ids.push_back(ids[r]);
    if (labels) out.labels->push_back((*labels)[r]);
  }
  return out;
}

FeatureDataset concatenate(std::span<const FeatureDataset> parts, std::uint32_t domain) {
  if (parts.empty()) throw std::invalid_argument("concatenate: nothing to merge");
  const std::size_t d = parts.front().dim();
  bool labelled = true;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.dim() != d) throw std::invalid_argument("concatenate: width mismatch");
    labelled = labelled && p.has_labels();
    n += p.size();
  }
  FeatureDataset out;
  out.domain = domain;
  out.features = Matrix(n, d);
  if (labelled) out.labels = std::vector<std::uint32_t>();
  std::size_t row = 0;
  for (const auto& p : parts) {
    std::copy(p.features.data().begin(), p.features.data().end(), out.features.data().begin() + row * d);
    if (labelled) out.labels->insert(out.labels->end(), p.labels->begin(), p.labels->end());
    row += p.size();
  }
  out.ids.resize(n);
  std::iota(out.ids.begin(), out.ids.end(), 0);
  return out;
}

void SyntheticSpec::validate() const {
  if (k < 2) throw std::invalid_argument("SyntheticSpec: K must be >= 2");
  if (dim == 0) throw std::invalid_argument("SyntheticSpec: dim must be >= 1");
  if (source_domains == 0) throw std::invalid_argument("SyntheticSpec: need at least one source domain");
  if (samples_per_domain < k || target_samples < k) {
    throw std::invalid_argument("SyntheticSpec: need at least K samples per domain");
  }
  if (!source_proportions.empty()) {
    if (source_proportions.size() != k) throw std::invalid_argument("SyntheticSpec: source proportions need K entries");
    require_prob_vector(source_proportions, "SyntheticSpec source proportions");
  }
  if (!target_proportions.empty()) {
    if (target_proportions.size() != k) throw std::invalid_argument("SyntheticSpec: target proportions need K entries");
    require_prob_vector(target_proportions, "SyntheticSpec target proportions");
  }
  if (centroid_scale <= 0.0 || rotation_scale < 0.0 || translation_scale < 0.0 || noise < 0.0) {
    throw std::invalid_argument("SyntheticSpec: scales must be non-negative (centroid scale positive)");
  }
}

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  SyntheticData out;
  out.centroids = Matrix(spec.k, spec.dim);
  Rng crng = root.split(0);
  for (double& v : out.centroids.data()) v = spec.centroid_scale * crng.normal();

  const ProbVector src_p = spec.source_proportions.empty() ? uniform(spec.k) : spec.source_proportions;
  const ProbVector tgt_p = spec.target_proportions.empty() ? uniform(spec.k) : spec.target_proportions;
  for (std::size_t dd = 0; dd < spec.source_domains; ++dd) {
    out.sources.push_back(make_domain(spec, out.centroids, static_cast<std::uint32_t>(dd), spec.samples_per_domain,
                                      src_p, spec.noise, root.split(100 + dd)));
  }
  const double tnoise = spec.target_noise < 0.0 ? spec.noise : spec.target_noise;
  out.target = make_domain(spec, out.centroids, static_cast<std::uint32_t>(spec.source_domains), spec.target_samples,
                           tgt_p, tnoise, root.split(100 + spec.source_domains));
  return out;
}

FeatureDataset subsample_imbalanced(const FeatureDataset& data, std::size_t k, double drop_fraction,
                                    std::uint64_t seed) {
  if (!data.has_labels()) throw std::invalid_argument("subsample_imbalanced: dataset has no labels");
  if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0)) throw std::invalid_argument("subsample_imbalanced: drop fraction outside [0, 1]");
  const std::uint32_t cutoff = static_cast<std::uint32_t>(k / 2);
  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint32_t y = (*data.labels)[i];
    // One draw per sample regardless of class keeps the stream aligned.
    const double u = rng.uniform();
    if (y >= cutoff || u >= drop_fraction) keep.push_back(i);
  }
  if (keep.empty()) throw std::invalid_argument("subsample_imbalanced: every sample was dropped");
  return data.subset(keep);
}

std::pair<FeatureDataset, FeatureDataset> split(const FeatureDataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("split: fraction must lie in (0, 1)");
  if (data.size() < 2) throw std::invalid_argument("split: need at least 2 samples");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> groups;
  if (data.has_labels()) {
    std::uint32_t max_label = 0;
    for (auto y : *data.labels) max_label = std::max(max_label, y);
    groups.resize(max_label + 1);
    for (std::size_t i = 0; i < data.size(); ++i) groups[(*data.labels)[i]].push_back(i);
  } else {
    groups.emplace_back(data.size());
    std::iota(groups[0].begin(), groups[0].end(), 0);
  }
  std::vector<std::size_t> train, val;
  for (auto& g : groups) {
    if (g.empty()) continue;
    const auto perm = rng.permutation(g.size());
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(g.size())));
    for (std::size_t i = 0; i < g.size(); ++i) (i < n_train ? train : val).push_back(g[perm[i]]);
  }
  if (train.empty() || val.empty()) throw std::invalid_argument("split: dataset too small for the requested fraction");
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {data.subset(train), data.subset(val)};
}

ProbVector label_proportions(const FeatureDataset& data, std::size_t k) {
  if (!data.has_labels()) throw std::invalid_argument("label_proportions: dataset has no labels");
  ProbVector p(k, 0.0);
  for (auto y : *data.labels) {
    if (y >= k) throw std::invalid_argument("label_proportions: label outside [0, K)");
    p[y] += 1.0;
  }
  for (double& v : p) v /= static_cast<double>(data.size());
  return p;
}

// ---------------------------------------------------------------------------

std::string serialize_dataset(const FeatureDataset& data) {
  detail::ByteWriter w;
  w.raw(kFeatureMagic, 4);
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.dim()));
  w.u32(data.has_labels() ? 1u : 0u);
  for (double v : data.features.data()) w.f64(v);
  if (data.labels) {
    for (auto y : *data.labels) w.u32(y);
  }
  return w.take();
}

FeatureDataset deserialize_dataset(const std::string& bytes, std::uint32_t domain) {
  detail::ByteReader r(bytes, "feature file");
  if (r.raw(4) != std::string(kFeatureMagic, 4)) r.fail("bad magic (expected PCDD)");
  const std::uint32_t version = r.u32();
  if (version != kFeatureFileVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint32_t flags = r.u32();
  if (n == 0 || d == 0) r.fail("empty dataset");
  if (flags & ~1u) r.fail("unknown flag bits");
  const std::uint64_t need = static_cast<std::uint64_t>(n) * d * 8 + ((flags & 1u) ? static_cast<std::uint64_t>(n) * 4 : 0);
  if (r.remaining() < need) r.fail("truncated payload (need " + std::to_string(need) + " bytes)");
  FeatureDataset out;
  out.domain = domain;
  out.features = Matrix(n, d);
  for (double& v : out.features.data()) {
    v = r.f64();
    if (!std::isfinite(v)) r.fail("non-finite feature value");
  }
  if (flags & 1u) {
    out.labels = std::vector<std::uint32_t>(n);
    for (auto& y : *out.labels) y = r.u32();
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  out.ids.resize(n);
  std::iota(out.ids.begin(), out.ids.end(), 0);
  return out;
}

void save_dataset(const FeatureDataset& data, const std::filesystem::path& path) {
  detail::write_file(path, serialize_dataset(data));
}

FeatureDataset load_dataset(const std::filesystem::path& path, std::uint32_t domain) {
  return deserialize_dataset(detail::read_file(path), domain);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

FeatureDataset parse_csv(const std::string& text, std::uint32_t domain) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw FormatError("csv: " + msg + " at line " + std::to_string(line_no));
  };
  if (!std::getline(in, line)) throw FormatError("csv: missing header at line 1");
  ++line_no;
  const auto header = split_csv_line(line);
  std::optional<std::size_t> label_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "label") label_col = i;
  }
  const std::size_t d = header.size() - (label_col ? 1 : 0);
  if (d == 0) fail("no feature columns");
  std::vector<double> values;
  std::vector<std::uint32_t> labels;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) fail("expected " + std::to_string(header.size()) + " cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string& c = cells[i];
      if (label_col && i == *label_col) {
        std::uint32_t y = 0;
        auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), y);
        if (ec != std::errc() || p != c.data() + c.size()) fail("bad label '" + c + "'");
        labels.push_back(y);
      } else {
        char* end = nullptr;
        const double v = std::strtod(c.c_str(), &end);
        if (c.empty() || end != c.c_str() + c.size() || !std::isfinite(v)) fail("bad value '" + c + "'");
        values.push_back(v);
      }
    }
    ++n;
  }
  if (n == 0) fail("no data rows");
  FeatureDataset out;
  out.domain = domain;
  out.features = Matrix(n, d, std::move(values));
  if (label_col) out.labels = std::move(labels);
  out.ids.resize(n);
  std::iota(out.ids.begin(), out.ids.end(), 0);
  return out;
}

FeatureDataset load_csv(const std::filesystem::path& path, std::uint32_t domain) {
  return parse_csv(detail::read_file(path), domain);
}

std::string to_csv(const FeatureDataset& data) {
  std::string out;
  char buf[64];
  for (std::size_t j = 0; j < data.dim(); ++j) {
    if (j) out += ',';
    out += "f" + std::to_string(j);
  }
  if (data.labels) out += ",label";
  out += '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) {
      if (j) out += ',';
      std::snprintf(buf, sizeof buf, "%.17g", data.features(i, j));
      out += buf;
    }
    if (data.labels) out += "," + std::to_string((*data.labels)[i]);
    out += '\n';
  }
  return out;
}

FeatureDataset load_features(const std::filesystem::path& path, std::uint32_t domain) {
  if (path.extension() == ".csv") return load_csv(path, domain);
  return load_dataset(path, domain);
}

}  // namespace pcd
