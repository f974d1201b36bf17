#include "porenet/matcher.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "porenet/error.hpp"
#include "porenet/file_util.hpp"

namespace porenet {

namespace fs = std::filesystem;

DescriptorSet::DescriptorSet(std::string image_id, int dim, std::vector<float> rows)
    : image_id_(std::move(image_id)), dim_(dim), rows_(std::move(rows)) {
  if (dim <= 0) throw Error(ErrorKind::kInvalidArgument, "descriptor dimension must be positive");
  if (rows_.size() % static_cast<std::size_t>(dim) != 0) {
    throw Error(ErrorKind::kInvalidArgument, "descriptor data length is not a multiple of the dimension");
  }
}

void DescriptorSet::push_back(std::span<const float> row) {
  if (dim_ == 0) dim_ = static_cast<int>(row.size());
  if (static_cast<int>(row.size()) != dim_) {
    throw Error(ErrorKind::kInvalidArgument, "descriptor of dimension " + std::to_string(row.size()) +
                                                 " added to a set of dimension " + std::to_string(dim_));
  }
  rows_.insert(rows_.end(), row.begin(), row.end());
}

void DescriptorSet::check_unit_norm(double tol) const {
  for (int i = 0; i < size(); ++i) {
    double s = 0.0;
    for (float v : row(i)) s += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(s) - 1.0) > tol) {
      throw Error(ErrorKind::kNumeric, image_id_ + ": descriptor row " + std::to_string(i) + " has norm " +
                                           std::to_string(std::sqrt(s)));
    }
  }
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat to_matrix(const DescriptorSet& s) {
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(s.data().data(), s.size(),
                                                                                             s.dim());
  return m.cast<double>();
}

void check_compatible(const DescriptorSet& a, const DescriptorSet& b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::kInvalidArgument, "descriptor sets must be non-empty");
  if (a.dim() != b.dim()) {
    throw Error(ErrorKind::kInvalidArgument, "descriptor dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                                                 std::to_string(b.dim()));
  }
}

}  // namespace

NeighborTable nearest_neighbors(const DescriptorSet& a, const DescriptorSet& b) {
  check_compatible(a, b);
  const int n = a.size();
  const int m = b.size();
  const RowMat ma = to_matrix(a);
  const RowMat mb = to_matrix(b);
  const Eigen::VectorXd na = ma.rowwise().squaredNorm();
  const Eigen::VectorXd nb = mb.rowwise().squaredNorm();
  RowMat dist = ma * mb.transpose();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) dist(i, j) = std::sqrt(std::max(0.0, na[i] + nb[j] - 2.0 * dist(i, j)));
  }

  constexpr double kInf = std::numeric_limits<double>::infinity();
  NeighborTable t;
  t.row_nearest.assign(n, -1);
  t.row_best.assign(n, kInf);
  t.row_second.assign(n, kInf);
  t.col_nearest.assign(m, -1);
  t.col_best.assign(m, kInf);
  t.col_second.assign(m, kInf);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double d = dist(i, j);
      if (d < t.row_best[i]) {
        t.row_second[i] = t.row_best[i];
        t.row_best[i] = d;
        t.row_nearest[i] = j;
      } else if (d < t.row_second[i]) {
        t.row_second[i] = d;
      }
      if (d < t.col_best[j]) {
        t.col_second[j] = t.col_best[j];
        t.col_best[j] = d;
        t.col_nearest[j] = i;
      } else if (d < t.col_second[j]) {
        t.col_second[j] = d;
      }
    }
  }
  return t;
}

namespace {

std::vector<Correspondence> mutual_pairs(const NeighborTable& t) {
  std::vector<Correspondence> out;
  for (int i = 0; i < static_cast<int>(t.row_nearest.size()); ++i) {
    const int j = t.row_nearest[i];
    if (t.col_nearest[j] == i) out.push_back({i, j, t.row_best[i]});
  }
  return out;
}

}  // namespace

std::vector<Correspondence> match_bidirectional(const DescriptorSet& p1, const DescriptorSet& p2) {
  return mutual_pairs(nearest_neighbors(p1, p2));
}

MatchResult ratio_refine(const std::vector<Correspondence>& pairs, const DescriptorSet& p1, const DescriptorSet& p2,
                         double ratio) {
  MatchResult r;
  if (pairs.empty()) return r;
  check_compatible(p1, p2);
  // Only the rows that appear in pairs need their second-nearest distance.
  std::vector<float> rows;
  rows.reserve(pairs.size() * static_cast<std::size_t>(p1.dim()));
  for (const auto& c : pairs) {
    if (c.index_a < 0 || c.index_a >= p1.size() || c.index_b < 0 || c.index_b >= p2.size()) {
      throw Error(ErrorKind::kOutOfBounds, "correspondence index out of range");
    }
    const auto row = p1.row(c.index_a);
    rows.insert(rows.end(), row.begin(), row.end());
  }
  const NeighborTable t = nearest_neighbors(DescriptorSet(p1.image_id(), p1.dim(), std::move(rows)), p2);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (pairs[k].distance < ratio * t.row_second[k]) r.pairs.push_back(pairs[k]);
  }
  r.score = static_cast<int>(r.pairs.size());
  return r;
}

MatchResult match_descriptors(const DescriptorSet& p1, const DescriptorSet& p2, double ratio) {
  const NeighborTable t = nearest_neighbors(p1, p2);
  MatchResult r;
  for (const Correspondence& c : mutual_pairs(t)) {
    if (c.distance < ratio * t.row_second[c.index_a]) r.pairs.push_back(c);
  }
  r.score = static_cast<int>(r.pairs.size());
  return r;
}

int match_score(const DescriptorSet& a, const DescriptorSet& b, double ratio) {
  if (a.empty() || b.empty()) return 0;
  auto key_less = [](const DescriptorSet& x, const DescriptorSet& y) {
    if (x.image_id() != y.image_id()) return x.image_id() < y.image_id();
    if (x.size() != y.size()) return x.size() < y.size();
    return std::lexicographical_compare(x.data().begin(), x.data().end(), y.data().begin(), y.data().end());
  };
  const bool swap = key_less(b, a);
  return swap ? match_descriptors(b, a, ratio).score : match_descriptors(a, b, ratio).score;
}

std::vector<unsigned char> encode_descriptors(const DescriptorSet& set) {
  detail::ByteWriter w;
  w.bytes("PDSC", 4);
  w.u32(kDescriptorFormatVersion);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(static_cast<std::uint32_t>(set.dim()));
  for (float v : set.data()) w.f32(v);
  return std::move(w.buffer());
}

DescriptorSet decode_descriptors(std::span<const unsigned char> bytes, const std::string& image_id) {
  detail::ByteReader r(bytes, "descriptor file '" + image_id + "'");
  if (r.fixed(4) != "PDSC") throw Error(ErrorKind::kFormat, image_id + ": not a PDSC descriptor file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kDescriptorFormatVersion) {
    throw Error(ErrorKind::kFormat, image_id + ": unsupported descriptor format version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  if (dim == 0) throw Error(ErrorKind::kFormat, image_id + ": descriptor dimension is zero");
  r.need(static_cast<std::size_t>(count) * dim * 4);
  std::vector<float> rows(static_cast<std::size_t>(count) * dim);
  for (float& v : rows) v = r.f32();
  if (!r.at_end()) throw Error(ErrorKind::kFormat, image_id + ": trailing bytes after descriptor payload");
  return DescriptorSet(image_id, static_cast<int>(dim), std::move(rows));
}

void save_descriptors(const DescriptorSet& set, const fs::path& path) {
  write_file_atomic(path, encode_descriptors(set));
}

DescriptorSet load_descriptors(const fs::path& path) {
  const std::string raw = read_binary_file(path);
  return decode_descriptors(std::span(reinterpret_cast<const unsigned char*>(raw.data()), raw.size()),
                            path.stem().string());
}

}  // namespace porenet
