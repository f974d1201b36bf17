#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "porenet/image.hpp"

namespace porenet {

struct Correspondence {
  int index_a = 0;
  int index_b = 0;
  double distance = 0.0;

  friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

/// n descriptors of a fixed dimension, stored row-major as 32-bit floats.
class DescriptorSet {
 public:
  DescriptorSet() = default;
  DescriptorSet(std::string image_id, int dim, std::vector<float> rows);

  const std::string& image_id() const noexcept { return image_id_; }
  void set_image_id(std::string id) { image_id_ = std::move(id); }
  int dim() const noexcept { return dim_; }
  int size() const noexcept { return dim_ == 0 ? 0 : static_cast<int>(rows_.size() / dim_); }
  bool empty() const noexcept { return rows_.empty(); }
  std::span<const float> row(int i) const { return {rows_.data() + static_cast<std::size_t>(i) * dim_, static_cast<std::size_t>(dim_)}; }
  std::span<const float> data() const noexcept { return rows_; }

  void push_back(std::span<const float> row);

  /// Throws unless every row has unit Euclidean norm within tol.
  void check_unit_norm(double tol = 1e-5) const;

 private:
  std::string image_id_;
  int dim_ = 0;
  std::vector<float> rows_;
};

/// Per-row and per-column nearest-neighbour summary of an n x m distance matrix.
struct NeighborTable {
  std::vector<int> row_nearest;        // index into set b
  std::vector<double> row_best;        // distance to row_nearest
  std::vector<double> row_second;      // +inf when m == 1
  std::vector<int> col_nearest;        // index into set a
  std::vector<double> col_best;
  std::vector<double> col_second;      // +inf when n == 1
};

/// Euclidean distances via |u|^2 + |v|^2 - 2 u.v (a single matrix product, double precision).
/// Ties resolve to the smaller index.
NeighborTable nearest_neighbors(const DescriptorSet& a, const DescriptorSet& b);

/// Pairs (i, j) where j is i's nearest neighbour in b and i is j's nearest in a, sorted by i.
std::vector<Correspondence> match_bidirectional(const DescriptorSet& p1, const DescriptorSet& p2);

struct MatchResult {
  std::vector<Correspondence> pairs;
  int score = 0;
};

/// Keeps (i, j) iff dist(i, j) < ratio * (distance from i to its second-nearest in p2).
MatchResult ratio_refine(const std::vector<Correspondence>& pairs, const DescriptorSet& p1, const DescriptorSet& p2,
                         double ratio = 0.8);

/// Mutual nearest neighbours followed by the ratio test, computed from one distance pass.
MatchResult match_descriptors(const DescriptorSet& p1, const DescriptorSet& p2, double ratio = 0.8);

/// Symmetric comparison score: the argument pair is put in a canonical order before matching,
/// so match_score(a, b) == match_score(b, a). Returns 0 if either side is empty.
int match_score(const DescriptorSet& a, const DescriptorSet& b, double ratio = 0.8);

// PDSC container: magic "PDSC", version u32, count u32, dim u32, rows as little-endian f32.
inline constexpr std::uint32_t kDescriptorFormatVersion = 1;
std::vector<unsigned char> encode_descriptors(const DescriptorSet& set);
DescriptorSet decode_descriptors(std::span<const unsigned char> bytes, const std::string& image_id);
void save_descriptors(const DescriptorSet& set, const std::filesystem::path& path);
DescriptorSet load_descriptors(const std::filesystem::path& path);

}  // namespace porenet
