#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "laver/tensor.hpp"

namespace laver {

enum class SegmentKind : std::uint8_t { vision, text, pad };

struct SegmentSpec {
  SegmentKind kind = SegmentKind::text;
  std::size_t length = 0;
  std::size_t grid_rows = 0;  // vision only; grid_rows * grid_cols == length
  std::size_t grid_cols = 0;
  int image_id = -1;

  static SegmentSpec vision(std::size_t rows, std::size_t cols, int image_id = 0);
  static SegmentSpec text(std::size_t length);
  static SegmentSpec pad(std::size_t length);
};

/// Allow-matrix and 2-D positional indices for one sequence. Immutable once built.
struct AttentionLayout {
  std::size_t length = 0;
  std::vector<std::uint8_t> allow;  // length × length, row = query
  std::vector<int> row_index;
  std::vector<int> col_index;
  std::vector<SegmentKind> kind;    // per position
  std::vector<int> segment;         // per position, index into the source segment list

  bool allowed(std::size_t query, std::size_t key) const noexcept {
    return allow[query * length + key] != 0;
  }
  std::vector<std::size_t> positions_of(SegmentKind k) const;
};

/// Vision tokens of one image attend to each other bidirectionally; everything
/// else is causal (position i sees j <= i). Pad positions are isolated.
AttentionLayout build_mixed_layout(const std::vector<SegmentSpec>& segments);

/// Block-diagonal bidirectional attention over several images, padded to
/// `pad_to` positions. No query ever sees a key from another image.
AttentionLayout build_packed_layout(const std::vector<SegmentSpec>& images, std::size_t pad_to);

struct RopeIndices {
  std::vector<int> row;
  std::vector<int> col;
};

/// Vision token (r, c) of an image starting at sequence position `base` gets
/// (base + r, base + c); text and pad tokens at position p get (p, p).
RopeIndices assign_rope_indices(const std::vector<SegmentSpec>& segments);

inline constexpr double kRopeBase = 10000.0;

/// Precomputed rotation angles for a sequence: cos/sin per position and pair.
class RopeTable {
 public:
  RopeTable(const std::vector<int>& row_index, const std::vector<int>& col_index,
            std::size_t head_dim, double base = kRopeBase);

  std::size_t length() const noexcept { return length_; }
  std::size_t head_dim() const noexcept { return head_dim_; }

  /// Rotates x viewed as [T, heads, head_dim] in place. `inverse` applies
  /// the transposed rotation, which is what the backward pass needs.
  void rotate(Tensor& x, std::size_t heads, bool inverse = false) const;

 private:
  std::size_t length_;
  std::size_t head_dim_;
  std::vector<float> cos_;  // [T, head_dim / 2]
  std::vector<float> sin_;
};

/// 2-D rotary embedding of q or k shaped [T, heads, head_dim]. The first half
/// of each head is rotated by row_index, the second half by col_index; each
/// half uses adjacent-pair rotation with frequencies base^(-2i / (head_dim/2)).
Tensor apply_rope(const Tensor& q_or_k, const std::vector<int>& row_index,
                  const std::vector<int>& col_index, double base = kRopeBase);

/// One character per entry: '#' allowed, '.' blocked.
std::string render_layout(const AttentionLayout& layout);

/// Parses a comma-separated segment list such as "v2x2,t3,p1" (vision rows x
/// cols, text length, pad length). Image ids count up from 0.
std::vector<SegmentSpec> parse_segments(const std::string& spec);

}  // namespace laver
