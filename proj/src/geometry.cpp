#include "laver/geometry.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace laver {
namespace {

void validate(const SegmentSpec& s, std::size_t index) {
  if (s.length == 0) {
    throw std::invalid_argument("segment " + std::to_string(index) + " has zero length");
  }
  if (s.kind == SegmentKind::vision && s.grid_rows * s.grid_cols != s.length) {
    throw std::invalid_argument("vision segment " + std::to_string(index) + " grid " +
                                std::to_string(s.grid_rows) + "x" + std::to_string(s.grid_cols) +
                                " does not match length " + std::to_string(s.length));
  }
}

AttentionLayout skeleton(const std::vector<SegmentSpec>& segments) {
  if (segments.empty()) throw std::invalid_argument("layout needs at least one segment");
  AttentionLayout layout;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    validate(segments[s], s);
    layout.length += segments[s].length;
  }
  layout.allow.assign(layout.length * layout.length, 0);
  layout.kind.reserve(layout.length);
  layout.segment.reserve(layout.length);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (std::size_t i = 0; i < segments[s].length; ++i) {
      layout.kind.push_back(segments[s].kind);
      layout.segment.push_back(static_cast<int>(s));
    }
  }
  auto idx = assign_rope_indices(segments);
  layout.row_index = std::move(idx.row);
  layout.col_index = std::move(idx.col);
  return layout;
}

}  // namespace

SegmentSpec SegmentSpec::vision(std::size_t rows, std::size_t cols, int image_id) {
  return {SegmentKind::vision, rows * cols, rows, cols, image_id};
}
SegmentSpec SegmentSpec::text(std::size_t length) { return {SegmentKind::text, length, 0, 0, -1}; }
SegmentSpec SegmentSpec::pad(std::size_t length) { return {SegmentKind::pad, length, 0, 0, -1}; }

std::vector<std::size_t> AttentionLayout::positions_of(SegmentKind k) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < length; ++i)
    if (kind[i] == k) out.push_back(i);
  return out;
}

AttentionLayout build_mixed_layout(const std::vector<SegmentSpec>& segments) {
  AttentionLayout layout = skeleton(segments);
  const std::size_t t = layout.length;
  for (std::size_t i = 0; i < t; ++i) {
    if (layout.kind[i] == SegmentKind::pad) continue;
    for (std::size_t j = 0; j < t; ++j) {
      if (layout.kind[j] == SegmentKind::pad) continue;
      const bool same_image = layout.kind[i] == SegmentKind::vision &&
                              layout.kind[j] == SegmentKind::vision &&
                              layout.segment[i] == layout.segment[j];
      layout.allow[i * t + j] = (same_image || j <= i) ? 1 : 0;
    }
  }
  return layout;
}

AttentionLayout build_packed_layout(const std::vector<SegmentSpec>& images, std::size_t pad_to) {
  std::size_t used = 0;
  for (std::size_t s = 0; s < images.size(); ++s) {
    if (images[s].kind != SegmentKind::vision) {
      throw std::invalid_argument("packed layout: segment " + std::to_string(s) +
                                  " is not a vision segment");
    }
    used += images[s].length;
  }
  if (used > pad_to) {
    throw std::invalid_argument("packed layout: " + std::to_string(used) +
                                " vision tokens overflow pad_to=" + std::to_string(pad_to));
  }
  std::vector<SegmentSpec> segments = images;
  if (used < pad_to) segments.push_back(SegmentSpec::pad(pad_to - used));
  AttentionLayout layout = skeleton(segments);
  const std::size_t t = layout.length;
  for (std::size_t i = 0; i < t; ++i) {
    if (layout.kind[i] == SegmentKind::pad) continue;
    for (std::size_t j = 0; j < t; ++j) {
      layout.allow[i * t + j] = layout.segment[i] == layout.segment[j] ? 1 : 0;
    }
  }
  return layout;
}

RopeIndices assign_rope_indices(const std::vector<SegmentSpec>& segments) {
  RopeIndices idx;
  int position = 0;
  for (const auto& s : segments) {
    if (s.kind == SegmentKind::vision) {
      for (std::size_t r = 0; r < s.grid_rows; ++r) {
        for (std::size_t c = 0; c < s.grid_cols; ++c) {
          idx.row.push_back(position + static_cast<int>(r));
          idx.col.push_back(position + static_cast<int>(c));
        }
      }
      position += static_cast<int>(s.length);
    } else {
      for (std::size_t i = 0; i < s.length; ++i, ++position) {
        idx.row.push_back(position);
        idx.col.push_back(position);
      }
    }
  }
  return idx;
}

RopeTable::RopeTable(const std::vector<int>& row_index, const std::vector<int>& col_index,
                     std::size_t head_dim, double base)
    : length_(row_index.size()), head_dim_(head_dim) {
  if (head_dim == 0 || head_dim % 4 != 0) {
    throw std::invalid_argument("2D-RoPE needs a head dim divisible by 4, got " +
                                std::to_string(head_dim));
  }
  if (col_index.size() != row_index.size()) {
    throw std::invalid_argument("2D-RoPE: row/col index lengths differ");
  }
  const std::size_t half = head_dim / 2;
  const std::size_t pairs_per_half = half / 2;
  cos_.resize(length_ * half);
  sin_.resize(length_ * half);
  for (std::size_t t = 0; t < length_; ++t) {
    for (std::size_t axis = 0; axis < 2; ++axis) {
      const double pos = axis == 0 ? row_index[t] : col_index[t];
      for (std::size_t i = 0; i < pairs_per_half; ++i) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        const double angle = pos * freq;
        cos_[t * half + axis * pairs_per_half + i] = static_cast<float>(std::cos(angle));
        sin_[t * half + axis * pairs_per_half + i] = static_cast<float>(std::sin(angle));
      }
    }
  }
}

void RopeTable::rotate(Tensor& x, std::size_t heads, bool inverse) const {
  if (x.size() != length_ * heads * head_dim_) {
    throw std::invalid_argument("2D-RoPE: tensor " + shape_string(x.shape()) + " does not match " +
                                std::to_string(length_) + " positions x " + std::to_string(heads) +
                                " heads x " + std::to_string(head_dim_));
  }
  const std::size_t n_pairs = head_dim_ / 2;
  const float sign = inverse ? -1.0f : 1.0f;
  float* p = x.data();
  for (std::size_t t = 0; t < length_; ++t) {
    const float* c = cos_.data() + t * n_pairs;
    const float* s = sin_.data() + t * n_pairs;
    for (std::size_t h = 0; h < heads; ++h) {
      float* v = p + (t * heads + h) * head_dim_;
      for (std::size_t i = 0; i < n_pairs; ++i) {
        const float x0 = v[2 * i], x1 = v[2 * i + 1];
        const float sn = sign * s[i];
        v[2 * i] = x0 * c[i] - x1 * sn;
        v[2 * i + 1] = x0 * sn + x1 * c[i];
      }
    }
  }
}

Tensor apply_rope(const Tensor& q_or_k, const std::vector<int>& row_index,
                  const std::vector<int>& col_index, double base) {
  if (q_or_k.rank() != 3) throw std::invalid_argument("apply_rope: expected [T, heads, head_dim]");
  if (q_or_k.dim(0) != row_index.size()) {
    throw std::invalid_argument("apply_rope: index length does not match sequence length");
  }
  RopeTable table(row_index, col_index, q_or_k.dim(2), base);
  Tensor out = q_or_k;
  table.rotate(out, q_or_k.dim(1));
  return out;
}

std::string render_layout(const AttentionLayout& layout) {
  std::string out;
  out.reserve(layout.length * (layout.length + 1));
  for (std::size_t i = 0; i < layout.length; ++i) {
    for (std::size_t j = 0; j < layout.length; ++j) out += layout.allowed(i, j) ? '#' : '.';
    out += '\n';
  }
  return out;
}

std::vector<SegmentSpec> parse_segments(const std::string& spec) {
  std::vector<SegmentSpec> segments;
  std::stringstream ss(spec);
  std::string item;
  int next_image = 0;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const char tag = item[0];
    const std::string body = item.substr(1);
    try {
      if (tag == 'v') {
        const auto x = body.find('x');
        if (x == std::string::npos) throw std::invalid_argument("missing 'x'");
        segments.push_back(SegmentSpec::vision(std::stoul(body.substr(0, x)),
                                               std::stoul(body.substr(x + 1)), next_image++));
      } else if (tag == 't') {
        segments.push_back(SegmentSpec::text(std::stoul(body)));
      } else if (tag == 'p') {
        segments.push_back(SegmentSpec::pad(std::stoul(body)));
      } else {
        throw std::invalid_argument("unknown tag");
      }
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad segment '" + item + "' (expected vRxC, tN or pN)");
    }
  }
  if (segments.empty()) throw std::invalid_argument("empty segment spec");
  return segments;
}

}  // namespace laver
