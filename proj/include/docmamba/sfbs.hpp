#pragma once

#include <span>
#include <string>
#include <vector>

#include "docmamba/doc_model.hpp"

namespace docmamba {

/// A token as seen by the layout serializer. The reading anchor
/// (x, y) is the polygon's upper-left vertex; the extent is kept only for
/// rendering.
struct LayoutToken {
  Index index = 0;
  int x = 0;
  int y = 0;
  int segment_id = 0;
  int x_max = 0;
  int y_max = 0;

  static LayoutToken from_poly(Index index, const Poly& poly, int segment_id);
};

/// A permutation of token positions and its inverse:
/// order[rank] = token index, inverse[token index] = rank.
struct OrderedSequence {
  std::vector<Index> order;
  std::vector<Index> inverse;

  static OrderedSequence from_order(std::vector<Index> order);
  std::size_t size() const { return order.size(); }
  bool is_bijection() const;
};

/// Segment-first scan: tokens sorted by (y, x, index) inside each segment,
/// segments sorted by their smallest token key, runs concatenated. The
/// reversed direction is the same permutation read backwards.
OrderedSequence sfbs_order(std::span<const LayoutToken> tokens);

/// Word-first scan: one global (y, x, index) sort, segments ignored.
OrderedSequence wfbs_order(std::span<const LayoutToken> tokens);

/// SVG 1.1 with one rectangle per token, shaded light to dark by scan rank.
std::string render_scan_svg(std::span<const LayoutToken> tokens, const OrderedSequence& ordering);

}  // namespace docmamba
