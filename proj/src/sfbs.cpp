#include "docmamba/sfbs.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <tuple>

namespace docmamba {

namespace {

auto key_of(const LayoutToken& t) { return std::make_tuple(t.y, t.x, t.index); }

bool key_less(const LayoutToken& a, const LayoutToken& b) { return key_of(a) < key_of(b); }

void check_indices(std::span<const LayoutToken> tokens) {
  std::vector<bool> seen(tokens.size(), false);
  for (const auto& t : tokens) {
    require(t.index >= 0 && std::size_t(t.index) < tokens.size(),
            "scan order: token index outside [0, n)");
    require(!seen[std::size_t(t.index)], "scan order: duplicate token index");
    seen[std::size_t(t.index)] = true;
  }
}

}  // namespace

LayoutToken LayoutToken::from_poly(Index index, const Poly& poly, int segment_id) {
  LayoutToken t;
  t.index = index;
  t.x = poly[0];
  t.y = poly[1];
  t.segment_id = segment_id;
  t.x_max = std::max({poly[0], poly[2], poly[4], poly[6]});
  t.y_max = std::max({poly[1], poly[3], poly[5], poly[7]});
  return t;
}

OrderedSequence OrderedSequence::from_order(std::vector<Index> order) {
  OrderedSequence out;
  out.inverse.assign(order.size(), -1);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    require(order[rank] >= 0 && std::size_t(order[rank]) < order.size(),
            "OrderedSequence: index out of range");
    require(out.inverse[std::size_t(order[rank])] == -1, "OrderedSequence: repeated index");
    out.inverse[std::size_t(order[rank])] = Index(rank);
  }
  out.order = std::move(order);
  return out;
}

bool OrderedSequence::is_bijection() const {
  if (order.size() != inverse.size()) return false;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Index i = order[rank];
    if (i < 0 || std::size_t(i) >= order.size()) return false;
    if (inverse[std::size_t(i)] != Index(rank)) return false;
  }
  return true;
}

OrderedSequence sfbs_order(std::span<const LayoutToken> tokens) {
  check_indices(tokens);
  std::map<int, std::vector<LayoutToken>> segments;
  for (const auto& t : tokens) segments[t.segment_id].push_back(t);

  std::vector<std::vector<LayoutToken>> runs;
  runs.reserve(segments.size());
  for (auto& [id, members] : segments) {
    std::sort(members.begin(), members.end(), key_less);
    runs.push_back(std::move(members));
  }
  // Each run's first element is its minimal key.
  std::sort(runs.begin(), runs.end(),
            [](const auto& a, const auto& b) { return key_less(a.front(), b.front()); });

  std::vector<Index> order;
  order.reserve(tokens.size());
  for (const auto& run : runs)
    for (const auto& t : run) order.push_back(t.index);
  return OrderedSequence::from_order(std::move(order));
}

OrderedSequence wfbs_order(std::span<const LayoutToken> tokens) {
  check_indices(tokens);
  std::vector<LayoutToken> sorted(tokens.begin(), tokens.end());
  std::sort(sorted.begin(), sorted.end(), key_less);
  std::vector<Index> order;
  order.reserve(sorted.size());
  for (const auto& t : sorted) order.push_back(t.index);
  return OrderedSequence::from_order(std::move(order));
}

std::string render_scan_svg(std::span<const LayoutToken> tokens, const OrderedSequence& ordering) {
  require(ordering.size() == tokens.size() && ordering.is_bijection(),
          "render_scan_svg: ordering does not match tokens");
  std::vector<const LayoutToken*> by_index(tokens.size());
  for (const auto& t : tokens) by_index[std::size_t(t.index)] = &t;

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"1000\" "
         "height=\"1000\" viewBox=\"0 0 1000 1000\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"1000\" height=\"1000\" fill=\"white\" stroke=\"black\"/>\n";
  const std::size_t n = ordering.size();
  for (std::size_t rank = 0; rank < n; ++rank) {
    const LayoutToken& t = *by_index[std::size_t(ordering.order[rank])];
    // light (235) at the scan start, dark (35) at the end
    const int shade = n > 1 ? int(235 - (200 * rank) / (n - 1)) : 235;
    svg << "<rect x=\"" << t.x << "\" y=\"" << t.y << "\" width=\"" << std::max(1, t.x_max - t.x)
        << "\" height=\"" << std::max(1, t.y_max - t.y) << "\" fill=\"rgb(" << shade << ","
        << shade << ",255)\" data-rank=\"" << rank << "\" data-index=\"" << t.index
        << "\" data-segment=\"" << t.segment_id << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace docmamba
