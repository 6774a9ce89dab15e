#include "docmamba/sfbs.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <regex>
#include <tuple>

namespace docmamba {
namespace {

LayoutToken tok(Index index, int y, int x, int segment = 0) {
  LayoutToken t;
  t.index = index;
  t.x = x;
  t.y = y;
  t.x_max = x + 10;
  t.y_max = y + 10;
  t.segment_id = segment;
  return t;
}

std::vector<Index> ranks_of_segment(const std::vector<LayoutToken>& tokens,
                                    const OrderedSequence& seq, int segment) {
  std::vector<Index> ranks;
  for (const auto& t : tokens)
    if (t.segment_id == segment) ranks.push_back(seq.inverse[std::size_t(t.index)]);
  std::sort(ranks.begin(), ranks.end());
  return ranks;
}

bool contiguous(const std::vector<Index>& sorted_ranks) {
  return sorted_ranks.empty() ||
         sorted_ranks.back() - sorted_ranks.front() + 1 == Index(sorted_ranks.size());
}

TEST(SfbsOrder, EmptyInput) {
  EXPECT_TRUE(sfbs_order({}).order.empty());
  EXPECT_TRUE(wfbs_order({}).order.empty());
}

TEST(SfbsOrder, SingleSegmentSortsTopThenLeft) {
  const std::vector<LayoutToken> tokens = {tok(0, 10, 50), tok(1, 10, 20), tok(2, 5, 90)};
  EXPECT_EQ(sfbs_order(tokens).order, (std::vector<Index>{2, 1, 0}));
}

TEST(SfbsOrder, HigherSegmentComesFirstDespiteInterleaving) {
  // Segment 1 starts above segment 0 but its later tokens sit below segment 0's.
  const std::vector<LayoutToken> tokens = {tok(0, 20, 10, 0), tok(1, 40, 10, 0),
                                           tok(2, 10, 300, 1), tok(3, 30, 300, 1),
                                           tok(4, 50, 300, 1)};
  const OrderedSequence seq = sfbs_order(tokens);
  EXPECT_EQ(seq.order, (std::vector<Index>{2, 3, 4, 0, 1}));
  for (Index b : {2, 3, 4})
    for (Index a : {0, 1}) EXPECT_LT(seq.inverse[b], seq.inverse[a]);
}

TEST(SfbsOrder, EqualKeysKeepInputOrder) {
  const std::vector<LayoutToken> tokens = {tok(0, 5, 5), tok(1, 5, 5), tok(2, 5, 5)};
  EXPECT_EQ(sfbs_order(tokens).order, (std::vector<Index>{0, 1, 2}));
  EXPECT_EQ(wfbs_order(tokens).order, (std::vector<Index>{0, 1, 2}));
}

TEST(SfbsOrder, RejectsDuplicateIndices) {
  const std::vector<LayoutToken> tokens = {tok(0, 1, 1), tok(0, 2, 2)};
  EXPECT_THROW(sfbs_order(tokens), ContractError);
}

TEST(WfbsOrder, TwoColumnsInterleaveOnlyWithoutSegments) {
  // Left column segment 0, right column segment 1, rows aligned.
  std::vector<LayoutToken> tokens;
  for (int row = 0; row < 4; ++row) {
    tokens.push_back(tok(Index(tokens.size()), 100 + 20 * row, 50, 0));
    tokens.push_back(tok(Index(tokens.size()), 100 + 20 * row, 400, 1));
  }
  const OrderedSequence w = wfbs_order(tokens);
  const OrderedSequence s = sfbs_order(tokens);
  EXPECT_FALSE(contiguous(ranks_of_segment(tokens, w, 0)));
  EXPECT_FALSE(contiguous(ranks_of_segment(tokens, w, 1)));
  EXPECT_TRUE(contiguous(ranks_of_segment(tokens, s, 0)));
  EXPECT_TRUE(contiguous(ranks_of_segment(tokens, s, 1)));
  EXPECT_EQ(w.order, (std::vector<Index>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(s.order, (std::vector<Index>{0, 2, 4, 6, 1, 3, 5, 7}));
}

TEST(LayoutToken, AnchorIsUpperLeftVertex) {
  const Poly poly = {12, 30, 80, 30, 80, 44, 12, 44};
  const LayoutToken t = LayoutToken::from_poly(3, poly, 7);
  EXPECT_EQ(t.x, 12);
  EXPECT_EQ(t.y, 30);
  EXPECT_EQ(t.x_max, 80);
  EXPECT_EQ(t.y_max, 44);
  EXPECT_EQ(t.segment_id, 7);
}

TEST(OrderedSequence, FromOrderValidates) {
  EXPECT_THROW(OrderedSequence::from_order({0, 0}), ContractError);
  EXPECT_THROW(OrderedSequence::from_order({1, 2}), ContractError);
  EXPECT_TRUE(OrderedSequence::from_order({1, 0, 2}).is_bijection());
}

// Brute-force oracle: sort segments by their min key, then members by key.
std::vector<Index> oracle_sfbs(const std::vector<LayoutToken>& tokens) {
  auto key = [](const LayoutToken& t) { return std::make_tuple(t.y, t.x, t.index); };
  std::map<int, std::tuple<int, int, Index>> seg_key;
  for (const auto& t : tokens) {
    auto it = seg_key.find(t.segment_id);
    if (it == seg_key.end() || key(t) < it->second) seg_key[t.segment_id] = key(t);
  }
  std::vector<LayoutToken> sorted = tokens;
  std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
    return std::make_tuple(seg_key[a.segment_id], key(a)) <
           std::make_tuple(seg_key[b.segment_id], key(b));
  });
  std::vector<Index> order;
  for (const auto& t : sorted) order.push_back(t.index);
  return order;
}

TEST(SfbsProperties, RandomizedDocuments) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(0, 60)(rng);
    const int segments = std::uniform_int_distribution<int>(1, 8)(rng);
    // Small coordinate ranges force many ties.
    std::uniform_int_distribution<int> coord(0, 30), seg(0, segments - 1);
    std::vector<LayoutToken> tokens;
    for (int i = 0; i < n; ++i) tokens.push_back(tok(i, coord(rng), coord(rng), seg(rng)));
    std::shuffle(tokens.begin(), tokens.end(), rng);

    const OrderedSequence s = sfbs_order(tokens);
    const OrderedSequence w = wfbs_order(tokens);
    ASSERT_TRUE(s.is_bijection());
    ASSERT_TRUE(w.is_bijection());
    ASSERT_EQ(s.size(), std::size_t(n));
    ASSERT_EQ(s.order, oracle_sfbs(tokens));

    std::vector<const LayoutToken*> by_index(std::size_t(n), nullptr);
    for (const auto& t : tokens) by_index[std::size_t(t.index)] = &t;
    for (int g = 0; g < segments; ++g) ASSERT_TRUE(contiguous(ranks_of_segment(tokens, s, g)));
    for (std::size_t r = 1; r < s.size(); ++r) {
      const LayoutToken& a = *by_index[std::size_t(s.order[r - 1])];
      const LayoutToken& b = *by_index[std::size_t(s.order[r])];
      if (a.segment_id == b.segment_id)
        ASSERT_LT(std::make_tuple(a.y, a.x, a.index), std::make_tuple(b.y, b.x, b.index));
      const LayoutToken& wa = *by_index[std::size_t(w.order[r - 1])];
      const LayoutToken& wb = *by_index[std::size_t(w.order[r])];
      ASSERT_LT(std::make_tuple(wa.y, wa.x, wa.index), std::make_tuple(wb.y, wb.x, wb.index));
    }

    std::vector<LayoutToken> single = tokens;
    for (auto& t : single) t.segment_id = 5;
    ASSERT_EQ(sfbs_order(single).order, wfbs_order(single).order);
  }
}

TEST(RenderScanSvg, EmptyDocumentIsValidSvg) {
  const std::string svg = render_scan_svg({}, OrderedSequence{});
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(svg.find("data-rank"), std::string::npos);
}

TEST(RenderScanSvg, RampDarkensWithRankAndIsDeterministic) {
  const std::vector<LayoutToken> tokens = {tok(0, 10, 50), tok(1, 10, 20), tok(2, 5, 90)};
  const OrderedSequence seq = sfbs_order(tokens);
  const std::string svg = render_scan_svg(tokens, seq);
  EXPECT_EQ(svg, render_scan_svg(tokens, seq));

  const std::regex fill_re("fill=\"rgb\\((\\d+),\\d+,255\\)\" data-rank=\"(\\d+)\"");
  std::vector<int> shades;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), fill_re); it != std::sregex_iterator();
       ++it)
    shades.push_back(std::stoi((*it)[1]));
  ASSERT_EQ(shades.size(), 3u);
  EXPECT_GT(shades[0], shades[1]);
  EXPECT_GT(shades[1], shades[2]);
}

TEST(RenderScanSvg, RejectsMismatchedOrdering) {
  const std::vector<LayoutToken> tokens = {tok(0, 1, 1), tok(1, 2, 2)};
  EXPECT_THROW(render_scan_svg(tokens, OrderedSequence::from_order({0})), ContractError);
}

}  // namespace
}  // namespace docmamba
