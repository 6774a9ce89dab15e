#include "docmamba/datapipe.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

namespace docmamba {
namespace {

const char* kMinimalDoc =
    R"({"doc_id":"d1","page_w":100,"page_h":200,)"
    R"("words":[{"text":"Hi","quad":[10,20,30,20,30,40,10,40],"segment_id":0}]})";

TEST(LoadDocument, MinimalDocument) {
  const Document doc = load_document(kMinimalDoc);
  EXPECT_EQ(doc.doc_id, "d1");
  ASSERT_EQ(doc.words.size(), 1u);
  EXPECT_EQ(doc.words[0].text, "Hi");
  EXPECT_EQ(doc.words[0].quad[2], 30.0);
  EXPECT_FALSE(doc.words[0].entity_tag.has_value());
}

std::string parse_error_path(const std::string& text) {
  try {
    load_document(text);
  } catch (const ParseError& e) {
    return e.path();
  }
  return "<no error>";
}

TEST(LoadDocument, MissingFieldsNameTheirPath) {
  EXPECT_EQ(parse_error_path(R"({"doc_id":"d","page_w":1,"page_h":1,)"
                             R"("words":[{"text":"a","quad":[0,0,1,0,1,1,0,1]}]})"),
            "words[0].segment_id");
  EXPECT_EQ(parse_error_path(R"({"doc_id":"d","page_h":1,"words":[]})"), "page_w");
  EXPECT_EQ(parse_error_path(R"({"doc_id":"d","page_w":1,"page_h":1,)"
                             R"("words":[{"text":"a","quad":[0,0,1,0,1,1,0,null],"segment_id":0}]})"),
            "words[0].quad[7]");
  EXPECT_EQ(parse_error_path(R"({"doc_id":"d","page_w":1,"page_h":1,)"
                             R"("words":[{"text":"a","quad":[0,0,1],"segment_id":0}]})"),
            "words[0].quad");
  EXPECT_EQ(parse_error_path(R"({"doc_id":"d","page_w":1,"page_h":1,)"
                             R"("words":[{"text":"a","quad":[0,0,1,0,1,1,0,1],"segment_id":-1}]})"),
            "words[0].segment_id");
  EXPECT_EQ(parse_error_path(R"({"doc_id":"d","page_w":1,"page_h":1,)"
                             R"("words":[{"text":"a","quad":[0,0,1,0,1,1,0,1],"segment_id":0,)"
                             R"("entity_tag":"X-Y"}]})"),
            "words[0].entity_tag");
  EXPECT_EQ(parse_error_path("{not json"), "$");
}

TEST(LoadDocument, RoundTripIsFieldwiseEqual) {
  GrammarConfig g;
  for (const Document& doc : synth_corpus(5, 20, g)) EXPECT_EQ(load_document(save_document(doc)), doc);
  const Document minimal = load_document(kMinimalDoc);
  EXPECT_EQ(load_document(save_document(minimal)), minimal);
}

TEST(ConvertFunsd, BlocksBecomeSegmentsAndLabelsBecomeBio) {
  const char* funsd = R"({"form":[
    {"id":0,"label":"question","words":[{"box":[10,10,40,20],"text":"Date"},{"box":[42,10,50,20],"text":":"}]},
    {"id":1,"label":"answer","words":[{"box":[60,10,90,20],"text":"1/2/99"}]},
    {"id":2,"label":"other","words":[{"box":[10,30,20,40],"text":""},{"box":[10,50,20,60],"text":"x"}]}
  ]})";
  const Document doc = convert_funsd(funsd, "f", 100, 100);
  ASSERT_EQ(doc.words.size(), 4u);
  EXPECT_EQ(doc.words[0].entity_tag, "B-QUESTION");
  EXPECT_EQ(doc.words[1].entity_tag, "I-QUESTION");
  EXPECT_EQ(doc.words[2].entity_tag, "B-ANSWER");
  EXPECT_EQ(doc.words[3].entity_tag, "O");
  EXPECT_EQ(doc.words[2].segment_id, 1);
  EXPECT_EQ(doc.words[0].quad, (Quad{10, 10, 40, 10, 40, 20, 10, 20}));
}

TEST(ByteTokenizer, OffsetsBytesPastSpecials) {
  ByteTokenizer tok;
  EXPECT_EQ(tok.vocab_size(), 260);
  EXPECT_EQ(tok.encode("A"), (std::vector<int>{65 + 4}));
  EXPECT_EQ(tok.decode(tok.encode("hello")), "hello");
}

TEST(TokenizeDocument, ClsFirstAndTokensInheritWordLayout) {
  Document doc;
  doc.doc_id = "t";
  doc.page_w = 1000;
  doc.page_h = 1000;
  doc.words = {{"ab", {500, 500, 520, 500, 520, 510, 500, 510}, 1, "B-DATE"},
               {"c", {10, 10, 20, 10, 20, 20, 10, 20}, 0, "O"}};
  ByteTokenizer tok;
  const TagSet tags(synth_entity_types());
  const TokenizedDoc t = tokenize_document(doc, tok, ScanMode::sfbs, &tags);
  ASSERT_EQ(t.size(), 4);
  EXPECT_EQ(t.records[0].token_id, tok.specials().cls_id);
  EXPECT_EQ(t.records[0].poly, Poly{});
  EXPECT_EQ(t.tags[0], kIgnoreLabel);
  EXPECT_EQ(t.records[1].token_id, 'c' + 4);  // segment 0 sits higher on the page
  EXPECT_EQ(t.records[2].poly, t.records[3].poly);
  EXPECT_EQ(t.records[2].poly[0], 500);
  EXPECT_EQ(t.tags[1], tags.index_of("O"));
  EXPECT_EQ(t.tags[2], tags.index_of("B-DATE"));
  EXPECT_EQ(t.tags[3], tags.index_of("I-DATE"));
  EXPECT_EQ(t.word_index, (std::vector<Index>{-1, 1, 0, 0}));

  const TokenizedDoc input = tokenize_document(doc, tok, ScanMode::input);
  EXPECT_EQ(input.records[1].token_id, 'a' + 4);
  EXPECT_FALSE(input.has_tags);
}

TEST(SynthCorpus, DeterministicForSeed) {
  GrammarConfig g;
  const auto a = synth_corpus(11, 30, g);
  const auto b = synth_corpus(11, 30, g);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, synth_corpus(12, 30, g));
}

TEST(SynthCorpus, SingleSegmentGrammar) {
  GrammarConfig g;
  g.min_segments = g.max_segments = 1;
  const auto docs = synth_corpus(3, 1, g);
  ASSERT_EQ(docs.size(), 1u);
  std::set<int> segs;
  for (const auto& w : docs[0].words) segs.insert(w.segment_id);
  EXPECT_EQ(segs.size(), 1u);
}

TEST(SynthCorpus, LengthsAndSegmentsWithinConfiguredBounds) {
  GrammarConfig g;
  g.min_tokens = 80;
  g.max_tokens = 300;
  ByteTokenizer tok;
  const TagSet tags(synth_entity_types());
  Index lo = 1 << 30, hi = 0;
  std::set<std::string> entity_types;
  for (const Document& doc : synth_corpus(21, 500, g)) {
    const TokenizedDoc t = tokenize_document(doc, tok, ScanMode::sfbs, &tags);
    lo = std::min(lo, t.size() - 1);
    hi = std::max(hi, t.size() - 1);
    std::set<int> segs;
    for (const auto& w : doc.words) {
      segs.insert(w.segment_id);
      EXPECT_GE(w.quad[0], 0.0);
      EXPECT_LE(w.quad[2], doc.page_w);
      EXPECT_LE(w.quad[5], doc.page_h);
      if (w.entity_tag && *w.entity_tag != "O") entity_types.insert(w.entity_tag->substr(2));
    }
    EXPECT_GE(int(segs.size()), g.min_segments);
    EXPECT_LE(int(segs.size()), g.max_segments);
  }
  EXPECT_GE(lo, g.min_tokens);
  EXPECT_LE(hi, g.max_tokens);
  EXPECT_LT(lo, g.min_tokens + 20);
  EXPECT_GT(hi, g.max_tokens - 20);
  EXPECT_EQ(entity_types.size(), 4u);
}

TEST(SynthCorpus, RejectsZeroDocs) { EXPECT_THROW(synth_corpus(1, 0, GrammarConfig{}), ContractError); }

std::vector<int> sample_ids(Index n, Rng& rng) {
  std::uniform_int_distribution<int> dist(4, 259);
  std::vector<int> ids = {1};
  for (Index i = 1; i < n; ++i) ids.push_back(dist(rng));
  return ids;
}

TEST(ApplyMlmMask, ZeroProbabilityLeavesTokens) {
  Rng rng(1);
  const auto ids = sample_ids(500, rng);
  MaskingPolicy p;
  p.p_mask = 0.0;
  const MaskedTokens m = apply_mlm_mask(ids, p, SpecialTokens{}, 260, rng);
  EXPECT_EQ(m.ids, ids);
  EXPECT_TRUE(std::all_of(m.labels.begin(), m.labels.end(), [](int l) { return l == kIgnoreLabel; }));
}

TEST(ApplyMlmMask, DegeneratePolicyMasksEverythingButCls) {
  Rng rng(2);
  const auto ids = sample_ids(300, rng);
  MaskingPolicy p{1.0, 1.0, 0.0, 0.0};
  const MaskedTokens m = apply_mlm_mask(ids, p, SpecialTokens{}, 260, rng);
  EXPECT_EQ(m.ids[0], 1);
  EXPECT_EQ(m.labels[0], kIgnoreLabel);
  for (std::size_t i = 1; i < ids.size(); ++i) {
    EXPECT_EQ(m.ids[i], 2);
    EXPECT_EQ(m.labels[i], ids[i]);
  }
}

TEST(ApplyMlmMask, DefaultPolicyStatistics) {
  Rng rng(3);
  const auto ids = sample_ids(100001, rng);
  const MaskedTokens m = apply_mlm_mask(ids, MaskingPolicy{}, SpecialTokens{}, 260, rng);
  Index selected = 0, masked = 0, random = 0, kept = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    switch (m.actions[i]) {
      case MaskAction::none: EXPECT_EQ(m.ids[i], ids[i]); continue;
      case MaskAction::mask_token: ++masked; EXPECT_EQ(m.ids[i], 2); break;
      case MaskAction::random_token: ++random; EXPECT_GE(m.ids[i], 4); break;
      case MaskAction::keep: ++kept; EXPECT_EQ(m.ids[i], ids[i]); break;
    }
    ++selected;
    EXPECT_EQ(m.labels[i], ids[i]);
  }
  EXPECT_NEAR(double(selected) / 100000.0, 0.15, 0.005);
  EXPECT_NEAR(double(masked) / double(selected), 0.8, 0.01);
  EXPECT_NEAR(double(random) / double(selected), 0.1, 0.01);
  EXPECT_NEAR(double(kept) / double(selected), 0.1, 0.01);
}

TEST(MaskingPolicy, SubProbabilitiesMustSumToOne) {
  EXPECT_THROW((MaskingPolicy{0.15, 0.8, 0.1, 0.2}).validate(), ContractError);
  EXPECT_NO_THROW(MaskingPolicy{}.validate());
}

TokenizedDoc seq_of(Index len, const std::string& id, int segment_every = 0) {
  TokenizedDoc s;
  s.doc_id = id;
  for (Index i = 0; i < len; ++i) {
    TokenRecord r;
    r.token_id = i == 0 ? 1 : 4 + int(i % 200);
    r.poly = {int(i % 1000), 0, 0, 0, 0, 0, 0, 0};
    r.segment_id = segment_every > 0 ? int((i - 1) / segment_every) : 0;
    s.records.push_back(r);
    s.tags.push_back(i == 0 ? kIgnoreLabel : 0);
  }
  return s;
}

TEST(BucketBatches, Length512AtBudget20480GivesBatchesOf40) {
  std::vector<TokenizedDoc> seqs;
  for (int i = 0; i < 100; ++i) seqs.push_back(seq_of(512, "s" + std::to_string(i)));
  const auto batches = bucket_batches(seqs, 20480);
  ASSERT_EQ(batches.size(), 3u);
  std::multiset<Index> sizes;
  for (const auto& b : batches) {
    EXPECT_EQ(b.length, 512);
    sizes.insert(b.size());
  }
  EXPECT_EQ(sizes, (std::multiset<Index>{20, 40, 40}));
}

TEST(BucketBatches, BucketBoundaryAt64) {
  const auto batches = bucket_batches({seq_of(64, "a"), seq_of(65, "b")}, 1024);
  ASSERT_EQ(batches.size(), 2u);
  std::set<Index> lengths = {batches[0].length, batches[1].length};
  EXPECT_EQ(lengths, (std::set<Index>{64}));
  EXPECT_EQ(batches[0].size() + batches[1].size(), 2);
}

TEST(BucketBatches, SingleSequenceTruncatedToBucketFloor) {
  const auto batches = bucket_batches({seq_of(100, "a")}, 1024);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].size(), 1);
  EXPECT_EQ(batches[0].length, 64);
  EXPECT_EQ(batches[0].records[0][0].token_id, 1);
}

TEST(BucketBatches, ClsOnlySequencesAreSkippedAndCounted) {
  BucketStats stats;
  const auto batches = bucket_batches({seq_of(1, "a"), seq_of(5, "b")}, 64, 64, 0, &stats);
  EXPECT_EQ(stats.skipped, 1);
  EXPECT_EQ(stats.sequences, 2);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].doc_ids, (std::vector<std::string>{"b"}));
}

TEST(BucketBatches, RejectsBudgetBelowBucketWidth) {
  EXPECT_THROW(bucket_batches({seq_of(10, "a")}, 32), ContractError);
}

TEST(BucketBatches, RandomizedPartitionBudgetAndDeterminism) {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 30)(rng);
    std::vector<TokenizedDoc> seqs;
    std::uniform_int_distribution<Index> len(1, 700);
    for (int i = 0; i < n; ++i) seqs.push_back(seq_of(len(rng), std::to_string(i), 37));
    const Index k = std::uniform_int_distribution<Index>(64, 4096)(rng);
    const std::uint64_t seed = rng();
    BucketStats stats;
    const auto batches = bucket_batches(seqs, k, 64, seed, &stats, 512);

    std::multiset<std::string> seen;
    for (const auto& b : batches) {
      ASSERT_LE(b.tokens(), k);
      ASSERT_GE(b.size(), 1);
      for (std::size_t r = 0; r < b.records.size(); ++r) {
        ASSERT_EQ(Index(b.records[r].size()), b.length);
        ASSERT_EQ(b.records[r][0].token_id, 1);
        const std::string id = b.doc_ids[r];
        seen.insert(id.substr(0, id.find('#')));
      }
    }
    Index expected_pieces = 0;
    for (const auto& s : seqs) {
      if (s.size() < 2) continue;
      const auto split = split_long_sequence(s, 512);
      expected_pieces += Index(split.size());
      ASSERT_EQ(seen.count(s.doc_id), split.size());
    }
    ASSERT_EQ(Index(seen.size()) + stats.skipped, expected_pieces + stats.skipped);
    ASSERT_EQ(stats.sequences, n);

    const auto again = bucket_batches(seqs, k, 64, seed, nullptr, 512);
    ASSERT_EQ(again.size(), batches.size());
    for (std::size_t i = 0; i < again.size(); ++i) ASSERT_EQ(again[i].doc_ids, batches[i].doc_ids);
  }
}

TEST(SplitLongSequence, CutsAtSegmentBoundariesWhenPossible) {
  // 30 segments of 100 tokens after [CLS]: pieces hold whole segments.
  const TokenizedDoc s = seq_of(3001, "long", 100);
  const auto pieces = split_long_sequence(s, 2048);
  ASSERT_EQ(pieces.size(), 2u);
  EXPECT_EQ(pieces[0].size(), 1 + 2000);
  EXPECT_EQ(pieces[1].size(), 1 + 1000);
  for (const auto& p : pieces) EXPECT_EQ(p.records[0].token_id, 1);
  EXPECT_EQ(pieces[1].records[1].segment_id, 20);
}

TEST(SplitLongSequence, HardSplitsOversizedSegment) {
  const TokenizedDoc s = seq_of(5001, "one");
  const auto pieces = split_long_sequence(s, 2048);
  ASSERT_EQ(pieces.size(), 3u);
  Index body = 0;
  for (const auto& p : pieces) {
    EXPECT_LE(p.size(), 2048);
    body += p.size() - 1;
  }
  EXPECT_EQ(body, 5000);
  EXPECT_EQ(split_long_sequence(seq_of(2048, "x")).size(), 1u);
}

}  // namespace
}  // namespace docmamba
