#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "docmamba/doc_model.hpp"
#include "docmamba/sfbs.hpp"

namespace docmamba {

// ---- documents ----

struct Word {
  std::string text;
  Quad quad{};
  int segment_id = 0;
  std::optional<std::string> entity_tag;

  bool operator==(const Word&) const = default;
};

struct Document {
  std::string doc_id;
  double page_w = 0.0;
  double page_h = 0.0;
  std::vector<Word> words;

  bool has_tags() const;
  bool operator==(const Document&) const = default;
};

/// Parses the document JSON schema
/// {"doc_id", "page_w", "page_h", "words": [{"text", "quad", "segment_id", "entity_tag"?}]}.
/// Throws ParseError naming the offending path, e.g. "words[0].segment_id".
Document load_document(std::string_view json_text);
Document load_document_file(const std::string& path);
std::string save_document(const Document& doc);

/// FUNSD annotation ({"form": [{"id", "label", "words": [{"box", "text"}]}]})
/// to a Document: each form block becomes a segment, labels become BIO tags
/// ("other" maps to O).
Document convert_funsd(std::string_view json_text, const std::string& doc_id, double page_w,
                       double page_h);

// ---- tokenization ----

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<int> encode(std::string_view word) const = 0;
  virtual Index vocab_size() const = 0;
  virtual const SpecialTokens& specials() const = 0;
};

/// One token per UTF-8 byte, ids offset past the four reserved specials.
class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<int> encode(std::string_view word) const override;
  Index vocab_size() const override { return 256 + specials_.count; }
  const SpecialTokens& specials() const override { return specials_; }
  std::string decode(const std::vector<int>& ids) const;

 private:
  SpecialTokens specials_;
};

enum class ScanMode { sfbs, wfbs, input };

/// Encoder-ready sequence: [CLS] at position 0 with zero coordinates, then
/// the document's tokens in scan order.
struct TokenizedDoc {
  std::string doc_id;
  std::vector<TokenRecord> records;
  std::vector<int> tags;  // tag index per record; kIgnoreLabel at [CLS]
  std::vector<Index> word_index;  // source word per record; -1 at [CLS]
  bool has_tags = false;

  Index size() const { return Index(records.size()); }
  std::vector<int> token_ids() const;
};

/// Orders words with the chosen scan, then expands each word into its
/// tokens. Tokens inherit the word's polygon and segment; a word tagged
/// B-X yields B-X on its first token and I-X on the rest.
TokenizedDoc tokenize_document(const Document& doc, const Tokenizer& tokenizer,
                               ScanMode mode = ScanMode::sfbs, const TagSet* tags = nullptr);

/// Layout tokens (one per word) used for scan ordering.
std::vector<LayoutToken> layout_tokens(const Document& doc);

// ---- synthetic corpus ----

struct GrammarConfig {
  int min_tokens = 64;  // byte-token length, [CLS] excluded
  int max_tokens = 128;
  int min_segments = 2;
  int max_segments = 8;
  double entity_fraction = 0.5;    // share of segments that are tagged key/value fields
  double two_column_prob = 0.5;
  double page_w = 612.0;
  double page_h = 792.0;

  void validate() const;
};

/// The four entity types used by the synthetic grammar.
const std::vector<std::string>& synth_entity_types();

/// Deterministic documents built from a small template grammar (titles,
/// sentences, key/value fields) laid out in one or two columns.
std::vector<Document> synth_corpus(std::uint64_t seed, int n_docs, const GrammarConfig& grammar);

// ---- masking ----

struct MaskingPolicy {
  double p_mask = 0.15;
  double p_replace_mask = 0.8;
  double p_replace_random = 0.1;
  double p_keep = 0.1;

  void validate() const;
};

enum class MaskAction : std::uint8_t { none, mask_token, random_token, keep };

struct MaskedTokens {
  std::vector<int> ids;
  std::vector<int> labels;  // original id where selected, kIgnoreLabel elsewhere
  std::vector<MaskAction> actions;
};

/// Independently selects each non-special token with p_mask, then replaces
/// it with [MASK], a uniform non-special token, or leaves it unchanged.
MaskedTokens apply_mlm_mask(const std::vector<int>& ids, const MaskingPolicy& policy,
                            const SpecialTokens& specials, Index vocab_size, Rng& rng);

// ---- length-bucketed batching ----

inline constexpr Index kBucketWidth = 64;
inline constexpr Index kMaxSequenceLength = 2048;

struct Batch {
  Index length = 0;
  std::vector<std::string> doc_ids;
  std::vector<std::vector<TokenRecord>> records;  // B sequences of `length` tokens
  std::vector<std::vector<int>> tags;

  Index size() const { return Index(records.size()); }
  Index tokens() const { return size() * length; }
};

struct BucketStats {
  Index sequences = 0;
  Index skipped = 0;  // sequences holding only [CLS]
  Index chunks = 0;   // extra pieces produced by splitting long sequences
};

/// Splits a sequence longer than max_len into [CLS]-prefixed pieces, cutting
/// at segment boundaries where a whole segment fits, else mid-segment.
std::vector<TokenizedDoc> split_long_sequence(const TokenizedDoc& seq,
                                              Index max_len = kMaxSequenceLength);

/// Bucket index floor((len - 1) / width). A bucket's truncation length is the
/// largest multiple of `width` not above its shortest member (or that member's
/// length when shorter than `width`), capped at k. Batches hold floor(k / L)
/// sequences; the last batch of a bucket may be smaller. Bucket members and
/// the final batch order are shuffled with `shuffle_seed`.
std::vector<Batch> bucket_batches(const std::vector<TokenizedDoc>& seqs, Index k,
                                  Index bucket_width = kBucketWidth,
                                  std::uint64_t shuffle_seed = 0, BucketStats* stats = nullptr,
                                  Index max_len = kMaxSequenceLength);

}  // namespace docmamba
