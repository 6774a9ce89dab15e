#include "docmamba/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace docmamba {

using nlohmann::json;

// ---- documents ----

namespace {

const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

double number_at(const json& v, const std::string& path) {
  if (!v.is_number()) throw ParseError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ParseError(path, "non-finite number");
  return d;
}

std::string string_at(const json& v, const std::string& path) {
  if (!v.is_string()) throw ParseError(path, "expected a string");
  return v.get<std::string>();
}

bool valid_bio(const std::string& tag) {
  if (tag == "O") return true;
  return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("$", e.what());
  }
}

}  // namespace

bool Document::has_tags() const {
  return std::any_of(words.begin(), words.end(), [](const Word& w) { return w.entity_tag.has_value(); });
}

Document load_document(std::string_view json_text) {
  const json root = parse_json(json_text);
  if (!root.is_object()) throw ParseError("$", "expected an object");
  Document doc;
  doc.doc_id = string_at(field(root, "doc_id", ""), "doc_id");
  doc.page_w = number_at(field(root, "page_w", ""), "page_w");
  doc.page_h = number_at(field(root, "page_h", ""), "page_h");
  if (doc.page_w <= 0) throw ParseError("page_w", "must be positive");
  if (doc.page_h <= 0) throw ParseError("page_h", "must be positive");

  const json& words = field(root, "words", "");
  if (!words.is_array()) throw ParseError("words", "expected an array");
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string path = "words[" + std::to_string(i) + "]";
    const json& w = words[i];
    Word word;
    word.text = string_at(field(w, "text", path), join(path, "text"));

    const json& quad = field(w, "quad", path);
    const std::string qpath = join(path, "quad");
    if (!quad.is_array() || quad.size() != kPolyCoords)
      throw ParseError(qpath, "expected 8 numbers");
    for (std::size_t j = 0; j < kPolyCoords; ++j)
      word.quad[j] = number_at(quad[j], qpath + "[" + std::to_string(j) + "]");

    const json& seg = field(w, "segment_id", path);
    const std::string spath = join(path, "segment_id");
    if (!seg.is_number_integer()) throw ParseError(spath, "expected an integer");
    const auto seg_value = seg.get<std::int64_t>();
    if (seg_value < 0 || seg_value > std::numeric_limits<int>::max())
      throw ParseError(spath, "must be a non-negative int");
    word.segment_id = int(seg_value);

    if (auto it = w.find("entity_tag"); it != w.end() && !it->is_null()) {
      const std::string tpath = join(path, "entity_tag");
      std::string tag = string_at(*it, tpath);
      if (!valid_bio(tag)) throw ParseError(tpath, "not a BIO tag: " + tag);
      word.entity_tag = std::move(tag);
    }
    doc.words.push_back(std::move(word));
  }
  return doc;
}

Document load_document_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return load_document(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ":" + e.path(), e.what());
  }
}

std::string save_document(const Document& doc) {
  json words = json::array();
  for (const Word& w : doc.words) {
    json jw = {{"text", w.text},
               {"quad", std::vector<double>(w.quad.begin(), w.quad.end())},
               {"segment_id", w.segment_id}};
    if (w.entity_tag) jw["entity_tag"] = *w.entity_tag;
    words.push_back(std::move(jw));
  }
  const json root = {{"doc_id", doc.doc_id},
                     {"page_w", doc.page_w},
                     {"page_h", doc.page_h},
                     {"words", std::move(words)}};
  return root.dump();
}

Document convert_funsd(std::string_view json_text, const std::string& doc_id, double page_w,
                       double page_h) {
  require(page_w > 0 && page_h > 0, "convert_funsd: page dimensions must be positive");
  const json root = parse_json(json_text);
  const json& form = field(root, "form", "");
  if (!form.is_array()) throw ParseError("form", "expected an array");

  Document doc;
  doc.doc_id = doc_id;
  doc.page_w = page_w;
  doc.page_h = page_h;
  for (std::size_t b = 0; b < form.size(); ++b) {
    const std::string path = "form[" + std::to_string(b) + "]";
    const json& block = form[b];
    int segment = int(b);
    if (auto it = block.find("id"); it != block.end() && it->is_number_integer() && *it >= 0)
      segment = it->get<int>();
    std::string label = "other";
    if (auto it = block.find("label"); it != block.end())
      label = string_at(*it, join(path, "label"));
    std::string type = label;
    std::transform(type.begin(), type.end(), type.begin(),
                   [](unsigned char c) { return char(std::toupper(c)); });

    const json& words = field(block, "words", path);
    if (!words.is_array()) throw ParseError(join(path, "words"), "expected an array");
    bool first = true;
    for (std::size_t i = 0; i < words.size(); ++i) {
      const std::string wpath = join(path, "words[" + std::to_string(i) + "]");
      Word word;
      word.text = string_at(field(words[i], "text", wpath), join(wpath, "text"));
      if (word.text.empty()) continue;
      const json& box = field(words[i], "box", wpath);
      if (!box.is_array() || box.size() != 4) throw ParseError(join(wpath, "box"), "expected 4 numbers");
      double c[4];
      for (std::size_t j = 0; j < 4; ++j)
        c[j] = number_at(box[j], join(wpath, "box[" + std::to_string(j) + "]"));
      word.quad = {c[0], c[1], c[2], c[1], c[2], c[3], c[0], c[3]};
      word.segment_id = segment;
      if (label == "other")
        word.entity_tag = "O";
      else
        word.entity_tag = (first ? "B-" : "I-") + type;
      first = false;
      doc.words.push_back(std::move(word));
    }
  }
  return doc;
}

// ---- tokenization ----

std::vector<int> ByteTokenizer::encode(std::string_view word) const {
  std::vector<int> ids;
  ids.reserve(word.size());
  for (unsigned char c : word) ids.push_back(int(c) + specials_.count);
  return ids;
}

std::string ByteTokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == specials_.mask_id)
      out += "[MASK]";
    else if (id >= specials_.count && id < vocab_size())
      out += char(id - specials_.count);
  }
  return out;
}

std::vector<int> TokenizedDoc::token_ids() const {
  std::vector<int> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.token_id);
  return ids;
}

std::vector<LayoutToken> layout_tokens(const Document& doc) {
  std::vector<LayoutToken> tokens;
  tokens.reserve(doc.words.size());
  for (std::size_t i = 0; i < doc.words.size(); ++i) {
    const Word& w = doc.words[i];
    tokens.push_back(LayoutToken::from_poly(Index(i), normalize_box(w.quad, doc.page_w, doc.page_h),
                                            w.segment_id));
  }
  return tokens;
}

TokenizedDoc tokenize_document(const Document& doc, const Tokenizer& tokenizer, ScanMode mode,
                               const TagSet* tags) {
  const SpecialTokens& sp = tokenizer.specials();
  const std::vector<LayoutToken> layout = layout_tokens(doc);
  std::vector<Index> order;
  switch (mode) {
    case ScanMode::sfbs: order = sfbs_order(layout).order; break;
    case ScanMode::wfbs: order = wfbs_order(layout).order; break;
    case ScanMode::input:
      for (Index i = 0; i < Index(layout.size()); ++i) order.push_back(i);
      break;
  }

  TokenizedDoc out;
  out.doc_id = doc.doc_id;
  out.has_tags = tags != nullptr && doc.has_tags();
  out.records.push_back({sp.cls_id, Poly{}, 0});
  out.tags.push_back(kIgnoreLabel);
  out.word_index.push_back(-1);
  for (Index wi : order) {
    const Word& w = doc.words[std::size_t(wi)];
    const Poly poly = normalize_box(w.quad, doc.page_w, doc.page_h);
    std::vector<int> ids = tokenizer.encode(w.text);
    if (ids.empty()) ids.push_back(sp.unk_id);
    const std::string tag = w.entity_tag.value_or("O");
    for (std::size_t j = 0; j < ids.size(); ++j) {
      out.records.push_back({ids[j], poly, w.segment_id});
      out.word_index.push_back(wi);
      if (!out.has_tags) {
        out.tags.push_back(kIgnoreLabel);
      } else if (j > 0 && tag.rfind("B-", 0) == 0) {
        out.tags.push_back(tags->index_of("I-" + tag.substr(2)));
      } else {
        out.tags.push_back(tags->index_of(tag));
      }
    }
  }
  return out;
}

// ---- synthetic corpus ----

void GrammarConfig::validate() const {
  require(min_segments >= 1 && min_segments <= max_segments, "grammar: bad segment range");
  require(min_tokens <= max_tokens, "grammar: min_tokens > max_tokens");
  require(min_tokens >= max_segments, "grammar: min_tokens must be at least max_segments");
  require(entity_fraction >= 0 && entity_fraction <= 1, "grammar: entity_fraction outside [0, 1]");
  require(two_column_prob >= 0 && two_column_prob <= 1, "grammar: two_column_prob outside [0, 1]");
  require(page_w > 0 && page_h > 0, "grammar: page dimensions must be positive");
}

const std::vector<std::string>& synth_entity_types() {
  static const std::vector<std::string> types = {"COMPANY", "DATE", "ADDRESS", "TOTAL"};
  return types;
}

namespace {

using Pool = std::vector<std::string>;

const Pool kTitles = {"INVOICE", "RECEIPT", "STATEMENT", "PURCHASE ORDER", "TAX INVOICE",
                      "DELIVERY NOTE", "QUOTATION"};
const Pool kDet = {"the", "this", "each", "our", "every"};
const Pool kAdj = {"quarterly", "annual", "final", "revised", "current", "net", "monthly", "pending",
                   "signed", "overdue"};
const Pool kNoun = {"report", "balance", "invoice", "account", "payment", "order", "budget",
                    "review", "statement", "contract", "schedule", "shipment"};
const Pool kVerb = {"shows", "lists", "covers", "includes", "records", "confirms", "updates"};
const Pool kPrep = {"for", "from", "with", "under", "after", "before"};
const Pool kCompanyA = {"Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Soylent",
                        "Wonka"};
const Pool kCompanyB = {"Corp", "Ltd", "Inc", "Group", "Trading", "Holdings"};
const Pool kStreet = {"Main", "Oak", "Pine", "Maple", "Cedar", "Elm", "Lake", "Hill"};
const Pool kStreetKind = {"Street", "Road", "Avenue", "Lane"};
const Pool kCity = {"Springfield", "Riverton", "Lakeside", "Fairview", "Greenville"};

struct SynthWord {
  std::string text;
  std::string tag;
};

enum class SegmentKind { title, paragraph, field };

struct SynthSegment {
  SegmentKind kind;
  std::vector<SynthWord> words;
};

class Generator {
 public:
  explicit Generator(Rng& rng) : rng_(rng) {}

  const std::string& pick(const Pool& pool) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng_)];
  }
  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  std::vector<std::string> sentence() {
    std::vector<std::string> s = {pick(kDet), pick(kAdj), pick(kNoun), pick(kVerb), pick(kDet),
                                  pick(kNoun)};
    if (coin(0.6)) {
      s.push_back(pick(kPrep));
      s.push_back(pick(kDet));
      s.push_back(pick(kAdj));
      s.push_back(pick(kNoun));
    }
    s.back() += ".";
    s.front()[0] = char(std::toupper(static_cast<unsigned char>(s.front()[0])));
    return s;
  }

  SynthSegment title() {
    SynthSegment seg{SegmentKind::title, {}};
    std::istringstream words(pick(kTitles));
    for (std::string w; words >> w;) seg.words.push_back({w, "O"});
    return seg;
  }

  SynthSegment field() {
    const auto& types = synth_entity_types();
    const std::string& type = types[std::size_t(uniform(0, int(types.size()) - 1))];
    std::vector<std::string> key, value;
    char buf[32];
    if (type == "COMPANY") {
      key = {coin(0.5) ? "Company:" : "Vendor:"};
      value = {pick(kCompanyA), pick(kCompanyB)};
    } else if (type == "DATE") {
      key = {"Date:"};
      std::snprintf(buf, sizeof buf, "%02d/%02d/%04d", uniform(1, 28), uniform(1, 12),
                    uniform(2000, 2024));
      value = {buf};
    } else if (type == "ADDRESS") {
      key = {"Address:"};
      value = {std::to_string(uniform(1, 999)), pick(kStreet), pick(kStreetKind), pick(kCity)};
    } else {
      key = {coin(0.5) ? "Total:" : "Amount:"};
      std::snprintf(buf, sizeof buf, "%d.%02d", uniform(1, 9999), uniform(0, 99));
      value = {buf};
    }
    SynthSegment seg{SegmentKind::field, {}};
    for (auto& k : key) seg.words.push_back({k, "O"});
    for (std::size_t i = 0; i < value.size(); ++i)
      seg.words.push_back({value[i], (i == 0 ? "B-" : "I-") + type});
    return seg;
  }

  void extend_paragraph(SynthSegment& seg) {
    for (auto& w : sentence()) seg.words.push_back({w, "O"});
  }

 private:
  Rng& rng_;
};

Index total_bytes(const std::vector<SynthSegment>& segs) {
  Index n = 0;
  for (const auto& s : segs)
    for (const auto& w : s.words) n += Index(w.text.size());
  return n;
}

// Removes bytes from the end until exactly `target` remain; every segment
// keeps at least one non-empty word.
void trim_to(std::vector<SynthSegment>& segs, Index target) {
  Index excess = total_bytes(segs) - target;
  for (auto s = segs.rbegin(); s != segs.rend() && excess > 0; ++s) {
    auto& words = s->words;
    while (excess > 0) {
      SynthWord& last = words.back();
      const Index len = Index(last.text.size());
      if (words.size() > 1 && excess >= len) {
        excess -= len;
        words.pop_back();
      } else {
        const Index cut = std::min(excess, len - 1);
        last.text.resize(std::size_t(len - cut));
        excess -= cut;
        break;
      }
    }
  }
}

Document layout_document(std::string doc_id, const std::vector<SynthSegment>& segs,
                         bool two_columns, const GrammarConfig& g) {
  constexpr double margin = 36.0, gutter = 24.0, seg_gap = 10.0;
  const int columns = two_columns ? 2 : 1;
  const double col_w = (g.page_w - 2 * margin - (columns - 1) * gutter) / columns;
  const std::size_t left_count = two_columns ? (segs.size() + 1) / 2 : segs.size();

  Document doc;
  doc.doc_id = std::move(doc_id);
  doc.page_w = g.page_w;
  double bottom = 0.0;
  double y = margin;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    if (s == left_count) y = margin;
    const int col = s < left_count ? 0 : 1;
    const double left = margin + col * (col_w + gutter);
    const bool title = segs[s].kind == SegmentKind::title;
    const double char_w = title ? 9.0 : 6.0, glyph_h = title ? 14.0 : 10.0,
                 line_h = title ? 20.0 : 14.0;
    double x = left;
    for (const auto& w : segs[s].words) {
      const double width = char_w * double(w.text.size());
      if (x > left && x + width > left + col_w) {
        x = left;
        y += line_h;
      }
      Word word;
      word.text = w.text;
      word.quad = {x, y, x + width, y, x + width, y + glyph_h, x, y + glyph_h};
      word.segment_id = int(s);
      word.entity_tag = w.tag;
      doc.words.push_back(std::move(word));
      x += width + char_w;
    }
    y += line_h;
    bottom = std::max(bottom, y);
    y += seg_gap;
  }
  doc.page_h = std::max(g.page_h, bottom + margin);
  return doc;
}

}  // namespace

std::vector<Document> synth_corpus(std::uint64_t seed, int n_docs, const GrammarConfig& grammar) {
  require(n_docs >= 1, "synth_corpus: n_docs must be at least 1");
  grammar.validate();
  Rng rng(seed);
  Generator gen(rng);
  std::vector<Document> docs;
  docs.reserve(std::size_t(n_docs));
  for (int d = 0; d < n_docs; ++d) {
    const int n_seg = gen.uniform(grammar.min_segments, grammar.max_segments);
    const Index target = gen.uniform(grammar.min_tokens, grammar.max_tokens);

    std::vector<SynthSegment> segs;
    for (int s = 0; s < n_seg; ++s) {
      if (s == 0 && n_seg > 1 && gen.coin(0.7)) {
        segs.push_back(gen.title());
      } else if (s > 0 && gen.coin(grammar.entity_fraction)) {
        segs.push_back(gen.field());
      } else {
        SynthSegment para{SegmentKind::paragraph, {}};
        gen.extend_paragraph(para);
        segs.push_back(std::move(para));
      }
    }
    std::vector<std::size_t> paragraphs;
    for (std::size_t s = 0; s < segs.size(); ++s)
      if (segs[s].kind == SegmentKind::paragraph) paragraphs.push_back(s);
    if (paragraphs.empty()) {
      segs.back() = SynthSegment{SegmentKind::paragraph, {}};
      gen.extend_paragraph(segs.back());
      paragraphs.push_back(segs.size() - 1);
    }
    while (total_bytes(segs) < target)
      gen.extend_paragraph(segs[paragraphs[std::size_t(gen.uniform(0, int(paragraphs.size()) - 1))]]);
    trim_to(segs, target);

    const bool two_columns = n_seg > 1 && gen.coin(grammar.two_column_prob);
    docs.push_back(layout_document("synth-" + std::to_string(seed) + "-" + std::to_string(d), segs,
                                   two_columns, grammar));
  }
  return docs;
}

// ---- masking ----

void MaskingPolicy::validate() const {
  require(p_mask >= 0 && p_mask <= 1, "masking: p_mask outside [0, 1]");
  require(p_replace_mask >= 0 && p_replace_random >= 0 && p_keep >= 0,
          "masking: negative sub-probability");
  require(std::abs(p_replace_mask + p_replace_random + p_keep - 1.0) < 1e-9,
          "masking: replacement probabilities must sum to 1");
}

MaskedTokens apply_mlm_mask(const std::vector<int>& ids, const MaskingPolicy& policy,
                            const SpecialTokens& specials, Index vocab_size, Rng& rng) {
  policy.validate();
  require(vocab_size > specials.count, "apply_mlm_mask: vocabulary has no regular tokens");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> regular(specials.count, int(vocab_size) - 1);

  MaskedTokens out{ids, std::vector<int>(ids.size(), kIgnoreLabel),
                   std::vector<MaskAction>(ids.size(), MaskAction::none)};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (specials.is_special(ids[i])) continue;
    if (unit(rng) >= policy.p_mask) continue;
    out.labels[i] = ids[i];
    const double u = unit(rng);
    if (u < policy.p_replace_mask) {
      out.ids[i] = specials.mask_id;
      out.actions[i] = MaskAction::mask_token;
    } else if (u < policy.p_replace_mask + policy.p_replace_random) {
      out.ids[i] = regular(rng);
      out.actions[i] = MaskAction::random_token;
    } else {
      out.actions[i] = MaskAction::keep;
    }
  }
  return out;
}

// ---- length-bucketed batching ----

std::vector<TokenizedDoc> split_long_sequence(const TokenizedDoc& seq, Index max_len) {
  require(max_len >= 2, "split_long_sequence: max_len must be at least 2");
  if (seq.size() <= max_len) return {seq};
  const Index capacity = max_len - 1;

  // Segment runs over the body (position 0 is [CLS]).
  std::vector<std::pair<Index, Index>> runs;  // [begin, end)
  for (Index i = 1; i < seq.size(); ++i) {
    if (runs.empty() || seq.records[std::size_t(i)].segment_id !=
                            seq.records[std::size_t(i - 1)].segment_id)
      runs.push_back({i, i + 1});
    else
      runs.back().second = i + 1;
  }

  std::vector<std::pair<Index, Index>> pieces;
  auto flush = [&](Index begin, Index end) {
    if (end > begin) pieces.push_back({begin, end});
  };
  Index cur_begin = 1, cur_end = 1;
  for (auto [b, e] : runs) {
    if (e - cur_begin <= capacity) {
      cur_end = e;
      continue;
    }
    flush(cur_begin, cur_end);
    cur_begin = b;
    while (e - cur_begin > capacity) {
      flush(cur_begin, cur_begin + capacity);
      cur_begin += capacity;
    }
    cur_end = e;
  }
  flush(cur_begin, cur_end);

  std::vector<TokenizedDoc> out;
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    TokenizedDoc piece;
    piece.doc_id = seq.doc_id + "#" + std::to_string(k);
    piece.has_tags = seq.has_tags;
    piece.records.push_back(seq.records[0]);
    piece.tags.push_back(seq.tags[0]);
    piece.records.insert(piece.records.end(), seq.records.begin() + pieces[k].first,
                         seq.records.begin() + pieces[k].second);
    piece.tags.insert(piece.tags.end(), seq.tags.begin() + pieces[k].first,
                      seq.tags.begin() + pieces[k].second);
    if (seq.word_index.size() == seq.records.size()) {
      piece.word_index.push_back(seq.word_index[0]);
      piece.word_index.insert(piece.word_index.end(), seq.word_index.begin() + pieces[k].first,
                              seq.word_index.begin() + pieces[k].second);
    }
    out.push_back(std::move(piece));
  }
  return out;
}

std::vector<Batch> bucket_batches(const std::vector<TokenizedDoc>& seqs, Index k, Index bucket_width,
                                  std::uint64_t shuffle_seed, BucketStats* stats, Index max_len) {
  require(bucket_width >= 1, "bucket_batches: bucket_width must be positive");
  require(k >= bucket_width, "bucket_batches: k must be at least bucket_width");
  BucketStats local;
  std::map<Index, std::vector<const TokenizedDoc*>> buckets;
  std::vector<TokenizedDoc> pieces;  // owns split sequences
  for (const auto& s : seqs) {
    require(s.records.size() == s.tags.size(), "bucket_batches: tags/records length mismatch");
    ++local.sequences;
    if (s.size() < 2) {
      ++local.skipped;
      continue;
    }
    auto split = split_long_sequence(s, max_len);
    local.chunks += Index(split.size()) - 1;
    for (auto& p : split) pieces.push_back(std::move(p));
  }
  for (const auto& p : pieces) buckets[(p.size() - 1) / bucket_width].push_back(&p);

  Rng rng(shuffle_seed);
  std::vector<Batch> batches;
  for (auto& [id, members] : buckets) {
    Index shortest = members.front()->size();
    for (const auto* m : members) shortest = std::min(shortest, m->size());
    Index len = shortest >= bucket_width ? bucket_width * (shortest / bucket_width) : shortest;
    len = std::min(len, k);
    const Index per_batch = k / len;

    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t start = 0; start < members.size(); start += std::size_t(per_batch)) {
      Batch batch;
      batch.length = len;
      const std::size_t stop = std::min(members.size(), start + std::size_t(per_batch));
      for (std::size_t m = start; m < stop; ++m) {
        const TokenizedDoc& s = *members[m];
        batch.doc_ids.push_back(s.doc_id);
        batch.records.emplace_back(s.records.begin(), s.records.begin() + len);
        batch.tags.emplace_back(s.tags.begin(), s.tags.begin() + len);
      }
      batches.push_back(std::move(batch));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  if (stats) *stats = local;
  return batches;
}

}  // namespace docmamba
