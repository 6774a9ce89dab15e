#include <algorithm>

#include "docmamba/doc_model.hpp"

namespace docmamba {

TagSet::TagSet(std::vector<std::string> entity_types) : types_(std::move(entity_types)) {}

int TagSet::index_of(const std::string& tag) const {
  if (tag == "O") return 0;
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
    const auto it = std::find(types_.begin(), types_.end(), tag.substr(2));
    if (it != types_.end()) return 1 + 2 * int(it - types_.begin()) + (tag[0] == 'I' ? 1 : 0);
  }
  throw ContractError("TagSet: unknown tag '" + tag + "'");
}

std::string TagSet::name_of(int index) const {
  require(index >= 0 && index < size(), "TagSet: tag index out of range");
  if (index == 0) return "O";
  const int type = (index - 1) / 2;
  return ((index - 1) % 2 == 0 ? "B-" : "I-") + types_[std::size_t(type)];
}

std::vector<Entity> extract_entities(const std::vector<std::string>& tags) {
  std::vector<Entity> out;
  bool open = false;
  Entity cur{};
  auto close = [&](Index end) {
    if (open) {
      cur.end = end;
      out.push_back(cur);
      open = false;
    }
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    const Index pos = Index(i);
    if (tag == "O") {
      close(pos - 1);
      continue;
    }
    if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || tag[1] != '-')
      throw ContractError("extract_entities: malformed BIO tag '" + tag + "'");
    const std::string type = tag.substr(2);
    if (tag[0] == 'I' && open && cur.type == type) continue;
    close(pos - 1);
    cur = Entity{type, pos, pos};
    open = true;
  }
  close(Index(tags.size()) - 1);
  return out;
}

namespace {

void finish(F1Score& s) {
  s.precision = s.predicted > 0 ? double(s.correct) / double(s.predicted) : 0.0;
  s.recall = s.gold > 0 ? double(s.correct) / double(s.gold) : 0.0;
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
}

}  // namespace

F1Score& F1Score::operator+=(const F1Score& o) {
  predicted += o.predicted;
  gold += o.gold;
  correct += o.correct;
  finish(*this);
  return *this;
}

F1Score entity_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  require(pred.size() == gold.size(), "entity_f1: prediction and gold lengths differ");
  std::vector<Entity> p = extract_entities(pred);
  std::vector<Entity> g = extract_entities(gold);
  std::sort(p.begin(), p.end());
  std::sort(g.begin(), g.end());
  std::vector<Entity> common;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(common));
  F1Score s;
  s.predicted = Index(p.size());
  s.gold = Index(g.size());
  s.correct = Index(common.size());
  finish(s);
  return s;
}

}  // namespace docmamba
