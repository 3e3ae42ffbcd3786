#include "nsd/corpus.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "nsd/error.h"

namespace nsd {

namespace {

bool is_blank(char c) { return c == ' ' || c == '\t' || c == '\r'; }

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_blank(line[i])) ++i;
    if (i == line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !is_blank(line[j])) ++j;
    fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

std::string slurp(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

const char *split_name(SplitName name) {
  switch (name) {
    case SplitName::kTrain: return "train";
    case SplitName::kVal: return "val";
    case SplitName::kTest: return "test";
  }
  return "?";
}

SlotSchema::SlotSchema(std::vector<std::string> slot_types)
    : slot_types_(std::move(slot_types)) {
  std::sort(slot_types_.begin(), slot_types_.end());
  slot_types_.erase(std::unique(slot_types_.begin(), slot_types_.end()),
                    slot_types_.end());
  std::erase(slot_types_, std::string(kNovelTag));
  tag_vocab_.reserve(2 * slot_types_.size() + 1);
  tag_vocab_.emplace_back(kOutsideTag);
  for (const auto &type : slot_types_) {
    tag_vocab_.push_back("B-" + type);
    tag_vocab_.push_back("I-" + type);
  }
}

bool SlotSchema::contains(std::string_view type) const {
  return std::binary_search(slot_types_.begin(), slot_types_.end(), type);
}

SlotSchema SlotSchema::without(const std::vector<std::string> &types) const {
  std::vector<std::string> kept;
  for (const auto &type : slot_types_) {
    if (std::find(types.begin(), types.end(), type) == types.end()) {
      kept.push_back(type);
    }
  }
  return SlotSchema(std::move(kept));
}

bool parse_tag(std::string_view tag, TagParts *parts) {
  if (tag == kOutsideTag) {
    *parts = {'O', {}};
    return true;
  }
  if (tag == kNovelTag) {
    *parts = {'N', kNovelTag};
    return true;
  }
  if (tag.size() < 3 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I')) {
    return false;
  }
  std::string_view type = tag.substr(2);
  if (type == kNovelTag) return false;
  *parts = {tag[0], type};
  return true;
}

bool is_legal_tag(std::string_view tag) {
  TagParts parts;
  return parse_tag(tag, &parts);
}

std::string_view tag_type(std::string_view tag) {
  TagParts parts;
  if (!parse_tag(tag, &parts)) return {};
  return parts.type;
}

Corpus parse_conll(std::string_view text, const ParseOptions &options) {
  Corpus corpus;
  LabeledUtterance current;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto flush = [&] {
    if (!current.tokens.empty()) corpus.push_back(std::move(current));
    current = {};
  };
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    auto fields = split_fields(line);
    if (fields.empty()) {
      flush();
    } else {
      if (fields.size() != 2) throw MalformedLine(line_no, std::string(line));
      if (!is_legal_tag(fields[1])) {
        throw IllegalTag(line_no, std::string(fields[1]));
      }
      if (!options.allow_novel && fields[1] == kNovelTag) {
        throw IllegalTag(line_no, std::string(fields[1]));
      }
      if (options.reject_mask_token && fields[0] == kMaskToken) {
        throw ReservedToken(line_no, std::string(fields[0]));
      }
      current.tokens.emplace_back(fields[0]);
      current.tags.emplace_back(fields[1]);
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  flush();
  if (corpus.empty()) throw EmptyCorpus();
  return corpus;
}

Corpus read_conll_file(const std::string &path, const ParseOptions &options) {
  try {
    return parse_conll(slurp(path), options);
  } catch (const EmptyCorpus &) {
    throw Error("'" + path + "': corpus contains no utterances");
  }
}

std::string serialize_conll(const Corpus &corpus) {
  std::string out;
  for (const auto &utt : corpus) {
    for (std::size_t i = 0; i < utt.size(); ++i) {
      out += utt.tokens[i];
      out += ' ';
      out += utt.tags[i];
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

void write_conll_file(const std::string &path, const Corpus &corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << serialize_conll(corpus);
}

std::string to_lower(std::string_view word) {
  std::string out(word);
  for (std::size_t i = 0; i < out.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(out[i]);
    if (c >= 'A' && c <= 'Z') {
      out[i] = static_cast<char>(c + 32);
    } else if (c == 0xC3 && i + 1 < out.size()) {
      // U+00C0..U+00DE map to U+00E0..U+00FE, except U+00D7 (multiplication).
      unsigned char next = static_cast<unsigned char>(out[i + 1]);
      if (next >= 0x80 && next <= 0x9E && next != 0x97) {
        out[i + 1] = static_cast<char>(next + 0x20);
      }
      ++i;
    }
  }
  return out;
}

void lowercase_tokens(Corpus *corpus) {
  for (auto &utt : *corpus) {
    for (auto &token : utt.tokens) token = to_lower(token);
  }
}

SlotSchema derive_schema(const CorpusSplit &train) {
  std::set<std::string> types;
  for (const auto &utt : train.utterances) {
    for (const auto &tag : utt.tags) {
      TagParts parts;
      if (parse_tag(tag, &parts) && (parts.prefix == 'B' || parts.prefix == 'I')) {
        types.emplace(parts.type);
      }
    }
  }
  return SlotSchema(std::vector<std::string>(types.begin(), types.end()));
}

double oov_percentage(const Corpus &train, const Corpus &test, bool lowercase) {
  std::unordered_set<std::string> vocab;
  for (const auto &utt : train) {
    for (const auto &token : utt.tokens) {
      vocab.insert(lowercase ? to_lower(token) : token);
    }
  }
  std::size_t total = 0;
  std::size_t oov = 0;
  for (const auto &utt : test) {
    for (const auto &token : utt.tokens) {
      ++total;
      if (!vocab.contains(lowercase ? to_lower(token) : token)) ++oov;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(oov) / total;
}

CorpusStats compute_stats(const CorpusSplits &splits, bool lowercase) {
  CorpusStats stats;
  std::unordered_set<std::string> vocab;
  for (const auto &utt : splits.train.utterances) {
    for (const auto &token : utt.tokens) {
      vocab.insert(lowercase ? to_lower(token) : token);
    }
  }
  stats.vocabulary_size = vocab.size();
  stats.oov_word_percentage =
      oov_percentage(splits.train.utterances, splits.test.utterances, lowercase);
  stats.num_slots = derive_schema(splits.train).size();
  stats.split_sizes["train"] = splits.train.size();
  stats.split_sizes["val"] = splits.val.size();
  stats.split_sizes["test"] = splits.test.size();
  return stats;
}

std::vector<BioWarning> validate_bio(const LabeledUtterance &utt) {
  std::vector<BioWarning> warnings;
  TagParts prev{'O', {}};
  for (std::size_t i = 0; i < utt.tags.size(); ++i) {
    TagParts cur;
    if (!parse_tag(utt.tags[i], &cur)) {
      throw IllegalTag(0, utt.tags[i]);
    }
    if (cur.prefix == 'I') {
      if (prev.prefix == 'O') {
        warnings.push_back({i, "I-" + std::string(cur.type) + " follows O"});
      } else if (prev.type != cur.type) {
        warnings.push_back({i, "I-" + std::string(cur.type) + " follows type " +
                                   std::string(prev.type)});
      }
    }
    prev = cur;
  }
  return warnings;
}

}  // namespace nsd
