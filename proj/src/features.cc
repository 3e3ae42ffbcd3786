#include "nsd/features.h"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "nsd/error.h"

namespace nsd {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::uint64_t h, const void *data, std::size_t n) {
  const auto *p = static_cast<const unsigned char *>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t *pos) {
  if (*pos + 4 > bytes.size()) throw FormatError("NSDE: truncated file");
  std::uint32_t v = static_cast<std::uint32_t>(bytes[*pos]) |
                    static_cast<std::uint32_t>(bytes[*pos + 1]) << 8 |
                    static_cast<std::uint32_t>(bytes[*pos + 2]) << 16 |
                    static_cast<std::uint32_t>(bytes[*pos + 3]) << 24;
  *pos += 4;
  return v;
}

void write_u32(std::vector<std::uint8_t> *out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

void TokenFeatureMatrix::add_sparse_row(
    std::vector<std::pair<std::uint32_t, double>> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const auto &a, const auto &b) { return a.first < b.first; });
  std::size_t i = 0;
  while (i < entries.size()) {
    const std::uint32_t index = entries[i].first;
    if (index >= dim_) throw DimensionMismatch("feature index out of range");
    double value = 0.0;
    for (; i < entries.size() && entries[i].first == index; ++i) {
      value += entries[i].second;
    }
    if (!std::isfinite(value)) throw NonFiniteValue("non-finite feature value");
    if (value != 0.0) {
      indices_.push_back(index);
      values_.push_back(value);
    }
  }
  offsets_.push_back(indices_.size());
}

void TokenFeatureMatrix::add_dense_row(std::span<const double> values) {
  if (values.size() != dim_) {
    throw DimensionMismatch("dense row has " + std::to_string(values.size()) +
                            " values, expected " + std::to_string(dim_));
  }
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) throw NonFiniteValue("non-finite feature value");
    indices_.push_back(static_cast<std::uint32_t>(k));
    values_.push_back(values[k]);
  }
  offsets_.push_back(indices_.size());
}

FeatureRow TokenFeatureMatrix::row(std::size_t i) const {
  const std::size_t b = offsets_[i];
  const std::size_t n = offsets_[i + 1] - b;
  return {std::span(indices_).subspan(b, n), std::span(values_).subspan(b, n)};
}

std::vector<double> TokenFeatureMatrix::dense_row(std::size_t i) const {
  std::vector<double> out(dim_, 0.0);
  auto r = row(i);
  for (std::size_t k = 0; k < r.nnz(); ++k) out[r.indices[k]] = r.values[k];
  return out;
}

void HashedFeatureSpec::validate() const {
  if (dim < 16) throw ConfigError("hashed feature dimension must be >= 16");
  if ((templates & kAllTemplates) == 0) {
    throw ConfigError("at least one feature template must be active");
  }
}

std::uint32_t feature_index(const HashedFeatureSpec &spec, std::uint32_t tmpl,
                            std::string_view value) {
  std::uint64_t h = fnv1a(kFnvOffset, &spec.hash_seed, sizeof(spec.hash_seed));
  h = fnv1a(h, &tmpl, sizeof(tmpl));
  h = fnv1a(h, value.data(), value.size());
  return static_cast<std::uint32_t>(h % spec.dim);
}

TokenFeatureMatrix hash_features(const LabeledUtterance &utt,
                                 const HashedFeatureSpec &spec,
                                 std::size_t utterance_id) {
  spec.validate();
  TokenFeatureMatrix m(utterance_id, spec.dim);
  const std::uint32_t t = spec.templates;
  for (std::size_t i = 0; i < utt.size(); ++i) {
    const std::string &word = utt.tokens[i];
    std::vector<std::pair<std::uint32_t, double>> fired;
    auto fire = [&](std::uint32_t tmpl, std::string_view value) {
      fired.emplace_back(feature_index(spec, tmpl, value), 1.0);
    };
    if (t & kWordIdentity) fire(kWordIdentity, word);
    if (t & kLowercaseWord) fire(kLowercaseWord, to_lower(word));
    for (std::size_t n = 1; n <= 3 && n <= word.size(); ++n) {
      if (t & kPrefixes) fire(kPrefixes + (n << 16), std::string_view(word).substr(0, n));
      if (t & kSuffixes) {
        fire(kSuffixes + (n << 16), std::string_view(word).substr(word.size() - n));
      }
    }
    if ((t & kContainsDigit) &&
        std::any_of(word.begin(), word.end(),
                    [](char c) { return c >= '0' && c <= '9'; })) {
      fire(kContainsDigit, "1");
    }
    if ((t & kIsCapitalized) && !word.empty() && word[0] >= 'A' && word[0] <= 'Z') {
      fire(kIsCapitalized, "1");
    }
    if (t & kPreviousWord) fire(kPreviousWord, i == 0 ? "<s>" : to_lower(utt.tokens[i - 1]));
    if (t & kNextWord) {
      fire(kNextWord, i + 1 == utt.size() ? "</s>" : to_lower(utt.tokens[i + 1]));
    }
    m.add_sparse_row(std::move(fired));
  }
  return m;
}

FeatureCorpus hash_corpus(const Corpus &corpus, const HashedFeatureSpec &spec) {
  FeatureCorpus out;
  out.reserve(corpus.size());
  for (std::size_t u = 0; u < corpus.size(); ++u) {
    out.push_back(hash_features(corpus[u], spec, u));
  }
  return out;
}

FeatureCorpus parse_embeddings(std::span<const std::uint8_t> bytes,
                               const Corpus &corpus) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "NSDE", 4) != 0) {
    throw FormatError("NSDE: bad magic");
  }
  std::size_t pos = 4;
  const std::uint32_t version = read_u32(bytes, &pos);
  if (version != kEmbeddingFormatVersion) {
    throw FormatError("NSDE: unsupported version " + std::to_string(version));
  }
  const std::uint32_t dim = read_u32(bytes, &pos);
  if (dim == 0) throw FormatError("NSDE: zero dimension");
  const std::uint32_t count = read_u32(bytes, &pos);
  FeatureCorpus out;
  out.reserve(count);
  std::vector<double> row(dim);
  for (std::uint32_t u = 0; u < count; ++u) {
    if (u >= corpus.size()) {
      throw AlignmentError(u, "file declares " + std::to_string(count) +
                                      " utterances, corpus has " +
                                      std::to_string(corpus.size()));
    }
    const std::uint32_t tokens = read_u32(bytes, &pos);
    if (tokens != corpus[u].size()) {
      throw AlignmentError(u, "file has " + std::to_string(tokens) +
                                  " tokens, corpus has " +
                                  std::to_string(corpus[u].size()));
    }
    if (pos + static_cast<std::size_t>(tokens) * dim * 4 > bytes.size()) {
      throw FormatError("NSDE: truncated file");
    }
    TokenFeatureMatrix m(u, dim);
    for (std::uint32_t i = 0; i < tokens; ++i) {
      for (std::uint32_t k = 0; k < dim; ++k) {
        const float f = std::bit_cast<float>(read_u32(bytes, &pos));
        if (!std::isfinite(f)) {
          throw NonFiniteValue("NSDE: non-finite value at utterance " +
                               std::to_string(u) + ", token " + std::to_string(i));
        }
        row[k] = f;
      }
      m.add_dense_row(row);
    }
    out.push_back(std::move(m));
  }
  if (count < corpus.size()) {
    throw AlignmentError(count, "file declares " + std::to_string(count) +
                                    " utterances, corpus has " +
                                    std::to_string(corpus.size()));
  }
  if (pos != bytes.size()) throw FormatError("NSDE: trailing bytes");
  return out;
}

FeatureCorpus load_embeddings(const std::string &path, const Corpus &corpus) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_embeddings(bytes, corpus);
}

std::vector<std::uint8_t> serialize_embeddings(const FeatureCorpus &features) {
  std::vector<std::uint8_t> out{'N', 'S', 'D', 'E'};
  const std::size_t dim = features.empty() ? 0 : features.front().dim();
  write_u32(&out, kEmbeddingFormatVersion);
  write_u32(&out, static_cast<std::uint32_t>(dim));
  write_u32(&out, static_cast<std::uint32_t>(features.size()));
  for (const auto &m : features) {
    if (m.dim() != dim) throw DimensionMismatch("NSDE: inconsistent dimensions");
    write_u32(&out, static_cast<std::uint32_t>(m.rows()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (double v : m.dense_row(i)) {
        write_u32(&out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  return out;
}

void write_embeddings(const std::string &path, const FeatureCorpus &features) {
  const auto bytes = serialize_embeddings(features);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

FeatureSource FeatureSource::parse(const std::string &text) {
  FeatureSource source;
  if (text.rfind("file:", 0) == 0) {
    source.kind = Kind::kFile;
    source.directory = text.substr(5);
    if (source.directory.empty()) throw ConfigError("file: feature source needs a path");
    return source;
  }
  if (text.rfind("hashed", 0) != 0) {
    throw ConfigError("feature source must be hashed[:d=N] or file:PATH");
  }
  std::string rest = text.substr(6);
  if (!rest.empty()) {
    if (rest[0] != ':') throw ConfigError("bad feature source '" + text + "'");
    std::stringstream ss(rest.substr(1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("bad feature option '" + item + "'");
      const std::string key = item.substr(0, eq);
      const std::string value = item.substr(eq + 1);
      try {
        if (key == "d") {
          source.hashed.dim = std::stoul(value);
        } else if (key == "seed") {
          source.hashed.hash_seed = std::stoull(value);
        } else {
          throw ConfigError("unknown feature option '" + key + "'");
        }
      } catch (const std::logic_error &) {
        throw ConfigError("bad value for feature option '" + key + "'");
      }
    }
  }
  source.hashed.validate();
  return source;
}

std::string FeatureSource::to_string() const {
  if (kind == Kind::kFile) return "file:" + directory;
  std::string s = "hashed:d=" + std::to_string(hashed.dim);
  if (hashed.hash_seed != 0) s += ",seed=" + std::to_string(hashed.hash_seed);
  return s;
}

FeatureCorpus extract_features(const FeatureSource &source, const Corpus &corpus,
                               const std::string &split) {
  if (source.kind == FeatureSource::Kind::kHashed) {
    return hash_corpus(corpus, source.hashed);
  }
  return load_embeddings(source.directory + "/" + split + ".nsde", corpus);
}

}  // namespace nsd
