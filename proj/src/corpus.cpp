#include "entlab/corpus.hpp"

#include <algorithm>
#include <set>

#include "entlab/errors.hpp"
#include "entlab/io_util.hpp"

namespace entlab {

std::string to_string(TokenizerKind k) { return k == TokenizerKind::byte ? "byte" : "char"; }

TokenizerKind parse_tokenizer_kind(std::string_view s) {
  if (s == "byte") return TokenizerKind::byte;
  if (s == "char") return TokenizerKind::char_;
  throw ConfigError("unknown tokenizer '" + std::string(s) + "' (expected byte or char)");
}

std::vector<char32_t> utf8_decode(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  auto bad = [&](const char* what) {
    throw InputError(std::string("invalid UTF-8 at byte ") + std::to_string(i) + ": " + what);
  };
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      bad("unexpected lead byte");
    }
    if (i + len > text.size()) bad("truncated sequence");
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) bad("missing continuation byte");
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr char32_t min_for_len[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_for_len[len]) bad("overlong encoding");
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) bad("invalid code point");
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(std::span<const char32_t> cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) {
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) throw InputError("cannot encode code point " + std::to_string(cp));
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

Tokenizer Tokenizer::byte() { return Tokenizer(); }

Tokenizer Tokenizer::fit_char(std::string_view text) {
  const auto cps = utf8_decode(text);
  std::set<char32_t> distinct(cps.begin(), cps.end());
  Tokenizer t;
  t.kind_ = TokenizerKind::char_;
  t.symbols_.assign(distinct.begin(), distinct.end());
  return t;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  if (kind_ == TokenizerKind::byte) {
    ids.reserve(text.size());
    for (char c : text) ids.push_back(static_cast<unsigned char>(c));
    return ids;
  }
  const auto cps = utf8_decode(text);
  ids.reserve(cps.size());
  for (char32_t cp : cps) {
    auto it = std::lower_bound(symbols_.begin(), symbols_.end(), cp);
    if (it == symbols_.end() || *it != cp)
      throw InputError("character U+" + std::to_string(static_cast<std::uint32_t>(cp)) + " is not in the vocabulary");
    ids.push_back(static_cast<int>(it - symbols_.begin()));
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  const auto v = static_cast<int>(vocab_size());
  for (int id : ids)
    if (id < 0 || id >= v) throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(v));
  if (kind_ == TokenizerKind::byte) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(static_cast<char>(id));
    return out;
  }
  std::vector<char32_t> cps;
  cps.reserve(ids.size());
  for (int id : ids) cps.push_back(symbols_[static_cast<std::size_t>(id)]);
  return utf8_encode(cps);
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json j = {{"tokenizer", to_string(kind_)}};
  if (kind_ == TokenizerKind::char_) {
    std::vector<std::uint32_t> cps(symbols_.begin(), symbols_.end());
    j["symbols"] = cps;
  }
  return j;
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("tokenizer") || !j["tokenizer"].is_string())
    throw ConfigError("tokenizer description needs a \"tokenizer\" string");
  Tokenizer t;
  t.kind_ = parse_tokenizer_kind(j["tokenizer"].get<std::string>());
  if (t.kind_ == TokenizerKind::char_) {
    if (!j.contains("symbols") || !j["symbols"].is_array()) throw ConfigError("char tokenizer needs a \"symbols\" array");
    for (const auto& s : j["symbols"]) {
      if (!s.is_number_unsigned()) throw ConfigError("tokenizer symbols must be code points");
      t.symbols_.push_back(static_cast<char32_t>(s.get<std::uint32_t>()));
    }
    if (!std::is_sorted(t.symbols_.begin(), t.symbols_.end()) ||
        std::adjacent_find(t.symbols_.begin(), t.symbols_.end()) != t.symbols_.end())
      throw ConfigError("tokenizer symbols must be strictly increasing");
  }
  return t;
}

TokenStream ingest_text(std::string_view text, TokenizerKind kind, std::size_t context) {
  if (text.empty()) throw UsageError("corpus is empty");
  TokenStream s;
  s.tokenizer = kind == TokenizerKind::byte ? Tokenizer::byte() : Tokenizer::fit_char(text);
  s.tokens = s.tokenizer.encode(text);
  if (s.tokens.size() < context + 1)
    throw UsageError("corpus has " + std::to_string(s.tokens.size()) + " tokens; need at least context + 1 = " +
                     std::to_string(context + 1));
  return s;
}

TokenStream ingest(const std::filesystem::path& corpus_path, TokenizerKind kind, std::size_t context) {
  return ingest_text(read_file(corpus_path), kind, context);
}

Batch next_batch(std::span<const int> stream, std::size_t context, std::size_t batch_size, std::mt19937_64& rng) {
  if (context == 0 || stream.size() < context + 1)
    throw UsageError("token stream too short for windows of length " + std::to_string(context));
  std::uniform_int_distribution<std::size_t> start(0, stream.size() - context - 1);
  Batch b;
  b.inputs.reserve(batch_size);
  b.targets.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t s = start(rng);
    b.inputs.emplace_back(stream.begin() + s, stream.begin() + s + context);
    b.targets.emplace_back(stream.begin() + s + 1, stream.begin() + s + context + 1);
  }
  return b;
}

namespace {

template <std::size_t N>
const char* pick(const char* const (&words)[N], std::mt19937_64& rng) {
  return words[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

}  // namespace

std::string make_sample_corpus(std::size_t bytes, std::uint64_t seed) {
  static const char* const det[] = {"the", "a", "every", "some", "that", "this", "one"};
  static const char* const adj[] = {"small", "quiet", "green", "old", "bright", "heavy", "curious", "late", "warm", "narrow"};
  static const char* const noun[] = {"cat",   "river", "engine", "garden", "teacher", "window", "lantern", "merchant",
                                     "child", "storm", "letter", "bridge", "farmer", "market", "bell",    "road"};
  static const char* const verb[] = {"watched", "carried", "found", "followed", "painted", "opened",
                                     "crossed", "heard",   "built", "counted",  "lost",    "remembered"};
  static const char* const prep[] = {"near", "under", "behind", "across", "beside", "past"};
  static const char* const adv[] = {"slowly", "again", "at dawn", "without a word", "twice", "before noon"};
  static const char* const conj[] = {"and", "but", "while", "because", "so"};

  std::mt19937_64 rng(seed);
  auto chance = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };
  auto phrase = [&]() {
    std::string s = pick(det, rng);
    if (chance(0.5)) s += std::string(" ") + pick(adj, rng);
    return s + " " + pick(noun, rng);
  };
  auto clause = [&]() {
    std::string s = phrase() + " " + pick(verb, rng) + " " + phrase();
    if (chance(0.4)) s += std::string(" ") + pick(prep, rng) + " " + phrase();
    if (chance(0.3)) s += std::string(" ") + pick(adv, rng);
    return s;
  };

  std::string out;
  out.reserve(bytes + 256);
  std::size_t in_paragraph = 0;
  while (out.size() < bytes) {
    std::string sentence = clause();
    if (chance(0.35)) sentence += std::string(", ") + pick(conj, rng) + " " + clause();
    sentence[0] = static_cast<char>(sentence[0] - 'a' + 'A');
    out += sentence;
    out += chance(0.1) ? "?" : ".";
    if (++in_paragraph >= 5 && chance(0.4)) {
      out += "\n\n";
      in_paragraph = 0;
    } else {
      out += " ";
    }
  }
  out.resize(bytes);
  return out;
}

}  // namespace entlab
