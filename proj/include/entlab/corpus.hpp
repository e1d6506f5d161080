#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace entlab {

enum class TokenizerKind { byte, char_ };
std::string to_string(TokenizerKind k);
TokenizerKind parse_tokenizer_kind(std::string_view s);

/// Byte tokenizer: 256 ids, identity on bytes. Char tokenizer: one id per
/// distinct Unicode code point of the training text, in code-point order.
class Tokenizer {
 public:
  static Tokenizer byte();
  /// Throws InputError on invalid UTF-8.
  static Tokenizer fit_char(std::string_view text);

  TokenizerKind kind() const { return kind_; }
  std::size_t vocab_size() const { return kind_ == TokenizerKind::byte ? 256 : symbols_.size(); }
  const std::vector<char32_t>& symbols() const { return symbols_; }

  /// Throws InputError for text outside the vocabulary.
  std::vector<int> encode(std::string_view text) const;
  /// Throws InputError for ids outside the vocabulary.
  std::string decode(std::span<const int> ids) const;

  /// {"tokenizer": "char", "symbols": [code points]} (symbols omitted for byte).
  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

  friend bool operator==(const Tokenizer&, const Tokenizer&) = default;

 private:
  TokenizerKind kind_ = TokenizerKind::byte;
  std::vector<char32_t> symbols_;
};

std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(std::span<const char32_t> cps);

struct TokenStream {
  Tokenizer tokenizer;
  std::vector<int> tokens;
};

/// Reads and tokenizes a corpus. Throws UsageError when the corpus is empty
/// or has fewer than context + 1 tokens.
TokenStream ingest_text(std::string_view text, TokenizerKind kind, std::size_t context);
TokenStream ingest(const std::filesystem::path& corpus_path, TokenizerKind kind, std::size_t context);

struct Batch {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;
};

/// Random contiguous windows of length T; targets are inputs shifted by one.
Batch next_batch(std::span<const int> stream, std::size_t context, std::size_t batch_size, std::mt19937_64& rng);

/// Deterministic English-like text from a small generative grammar, used as
/// the bundled sample corpus.
std::string make_sample_corpus(std::size_t bytes, std::uint64_t seed);

}  // namespace entlab
