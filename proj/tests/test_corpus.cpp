#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "entlab/corpus.hpp"
#include "entlab/errors.hpp"

using namespace entlab;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& bytes) {
  auto d = std::filesystem::temp_directory_path() / ("entlab_corpus_" + std::to_string(::getpid()));
  std::filesystem::create_directories(d);
  std::ofstream(d / name, std::ios::binary) << bytes;
  return d / name;
}

std::u32string random_code_points(std::mt19937_64& rng, std::size_t n) {
  // Mix of ASCII, two-, three- and four-byte ranges, skipping surrogates.
  std::uniform_int_distribution<int> kind(0, 3);
  std::u32string s;
  for (std::size_t i = 0; i < n; ++i) {
    char32_t cp = 0;
    switch (kind(rng)) {
      case 0: cp = std::uniform_int_distribution<char32_t>(0x20, 0x7E)(rng); break;
      case 1: cp = std::uniform_int_distribution<char32_t>(0x80, 0x7FF)(rng); break;
      case 2:
        do cp = std::uniform_int_distribution<char32_t>(0x800, 0xFFFF)(rng);
        while (cp >= 0xD800 && cp <= 0xDFFF);
        break;
      default: cp = std::uniform_int_distribution<char32_t>(0x10000, 0x10FFFF)(rng);
    }
    s.push_back(cp);
  }
  return s;
}

}  // namespace

TEST(Tokenizer, TwoSymbolCharCorpus) {
  const TokenStream s = ingest_text("abab", TokenizerKind::char_, 2);
  EXPECT_EQ(s.tokenizer.vocab_size(), 2u);
  EXPECT_EQ(s.tokenizer.symbols(), (std::vector<char32_t>{U'a', U'b'}));
  EXPECT_EQ(s.tokens, (std::vector<int>{0, 1, 0, 1}));
}

TEST(Tokenizer, ByteStreamLengthIsFileLength) {
  std::string bytes;
  for (int i = 0; i < 1000; ++i) bytes.push_back(static_cast<char>((i * 37) & 0xFF));
  const auto path = write_temp("bytes.bin", bytes);
  const TokenStream s = ingest(path, TokenizerKind::byte, 64);
  EXPECT_EQ(s.tokens.size(), std::filesystem::file_size(path));
  EXPECT_EQ(s.tokenizer.vocab_size(), 256u);
  for (std::size_t i = 0; i < bytes.size(); ++i) EXPECT_EQ(s.tokens[i], static_cast<unsigned char>(bytes[i]));
}

TEST(Tokenizer, RoundTripOverRandomStrings) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::u32string cps = random_code_points(rng, 1 + rng() % 60);
    const std::string text = utf8_encode(std::span<const char32_t>(cps.data(), cps.size()));
    const Tokenizer c = Tokenizer::fit_char(text);
    EXPECT_EQ(c.decode(c.encode(text)), text);
    const Tokenizer b = Tokenizer::byte();
    EXPECT_EQ(b.decode(b.encode(text)), text);
    EXPECT_EQ(utf8_decode(text), std::vector<char32_t>(cps.begin(), cps.end()));
  }
}

TEST(Tokenizer, CharVocabularyIsSortedByCodePoint) {
  const Tokenizer t = Tokenizer::fit_char("zé a€z");
  EXPECT_EQ(t.symbols(), (std::vector<char32_t>{U' ', U'a', U'z', 0xE9, 0x20AC}));
  EXPECT_EQ(t.encode("a€"), (std::vector<int>{1, 4}));
}

TEST(Tokenizer, JsonRoundTrip) {
  const Tokenizer t = Tokenizer::fit_char("hello, world");
  EXPECT_EQ(Tokenizer::from_json(t.to_json()), t);
  EXPECT_EQ(Tokenizer::from_json(Tokenizer::byte().to_json()), Tokenizer::byte());
  EXPECT_THROW(Tokenizer::from_json({{"tokenizer", "char"}, {"symbols", {98, 97}}}), ConfigError);
  EXPECT_THROW(Tokenizer::from_json({{"tokenizer", "bpe"}}), ConfigError);
}

TEST(Tokenizer, Errors) {
  const Tokenizer t = Tokenizer::fit_char("ab");
  EXPECT_THROW(t.encode("abc"), InputError);
  EXPECT_THROW(t.decode(std::vector<int>{2}), InputError);
  EXPECT_THROW(t.decode(std::vector<int>{-1}), InputError);
  EXPECT_THROW(Tokenizer::byte().decode(std::vector<int>{256}), InputError);
  EXPECT_THROW(parse_tokenizer_kind("bpe"), ConfigError);
}

TEST(Utf8, RejectsMalformedInput) {
  EXPECT_THROW(utf8_decode("\xC0\xAF"), InputError);          // overlong
  EXPECT_THROW(utf8_decode("\xED\xA0\x80"), InputError);      // surrogate
  EXPECT_THROW(utf8_decode("ab\xE2\x82"), InputError);        // truncated
  EXPECT_THROW(utf8_decode("\x80"), InputError);              // stray continuation
  EXPECT_THROW(utf8_decode("\xF4\x90\x80\x80"), InputError);  // above U+10FFFF
  try {
    utf8_decode("abc\xFF");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 3"), std::string::npos) << e.what();
  }
}

TEST(Ingest, EmptyAndShortCorporaAreUsageErrors) {
  EXPECT_THROW(ingest_text("", TokenizerKind::byte, 4), UsageError);
  EXPECT_THROW(ingest_text("abcd", TokenizerKind::byte, 4), UsageError);
  EXPECT_NO_THROW(ingest_text("abcde", TokenizerKind::byte, 4));
  EXPECT_THROW(ingest(write_temp("empty.txt", ""), TokenizerKind::char_, 4), UsageError);
  EXPECT_THROW(ingest("/nonexistent/corpus.txt", TokenizerKind::byte, 4), IoError);
}

TEST(NextBatch, FixedSeedGivesIdenticalBatches) {
  std::vector<int> stream(500);
  for (std::size_t i = 0; i < stream.size(); ++i) stream[i] = int(i % 97);
  std::mt19937_64 a(7), b(7);
  for (int k = 0; k < 20; ++k) {
    const Batch x = next_batch(stream, 16, 4, a), y = next_batch(stream, 16, 4, b);
    EXPECT_EQ(x.inputs, y.inputs);
    EXPECT_EQ(x.targets, y.targets);
  }
}

TEST(NextBatch, TargetsAreShiftedInputs) {
  std::vector<int> stream(300);
  for (std::size_t i = 0; i < stream.size(); ++i) stream[i] = int((i * 7919) % 256);
  std::mt19937_64 rng(8);
  const Batch b = next_batch(stream, 32, 8, rng);
  ASSERT_EQ(b.inputs.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    ASSERT_EQ(b.inputs[i].size(), 32u);
    ASSERT_EQ(b.targets[i].size(), 32u);
    for (std::size_t j = 0; j + 1 < 32; ++j) EXPECT_EQ(b.targets[i][j], b.inputs[i][j + 1]);
  }
}

TEST(NextBatch, WindowStartsAreUniform) {
  // Token value = position, so the first input token is the window start.
  const std::size_t T = 8, starts = 50;
  std::vector<int> stream(starts + T);
  for (std::size_t i = 0; i < stream.size(); ++i) stream[i] = int(i);
  std::mt19937_64 rng(9);
  std::vector<double> counts(starts, 0.0);
  const std::size_t draws = 100000;
  for (std::size_t k = 0; k < draws / 10; ++k) {
    const Batch b = next_batch(stream, T, 10, rng);
    for (const auto& in : b.inputs) {
      ASSERT_LT(std::size_t(in[0]), starts);
      counts[in[0]] += 1;
    }
  }
  const double expected = double(draws) / double(starts);
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 49 degrees of freedom; 99.9th percentile is about 85.4.
  EXPECT_LT(chi2, 85.4);
  EXPECT_GT(counts.front(), 0);
  EXPECT_GT(counts.back(), 0);
}

TEST(SampleCorpus, DeterministicAndSized) {
  const std::string a = make_sample_corpus(4096, 3), b = make_sample_corpus(4096, 3);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 4096u);
  EXPECT_NE(a, make_sample_corpus(4096, 4));
  EXPECT_NO_THROW(utf8_decode(a));
}

TEST(SampleCorpus, BundledFileMatchesGenerator) {
  const std::filesystem::path p = std::filesystem::path(ENTLAB_SOURCE_DIR) / "data" / "sample_corpus.txt";
  ASSERT_TRUE(std::filesystem::exists(p));
  std::ifstream in(p, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text, make_sample_corpus(text.size(), 2024));
}
