#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "../support/bayes_oracle.hpp"
#include "mblab/corpus/corpus.hpp"
#include "mblab/corpus/corpus_io.hpp"
#include "mblab/corpus/rng.hpp"
#include "mblab/errors.hpp"
#include "mblab/util/bytes.hpp"

namespace mblab {
namespace {

using testing::brute_force_error;
using testing::floor_spec;

TEST(CorpusSpecTest, ClassCountsMustPartitionVocabulary) {
  CorpusSpec s;
  s.n_general = 5;
  EXPECT_THROW(s.validate(), ConfigError);
  CorpusSpec ok;
  EXPECT_NO_THROW(ok.validate());
  CorpusSpec tiny;
  tiny.vocab_size = 1;
  tiny.n_general = 1;
  tiny.n_audio_pairs = tiny.n_video_pairs = 0;
  EXPECT_THROW(tiny.validate(), ConfigError);
  CorpusSpec noisy;
  noisy.audio_noise = -1;
  EXPECT_THROW(noisy.validate(), ConfigError);
}

TEST(CorpusSpecTest, TokenClassesFollowLayout) {
  CorpusSpec s;  // 6 general, 2 audio pairs, 1 video pair
  EXPECT_EQ(token_class(s, 1), TokenClass::general);
  EXPECT_EQ(token_class(s, 6), TokenClass::general);
  EXPECT_EQ(token_class(s, 7), TokenClass::audio_confusable);
  EXPECT_EQ(token_class(s, 10), TokenClass::audio_confusable);
  EXPECT_EQ(token_class(s, 11), TokenClass::video_confusable);
  EXPECT_EQ(token_class(s, 12), TokenClass::video_confusable);
  EXPECT_THROW(token_class(s, 0), ContractError);
}

TEST(PrototypeTest, SharingStructure) {
  CorpusSpec s;
  const Prototypes p = make_prototypes(s);
  auto same = [](const Tensor& t, int a, int b) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (t.at(a, c) != t.at(b, c)) return false;
    }
    return true;
  };
  // Audio pairs (7,8), (9,10) share audio, differ in video.
  EXPECT_TRUE(same(p.audio, 7, 8));
  EXPECT_TRUE(same(p.audio, 9, 10));
  EXPECT_FALSE(same(p.video, 7, 8));
  EXPECT_FALSE(same(p.audio, 7, 9));
  // Video pair (11,12) shares video, differs in audio.
  EXPECT_TRUE(same(p.video, 11, 12));
  EXPECT_FALSE(same(p.audio, 11, 12));
  // General tokens are distinct in both streams.
  for (int a = 1; a <= 6; ++a) {
    for (int b = a + 1; b <= 12; ++b) {
      EXPECT_FALSE(same(p.audio, a, b));
      EXPECT_FALSE(same(p.video, a, b));
    }
  }
}

TEST(GenerateCorpusTest, ShapesAndLabels) {
  CorpusSpec s;
  s.n_utterances = 50;
  const Corpus c = generate_corpus(s);
  ASSERT_EQ(c.utterances.size(), 50u);
  for (const auto& u : c.utterances) {
    const std::size_t L = u.labels.size();
    EXPECT_GE(L, 3u);
    EXPECT_LE(L, 8u);
    EXPECT_EQ(u.audio.rows(), L * 4);
    EXPECT_EQ(u.audio.cols(), 16u);
    EXPECT_EQ(u.video.rows(), L * 2);
    EXPECT_EQ(u.video.cols(), 12u);
    EXPECT_EQ(u.natural_video_mask.size(), L * 2);
    for (bool m : u.natural_video_mask) EXPECT_TRUE(m);
    for (int t : u.labels) {
      EXPECT_GE(t, 1);
      EXPECT_LE(t, 12);
    }
    for (double v : u.audio.data()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
  }
}

TEST(GenerateCorpusTest, NoiseFreeFramesEqualPrototypes) {
  CorpusSpec s;
  s.audio_noise = s.video_noise = 0.0;
  s.n_utterances = 5;
  const Corpus c = generate_corpus(s);
  const Prototypes p = make_prototypes(s);
  for (const auto& u : c.utterances) {
    for (std::size_t k = 0; k < u.labels.size(); ++k) {
      for (std::size_t col = 0; col < 16; ++col) {
        EXPECT_EQ(u.audio.at(k * 4 + 3, col), static_cast<double>(static_cast<float>(p.audio.at(u.labels[k], col))));
      }
    }
  }
}

TEST(GenerateCorpusTest, TokenDrawsAreUniform) {
  CorpusSpec s;
  s.n_utterances = 2000;
  const Corpus c = generate_corpus(s);
  std::vector<int> counts(13, 0);
  int total = 0;
  for (const auto& u : c.utterances) {
    for (int t : u.labels) {
      ++counts[t];
      ++total;
    }
  }
  for (int t = 1; t <= 12; ++t) EXPECT_NEAR(counts[t] / static_cast<double>(total), 1.0 / 12, 0.01);
}

TEST(GenerateCorpusTest, DeterministicAndSplitSensitive) {
  CorpusSpec s;
  s.n_utterances = 30;
  EXPECT_TRUE(corpora_equal(generate_corpus(s), generate_corpus(s)));
  CorpusSpec t = s;
  t.split = "test";
  const Corpus a = generate_corpus(s);
  const Corpus b = generate_corpus(t);
  EXPECT_FALSE(utterances_equal(a.utterances[0], b.utterances[0]));
  // Same prototypes across splits.
  EXPECT_TRUE(bitwise_equal(make_prototypes(s).audio, make_prototypes(t).audio));
  CorpusSpec other = s;
  other.seed = 2;
  EXPECT_FALSE(bitwise_equal(make_prototypes(s).audio, make_prototypes(other).audio));
}

TEST(BayesFloorTest, BruteForceOracleMatchesClosedForm) {
  const CorpusSpec s = floor_spec();
  EXPECT_NEAR(audio_only_error_floor(s), 4.0 / 12.0 * 0.5, 1e-15);
  const double audio = brute_force_error(s, false, 10000);
  EXPECT_NEAR(audio, audio_only_error_floor(s), 0.01);
  EXPECT_EQ(brute_force_error(s, true, 10000), 0.0);
}

TEST(BayesFloorTest, DefaultSpecFloors) {
  CorpusSpec s;
  EXPECT_NEAR(audio_only_error_floor(s), 4.0 / 12.0 * 0.5, 1e-15);
  EXPECT_NEAR(video_only_error_floor(s), 2.0 / 12.0 * 0.5, 1e-15);
  EXPECT_NEAR(brute_force_error(s, false, 10000), audio_only_error_floor(s), 0.01);
}

TEST(CorpusIoTest, RoundTripIsBitExact) {
  CorpusSpec s;
  s.n_utterances = 25;
  const Corpus c = generate_corpus(s);
  const std::string bytes = encode_corpus(c);
  EXPECT_EQ(bytes.substr(0, 8), "MBLABCO1");
  const Corpus back = decode_corpus(bytes);
  EXPECT_TRUE(corpora_equal(c, back));
  EXPECT_EQ(encode_corpus(back), bytes);

  const auto path = std::filesystem::temp_directory_path() / "mblab_corpus_io_test.bin";
  write_corpus(path, c);
  EXPECT_TRUE(corpora_equal(read_corpus(path), c));
  std::filesystem::remove(path);
}

TEST(CorpusIoTest, EmptyCorpusRoundTrips) {
  CorpusSpec s;
  s.n_utterances = 0;
  const Corpus c = generate_corpus(s);
  EXPECT_TRUE(corpora_equal(decode_corpus(encode_corpus(c)), c));
}

TEST(CorpusIoTest, CorruptionIsReportedWithOffset) {
  CorpusSpec s;
  s.n_utterances = 3;
  const std::string bytes = encode_corpus(generate_corpus(s));

  std::string bad_magic = bytes;
  bad_magic[3] = 'X';
  try {
    decode_corpus(bad_magic);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  const std::string truncated = bytes.substr(0, bytes.size() - 5);
  try {
    decode_corpus(truncated);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 12u);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }

  EXPECT_THROW(decode_corpus(bytes.substr(0, 10)), FormatError);
  EXPECT_THROW(read_corpus("/nonexistent/dir/corpus.bin"), IoError);
}

TEST(CounterRngTest, StreamsAreReproducibleAndIndependent) {
  CounterRng a(1, 2, "x"), b(1, 2, "x"), c(1, 3, "x"), d(1, 2, "y");
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next();
    EXPECT_EQ(va, b.next());
    EXPECT_NE(va, c.next());
    EXPECT_NE(va, d.next());
  }
  CounterRng u(5, 0, "u");
  double mean = 0.0, var = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    mean += z;
    var += z * z;
  }
  EXPECT_NEAR(mean / n, 0.0, 0.03);
  EXPECT_NEAR(var / n, 1.0, 0.05);
  CounterRng w(6, 0, "w");
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(w.below(7));
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(*seen.rbegin(), 6u);
}

}  // namespace
}  // namespace mblab
