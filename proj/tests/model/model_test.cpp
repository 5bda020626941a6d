#include <gtest/gtest.h>

#include <filesystem>

#include "../support/flop_hand_count.hpp"
#include "../support/tiny.hpp"
#include "mblab/corpus/corpus.hpp"
#include "mblab/errors.hpp"
#include "mblab/model/model.hpp"
#include "mblab/util/bytes.hpp"

namespace mblab {
namespace {

Corpus default_corpus(int n, std::uint64_t seed = 5) {
  CorpusSpec s;
  s.n_utterances = n;
  s.seed = seed;
  return generate_corpus(s);
}

// Forward values only (inference tape).
struct Snapshot {
  Tensor decoder;
  std::vector<Tensor> ctc;
  std::map<std::string, Tensor> taps;
};

Snapshot run(Model& m, const Batch& b, bool audio_only = false) {
  Tape tape;
  tape.set_grad_enabled(false);
  const ForwardOutput out = audio_only ? forward_audio_only(m, tape, b) : forward_full(m, tape, b);
  Snapshot s{out.decoder_logits.value(), {}, {}};
  for (const auto& v : out.ctc_logits) s.ctc.push_back(v.value());
  for (const auto& [k, v] : out.taps) s.taps[k] = v.value.value();
  return s;
}

bool same(const Snapshot& a, const Snapshot& b) {
  if (!bitwise_equal(a.decoder, b.decoder) || a.ctc.size() != b.ctc.size() || a.taps.size() != b.taps.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.ctc.size(); ++i) {
    if (!bitwise_equal(a.ctc[i], b.ctc[i])) return false;
  }
  for (const auto& [k, v] : a.taps) {
    if (!b.taps.count(k) || !bitwise_equal(v, b.taps.at(k))) return false;
  }
  return true;
}

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t count) {
  Tensor out({count, t.cols()});
  std::copy_n(t.ptr() + begin * t.cols(), count * t.cols(), out.ptr());
  return out;
}

TEST(ModelConfigTest, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.d_model = 10;
  c.n_heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  ModelConfig taps;
  taps.intermediate_ctc_taps = {3};
  EXPECT_THROW(taps.validate(), ConfigError);
  ModelConfig zero;
  zero.n_joint_blocks = 0;
  EXPECT_THROW(zero.validate(), ConfigError);
  EXPECT_EQ(ModelConfig{}.ctc_tap_blocks(), (std::vector<int>{1, 2}));
  ModelConfig only_one;
  only_one.intermediate_ctc_taps = {1};
  EXPECT_EQ(only_one.ctc_tap_blocks(), (std::vector<int>{1, 2}));
}

TEST(BuildModelTest, DeterministicAndSeedSensitive) {
  const ModelConfig c;
  Model a = build_model(c, 1), b = build_model(c, 1), other = build_model(c, 2);
  EXPECT_EQ(a.params.checksum(), b.params.checksum());
  EXPECT_NE(a.params.checksum(), other.params.checksum());
  for (const auto& [name, p] : a.params.items()) {
    for (double v : p.value.data()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
    if (name.ends_with(".bias") || name.ends_with(".beta")) {
      for (double v : p.value.data()) EXPECT_EQ(v, 0.0);
    }
    if (name.ends_with(".gamma")) {
      for (double v : p.value.data()) EXPECT_EQ(v, 1.0);
    }
  }
  EXPECT_THROW(build_model(ModelConfig{.d_model = 10}, 1), ConfigError);
}

TEST(ForwardTest, OutputShapesAndTaps) {
  Model m = build_model(ModelConfig{}, 3);
  const Corpus c = default_corpus(3);
  const Batch b = make_batch(c.utterances);
  Tape tape;
  const ForwardOutput out = forward_full(m, tape, b);
  std::size_t dec_rows = 0;
  for (const auto& y : b.labels) dec_rows += y.size() + 1;
  EXPECT_EQ(out.decoder_logits.shape(), (Shape{dec_rows, 14}));
  ASSERT_EQ(out.ctc_logits.size(), 2u);
  EXPECT_EQ(out.ctc_logits[0].shape(), (Shape{b.audio.rows(), 13}));
  for (const auto& tag : tap_tags()) EXPECT_TRUE(out.taps.count(tag)) << tag;
  EXPECT_EQ(out.taps.at("video_block_1").value.rows(), b.video.rows());
  EXPECT_EQ(out.taps.at("fusion_out").value.shape(), (Shape{b.audio.rows(), 64}));
}

TEST(ForwardTest, ZeroVideoRuns) {
  Model m = build_model(ModelConfig{}, 3);
  Corpus c = default_corpus(2);
  for (auto& u : c.utterances) u.video.fill(0.0);
  const Snapshot s = run(m, make_batch(c.utterances));
  EXPECT_TRUE(s.decoder.all_finite());
}

TEST(ForwardTest, BatchPermutationPermutesOutputs) {
  Model m = build_model(ModelConfig{}, 4);
  const Corpus c = default_corpus(3);
  const auto& u = c.utterances;
  const Snapshot fwd = run(m, make_batch({u[0], u[1], u[2]}));
  const Snapshot rev = run(m, make_batch({u[2], u[1], u[0]}));
  // Utterance 0 comes first in fwd and last in rev.
  const std::size_t t0 = u[0].audio.rows(), t_total = fwd.ctc[0].rows();
  EXPECT_LE(max_abs_diff(rows_of(fwd.ctc[1], 0, t0), rows_of(rev.ctc[1], t_total - t0, t0)), 1e-9);
  const std::size_t l0 = u[0].labels.size() + 1, l_total = fwd.decoder.rows();
  EXPECT_LE(max_abs_diff(rows_of(fwd.decoder, 0, l0), rows_of(rev.decoder, l_total - l0, l0)), 1e-9);
}

TEST(ForwardTest, OtherUtterancesDoNotLeak) {
  Model m = build_model(ModelConfig{}, 4);
  const Corpus c = default_corpus(4);
  const auto& u = c.utterances;
  const Snapshot alone = run(m, make_batch({u[0]}));
  const Snapshot together = run(m, make_batch({u[0], u[1], u[2], u[3]}));
  const std::size_t t0 = u[0].audio.rows(), l0 = u[0].labels.size() + 1;
  EXPECT_LE(max_abs_diff(alone.ctc[1], rows_of(together.ctc[1], 0, t0)), 1e-9);
  EXPECT_LE(max_abs_diff(alone.decoder, rows_of(together.decoder, 0, l0)), 1e-9);
}

TEST(ForwardTest, PaddingBeyondTrueLengthIsIgnored) {
  Model m = build_model(ModelConfig{}, 4);
  const Corpus c = default_corpus(2);
  const Batch ref = make_batch(c.utterances);
  // Lay out each utterance in a padded block with nonzero garbage after it.
  const std::size_t max_a = 40, max_v = 20;
  Tensor pa({2 * max_a, 16}, 7.5), pv({2 * max_v, 12}, -3.0);
  std::vector<std::size_t> la, lv;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& u = c.utterances[i];
    std::copy(u.audio.storage().begin(), u.audio.storage().end(), pa.storage().begin() + i * max_a * 16);
    std::copy(u.video.storage().begin(), u.video.storage().end(), pv.storage().begin() + i * max_v * 12);
    la.push_back(u.audio.rows());
    lv.push_back(u.video.rows());
  }
  Batch padded = ref;
  padded.audio = unpad_rows(pa, max_a, la);
  padded.video = unpad_rows(pv, max_v, lv);
  const Snapshot a = run(m, ref), b = run(m, padded);
  EXPECT_LE(max_abs_diff(a.decoder, b.decoder), 1e-9);
  EXPECT_LE(max_abs_diff(a.ctc[1], b.ctc[1]), 1e-9);
}

TEST(ForwardTest, LengthOverflowRejected) {
  ModelConfig cfg;
  cfg.max_len = 10;
  Model m = build_model(cfg, 1);
  const Corpus c = default_corpus(1);
  Tape tape;
  EXPECT_THROW(forward_full(m, tape, make_batch(c.utterances)), ContractError);
}

TEST(ForwardTest, VideoBranchIndependentOfAudioWhenFlowDisabled) {
  Model m = build_model(ModelConfig{}, 6);
  m.flow.audio_to_video = false;
  Corpus c = default_corpus(2);
  const Snapshot a = run(m, make_batch(c.utterances));
  for (auto& u : c.utterances) {
    for (double& v : u.audio.storage()) v = -v + 0.25;
  }
  const Snapshot b = run(m, make_batch(c.utterances));
  EXPECT_TRUE(bitwise_equal(a.taps.at("video_block_1"), b.taps.at("video_block_1")));
  EXPECT_TRUE(bitwise_equal(a.taps.at("video_frontend_out"), b.taps.at("video_frontend_out")));
  EXPECT_FALSE(bitwise_equal(a.taps.at("fusion_out"), b.taps.at("fusion_out")));
}

TEST(ForwardTest, VideoDisabledModelIgnoresVideo) {
  Model m = build_model(ModelConfig{}, 6);
  m.flow.video_enabled = false;
  Corpus c = default_corpus(2);
  const Snapshot a = run(m, make_batch(c.utterances));
  for (auto& u : c.utterances) u.video.fill(0.0);
  EXPECT_TRUE(same(a, run(m, make_batch(c.utterances))));
  EXPECT_FALSE(a.taps.count("video_block_1"));
}

TEST(AdapterTest, FreshAdaptersAreIdentity) {
  Model m = build_model(ModelConfig{}, 7);
  const Batch b = make_batch(default_corpus(3).utterances);
  const Snapshot before = run(m, b);
  const std::size_t n_before = m.params.count_values();
  const AdapterConfig ac{8, InsertPart::encoder_and_decoder};
  insert_adapters(m, ac);
  EXPECT_EQ(m.params.count_values() - n_before, adapter_parameter_count(m.config, ac));
  // 2 audio blocks + 1 fusion + 2 joint + 2 decoder self-attentions, 4 projections each.
  EXPECT_EQ(adapter_parameter_count(m.config, ac), 7u * 4u * 2u * 8u * 64u);
  EXPECT_TRUE(same(before, run(m, b)));
  set_adapter_active(m, true);
  EXPECT_TRUE(same(before, run(m, b)));  // forward_full never applies the delta
  // Audio-only path at B = 0 equals the video-disabled base path.
  Model base = build_model(ModelConfig{}, 7);
  base.flow.video_enabled = false;
  EXPECT_TRUE(same(run(base, b), run(m, b, true)));
}

TEST(AdapterTest, InsertionErrors) {
  Model m = build_model(ModelConfig{}, 7);
  EXPECT_THROW(set_adapter_active(m, true), StateError);
  Tape tape;
  EXPECT_THROW(forward_audio_only(m, tape, make_batch(default_corpus(1).utterances)), StateError);
  EXPECT_THROW(insert_adapters(m, AdapterConfig{64}), ConfigError);
  insert_adapters(m, AdapterConfig{4});
  EXPECT_THROW(insert_adapters(m, AdapterConfig{4}), StateError);
  for (const auto& [name, p] : m.params.items()) EXPECT_EQ(p.frozen, !is_adapter_tensor(name)) << name;
}

TEST(AdapterTest, SwitchingAndTrainedDelta) {
  Model m = build_model(ModelConfig{}, 8);
  insert_adapters(m, AdapterConfig{4});
  Corpus c = default_corpus(2);
  const Batch b = make_batch(c.utterances);
  const auto base_sum = m.params.checksum([](const std::string& n) { return !is_adapter_tensor(n); });
  const Snapshot full = run(m, b);
  const Snapshot untrained = run(m, b, true);
  set_adapter_active(m, true);
  set_adapter_active(m, false);
  EXPECT_TRUE(same(full, run(m, b)));
  for (auto& [name, p] : m.params.items()) {
    if (name.ends_with(".lora_b")) {
      for (double& v : p.value.storage()) v = 0.05;
    }
  }
  const Snapshot trained = run(m, b, true);
  EXPECT_FALSE(bitwise_equal(trained.decoder, untrained.decoder));
  EXPECT_TRUE(same(full, run(m, b)));
  EXPECT_EQ(base_sum, m.params.checksum([](const std::string& n) { return !is_adapter_tensor(n); }));
  // Audio-only path ignores video and differs from the fused path.
  for (auto& u : c.utterances) {
    for (double& v : u.video.storage()) v = v * 3.0 + 1.0;
  }
  EXPECT_TRUE(same(trained, run(m, make_batch(c.utterances), true)));
  EXPECT_FALSE(bitwise_equal(untrained.decoder, full.decoder));
}

TEST(FlopTest, DynamicCounterMatchesAnalyticCount) {
  Model m = build_model(ModelConfig{}, 9);
  insert_adapters(m, AdapterConfig{4, InsertPart::encoder_and_decoder});
  const Corpus c = default_corpus(3);
  for (const auto& u : c.utterances) {
    const FlopInputs in{u.audio.rows(), u.video.rows(), u.labels.size() + 1};
    for (ComputePath path : {ComputePath::full, ComputePath::audio_only}) {
      Tape tape;
      tape.set_grad_enabled(false);
      flops::reset();
      if (path == ComputePath::full) {
        forward_full(m, tape, make_batch({u}));
      } else {
        forward_audio_only(m, tape, make_batch({u}));
      }
      EXPECT_EQ(flops::counter(), count_flops_params(m, path, in).flops) << to_string(path);
    }
  }
}

// Layer-by-layer enumeration of the default config, adapters of rank 4.
TEST(FlopTest, HandEnumerationOfDefaultConfig) {
  const testing::HandFlops hand = testing::default_config_hand_flops();
  const std::uint64_t full = hand.full, audio_only = hand.audio_only;
  Model m = build_model(ModelConfig{}, 1);
  insert_adapters(m, AdapterConfig{4});
  const std::uint64_t adapter_extra = testing::default_config_adapter_flops(4);
  EXPECT_EQ(count_flops_params(m, ComputePath::full).flops, full);
  EXPECT_EQ(count_flops_params(m, ComputePath::audio_only).flops, audio_only + adapter_extra);
  const double ratio = static_cast<double>(count_flops_params(m, ComputePath::audio_only).flops) /
                       static_cast<double>(count_flops_params(m, ComputePath::full).flops);
  EXPECT_LT(ratio, 1.0);
  EXPECT_NEAR(ratio, static_cast<double>(audio_only + adapter_extra) / static_cast<double>(full), 1e-15);
}

TEST(FlopTest, Monotonicity) {
  for (int d : {16, 32, 64}) {
    ModelConfig c;
    c.d_model = d;
    Model m = build_model(c, 1);
    insert_adapters(m, AdapterConfig{2});
    for (std::size_t t : {8u, 16u, 32u}) {
      const FlopInputs in{t, t / 2, 5};
      const FlopInputs longer{t + 4, t / 2 + 2, 5};
      const auto full = count_flops_params(m, ComputePath::full, in);
      const auto ao = count_flops_params(m, ComputePath::audio_only, in);
      EXPECT_LT(ao.flops, full.flops);
      EXPECT_LT(ao.params, full.params);
      EXPECT_LT(full.flops, count_flops_params(m, ComputePath::full, longer).flops);
      EXPECT_LT(ao.flops, count_flops_params(m, ComputePath::audio_only, longer).flops);
      if (d < 64) {
        ModelConfig wider = c;
        wider.d_model = d * 2;
        Model w = build_model(wider, 1);
        insert_adapters(w, AdapterConfig{2});
        EXPECT_LT(full.flops, count_flops_params(w, ComputePath::full, in).flops);
        EXPECT_LT(ao.flops, count_flops_params(w, ComputePath::audio_only, in).flops);
      }
    }
  }
}

TEST(CheckpointTest, RoundTripReproducesOutputs) {
  Model m = build_model(ModelConfig{}, 10);
  m.provenance = {"teacher", 10, "abc"};
  const std::string bytes = encode_checkpoint(m);
  EXPECT_EQ(bytes.substr(0, 8), "MBLABCK1");
  Model back = decode_checkpoint(bytes);
  EXPECT_EQ(back.params.checksum(), m.params.checksum());
  EXPECT_EQ(back.provenance.recipe, "teacher");
  EXPECT_EQ(back.provenance.parent, "abc");
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const Batch b = make_batch(default_corpus(2).utterances);
  EXPECT_TRUE(same(run(m, b), run(back, b)));

  const auto path = std::filesystem::temp_directory_path() / "mblab_ckpt_test.bin";
  save_checkpoint(path, m);
  EXPECT_EQ(load_checkpoint(path).params.checksum(), m.params.checksum());
  std::filesystem::remove(path);
}

TEST(CheckpointTest, AdaptersAndFlowSurvive) {
  Model m = build_model(ModelConfig{}, 10);
  m.flow.audio_to_video = false;
  insert_adapters(m, AdapterConfig{4, InsertPart::encoder_and_decoder});
  set_adapter_active(m, true);
  Model back = decode_checkpoint(encode_checkpoint(m));
  ASSERT_TRUE(back.adapters.has_value());
  EXPECT_EQ(*back.adapters, *m.adapters);
  EXPECT_TRUE(back.adapter_active);
  EXPECT_FALSE(back.flow.audio_to_video);
  EXPECT_EQ(back.params.checksum(), m.params.checksum());
  for (const auto& [name, p] : back.params.items()) EXPECT_EQ(p.frozen, !is_adapter_tensor(name));
}

TEST(CheckpointTest, BaseCheckpointLoadsWithoutAdapters) {
  Model m = build_model(ModelConfig{}, 10);
  Model back = decode_checkpoint(encode_checkpoint(m));
  EXPECT_FALSE(back.adapters.has_value());
}

TEST(CheckpointTest, MismatchNamesOffendingTensor) {
  Model small = build_model(ModelConfig{.d_model = 32}, 1);
  Model big = build_model(ModelConfig{}, 1);
  try {
    load_checkpoint_into(big, encode_checkpoint(small));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("audio.block1.attn.k.bias"), std::string::npos) << e.what();
  }
  std::string bytes = encode_checkpoint(big);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(big).substr(0, 200)), FormatError);
}

}  // namespace
}  // namespace mblab
