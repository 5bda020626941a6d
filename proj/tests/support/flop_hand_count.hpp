#pragma once

#include <cstdint>

namespace mblab::testing {

struct HandFlops {
  std::uint64_t full = 0;
  std::uint64_t audio_only = 0;  // without adapter deltas
};

// Independent layer-by-layer enumeration of the default model configuration
// at T_a = 32, T_v = 16, decoder length 9.
inline HandFlops default_config_hand_flops() {
  const std::uint64_t d = 64, f = 128, ta = 32, tv = 16, ld = 9;
  auto mm = [](std::uint64_t m, std::uint64_t k, std::uint64_t n) { return 2 * m * k * n; };
  std::uint64_t audio = 0, video = 0, fusion_audio = 0, fusion_video = 0, merge = 0, joint = 0, dec = 0;
  audio += mm(ta, 16, d);  // frontend
  for (int b = 0; b < 2; ++b) {
    audio += 4 * mm(ta, d, d);      // q k v o
    audio += 2 * mm(ta, d, ta);     // scores + context (QK^T, PV)
    audio += mm(ta, d, f) + mm(ta, f, d);
  }
  video += mm(tv, 12, d);
  for (int b = 0; b < 2; ++b) video += 4 * mm(tv, d, d) + 2 * mm(tv, d, tv) + mm(tv, d, f) + mm(tv, f, d);
  // Fusion: audio SA, audio <- video CA, FFN; video SA, video <- audio CA, FFN.
  fusion_audio += 4 * mm(ta, d, d) + 2 * mm(ta, d, ta) + mm(ta, d, f) + mm(ta, f, d);
  const std::uint64_t ca_av = 2 * mm(ta, d, d) + 2 * mm(tv, d, d) + 2 * mm(ta, d, tv);
  fusion_video += 4 * mm(tv, d, d) + 2 * mm(tv, d, tv) + mm(tv, d, f) + mm(tv, f, d);
  const std::uint64_t ca_va = 2 * mm(tv, d, d) + 2 * mm(ta, d, d) + 2 * mm(tv, d, ta);
  merge += 2 * mm(ta, d, d) + 2 * mm(tv, d, d) + 2 * mm(ta, d, tv) + mm(ta, 2 * d, d);
  for (int b = 0; b < 2; ++b) joint += 4 * mm(ta, d, d) + 2 * mm(ta, d, ta) + mm(ta, d, f) + mm(ta, f, d);
  joint += 2 * mm(ta, d, 13);  // two CTC heads
  for (int b = 0; b < 2; ++b) {
    dec += 4 * mm(ld, d, d) + 2 * mm(ld, d, ld);                       // causal self-attention, dense count
    dec += 2 * mm(ld, d, d) + 2 * mm(ta, d, d) + 2 * mm(ld, d, ta);    // cross-attention
    dec += mm(ld, d, f) + mm(ld, f, d);
  }
  dec += mm(ld, d, 14);
  HandFlops h;
  h.full = audio + video + fusion_audio + ca_av + fusion_video + ca_va + merge + joint + dec;
  h.audio_only = audio + fusion_audio + mm(ta, d, d) + joint + dec;
  return h;
}

// Extra multiply-adds of rank-r adapters on every adapted encoder projection
// of the switched path (2 audio, 1 fusion, 2 joint blocks; q k v o).
inline std::uint64_t default_config_adapter_flops(std::uint64_t rank) { return (2 + 1 + 2) * 4 * 4 * 32 * 64 * rank; }

}  // namespace mblab::testing
