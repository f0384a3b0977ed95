#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace casdet::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // counts and worst error, or the first mismatch
};

// nms vs oracle_nms on random sets of <= 20 boxes; exact match.
CheckResult check_nms_oracle(int sets = 500, std::uint64_t seed = 11);

// assign vs oracle_assign on random scenes (<= 10 boxes x <= 4 gts plus
// anchor grids); exact match of labels, matches and targets.
CheckResult check_assign_oracle(int scenes = 500, std::uint64_t seed = 12);

// ap_at_iou on hand-verified instances (including the worked PR example) and
// against oracle_ap on random small instances; tolerance 1e-9.
CheckResult check_ap_oracle(int random_instances = 500, std::uint64_t seed = 13);

// decode(a, encode(a, t)) == t within 1e-9 over random positive-area pairs.
CheckResult check_box_roundtrip(int pairs = 10000, std::uint64_t seed = 14);

// Two-stage infer boxes equal decode(decode(b0, d1), d2) composed by hand.
CheckResult check_sequential_decode(int images = 5, std::uint64_t seed = 15);

// fcm_forward with zero offset parameters vs conv2d, padding 1; <= 1e-12.
CheckResult check_zero_offset_fcm(int instances = 50, std::uint64_t seed = 16);

// Bit-identical anchors from identical specs, plus count and centre layout.
CheckResult check_anchor_determinism();

// `seed_offset` shifts the seed of every randomized check.
std::vector<CheckResult> run_selftest(std::uint64_t seed_offset = 0);

}  // namespace casdet::verify
