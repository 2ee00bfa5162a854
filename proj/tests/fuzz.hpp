#pragma once

// Random but valid instances for persistence round trips, and byte-level
// corruptions of their encodings.

#include <cstdint>
#include <string>
#include <vector>

#include "tvalign/align.hpp"
#include "tvalign/model.hpp"
#include "tvalign/random.hpp"
#include "tvalign/taskvec.hpp"

namespace fuzz {

inline double awkward_double(tvalign::Rng& rng) {
  switch (rng.below(8)) {
    case 0: return 0.0;
    case 1: return -0.0;
    case 2: return 1e-310;  // subnormal
    case 3: return -1.7976931348623157e308;
    default: return rng.normal() * std::ldexp(1.0, static_cast<int>(rng.below(40)) - 20);
  }
}

inline tvalign::Matrix matrix(std::size_t r, std::size_t c, tvalign::Rng& rng) {
  tvalign::Matrix m(r, c);
  for (double& v : m.entries()) v = awkward_double(rng);
  return m;
}

inline std::string name(tvalign::Rng& rng) {
  std::string s = "t";
  const std::size_t n = rng.below(12);
  for (std::size_t i = 0; i < n; ++i) s += static_cast<char>(33 + rng.below(94));
  return s;
}

inline tvalign::TaskVector task_vector(tvalign::Rng& rng) {
  tvalign::TaskVector tv;
  tv.task_id = name(rng);
  const std::size_t d = 1 + rng.below(6);
  const std::size_t depth = 1 + rng.below(4);
  const bool low_rank = rng.below(2) == 0;
  for (std::size_t l = 0; l < depth; ++l) {
    if (low_rank) {
      const std::size_t r = 1 + rng.below(d);
      tv.layers.emplace_back(tvalign::LowRankDelta{matrix(d, r, rng), matrix(r, d, rng)});
    } else {
      tv.layers.emplace_back(tvalign::DenseDelta{matrix(d, d, rng)});
    }
  }
  for (std::size_t h = rng.below(3); h > 0; --h) tv.heads[name(rng)] = matrix(d, 2 + rng.below(3), rng);
  if (!low_rank && rng.below(2) == 0) {
    tv.aux["input_proj"] = matrix(1 + rng.below(5), d, rng);
    for (std::size_t l = 0; l < depth; ++l) tv.aux["bias." + std::to_string(l)] = matrix(1, d, rng);
  }
  for (std::size_t k = rng.below(3); k > 0; --k) tv.meta["k" + name(rng)] = name(rng);
  return tv;
}

inline tvalign::Alignment alignment(tvalign::Rng& rng) {
  tvalign::Alignment al;
  al.task_id = name(rng);
  const std::size_t d = 1 + rng.below(6);
  for (std::size_t l = 1 + rng.below(4); l > 0; --l) al.mats.push_back(matrix(d, d, rng));
  return al;
}

inline tvalign::ModelParams model(tvalign::Rng& rng) {
  tvalign::ModelParams p;
  const std::size_t d = 1 + rng.below(6);
  const std::size_t f = 1 + rng.below(5);
  p.input_proj = matrix(f, d, rng);
  const std::size_t depth = 1 + rng.below(4);
  const bool lora = rng.below(2) == 0;
  const std::size_t r = 1 + rng.below(d);
  for (std::size_t l = 0; l < depth; ++l) {
    p.layers.push_back(matrix(d, d, rng));
    p.biases.push_back(matrix(1, d, rng));
    p.frames.push_back(matrix(d, d, rng));
    if (lora) p.lora.push_back({matrix(d, r, rng), matrix(r, d, rng)});
  }
  for (std::size_t h = rng.below(3); h > 0; --h) p.heads[name(rng)] = matrix(d, 2 + rng.below(3), rng);
  p.activation = rng.below(2) ? tvalign::Activation::tanh : tvalign::Activation::relu;
  return p;
}

// Truncation, byte flips, inserted bytes or a rewritten header field.
inline std::vector<std::uint8_t> corrupt(std::vector<std::uint8_t> bytes, tvalign::Rng& rng) {
  switch (rng.below(5)) {
    case 0:
      bytes.resize(rng.below(bytes.size()));
      break;
    case 1: {
      const std::size_t flips = 1 + rng.below(4);
      for (std::size_t i = 0; i < flips; ++i)
        bytes[rng.below(bytes.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
      break;
    }
    case 2:
      bytes.insert(bytes.begin() + static_cast<std::ptrdiff_t>(rng.below(bytes.size() + 1)),
                   static_cast<std::uint8_t>(rng.below(256)));
      break;
    case 3:  // implausible sizes in the first record header
      for (std::size_t i = 12; i < std::min<std::size_t>(bytes.size(), 40); ++i)
        if (rng.below(3) == 0) bytes[i] = 0xff;
      break;
    default:
      bytes[4 + rng.below(8)] ^= 0x5a;  // version or record count
      break;
  }
  return bytes;
}

}  // namespace fuzz
