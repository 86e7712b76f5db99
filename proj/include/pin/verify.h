#ifndef PIN_VERIFY_H_
#define PIN_VERIFY_H_

#include <cstdint>

#include "pin/corpus.h"
#include "pin/gradcheck.h"
#include "pin/model.h"

namespace pin {

// Two-turn dialogue over three pairs (two domains sharing "area") with a
// 30-token vocabulary.
struct TinyInstance {
  Corpus corpus;
  Vocabulary vocab;
};
TinyInstance tiny_instance();

// 64-bit model with hidden = embed = 8 on the tiny instance.
PinModel<double> tiny_model(std::uint64_t seed);

// Finite-difference check of the full training loss (gate and value terms,
// every prefix of the tiny dialogue, teacher forcing on, dropout off).
GradCheckReport full_model_gradcheck(std::uint64_t seed, double eps = 1e-5);

}  // namespace pin

#endif  // PIN_VERIFY_H_
