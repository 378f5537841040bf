#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "ctxalign/vocab.hpp"

namespace ctxalign {

struct SftSample {
  std::uint64_t task_id = 0;
  TokenSeq prompt;  // BOS query (SEP doc)*
  TokenSeq target;  // a*
};

enum class SampleType { Type1, Type2, Type3, Type4 };

std::string to_string(SampleType t);
SampleType parse_sample_type(const std::string& name);

enum class Pairing { Standard, Adversarial };

std::string to_string(Pairing p);
Pairing parse_pairing(const std::string& name);

struct PreferencePair {
  std::uint64_t task_id = 0;
  TokenSeq prompt;
  TokenSeq winner;  // full structured responses, ending with EOS
  TokenSeq loser;
  Pairing pairing = Pairing::Standard;
  std::pair<SampleType, SampleType> sample_types{SampleType::Type1, SampleType::Type4};
};

}  // namespace ctxalign
