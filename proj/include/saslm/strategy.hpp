#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace saslm {

// The pre-training strategy ladder plus the two-network baseline.
enum class Strategy {
  SAS,             // self-augmentation, MLM + RTD, scheduled lambda
  SAS_C,           // self-augmentation, MLM + RTD, constant lambda
  MASK_MLM,        // [MASK] corruption, MLM only
  UNIG_MLM,        // unigram replacement every epoch, MLM only
  UNIG_MLM_SAS,    // self-augmentation, MLM only
  UNIG_MLM_RTD_C,  // unigram replacement, MLM + RTD, constant lambda
  UNIG_MLM_RTD,    // unigram replacement, MLM + RTD, scheduled lambda
  ELECTRA_2NET,    // separate generator network, discriminator trains on RTD
};

inline constexpr std::array<Strategy, 8> kAllStrategies = {
    Strategy::SAS,          Strategy::SAS_C,          Strategy::MASK_MLM,     Strategy::UNIG_MLM,
    Strategy::UNIG_MLM_SAS, Strategy::UNIG_MLM_RTD_C, Strategy::UNIG_MLM_RTD, Strategy::ELECTRA_2NET};

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::SAS: return "SAS";
    case Strategy::SAS_C: return "SAS_C";
    case Strategy::MASK_MLM: return "MASK_MLM";
    case Strategy::UNIG_MLM: return "UNIG_MLM";
    case Strategy::UNIG_MLM_SAS: return "UNIG_MLM_SAS";
    case Strategy::UNIG_MLM_RTD_C: return "UNIG_MLM_RTD_C";
    case Strategy::UNIG_MLM_RTD: return "UNIG_MLM_RTD";
    case Strategy::ELECTRA_2NET: return "ELECTRA_2NET";
  }
  throw std::logic_error("strategy_name: invalid strategy");
}

inline Strategy parse_strategy(const std::string& name) {
  for (Strategy s : kAllStrategies)
    if (name == strategy_name(s)) return s;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

// Both losses, or MLM only.
inline bool uses_rtd(Strategy s) {
  return s == Strategy::SAS || s == Strategy::SAS_C || s == Strategy::UNIG_MLM_RTD_C ||
         s == Strategy::UNIG_MLM_RTD || s == Strategy::ELECTRA_2NET;
}

// Replacements sampled from the model's own previous-epoch MLM softmax.
inline bool uses_self_augmentation(Strategy s) {
  return s == Strategy::SAS || s == Strategy::SAS_C || s == Strategy::UNIG_MLM_SAS;
}

// Scheduled (rather than constant) RTD weight.
inline bool uses_lambda_schedule(Strategy s) {
  return s == Strategy::SAS || s == Strategy::UNIG_MLM_RTD;
}

inline bool is_two_network(Strategy s) { return s == Strategy::ELECTRA_2NET; }

}  // namespace saslm
