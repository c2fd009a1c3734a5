#pragma once

#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "incdet/geometry.hpp"

namespace incdet {

struct TriggerPolicy {
  double unknown_threshold = 0.5;  // in [0,1]
  int min_observations = 3;

  void validate() const {
    if (unknown_threshold < 0.0 || unknown_threshold > 1.0)
      throw std::invalid_argument("TriggerPolicy: threshold outside [0,1]");
    if (min_observations < 1)
      throw std::invalid_argument("TriggerPolicy: min_observations must be >= 1");
  }
};

struct TriggerEvidence {
  std::vector<std::pair<std::string, double>> frames;  // (frame id, max score)
};

struct TriggerDecision {
  bool learning_request = false;
  TriggerEvidence evidence;
};

/// Sliding-window learning trigger: raises a request once min_observations
/// consecutive frames all scored below the unknown threshold. The window is
/// the trigger's only state and clears after a request.
class Trigger {
 public:
  explicit Trigger(TriggerPolicy policy) : policy_(policy) { policy_.validate(); }

  TriggerDecision observe(const std::string& frame_id, const std::vector<ScoredBox>& detections) {
    double max_score = 0.0;
    for (const ScoredBox& d : detections) max_score = std::max(max_score, d.score);
    if (max_score >= policy_.unknown_threshold) {
      window_.clear();
      return {};
    }
    window_.emplace_back(frame_id, max_score);
    while (static_cast<int>(window_.size()) > policy_.min_observations) window_.pop_front();
    if (static_cast<int>(window_.size()) < policy_.min_observations) return {};
    TriggerDecision d;
    d.learning_request = true;
    d.evidence.frames.assign(window_.begin(), window_.end());
    window_.clear();
    return d;
  }

  const TriggerPolicy& policy() const { return policy_; }

 private:
  TriggerPolicy policy_;
  std::deque<std::pair<std::string, double>> window_;
};

/// One-shot form over a whole observation window.
inline TriggerDecision trigger_check(const std::vector<std::vector<ScoredBox>>& window,
                                     const TriggerPolicy& policy) {
  Trigger t(policy);
  TriggerDecision last;
  for (std::size_t i = 0; i < window.size(); ++i)
    last = t.observe("frame" + std::to_string(i), window[i]);
  return last;
}

}  // namespace incdet
