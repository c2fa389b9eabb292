#pragma once

#include <cstddef>
#include <vector>

#include "sdba/params.hpp"

namespace sdba {

/// What the server and its defenses see of a client's round contribution.
/// Deliberately carries no notion of maliciousness.
struct Update {
  std::size_t client_id = 0;
  ParamVector delta;  // local minus global
  std::size_t num_samples = 0;
};

/// Harness-side record of a contribution, including ground truth.
struct ClientUpdate {
  Update update;
  bool malicious = false;
};

std::vector<Update> strip_labels(const std::vector<ClientUpdate>& updates);

}  // namespace sdba
