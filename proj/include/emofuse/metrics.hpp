#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "emofuse/error.hpp"

namespace emofuse {

/// Percentage of positions where prediction equals label.
inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw InvalidArgument("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw InvalidArgument("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace emofuse
