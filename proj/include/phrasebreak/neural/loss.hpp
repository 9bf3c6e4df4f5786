#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "phrasebreak/error.hpp"
#include "phrasebreak/labels.hpp"
#include "phrasebreak/neural/tensor.hpp"

namespace phrasebreak::neural {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;           // d(loss)/d(logits), zero on ignored rows
  std::size_t counted = 0;  // rows that contributed
};

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto out = p.row(r);
    const T max_logit = *std::max_element(in.begin(), in.end());
    T total{};
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - max_logit);
      total += out[c];
    }
    for (auto& v : out) v /= total;
  }
  return p;
}

/// Mean negative log-softmax over rows whose target is not kIgnoreIndex.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  const std::size_t classes = logits.cols();
  if (classes < 2) fail(ErrorKind::invalid_argument, "cross entropy needs at least two classes");
  if (targets.size() != logits.rows()) {
    fail(ErrorKind::shape_mismatch, "cross entropy: " + std::to_string(logits.rows()) + " rows vs " +
                                        std::to_string(targets.size()) + " targets");
  }
  LossResult<T> result;
  result.grad = Tensor<T>(logits.shape());
  for (int t : targets) {
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      fail(ErrorKind::out_of_range, "target class " + std::to_string(t) + " out of range");
    }
    ++result.counted;
  }
  if (result.counted == 0) fail(ErrorKind::empty_input, "cross entropy: every position is ignored");

  const double inv_count = 1.0 / static_cast<double>(result.counted);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int target = targets[r];
    if (target == kIgnoreIndex) continue;
    auto in = logits.row(r);
    const double max_logit = static_cast<double>(*std::max_element(in.begin(), in.end()));
    double sum = 0.0;
    for (T v : in) sum += std::exp(static_cast<double>(v) - max_logit);
    const double log_sum = std::log(sum) + max_logit;
    total += log_sum - static_cast<double>(in[static_cast<std::size_t>(target)]);
    auto g = result.grad.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      const double prob = std::exp(static_cast<double>(in[c]) - log_sum);
      g[c] = static_cast<T>((prob - (static_cast<std::size_t>(target) == c ? 1.0 : 0.0)) * inv_count);
    }
  }
  result.loss = total * inv_count;
  return result;
}

}  // namespace phrasebreak::neural
