#pragma once

#include <cstdint>
#include <vector>

#include "grbe/rng.hpp"

namespace grbe {

/// Record/replay wrapper around RngStream with the same drawing interface.
///
/// In record mode every draw AND every discrete decision (hard thresholds,
/// weighted choices) is stored. In replay mode the stored outcomes are
/// returned verbatim, ignoring current inputs. Gradient checking relies on
/// this: replaying freezes the discrete structure of the loss, so finite
/// differences probe exactly the continuous function the tape differentiated.
/// A control-flow branch may depend on randomness only through this class,
/// otherwise record and replay desynchronize (finish() guards against that).
class TraceRng {
 public:
  struct Trace {
    std::vector<double> doubles;
    std::vector<long> ints;
    std::vector<std::vector<std::uint8_t>> bitsets;
  };

  explicit TraceRng(RngStream rng) : rng_(std::move(rng)), recording_(true) {}
  explicit TraceRng(const Trace& trace) : rng_(0), recording_(false), replay_(&trace) {}

  double uniform01() { return record_double(recording_ ? rng_.uniform01() : 0.0); }
  double uniform_open01() { return record_double(recording_ ? rng_.uniform_open01() : 0.0); }
  double uniform(double a, double b) { return record_double(recording_ ? rng_.uniform(a, b) : 0.0); }

  bool bernoulli(double p) { return record_int(recording_ ? (rng_.bernoulli(p) ? 1 : 0) : 0) != 0; }
  int uniform_int(int n) { return static_cast<int>(record_int(recording_ ? rng_.uniform_int(n) : 0)); }
  int weighted_choice(const std::vector<double>& w) {
    return static_cast<int>(record_int(recording_ ? rng_.weighted_choice(w) : 0));
  }

  std::vector<std::uint8_t> threshold_bits(const std::vector<double>& xs) {
    if (recording_) {
      trace_.bitsets.push_back(rng_.threshold_bits(xs));
      return trace_.bitsets.back();
    }
    require(bit_pos_ < replay_->bitsets.size(), "TraceRng: replay ran past recorded bitsets");
    return replay_->bitsets[bit_pos_++];
  }

  const Trace& trace() const { return trace_; }
  bool recording() const { return recording_; }

  /// Assert the replay consumed exactly what was recorded.
  void finish() const {
    if (recording_) return;
    require(dbl_pos_ == replay_->doubles.size() && int_pos_ == replay_->ints.size() &&
                bit_pos_ == replay_->bitsets.size(),
            "TraceRng: replay consumed a different number of draws than recorded");
  }

 private:
  double record_double(double x) {
    if (recording_) {
      trace_.doubles.push_back(x);
      return x;
    }
    require(dbl_pos_ < replay_->doubles.size(), "TraceRng: replay ran past recorded doubles");
    return replay_->doubles[dbl_pos_++];
  }
  long record_int(long x) {
    if (recording_) {
      trace_.ints.push_back(x);
      return x;
    }
    require(int_pos_ < replay_->ints.size(), "TraceRng: replay ran past recorded ints");
    return replay_->ints[int_pos_++];
  }

  RngStream rng_;
  bool recording_;
  Trace trace_;
  const Trace* replay_ = nullptr;
  std::size_t dbl_pos_ = 0, int_pos_ = 0, bit_pos_ = 0;
};

}  // namespace grbe
