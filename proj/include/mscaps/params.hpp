#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mscaps/autodiff.hpp"
#include "mscaps/tensor.hpp"

namespace mscaps {

/// Named parameter tensors in insertion order. The order is the
/// serialization order and the order gradients are reported in.
class Parameters {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_.at(i).first; }
  const Tensor& value(std::size_t i) const { return entries_.at(i).second; }
  Tensor& value(std::size_t i) { return entries_.at(i).second; }
  std::size_t total_elements() const;

  bool operator==(const Parameters&) const = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Parameters placed on a tape, either as trainable leaves or constants.
class Binding {
 public:
  Binding(Tape& tape, const Parameters& params, bool trainable);
  /// Wraps vars already on the tape, one per parameter in order.
  static Binding over(Tape& tape, const Parameters& params, std::vector<Var> vars);

  Var operator[](std::string_view name) const;
  Tape& tape() const noexcept { return *tape_; }
  /// Gradients in parameter order; call after Tape::backward().
  std::vector<Tensor> gradients() const;

 private:
  Binding(Tape& tape, const Parameters& params, std::vector<Var> vars);

  Tape* tape_;
  const Parameters* params_;
  std::vector<Var> vars_;
};

}  // namespace mscaps
