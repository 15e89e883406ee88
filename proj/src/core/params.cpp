#include "mscaps/params.hpp"

#include <algorithm>

#include "mscaps/error.hpp"

namespace mscaps {

void Parameters::add(std::string name, Tensor value) {
  require(!contains(name), ErrorCode::kInvalidArgument, "duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool Parameters::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor& Parameters::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  fail(ErrorCode::kInvalidArgument, "unknown parameter '" + std::string(name) + "'");
}

Tensor& Parameters::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t Parameters::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

Binding::Binding(Tape& tape, const Parameters& params, bool trainable) : tape_(&tape), params_(&params) {
  vars_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    vars_.push_back(trainable ? tape.parameter(params.value(i)) : tape.constant(params.value(i)));
}

Binding::Binding(Tape& tape, const Parameters& params, std::vector<Var> vars)
    : tape_(&tape), params_(&params), vars_(std::move(vars)) {
  require(vars_.size() == params.size(), ErrorCode::kInvalidArgument, "binding needs one var per parameter");
}

Binding Binding::over(Tape& tape, const Parameters& params, std::vector<Var> vars) {
  return Binding(tape, params, std::move(vars));
}

Var Binding::operator[](std::string_view name) const {
  for (std::size_t i = 0; i < params_->size(); ++i)
    if (params_->name(i) == name) return vars_[i];
  fail(ErrorCode::kInvalidArgument, "unknown parameter '" + std::string(name) + "'");
}

std::vector<Tensor> Binding::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(tape_->grad(v));
  return out;
}

}  // namespace mscaps
