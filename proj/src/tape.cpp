#include "grela/tape.hpp"

#include <algorithm>

#include "grela/error.hpp"

namespace grela {
namespace {
thread_local Tape* t_active = nullptr;
}  // namespace

Tape::Scope::Scope(Tape& tape) noexcept : previous_(t_active) { t_active = &tape; }
Tape::Scope::~Scope() { t_active = previous_; }

Tape::Pause::Pause() noexcept : previous_(t_active) { t_active = nullptr; }
Tape::Pause::~Pause() { t_active = previous_; }

Tape* Tape::active() noexcept { return t_active; }

void Tape::record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  std::shared_ptr<TensorImpl> output, std::function<void()> backward) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  const auto& target = loss.impl();
  const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(),
                                   [&](const Node& n) { return n.output == target; });
  if (!on_tape) {
    if (loss.requires_grad()) {
      // A leaf used directly as the loss.
      target->ensure_grad();
      target->grad[0] += 1.0;
      reset();
      return;
    }
    throw ContractError("backward(): loss was not recorded on this tape");
  }
  target->ensure_grad();
  target->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // no gradient reached this node
    it->backward();
  }
  reset();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward(): no active tape");
  tape->backward(loss);
}

}  // namespace grela
