#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "grela/tensor.hpp"

namespace grela {

// Reverse-mode tape. Ops executed while a tape is active (see Tape::Scope)
// append one node per op whose inputs need gradients. backward() replays the
// nodes newest-first, so each node's output gradient is complete by the time
// its rule runs, then clears the tape.
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Makes `tape` the recording target for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape) noexcept;
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  // Suspends recording on this thread (inference inside a training step).
  class Pause {
   public:
    Pause() noexcept;
    ~Pause();
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() noexcept;

  void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::shared_ptr<TensorImpl> output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs every rule once. Throws ContractError
  // for a non-scalar loss or one that was not produced on this tape.
  void backward(const Tensor& loss);
  void reset() noexcept { nodes_.clear(); }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

// Convenience: backward on the thread's active tape.
void backward(const Tensor& loss);

}  // namespace grela
