#include <atomic>
#include <cstdlib>
#include <string>

#include "grela/error.hpp"
#include "kernels_impl.hpp"

namespace grela::kernels {
namespace {

const Table kScalar{Isa::Scalar,       scalar::dot_f64,  scalar::dot_f32, scalar::axpy_f64,
                    scalar::axpy_f32,  scalar::gemm_f64, scalar::gemm_f32};

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* initial_table() noexcept {
  Isa isa = detect_isa();
  if (const char* env = std::getenv("GRELA_ISA")) {
    const std::string v(env);
    if (v == "scalar") isa = Isa::Scalar;
    else if (v == "avx2" && isa_supported(Isa::Avx2)) isa = Isa::Avx2;
  }
  return isa == Isa::Avx2 ? avx2::table() : &kScalar;
}

std::atomic<const Table*>& current() noexcept {
  static std::atomic<const Table*> t{initial_table()};
  return t;
}

}  // namespace

bool isa_supported(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
      return avx2::table() != nullptr && cpu_has_avx2();
  }
  return false;
}

Isa detect_isa() noexcept { return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

Isa active_isa() noexcept { return active().isa; }

const Table& table(Isa isa) {
  if (!isa_supported(isa))
    throw ContractError("kernel ISA '" + std::string(isa_name(isa)) + "' is not available on this CPU");
  return isa == Isa::Avx2 ? *avx2::table() : kScalar;
}

void set_isa(Isa isa) { current().store(&table(isa), std::memory_order_release); }

const Table& active() noexcept { return *current().load(std::memory_order_acquire); }

std::string_view isa_name(Isa isa) noexcept {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::Scalar;
  if (name == "avx2") return Isa::Avx2;
  throw ContractError("unknown kernel ISA '" + std::string(name) + "'");
}

}  // namespace grela::kernels
