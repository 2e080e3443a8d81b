#include <drmc/kernels/kernels.hpp>

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace drmc::kernels
{

#if !DRMC_HAVE_AVX2
const KernelTable *avx2_table()
{
	return nullptr;
}
#endif

namespace
{

const KernelTable &initial_table()
{
	if (const char *env = std::getenv("DRMC_ISA"))
	{
		const std::string want(env);
		if (want == "scalar")
			return scalar_table();
		if (want == "avx2" && cpu_supports(Isa::avx2))
			return *avx2_table();
	}
	if (cpu_supports(Isa::avx2))
		return *avx2_table();
	return scalar_table();
}

std::atomic<const KernelTable *> &current()
{
	static std::atomic<const KernelTable *> table { &initial_table() };
	return table;
}

} // namespace

bool cpu_supports(Isa isa)
{
	switch (isa)
	{
	case Isa::scalar:
		return true;
	case Isa::avx2:
#if DRMC_HAVE_AVX2 && (defined(__x86_64__) || defined(__i386__))
		return avx2_table() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
		return false;
#endif
	}
	return false;
}

const KernelTable &active()
{
	return *current().load(std::memory_order_relaxed);
}

void select_isa(Isa isa)
{
	if (!cpu_supports(isa))
		throw std::invalid_argument("kernel variant '" + std::string(isa_name(isa)) + "' is not available on this CPU");
	current().store(isa == Isa::scalar ? &scalar_table() : avx2_table());
}

std::string_view isa_name(Isa isa)
{
	return isa == Isa::avx2 ? "avx2" : "scalar";
}

} // namespace drmc::kernels
