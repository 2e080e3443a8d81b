#pragma once

#include <charconv>
#include <string>

namespace drmc::detail
{

// Shortest decimal that parses back to the same double.
inline std::string format_double(double v)
{
	char buf[64];
	const auto r = std::to_chars(buf, buf + sizeof buf, v);
	return std::string(buf, r.ptr);
}

} // namespace drmc::detail
