#pragma once

// Little-endian primitives shared by the checkpoint and volume formats.

#include <drmc/errors.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

namespace drmc::detail
{

inline void put_bytes(std::ostream &out, const void *p, std::size_t n)
{
	out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u8(std::ostream &out, std::uint8_t v)
{
	put_bytes(out, &v, 1);
}

inline void put_u32(std::ostream &out, std::uint32_t v)
{
	unsigned char b[4];
	for (int i = 0; i < 4; i++)
		b[i] = static_cast<unsigned char>(v >> (8 * i));
	put_bytes(out, b, 4);
}

inline void put_f32(std::ostream &out, std::span<const float> values)
{
	if constexpr (std::endian::native == std::endian::little)
		put_bytes(out, values.data(), values.size() * 4);
	else
		for (float f : values)
			put_u32(out, std::bit_cast<std::uint32_t>(f));
}

/// Sequential reader that reports the byte offset of any failure.
class ByteReader
{
public:
	ByteReader(std::istream &in, std::string what) :
			in_(in), what_(std::move(what))
	{
	}

	std::uint64_t offset() const noexcept
	{
		return offset_;
	}

	void bytes(void *p, std::size_t n)
	{
		in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
		const auto got = static_cast<std::size_t>(in_.gcount());
		if (got != n)
			fail("truncated: expected " + std::to_string(n) + " bytes, found " + std::to_string(got));
		offset_ += n;
	}

	std::uint8_t u8()
	{
		std::uint8_t v;
		bytes(&v, 1);
		return v;
	}

	std::uint32_t u32()
	{
		unsigned char b[4];
		bytes(b, 4);
		return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
	}

	void f32(std::span<float> out)
	{
		const std::uint64_t start = offset_;
		in_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * 4));
		const auto got = static_cast<std::uint64_t>(in_.gcount());
		if (got != out.size() * 4)
			throw FormatError(what_ + ": truncated payload at byte " + std::to_string(start) + ": expected " + std::to_string(out.size() * 4)
					+ " bytes, found " + std::to_string(got));
		offset_ += got;
		if constexpr (std::endian::native != std::endian::little)
			for (float &f : out)
				f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
	}

	bool at_end()
	{
		return in_.peek() == std::char_traits<char>::eof();
	}

	[[noreturn]] void fail(const std::string &message) const
	{
		throw FormatError(what_ + ": " + message + " at byte " + std::to_string(offset_));
	}

private:
	std::istream &in_;
	std::string what_;
	std::uint64_t offset_ = 0;
};

} // namespace drmc::detail
