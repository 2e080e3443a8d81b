#pragma once

#include <stdexcept>
#include <string>

namespace drmc
{

class Error : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch.
class DimensionError : public Error
{
public:
	using Error::Error;
};

/// Invalid model, layer, or run configuration.
class ConfigError : public Error
{
public:
	using Error::Error;
};

/// NaN/Inf or otherwise unusable numeric state.
class NumericError : public Error
{
public:
	using Error::Error;
};

/// API called in the wrong state or with inconsistent arguments.
class UsageError : public Error
{
public:
	using Error::Error;
};

/// Input value outside the mathematical domain of an operation.
class DomainError : public Error
{
public:
	using Error::Error;
};

/// Malformed file content.
class FormatError : public Error
{
public:
	using Error::Error;
};

} // namespace drmc
