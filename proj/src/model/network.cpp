#include "../common/byte_io.hpp"

#include <drmc/errors.hpp>
#include <drmc/model.hpp>
#include <drmc/ops.hpp>

#include <cmath>
#include <fstream>
#include <random>

namespace drmc::model
{

namespace
{

constexpr char kMagic[4] = { 'D', 'R', 'M', 'C' };
constexpr std::uint32_t kVersion = 1;

bool ends_with(const std::string &s, std::string_view suffix)
{
	return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// 24 random mantissa bits mapped to [-1, 1); independent of the standard
// library's distribution implementation.
float unit_symmetric(std::mt19937_64 &rng)
{
	const double u = static_cast<double>(rng() >> 40) * 0x1p-24;
	return static_cast<float>(2.0 * u - 1.0);
}

} // namespace

DRMCNetwork::DRMCNetwork(const ModelConfig &config) :
		config_(config)
{
	validate(config_);
	const std::size_t c = config_.channels;
	head_weight = Tensor::zeros( { c, 1, 3, 3, 3 }, true);
	head_bias = Tensor::zeros( { c }, true);
	blocks_.reserve(config_.blocks);
	for (std::size_t b = 0; b < config_.blocks; b++)
		blocks_.emplace_back(config_);
	tail_weight = Tensor::zeros( { 1, c, 3, 3, 3 }, true);
	tail_bias = Tensor::zeros( { 1 }, true);
	register_parameters();
}

void DRMCNetwork::register_parameters()
{
	params_.clear();
	params_.push_back( { "head.weight", head_weight });
	params_.push_back( { "head.bias", head_bias });
	for (std::size_t b = 0; b < blocks_.size(); b++)
		blocks_[b].collect("blocks." + std::to_string(b), params_);
	params_.push_back( { "tail.weight", tail_weight });
	params_.push_back( { "tail.bias", tail_bias });
}

void DRMCNetwork::init_parameters(std::uint64_t seed)
{
	std::mt19937_64 rng(seed);
	for (Parameter &p : params_)
	{
		auto v = p.value.mutable_data();
		if (p.name == "tail.weight" || ends_with(p.name, ".bias") || ends_with(p.name, ".offset") || ends_with(p.name, "log_temperature"))
			std::fill(v.begin(), v.end(), 0.0f);
		else if (ends_with(p.name, ".gain"))
			std::fill(v.begin(), v.end(), 1.0f);
		else
		{
			const std::size_t fan_in = p.value.numel() / p.value.dim(0);
			const float bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(fan_in)));
			for (float &x : v)
				x = bound * unit_symmetric(rng);
		}
		p.value.zero_grad();
	}
}

ForwardResult DRMCNetwork::forward(const Tensor &low) const
{
	return forward(low, config_.gate);
}

ForwardResult DRMCNetwork::forward(const Tensor &low, GateKind gate) const
{
	if (low.ndim() != 4 || low.dim(0) != 1)
		throw DimensionError("network input must be [1 x D x H x W], got " + shape_string(low.shape()));
	for (std::size_t a = 1; a < 4; a++)
		if (low.dim(a) < 3)
			throw DimensionError("network input spatial extent must be at least 3, got " + shape_string(low.shape()));
	if (gate == GateKind::top2 && config_.experts < 2)
		throw ConfigError("top2 gate needs at least 2 experts, got " + std::to_string(config_.experts));

	ForwardResult result;
	result.routes.reserve(2 * blocks_.size());
	Tensor f = ops::conv3d(low, head_weight, head_bias, { 1, 1, 1 });
	Tensor h = Tensor::zeros( { config_.router_hidden });
	for (std::size_t b = 0; b < blocks_.size(); b++)
		f = blocks_[b].forward(f, h, gate, b, &result.routes);
	result.estimate = ops::add(low, ops::conv3d(f, tail_weight, tail_bias, { 1, 1, 1 }));
	return result;
}

std::size_t DRMCNetwork::parameter_count() const
{
	std::size_t n = 0;
	for (const Parameter &p : params_)
		n += p.value.numel();
	return n;
}

std::vector<std::size_t> DRMCNetwork::bank_parameters(std::size_t block, BankKind kind) const
{
	if (block >= blocks_.size())
		throw UsageError("block index " + std::to_string(block) + " out of range (" + std::to_string(blocks_.size()) + " blocks)");
	const std::string prefix = "blocks." + std::to_string(block) + (kind == BankKind::attention ? ".att_bank." : ".ffn_bank.");
	std::vector<std::size_t> out;
	for (std::size_t i = 0; i < params_.size(); i++)
		if (params_[i].name.starts_with(prefix))
			out.push_back(i);
	return out;
}

void DRMCNetwork::zero_grad()
{
	for (Parameter &p : params_)
		p.value.zero_grad();
}

DRMCNetwork DRMCNetwork::clone() const
{
	DRMCNetwork copy(config_);
	copy.copy_parameters_from(*this);
	return copy;
}

void DRMCNetwork::copy_parameters_from(const DRMCNetwork &other)
{
	if (!(other.config_ == config_))
		throw UsageError("copy_parameters_from: configurations differ");
	for (std::size_t i = 0; i < params_.size(); i++)
	{
		const auto src = other.params_[i].value.data();
		auto dst = params_[i].value.mutable_data();
		std::copy(src.begin(), src.end(), dst.begin());
	}
}

void DRMCNetwork::save(std::ostream &out) const
{
	detail::put_bytes(out, kMagic, 4);
	detail::put_u32(out, kVersion);
	detail::put_u32(out, static_cast<std::uint32_t>(config_.channels));
	detail::put_u32(out, static_cast<std::uint32_t>(config_.experts));
	detail::put_u32(out, static_cast<std::uint32_t>(config_.blocks));
	detail::put_u32(out, static_cast<std::uint32_t>(config_.router_hidden));
	detail::put_u32(out, static_cast<std::uint32_t>(config_.gate));
	for (const Parameter &p : params_)
		detail::put_f32(out, p.value.data());
	if (!out)
		throw Error("checkpoint: write failed");
}

void DRMCNetwork::save(const std::filesystem::path &path) const
{
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw Error("checkpoint: cannot open " + path.string() + " for writing");
	save(out);
}

DRMCNetwork DRMCNetwork::load(std::istream &in)
{
	detail::ByteReader r(in, "checkpoint");
	char magic[4];
	r.bytes(magic, 4);
	if (!std::equal(magic, magic + 4, kMagic))
		throw FormatError("checkpoint: bad magic at byte 0 (expected \"DRMC\")");
	const std::uint32_t version = r.u32();
	if (version != kVersion)
		throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at byte 4");
	ModelConfig config;
	config.channels = r.u32();
	config.experts = r.u32();
	config.blocks = r.u32();
	config.router_hidden = r.u32();
	const std::uint32_t gate = r.u32();
	if (gate > static_cast<std::uint32_t>(GateKind::no_h))
		throw FormatError("checkpoint: unknown gate kind " + std::to_string(gate) + " at byte 24");
	config.gate = static_cast<GateKind>(gate);
	DRMCNetwork net(config);
	for (Parameter &p : net.params_)
		r.f32(p.value.mutable_data());
	if (!r.at_end())
		r.fail("trailing data after parameters");
	return net;
}

DRMCNetwork DRMCNetwork::load(const std::filesystem::path &path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw Error("checkpoint: cannot open " + path.string());
	return load(in);
}

} // namespace drmc::model
