#pragma once

#include <drmc/tensor.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace drmc::model
{

/// How router logits become expert weights. `no_h` is the relu gate with the
/// cross-layer hidden state replaced by zeros at every router.
enum class GateKind : std::uint32_t
{
	relu = 0,
	softmax = 1,
	top2 = 2,
	no_h = 3,
};

std::string_view gate_name(GateKind gate);
/// Throws ConfigError listing the allowed names.
GateKind parse_gate(std::string_view name);

enum class BankKind
{
	attention,
	ffn,
};

std::string_view bank_name(BankKind kind);

struct ModelConfig
{
	std::size_t channels = 16;
	std::size_t experts = 3;
	std::size_t blocks = 3;
	std::size_t router_hidden = 16;
	GateKind gate = GateKind::relu;

	bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError for zero sizes or a top2 gate with fewer than two experts.
void validate(const ModelConfig &config);

struct Parameter
{
	std::string name;
	Tensor value;
};

/// y = W x + b on a 1-D vector.
struct Linear
{
	Tensor weight; // [out x in]
	Tensor bias;   // [out]

	Tensor forward(const Tensor &x) const;
};

/// 1x1x1 convolution.
struct Pointwise
{
	Tensor weight; // [out x in x 1 x 1 x 1]
	Tensor bias;   // [out]

	Tensor forward(const Tensor &x) const;
};

class Expert
{
public:
	virtual ~Expert() = default;
	virtual Tensor forward(const Tensor &x) const = 0;
	virtual void collect(const std::string &prefix, std::vector<Parameter> &out) = 0;
};

/// Single-head channel attention followed by a depthwise 3x3x3 refinement.
/// Attention is C x C, so the cost is linear in the voxel count.
class AttentionExpert final : public Expert
{
public:
	explicit AttentionExpert(std::size_t channels);

	Tensor forward(const Tensor &x) const override;
	void collect(const std::string &prefix, std::vector<Parameter> &out) override;

	Pointwise q_proj, k_proj, v_proj, out_proj;
	Tensor log_temperature; // [1]; temperature = exp(log_temperature)
	Tensor local_weight;    // [C x 1 x 3 x 3 x 3]
	Tensor local_bias;      // [C]
};

/// Position-wise two-layer MLP with GELU, hidden width 2C.
class FFNExpert final : public Expert
{
public:
	explicit FFNExpert(std::size_t channels);

	Tensor forward(const Tensor &x) const override;
	void collect(const std::string &prefix, std::vector<Parameter> &out) override;

	Pointwise w1, w2;
};

struct ExpertBank
{
	BankKind kind = BankKind::attention;
	std::vector<std::unique_ptr<Expert>> experts;

	ExpertBank(BankKind kind, std::size_t channels, std::size_t count);
	std::size_t size() const noexcept
	{
		return experts.size();
	}
};

struct RouteResult
{
	Tensor weights; // [M], nonnegative
	Tensor hidden;  // [C_h], handed to the next router
	std::vector<float> logits;
};

struct DynamicRoutingModule
{
	Linear w_in;  // (C + C_h) -> C_h
	Linear w_out; // C_h -> M

	DynamicRoutingModule(std::size_t channels, std::size_t hidden, std::size_t experts);
	/// `x` is the normalized block input [C x D x H x W]; `h_prev` is [C_h].
	RouteResult route(const Tensor &x, const Tensor &h_prev, GateKind gate) const;
};

/// Weighted sum of expert outputs. Experts whose weight is exactly zero are
/// not evaluated. Returns an undefined tensor when every weight is zero.
Tensor fuse_sparse(const ExpertBank &bank, const Tensor &x, const Tensor &weights);
/// As fuse_sparse, but an empty selection yields zeros shaped like x.
Tensor fuse(const ExpertBank &bank, const Tensor &x, const Tensor &weights);

struct RouteLog
{
	std::size_t block = 0;
	BankKind bank = BankKind::attention;
	std::vector<float> logits;
	Tensor weights;
};

struct ChannelNorm
{
	Tensor gain;   // [C], ones at init
	Tensor offset; // [C]

	Tensor forward(const Tensor &x) const;
};

class DynamicRoutingBlock
{
public:
	DynamicRoutingBlock(const ModelConfig &config);

	/// Pre-norm residual block. `h` is the router chain state; it is replaced
	/// by the state after the FFN router.
	Tensor forward(const Tensor &x, Tensor &h, GateKind gate, std::size_t index, std::vector<RouteLog> *log) const;
	void collect(const std::string &prefix, std::vector<Parameter> &out);

	ChannelNorm norm1, norm2;
	ExpertBank att_bank;
	DynamicRoutingModule att_router;
	ExpertBank ffn_bank;
	DynamicRoutingModule ffn_router;
};

struct ForwardResult
{
	Tensor estimate;
	std::vector<RouteLog> routes; // 2 entries per block, in forward order
};

/// Head conv, N routed blocks, tail conv, and a global residual.
class DRMCNetwork
{
public:
	explicit DRMCNetwork(const ModelConfig &config);
	DRMCNetwork(DRMCNetwork&&) noexcept = default;
	DRMCNetwork &operator=(DRMCNetwork&&) noexcept = default;

	const ModelConfig &config() const noexcept
	{
		return config_;
	}

	/// Fan-in uniform weights, zero biases, unit norm gains and a zero tail,
	/// so the freshly initialized network is the identity map.
	void init_parameters(std::uint64_t seed);

	/// `low` is [1 x D x H x W]. Uses the configured gate.
	ForwardResult forward(const Tensor &low) const;
	ForwardResult forward(const Tensor &low, GateKind gate) const;

	/// Registry in declaration order. Handles alias the module tensors.
	const std::vector<Parameter> &parameters() const noexcept
	{
		return params_;
	}
	std::size_t parameter_count() const;
	/// Indices into parameters() of the experts in one bank of one block.
	std::vector<std::size_t> bank_parameters(std::size_t block, BankKind kind) const;
	void zero_grad();

	/// Deep copy with independent storage.
	DRMCNetwork clone() const;
	/// Copies values from a network of identical configuration.
	void copy_parameters_from(const DRMCNetwork &other);

	std::vector<DynamicRoutingBlock> &blocks() noexcept
	{
		return blocks_;
	}
	const std::vector<DynamicRoutingBlock> &blocks() const noexcept
	{
		return blocks_;
	}
	Tensor head_weight, head_bias;
	Tensor tail_weight, tail_bias;

	void save(std::ostream &out) const;
	void save(const std::filesystem::path &path) const;
	static DRMCNetwork load(std::istream &in);
	static DRMCNetwork load(const std::filesystem::path &path);

private:
	void register_parameters();

	ModelConfig config_;
	std::vector<DynamicRoutingBlock> blocks_;
	std::vector<Parameter> params_;
};

} // namespace drmc::model
