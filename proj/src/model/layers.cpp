#include <drmc/errors.hpp>
#include <drmc/model.hpp>
#include <drmc/ops.hpp>

#include <array>

namespace drmc::model
{

namespace
{

constexpr std::array<std::string_view, 4> kGateNames { "relu", "softmax", "top2", "no_h" };

Pointwise make_pointwise(std::size_t in, std::size_t out)
{
	return { Tensor::zeros( { out, in, 1, 1, 1 }, true), Tensor::zeros( { out }, true) };
}

Linear make_linear(std::size_t in, std::size_t out)
{
	return { Tensor::zeros( { out, in }, true), Tensor::zeros( { out }, true) };
}

void collect_pointwise(Pointwise &p, const std::string &prefix, std::vector<Parameter> &out)
{
	out.push_back( { prefix + ".weight", p.weight });
	out.push_back( { prefix + ".bias", p.bias });
}

void collect_linear(Linear &l, const std::string &prefix, std::vector<Parameter> &out)
{
	out.push_back( { prefix + ".weight", l.weight });
	out.push_back( { prefix + ".bias", l.bias });
}

ChannelNorm make_norm(std::size_t channels)
{
	return { Tensor::full( { channels }, 1.0f, true), Tensor::zeros( { channels }, true) };
}

void collect_norm(ChannelNorm &n, const std::string &prefix, std::vector<Parameter> &out)
{
	out.push_back( { prefix + ".gain", n.gain });
	out.push_back( { prefix + ".offset", n.offset });
}

} // namespace

std::string_view gate_name(GateKind gate)
{
	const auto i = static_cast<std::size_t>(gate);
	return i < kGateNames.size() ? kGateNames[i] : "?";
}

GateKind parse_gate(std::string_view name)
{
	for (std::size_t i = 0; i < kGateNames.size(); i++)
		if (kGateNames[i] == name)
			return static_cast<GateKind>(i);
	throw ConfigError("unknown gate \"" + std::string(name) + "\"; allowed: relu, softmax, top2, no_h");
}

std::string_view bank_name(BankKind kind)
{
	return kind == BankKind::attention ? "att" : "ffn";
}

void validate(const ModelConfig &config)
{
	if (config.channels == 0 || config.experts == 0 || config.blocks == 0 || config.router_hidden == 0)
		throw ConfigError("model sizes must be positive (channels, experts, blocks, router_hidden)");
	if (config.gate == GateKind::top2 && config.experts < 2)
		throw ConfigError("top2 gate needs at least 2 experts, got " + std::to_string(config.experts));
}

Tensor Linear::forward(const Tensor &x) const
{
	const std::size_t in = weight.dim(1), out = weight.dim(0);
	if (x.numel() != in)
		throw DimensionError("linear: expected " + std::to_string(in) + " inputs, got " + shape_string(x.shape()));
	return ops::add(ops::reshape(ops::matmul(weight, ops::reshape(x, { in, 1 })), { out }), bias);
}

Tensor Pointwise::forward(const Tensor &x) const
{
	return ops::conv3d(x, weight, bias);
}

Tensor ChannelNorm::forward(const Tensor &x) const
{
	return ops::layernorm(x, gain, offset);
}

// ---- experts ------------------------------------------------------------------

AttentionExpert::AttentionExpert(std::size_t channels) :
		q_proj(make_pointwise(channels, channels)), k_proj(make_pointwise(channels, channels)), v_proj(make_pointwise(channels, channels)), out_proj(
				make_pointwise(channels, channels)), log_temperature(Tensor::zeros( { 1 }, true)), local_weight(Tensor::zeros( { channels, 1, 3, 3, 3 }, true)), local_bias(
				Tensor::zeros( { channels }, true))
{
}

Tensor AttentionExpert::forward(const Tensor &x) const
{
	if (x.ndim() != 4)
		throw DimensionError("attention expert: expected [C x D x H x W], got " + shape_string(x.shape()));
	const std::size_t c = x.dim(0);
	const std::size_t s = x.numel() / std::max<std::size_t>(c, 1);
	if (s == 0)
		throw DimensionError("attention expert: empty spatial extent " + shape_string(x.shape()));
	const Tensor q = ops::l2_normalize_rows(ops::reshape(q_proj.forward(x), { c, s }));
	const Tensor k = ops::l2_normalize_rows(ops::reshape(k_proj.forward(x), { c, s }));
	const Tensor v = ops::reshape(v_proj.forward(x), { c, s });
	const Tensor attn = ops::softmax(ops::mul_scalar(ops::matmul_nt(q, k), ops::exp(log_temperature)), 1);
	const Tensor y = out_proj.forward(ops::reshape(ops::matmul(attn, v), x.shape()));
	return ops::add(y, ops::conv3d(y, local_weight, local_bias, { 1, 1, c }));
}

void AttentionExpert::collect(const std::string &prefix, std::vector<Parameter> &out)
{
	collect_pointwise(q_proj, prefix + ".q_proj", out);
	collect_pointwise(k_proj, prefix + ".k_proj", out);
	collect_pointwise(v_proj, prefix + ".v_proj", out);
	out.push_back( { prefix + ".log_temperature", log_temperature });
	collect_pointwise(out_proj, prefix + ".out_proj", out);
	out.push_back( { prefix + ".local_conv.weight", local_weight });
	out.push_back( { prefix + ".local_conv.bias", local_bias });
}

FFNExpert::FFNExpert(std::size_t channels) :
		w1(make_pointwise(channels, 2 * channels)), w2(make_pointwise(2 * channels, channels))
{
}

Tensor FFNExpert::forward(const Tensor &x) const
{
	return w2.forward(ops::gelu(w1.forward(x)));
}

void FFNExpert::collect(const std::string &prefix, std::vector<Parameter> &out)
{
	collect_pointwise(w1, prefix + ".w1", out);
	collect_pointwise(w2, prefix + ".w2", out);
}

ExpertBank::ExpertBank(BankKind kind_, std::size_t channels, std::size_t count) :
		kind(kind_)
{
	if (count == 0)
		throw ConfigError("expert bank needs at least one expert");
	for (std::size_t m = 0; m < count; m++)
	{
		if (kind == BankKind::attention)
			experts.push_back(std::make_unique<AttentionExpert>(channels));
		else
			experts.push_back(std::make_unique<FFNExpert>(channels));
	}
}

// ---- routing ------------------------------------------------------------------

DynamicRoutingModule::DynamicRoutingModule(std::size_t channels, std::size_t hidden, std::size_t experts) :
		w_in(make_linear(channels + hidden, hidden)), w_out(make_linear(hidden, experts))
{
}

RouteResult DynamicRoutingModule::route(const Tensor &x, const Tensor &h_prev, GateKind gate) const
{
	const std::size_t hidden_width = w_in.weight.dim(0);
	if (!h_prev.defined() || h_prev.ndim() != 1 || h_prev.dim(0) != hidden_width)
		throw DimensionError("router: hidden state must be [" + std::to_string(hidden_width) + "], got "
				+ (h_prev.defined() ? shape_string(h_prev.shape()) : std::string("undefined")));
	const std::size_t m = w_out.weight.dim(0);
	if (gate == GateKind::top2 && m < 2)
		throw ConfigError("top2 gate needs at least 2 experts, got " + std::to_string(m));

	const Tensor h_in = gate == GateKind::no_h ? Tensor::zeros( { hidden_width }) : h_prev;
	RouteResult r;
	r.hidden = ops::relu(w_in.forward(ops::concat(ops::gap(x), h_in, 0)));
	const Tensor logits = w_out.forward(r.hidden);
	r.logits.assign(logits.data().begin(), logits.data().end());
	switch (gate)
	{
	case GateKind::relu:
	case GateKind::no_h:
		r.weights = ops::relu(logits);
		break;
	case GateKind::softmax:
		r.weights = ops::softmax(logits, 0);
		break;
	case GateKind::top2:
		r.weights = ops::topk_softmax(logits, 2);
		break;
	}
	return r;
}

Tensor fuse_sparse(const ExpertBank &bank, const Tensor &x, const Tensor &weights)
{
	if (weights.ndim() != 1 || weights.dim(0) != bank.size())
		throw DimensionError("fuse: expected " + std::to_string(bank.size()) + " weights, got " + shape_string(weights.shape()));
	Tensor acc;
	const auto w = weights.data();
	for (std::size_t m = 0; m < bank.size(); m++)
	{
		if (w[m] == 0.0f)
			continue;
		Tensor term = ops::mul_scalar(bank.experts[m]->forward(x), ops::select(weights, m));
		acc = acc.defined() ? ops::add(acc, term) : term;
	}
	return acc;
}

Tensor fuse(const ExpertBank &bank, const Tensor &x, const Tensor &weights)
{
	Tensor out = fuse_sparse(bank, x, weights);
	return out.defined() ? out : Tensor::zeros(x.shape());
}

// ---- block --------------------------------------------------------------------

DynamicRoutingBlock::DynamicRoutingBlock(const ModelConfig &config) :
		norm1(make_norm(config.channels)), norm2(make_norm(config.channels)), att_bank(BankKind::attention, config.channels, config.experts), att_router(
				config.channels, config.router_hidden, config.experts), ffn_bank(BankKind::ffn, config.channels, config.experts), ffn_router(config.channels,
				config.router_hidden, config.experts)
{
}

Tensor DynamicRoutingBlock::forward(const Tensor &x, Tensor &h, GateKind gate, std::size_t index, std::vector<RouteLog> *log) const
{
	const Tensor n1 = norm1.forward(x);
	RouteResult r1 = att_router.route(n1, h, gate);
	const Tensor f1 = fuse_sparse(att_bank, n1, r1.weights);
	// An empty selection leaves the residual stream untouched, bit for bit.
	const Tensor u = f1.defined() ? ops::add(x, f1) : x;

	const Tensor n2 = norm2.forward(u);
	RouteResult r2 = ffn_router.route(n2, r1.hidden, gate);
	const Tensor f2 = fuse_sparse(ffn_bank, n2, r2.weights);
	const Tensor y = f2.defined() ? ops::add(u, f2) : u;

	if (log)
	{
		log->push_back( { index, BankKind::attention, std::move(r1.logits), r1.weights });
		log->push_back( { index, BankKind::ffn, std::move(r2.logits), r2.weights });
	}
	h = r2.hidden;
	return y;
}

void DynamicRoutingBlock::collect(const std::string &prefix, std::vector<Parameter> &out)
{
	collect_norm(norm1, prefix + ".norm1", out);
	for (std::size_t m = 0; m < att_bank.size(); m++)
		att_bank.experts[m]->collect(prefix + ".att_bank." + std::to_string(m), out);
	collect_linear(att_router.w_in, prefix + ".att_router.w_in", out);
	collect_linear(att_router.w_out, prefix + ".att_router.w_out", out);
	collect_norm(norm2, prefix + ".norm2", out);
	for (std::size_t m = 0; m < ffn_bank.size(); m++)
		ffn_bank.experts[m]->collect(prefix + ".ffn_bank." + std::to_string(m), out);
	collect_linear(ffn_router.w_in, prefix + ".ffn_router.w_in", out);
	collect_linear(ffn_router.w_out, prefix + ".ffn_router.w_out", out);
}

} // namespace drmc::model
