#include "autograd.hpp"

#include <drmc/errors.hpp>

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace drmc
{

namespace
{
thread_local bool grad_mode = true;
thread_local std::uint64_t sequence_counter = 0;

detail::TensorImpl &checked(const std::shared_ptr<detail::TensorImpl> &impl)
{
	if (!impl)
		throw UsageError("operation on an undefined tensor");
	return *impl;
}
} // namespace

std::size_t shape_numel(const Shape &shape)
{
	std::size_t n = 1;
	for (std::size_t d : shape)
		n *= d;
	return n;
}

std::string shape_string(const Shape &shape)
{
	std::ostringstream os;
	os << '[';
	for (std::size_t i = 0; i < shape.size(); i++)
		os << (i ? "x" : "") << shape[i];
	os << ']';
	return os.str();
}

namespace detail
{

std::uint64_t next_sequence() noexcept
{
	return ++sequence_counter;
}

float* GradSink::get(std::size_t input)
{
	TensorImpl *impl = inputs_.at(input).get();
	if (!impl || !impl->requires_grad)
		return nullptr;
	if (!impl->node)
	{
		if (impl->grad.size() != impl->data.size())
			impl->grad.assign(impl->data.size(), 0.0f);
		return impl->grad.data();
	}
	auto &buffer = interior_[impl];
	if (buffer.size() != impl->data.size())
		buffer.assign(impl->data.size(), 0.0f);
	return buffer.data();
}

Tensor make_leaf(Shape shape, std::vector<float> data, bool requires_grad)
{
	if (data.size() != shape_numel(shape))
		throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " + shape_string(shape));
	auto impl = std::make_shared<TensorImpl>();
	impl->shape = std::move(shape);
	impl->data = std::move(data);
	impl->requires_grad = requires_grad;
	impl->sequence = next_sequence();
	return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<float> data, const std::vector<Tensor> &inputs, BackwardFn backward)
{
	Tensor out = make_leaf(std::move(shape), std::move(data), false);
	if (!grad_mode)
		return out;
	bool any = false;
	for (const Tensor &t : inputs)
		any = any || (t.defined() && t.requires_grad());
	if (!any)
		return out;
	auto node = std::make_shared<Node>();
	node->inputs.reserve(inputs.size());
	for (const Tensor &t : inputs)
		node->inputs.push_back(t.impl());
	node->backward = std::move(backward);
	out.impl()->requires_grad = true;
	out.impl()->node = std::move(node);
	return out;
}

Tensor make_result(Shape shape, std::vector<float> data, std::initializer_list<Tensor> inputs, BackwardFn backward)
{
	return make_result(std::move(shape), std::move(data), std::vector<Tensor>(inputs), std::move(backward));
}

void require_finite(std::span<const float> values, const char *op)
{
	for (float v : values)
		if (std::isnan(v))
			throw NumericError(std::string(op) + ": NaN input");
}

} // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
	const std::size_t n = shape_numel(shape);
	return detail::make_leaf(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad)
{
	const std::size_t n = shape_numel(shape);
	return detail::make_leaf(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad)
{
	return detail::make_leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad)
{
	return detail::make_leaf( { 1 }, { value }, requires_grad);
}

const Shape &Tensor::shape() const
{
	return checked(impl_).shape;
}

std::size_t Tensor::ndim() const
{
	return shape().size();
}

std::size_t Tensor::dim(std::size_t axis) const
{
	const Shape &s = shape();
	if (axis >= s.size())
		throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
	return s[axis];
}

std::size_t Tensor::numel() const
{
	return checked(impl_).data.size();
}

std::span<const float> Tensor::data() const
{
	return checked(impl_).data;
}

std::span<float> Tensor::mutable_data()
{
	auto &impl = checked(impl_);
	if (impl.node)
		throw UsageError("in-place write to a tensor produced by a recorded op");
	return impl.data;
}

float Tensor::item() const
{
	const auto &impl = checked(impl_);
	if (impl.data.size() != 1)
		throw DimensionError("item() on tensor of shape " + shape_string(impl.shape));
	return impl.data[0];
}

double Tensor::item_precise() const
{
	const float v = item();
	return std::isnan(impl_->precise) ? static_cast<double>(v) : impl_->precise;
}

bool Tensor::requires_grad() const
{
	return checked(impl_).requires_grad;
}

void Tensor::set_requires_grad(bool value)
{
	auto &impl = checked(impl_);
	if (impl.node)
		throw UsageError("requires_grad can only be changed on leaf tensors");
	impl.requires_grad = value;
}

bool Tensor::is_leaf() const
{
	return checked(impl_).node == nullptr;
}

bool Tensor::has_grad() const
{
	const auto &impl = checked(impl_);
	return !impl.grad.empty() && impl.grad.size() == impl.data.size();
}

std::span<const float> Tensor::grad() const
{
	return checked(impl_).grad;
}

std::span<float> Tensor::mutable_grad()
{
	auto &impl = checked(impl_);
	if (impl.grad.size() != impl.data.size())
		impl.grad.assign(impl.data.size(), 0.0f);
	return impl.grad;
}

void Tensor::zero_grad()
{
	auto &impl = checked(impl_);
	std::fill(impl.grad.begin(), impl.grad.end(), 0.0f);
}

Tensor Tensor::detach() const
{
	const auto &impl = checked(impl_);
	return detail::make_leaf(impl.shape, impl.data, false);
}

void backward(const Tensor &output, std::span<const float> seed)
{
	using detail::TensorImpl;
	TensorImpl &root = checked(output.impl());
	if (seed.size() != root.data.size())
		throw DimensionError("backward seed length does not match output " + shape_string(root.shape));
	if (!root.requires_grad)
		throw UsageError("backward on a tensor that does not depend on any tensor requiring grad");

	// Build the tape: every interior node reachable through grad-requiring edges.
	std::vector<TensorImpl*> tape;
	std::unordered_set<TensorImpl*> seen;
	std::vector<TensorImpl*> stack { &root };
	seen.insert(&root);
	while (!stack.empty())
	{
		TensorImpl *t = stack.back();
		stack.pop_back();
		if (!t->node)
			continue;
		tape.push_back(t);
		for (const auto &in : t->node->inputs)
			if (in && in->requires_grad && seen.insert(in.get()).second)
				stack.push_back(in.get());
	}
	std::sort(tape.begin(), tape.end(), [](const TensorImpl *a, const TensorImpl *b)
	{
		return a->sequence > b->sequence;
	});

	std::unordered_map<TensorImpl*, std::vector<float>> interior;
	if (root.node)
		interior[&root].assign(seed.begin(), seed.end());
	else
	{
		if (root.grad.size() != root.data.size())
			root.grad.assign(root.data.size(), 0.0f);
		detail::add_into(root.grad.data(), seed);
		return;
	}

	for (TensorImpl *t : tape)
	{
		auto it = interior.find(t);
		if (it == interior.end())
			continue;
		std::vector<float> grad_out = std::move(it->second);
		interior.erase(it);
		detail::GradSink sink(t->node->inputs, interior);
		t->node->backward(t->data, grad_out, sink);
	}
}

void backward(const Tensor &loss)
{
	if (loss.numel() != 1)
		throw UsageError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
	const float one = 1.0f;
	backward(loss, std::span<const float>(&one, 1));
}

bool grad_enabled() noexcept
{
	return grad_mode;
}

NoGradGuard::NoGradGuard() noexcept :
		previous_(grad_mode)
{
	grad_mode = false;
}

NoGradGuard::~NoGradGuard()
{
	grad_mode = previous_;
}

} // namespace drmc
