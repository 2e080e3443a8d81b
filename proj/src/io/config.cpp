#include "../common/format.hpp"

#include <drmc/errors.hpp>
#include <drmc/io.hpp>

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace drmc::io
{

namespace
{

std::string join(const std::string &path, const std::string &key)
{
	return path.empty() ? key : path + "." + key;
}

[[noreturn]] void fail(const YAML::Node &node, const std::string &path, const std::string &message)
{
	std::string where;
	if (!node.Mark().is_null())
		where = " (line " + std::to_string(node.Mark().line + 1) + ")";
	throw ConfigError(path + ": " + message + where);
}

void check_keys(const YAML::Node &map, const std::string &path, std::initializer_list<std::string_view> allowed)
{
	if (!map.IsMap())
		fail(map, path.empty() ? "<document>" : path, "expected a mapping");
	for (const auto &kv : map)
	{
		const std::string key = kv.first.Scalar();
		if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
		{
			std::string names;
			for (std::string_view a : allowed)
				names += (names.empty() ? "" : ", ") + std::string(a);
			fail(kv.first, join(path, key), "unknown key; allowed: " + names);
		}
	}
}

const std::string& scalar(const YAML::Node &n, const std::string &path, const char *expected)
{
	if (!n.IsScalar())
		fail(n, path, std::string("expected ") + expected);
	return n.Scalar();
}

void read_double(const YAML::Node &map, const std::string &path, const char *key, double &dst)
{
	const YAML::Node n = map[key];
	if (!n)
		return;
	const std::string &s = scalar(n, join(path, key), "a number");
	double v = 0.0;
	const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
	if (r.ec != std::errc() || r.ptr != s.data() + s.size())
		fail(n, join(path, key), "expected a number, got \"" + s + "\"");
	dst = v;
}

template<class T>
void integer_value(const YAML::Node &n, const std::string &path, T &dst)
{
	const char *expected = std::is_signed_v<T> ? "an integer" : "a non-negative integer";
	const std::string &s = scalar(n, path, expected);
	T v { };
	const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
	if (r.ec != std::errc() || r.ptr != s.data() + s.size())
		fail(n, path, std::string("expected ") + expected + ", got \"" + s + "\"");
	dst = v;
}

template<class T>
void read_integer(const YAML::Node &map, const std::string &path, const char *key, T &dst)
{
	if (const YAML::Node n = map[key])
		integer_value(n, join(path, key), dst);
}

void read_bool(const YAML::Node &map, const std::string &path, const char *key, bool &dst)
{
	const YAML::Node n = map[key];
	if (!n)
		return;
	const std::string &s = scalar(n, join(path, key), "true or false");
	if (s == "true")
		dst = true;
	else if (s == "false")
		dst = false;
	else
		fail(n, join(path, key), "expected true or false, got \"" + s + "\"");
}

void read_string(const YAML::Node &map, const std::string &path, const char *key, std::string &dst)
{
	const YAML::Node n = map[key];
	if (n)
		dst = scalar(n, join(path, key), "a string");
}

void parse_center(const YAML::Node &node, const std::string &path, synth::CenterSpec &c)
{
	check_keys(node, path, { "id", "drf", "psf_sigma", "spacing_scale", "count_scale", "intensity_gain", "intensity_offset", "phantom", "lesions", "unknown" });
	read_integer(node, path, "id", c.id);
	read_double(node, path, "drf", c.drf);
	read_double(node, path, "psf_sigma", c.psf_sigma);
	read_double(node, path, "spacing_scale", c.spacing_scale);
	read_double(node, path, "count_scale", c.count_scale);
	read_double(node, path, "intensity_gain", c.intensity_gain);
	read_double(node, path, "intensity_offset", c.intensity_offset);
	read_integer(node, path, "lesions", c.lesions);
	read_bool(node, path, "unknown", c.unknown);
	std::string phantom = c.phantom == synth::PhantomKind::brain ? "brain" : "body";
	read_string(node, path, "phantom", phantom);
	if (phantom == "body")
		c.phantom = synth::PhantomKind::body;
	else if (phantom == "brain")
		c.phantom = synth::PhantomKind::brain;
	else
		fail(node["phantom"], join(path, "phantom"), "unknown phantom \"" + phantom + "\"; allowed: body, brain");
	try
	{
		synth::validate(c);
	} catch (const DomainError &e)
	{
		fail(node, path, e.what());
	}
}

void parse_data(const YAML::Node &node, DataConfig &d)
{
	const std::string path = "data";
	check_keys(node, path, { "shape", "train_per_center", "test_per_center", "ellipsoids", "seed", "centers" });
	if (const YAML::Node shape = node["shape"])
	{
		if (!shape.IsSequence() || shape.size() != 3)
			fail(shape, "data.shape", "expected a list of 3 extents");
		for (std::size_t a = 0; a < 3; a++)
		{
			integer_value(shape[a], "data.shape[" + std::to_string(a) + "]", d.dataset.shape[a]);
			if (d.dataset.shape[a] < 16)
				fail(shape, "data.shape", "extents must be at least 16");
		}
	}
	read_integer(node, path, "train_per_center", d.dataset.train_per_center);
	read_integer(node, path, "test_per_center", d.dataset.test_per_center);
	read_integer(node, path, "ellipsoids", d.dataset.ellipsoids);
	read_integer(node, path, "seed", d.dataset.seed);
	if (const YAML::Node centers = node["centers"])
	{
		if (!centers.IsSequence() || centers.size() == 0)
			fail(centers, "data.centers", "expected a non-empty list of centers");
		d.centers.clear();
		std::set<int> ids;
		for (std::size_t k = 0; k < centers.size(); k++)
		{
			const std::string p = "data.centers[" + std::to_string(k) + "]";
			synth::CenterSpec c;
			c.id = static_cast<int>(k + 1);
			parse_center(centers[k], p, c);
			if (!ids.insert(c.id).second)
				fail(centers[k], p, "duplicate center id " + std::to_string(c.id));
			d.centers.push_back(c);
		}
	}
}

void parse_model(const YAML::Node &node, model::ModelConfig &m)
{
	const std::string path = "model";
	check_keys(node, path, { "channels", "experts", "blocks", "router_hidden", "gate" });
	read_integer(node, path, "channels", m.channels);
	read_integer(node, path, "experts", m.experts);
	read_integer(node, path, "blocks", m.blocks);
	read_integer(node, path, "router_hidden", m.router_hidden);
	if (const YAML::Node g = node["gate"])
	{
		try
		{
			m.gate = model::parse_gate(scalar(g, "model.gate", "a gate name"));
		} catch (const ConfigError &e)
		{
			fail(g, "model.gate", e.what());
		}
	}
	try
	{
		model::validate(m);
	} catch (const ConfigError &e)
	{
		fail(node, path, e.what());
	}
}

void parse_train(const YAML::Node &node, train::TrainConfig &t)
{
	const std::string path = "train";
	check_keys(node, path, { "lr", "epochs", "patch_size", "eval_stride", "patches_per_center", "batch_per_center", "beta1", "beta2", "adam_eps", "charbonnier_eps",
			"seed", "checkpoint_every" });
	read_double(node, path, "lr", t.lr);
	read_integer(node, path, "epochs", t.epochs);
	read_integer(node, path, "patch_size", t.patch_size);
	read_integer(node, path, "eval_stride", t.eval_stride);
	read_integer(node, path, "patches_per_center", t.patches_per_center);
	read_integer(node, path, "batch_per_center", t.batch_per_center);
	read_double(node, path, "beta1", t.beta1);
	read_double(node, path, "beta2", t.beta2);
	read_double(node, path, "adam_eps", t.adam_eps);
	read_double(node, path, "charbonnier_eps", t.charbonnier_eps);
	read_integer(node, path, "seed", t.seed);
	read_integer(node, path, "checkpoint_every", t.checkpoint_every);
	try
	{
		train::validate(t);
	} catch (const ConfigError &e)
	{
		fail(node, path, e.what());
	}
}

void parse_analysis(const YAML::Node &node, AnalysisConfig &a)
{
	const std::string path = "analysis";
	check_keys(node, path, { "lambda", "n_batches", "batch_size", "seed", "groups" });
	read_double(node, path, "lambda", a.lambda);
	read_integer(node, path, "n_batches", a.n_batches);
	read_integer(node, path, "batch_size", a.batch_size);
	read_integer(node, path, "seed", a.seed);
	if (!(a.lambda > 0.0))
		fail(node["lambda"], "analysis.lambda", "must be positive");
	if (a.n_batches == 0)
		fail(node["n_batches"], "analysis.n_batches", "must be positive");
	if (a.batch_size == 0)
		fail(node["batch_size"], "analysis.batch_size", "must be positive");
	if (const YAML::Node groups = node["groups"])
	{
		if (!groups.IsSequence())
			fail(groups, "analysis.groups", "expected a list such as [\"0.att\", \"2.ffn\"]");
		a.groups.clear();
		for (std::size_t k = 0; k < groups.size(); k++)
		{
			const std::string p = "analysis.groups[" + std::to_string(k) + "]";
			try
			{
				a.groups.push_back(parse_group(scalar(groups[k], p, "a group name")));
			} catch (const ConfigError &e)
			{
				fail(groups[k], p, e.what());
			}
		}
	}
}

} // namespace

GroupSpec parse_group(const std::string &text)
{
	const auto dot = text.find('.');
	GroupSpec g;
	if (dot != std::string::npos)
	{
		const auto r = std::from_chars(text.data(), text.data() + dot, g.block);
		const std::string bank = text.substr(dot + 1);
		if (r.ec == std::errc() && r.ptr == text.data() + dot && dot > 0 && (bank == "att" || bank == "ffn"))
		{
			g.bank = bank == "att" ? model::BankKind::attention : model::BankKind::ffn;
			return g;
		}
	}
	throw ConfigError("bad parameter group \"" + text + "\"; expected <block>.att or <block>.ffn");
}

std::string group_name(const GroupSpec &group)
{
	return std::to_string(group.block) + "." + std::string(model::bank_name(group.bank));
}

RunConfig parse_config(const std::string &text)
{
	YAML::Node doc;
	try
	{
		doc = YAML::Load(text);
	} catch (const YAML::Exception &e)
	{
		throw ConfigError("config: " + e.msg + " (line " + std::to_string(e.mark.line + 1) + ")");
	}
	RunConfig c;
	if (doc.IsNull())
		return c;
	check_keys(doc, "", { "data", "model", "train", "analysis", "output" });
	if (doc["data"])
		parse_data(doc["data"], c.data);
	if (doc["model"])
		parse_model(doc["model"], c.model);
	if (doc["train"])
		parse_train(doc["train"], c.train);
	if (doc["analysis"])
		parse_analysis(doc["analysis"], c.analysis);
	read_string(doc, "", "output", c.output);
	for (const GroupSpec &g : c.analysis.groups)
		if (g.block >= c.model.blocks)
			throw ConfigError("analysis.groups: block " + std::to_string(g.block) + " out of range for " + std::to_string(c.model.blocks) + " blocks");
	return c;
}

RunConfig load_config(const std::filesystem::path &path)
{
	std::ifstream in(path);
	if (!in)
		throw ConfigError("config: cannot open " + path.string());
	std::ostringstream text;
	text << in.rdbuf();
	try
	{
		return parse_config(text.str());
	} catch (const ConfigError &e)
	{
		throw ConfigError(path.string() + ": " + e.what());
	}
}

std::string emit_config(const RunConfig &c)
{
	using detail::format_double;
	YAML::Emitter out;
	out << YAML::BeginMap;
	out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
	out << YAML::Key << "shape" << YAML::Value << YAML::Flow << YAML::BeginSeq;
	for (std::size_t e : c.data.dataset.shape)
		out << e;
	out << YAML::EndSeq;
	out << YAML::Key << "train_per_center" << YAML::Value << c.data.dataset.train_per_center;
	out << YAML::Key << "test_per_center" << YAML::Value << c.data.dataset.test_per_center;
	out << YAML::Key << "ellipsoids" << YAML::Value << c.data.dataset.ellipsoids;
	out << YAML::Key << "seed" << YAML::Value << c.data.dataset.seed;
	out << YAML::Key << "centers" << YAML::Value << YAML::BeginSeq;
	for (const synth::CenterSpec &s : c.data.centers)
	{
		out << YAML::BeginMap;
		out << YAML::Key << "id" << YAML::Value << s.id;
		out << YAML::Key << "drf" << YAML::Value << format_double(s.drf);
		out << YAML::Key << "psf_sigma" << YAML::Value << format_double(s.psf_sigma);
		out << YAML::Key << "spacing_scale" << YAML::Value << format_double(s.spacing_scale);
		out << YAML::Key << "count_scale" << YAML::Value << format_double(s.count_scale);
		out << YAML::Key << "intensity_gain" << YAML::Value << format_double(s.intensity_gain);
		out << YAML::Key << "intensity_offset" << YAML::Value << format_double(s.intensity_offset);
		out << YAML::Key << "phantom" << YAML::Value << (s.phantom == synth::PhantomKind::brain ? "brain" : "body");
		out << YAML::Key << "lesions" << YAML::Value << s.lesions;
		out << YAML::Key << "unknown" << YAML::Value << s.unknown;
		out << YAML::EndMap;
	}
	out << YAML::EndSeq << YAML::EndMap;

	out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
	out << YAML::Key << "channels" << YAML::Value << c.model.channels;
	out << YAML::Key << "experts" << YAML::Value << c.model.experts;
	out << YAML::Key << "blocks" << YAML::Value << c.model.blocks;
	out << YAML::Key << "router_hidden" << YAML::Value << c.model.router_hidden;
	out << YAML::Key << "gate" << YAML::Value << std::string(model::gate_name(c.model.gate));
	out << YAML::EndMap;

	const train::TrainConfig &t = c.train;
	out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
	out << YAML::Key << "lr" << YAML::Value << format_double(t.lr);
	out << YAML::Key << "epochs" << YAML::Value << t.epochs;
	out << YAML::Key << "patch_size" << YAML::Value << t.patch_size;
	out << YAML::Key << "eval_stride" << YAML::Value << t.eval_stride;
	out << YAML::Key << "patches_per_center" << YAML::Value << t.patches_per_center;
	out << YAML::Key << "batch_per_center" << YAML::Value << t.batch_per_center;
	out << YAML::Key << "beta1" << YAML::Value << format_double(t.beta1);
	out << YAML::Key << "beta2" << YAML::Value << format_double(t.beta2);
	out << YAML::Key << "adam_eps" << YAML::Value << format_double(t.adam_eps);
	out << YAML::Key << "charbonnier_eps" << YAML::Value << format_double(t.charbonnier_eps);
	out << YAML::Key << "seed" << YAML::Value << t.seed;
	out << YAML::Key << "checkpoint_every" << YAML::Value << t.checkpoint_every;
	out << YAML::EndMap;

	out << YAML::Key << "analysis" << YAML::Value << YAML::BeginMap;
	out << YAML::Key << "lambda" << YAML::Value << format_double(c.analysis.lambda);
	out << YAML::Key << "n_batches" << YAML::Value << c.analysis.n_batches;
	out << YAML::Key << "batch_size" << YAML::Value << c.analysis.batch_size;
	out << YAML::Key << "seed" << YAML::Value << c.analysis.seed;
	out << YAML::Key << "groups" << YAML::Value << YAML::Flow << YAML::BeginSeq;
	for (const GroupSpec &g : c.analysis.groups)
		out << group_name(g);
	out << YAML::EndSeq << YAML::EndMap;

	out << YAML::Key << "output" << YAML::Value << c.output;
	out << YAML::EndMap;
	return std::string(out.c_str()) + "\n";
}

} // namespace drmc::io
