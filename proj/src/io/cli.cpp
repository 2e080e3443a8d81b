#include "../common/format.hpp"

#include <drmc/cli.hpp>
#include <drmc/errors.hpp>
#include <drmc/io.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace drmc::cli
{

namespace fs = std::filesystem;
using detail::format_double;

namespace
{

struct Options
{
	std::string config;
	std::string output;
	std::string run;
	std::string data;
	std::string checkpoint;
	std::string split = "test";
	std::string form = "first_order";
	std::string gate;
	std::size_t experts = 0;
	std::size_t epochs = 0;
	double logit_scale = 1.0;
};

struct Context
{
	io::RunConfig config;
	fs::path output;
	fs::path run_dir;
	fs::path data_dir;
	std::ostream &out;
};

Context make_context(const Options &o, const std::string &default_run, std::ostream &out)
{
	Context c { o.config.empty() ? io::RunConfig { } : io::load_config(o.config), { }, { }, { }, out };
	if (!o.output.empty())
		c.config.output = o.output;
	if (o.experts)
		c.config.model.experts = o.experts;
	if (!o.gate.empty())
		c.config.model.gate = model::parse_gate(o.gate);
	if (o.epochs)
		c.config.train.epochs = o.epochs;
	model::validate(c.config.model);
	c.output = c.config.output;
	c.run_dir = c.output / (o.run.empty() ? default_run : o.run);
	c.data_dir = o.data.empty() ? c.output / "data" : fs::path(o.data);
	return c;
}

void write_resolved(const Context &c)
{
	io::write_text(c.run_dir / "config.resolved.yaml", io::emit_config(c.config));
}

template<class F>
void write_with(const fs::path &path, F &&writer)
{
	std::ostringstream s;
	writer(s);
	io::write_text(path, s.str());
}

fs::path checkpoint_path(const Options &o, const Context &c)
{
	return o.checkpoint.empty() ? c.output / "train" / "model.drmc" : fs::path(o.checkpoint);
}

std::vector<const synth::SampleRecord*> records_of(const io::StoredDataset &data, const std::string &split)
{
	std::vector<const synth::SampleRecord*> out;
	for (const auto &r : data.records)
		if (split == "all" || synth::split_name(r.split) == split)
			out.push_back(&r);
	if (split != "all" && split != "train" && split != "test")
		throw ConfigError("--split must be train, test, or all");
	return out;
}

std::vector<const synth::SampleRecord*> known_records(const io::StoredDataset &data)
{
	std::vector<const synth::SampleRecord*> out;
	for (const auto &r : data.records)
		if (!data.is_unknown(r.center_id))
			out.push_back(&r);
	return out;
}

// Trains one network on the known centers; writes history, checkpoints, and
// the final model into dir.
model::DRMCNetwork train_into(const io::RunConfig &config, const io::StoredDataset &data, const fs::path &dir)
{
	model::DRMCNetwork net(config.model);
	net.init_parameters(config.train.seed);
	const std::size_t every = config.train.checkpoint_every;
	const train::History history = train::train(net, known_records(data), config.train, [&](std::size_t epoch, const model::DRMCNetwork &n)
	{
		if (every && epoch % every == 0)
			n.save(dir / ("checkpoint_epoch" + std::to_string(epoch) + ".drmc"));
	});
	write_with(dir / "history.csv", [&](std::ostream &s)
	{	history.write_csv(s);});
	net.save(dir / "model.drmc");
	return net;
}

int gen_data(const Options &o, std::ostream &out)
{
	Context c = make_context(o, "data", out);
	c.run_dir = c.data_dir;
	const auto records = synth::build_dataset(c.config.data.centers, c.config.data.dataset);
	io::write_dataset(c.data_dir, records, c.config.data.centers);
	write_resolved(c);
	out << "gen-data: " << records.size() << " records for " << c.config.data.centers.size() << " centers in " << c.data_dir.string() << "\n";
	return 0;
}

int train_cmd(const Options &o, std::ostream &out)
{
	Context c = make_context(o, "train", out);
	const io::StoredDataset data = io::read_dataset(c.data_dir);
	fs::create_directories(c.run_dir);
	write_resolved(c);
	train_into(c.config, data, c.run_dir);
	out << "train: wrote " << (c.run_dir / "model.drmc").string() << "\n";
	return 0;
}

int eval_cmd(const Options &o, std::ostream &out)
{
	Context c = make_context(o, "eval", out);
	const io::StoredDataset data = io::read_dataset(c.data_dir);
	const model::DRMCNetwork net = model::DRMCNetwork::load(checkpoint_path(o, c));
	const auto records = records_of(data, o.split);
	const auto metrics = train::evaluate(net, records, c.config.train);
	write_resolved(c);
	write_with(c.run_dir / "metrics.csv", [&](std::ostream &s)
	{	io::write_metrics_csv(s, metrics, data);});
	out << "eval: " << metrics.size() << " records -> " << (c.run_dir / "metrics.csv").string() << "\n";
	return 0;
}

void print_heatmap(std::ostream &out, const analysis::InterferenceMatrix &m)
{
	out << "group " << m.parameter_group << " (rows: loss of center, columns: step of center)\n      ";
	for (int id : m.center_ids)
		out << std::setw(9) << id;
	out << "\n";
	for (std::size_t i = 0; i < m.values.size(); i++)
	{
		out << std::setw(6) << m.center_ids[i];
		for (double v : m.values[i])
			out << std::setw(9) << std::fixed << std::setprecision(3) << v;
		out << "\n";
	}
	out.unsetf(std::ios::floatfield);
}

int interference_cmd(const Options &o, std::ostream &out)
{
	Context c = make_context(o, "interference", out);
	const io::StoredDataset data = io::read_dataset(c.data_dir);
	model::DRMCNetwork net = model::DRMCNetwork::load(checkpoint_path(o, c));
	const io::AnalysisConfig &a = c.config.analysis;
	analysis::DeltaForm form;
	if (o.form == "first_order")
		form = analysis::DeltaForm::first_order;
	else if (o.form == "exact")
		form = analysis::DeltaForm::exact;
	else
		throw ConfigError("--form must be first_order or exact");

	const std::vector<int> centers = data.known_centers();
	std::vector<std::vector<analysis::NetworkObjective::Batch>> batches(centers.size());
	for (std::size_t k = 0; k < centers.size(); k++)
	{
		const auto pool = train::select(data.records, synth::Split::train, { centers[k] });
		const auto pairs = train::sample_patches(pool, a.n_batches * a.batch_size, c.config.train.patch_size, a.seed * 1000003ull + static_cast<std::uint64_t>(centers[k]));
		for (std::size_t b = 0; b < a.n_batches; b++)
		{
			analysis::NetworkObjective::Batch batch;
			for (std::size_t e = 0; e < a.batch_size; e++)
			{
				batch.low.push_back(pairs[b * a.batch_size + e].first);
				batch.full.push_back(pairs[b * a.batch_size + e].second);
			}
			batches[k].push_back(std::move(batch));
		}
	}

	std::vector<io::GroupSpec> groups = a.groups;
	if (groups.empty())
		for (std::size_t b = 0; b < net.config().blocks; b++)
			for (model::BankKind kind : { model::BankKind::attention, model::BankKind::ffn })
				groups.push_back( { b, kind });
	write_resolved(c);
	for (const io::GroupSpec &g : groups)
	{
		analysis::NetworkObjective objective(net, batches, net.bank_parameters(g.block, g.bank), static_cast<float>(c.config.train.charbonnier_eps));
		analysis::InterferenceMatrix m = analysis::interference(objective, a.lambda, form);
		m.center_ids = centers;
		m.parameter_group = io::group_name(g);
		const std::string name = "interference_block" + std::to_string(g.block) + "_" + std::string(model::bank_name(g.bank)) + ".csv";
		write_with(c.run_dir / name, [&](std::ostream &s)
		{	io::write_interference_csv(s, m);});
		print_heatmap(out, m);
	}
	return 0;
}

int route_hist_cmd(const Options &o, std::ostream &out)
{
	Context c = make_context(o, "route-hist", out);
	const io::StoredDataset data = io::read_dataset(c.data_dir);
	const model::DRMCNetwork net = model::DRMCNetwork::load(checkpoint_path(o, c));
	const auto records = records_of(data, o.split);
	const analysis::RoutingHistogram h = analysis::routing_histogram(net, records, net.config().gate, o.logit_scale);
	write_resolved(c);
	write_with(c.run_dir / "route_hist.csv", [&](std::ostream &s)
	{	io::write_histogram_csv(s, h);});
	out << "route-hist: " << records.size() << " records, " << h.distinct_top_experts() << " distinct top-1 experts in the most varied bank\n";
	return 0;
}

int ablate_cmd(const Options &o, std::ostream &out)
{
	Context c = make_context(o, "ablate", out);
	const io::StoredDataset data = io::read_dataset(c.data_dir);
	std::vector<int> centers;
	for (const auto &r : data.records)
		if (r.split == synth::Split::test && std::find(centers.begin(), centers.end(), r.center_id) == centers.end())
			centers.push_back(r.center_id);
	const auto tests = train::select(data.records, synth::Split::test);
	write_resolved(c);

	std::ostringstream csv;
	csv << "variant";
	for (int id : centers)
		csv << ",psnr_c" << id;
	csv << ",known_avg\n";
	const model::GateKind variants[] = { model::GateKind::no_h, model::GateKind::softmax, model::GateKind::top2, model::GateKind::relu };
	for (model::GateKind gate : variants)
	{
		io::RunConfig config = c.config;
		config.model.gate = gate;
		const fs::path dir = c.run_dir / std::string(model::gate_name(gate));
		fs::create_directories(dir);
		const model::DRMCNetwork net = train_into(config, data, dir);
		const auto metrics = train::evaluate(net, tests, config.train);
		csv << model::gate_name(gate);
		double known = 0.0;
		std::size_t n_known = 0;
		for (int id : centers)
		{
			double s = 0.0;
			std::size_t n = 0;
			for (const auto &m : metrics)
				if (m.center_id == id)
				{
					s += m.psnr;
					n++;
				}
			csv << ',' << format_double(s / n);
			if (!data.is_unknown(id))
			{
				known += s / n;
				n_known++;
			}
		}
		csv << ',' << format_double(known / n_known) << '\n';
		out << "ablate: " << model::gate_name(gate) << " known-center PSNR " << format_double(known / n_known) << " dB\n";
	}
	io::write_text(c.run_dir / "ablation.csv", csv.str());
	return 0;
}

} // namespace

int dispatch(int argc, const char *const *argv, std::ostream &out, std::ostream &err)
{
	CLI::App app { "Dynamic routing mixture-of-experts denoiser for multi-center low-dose volumes", "drmc" };
	app.require_subcommand(1);
	Options o;

	auto common = [&](CLI::App *sub)
	{
		sub->add_option("-c,--config", o.config, "YAML run configuration (defaults when omitted)");
		sub->add_option("-o,--out", o.output, "Output directory (overrides the config)");
		sub->add_option("--run", o.run, "Run directory name under the output directory");
		sub->add_option("--data", o.data, "Dataset directory (default <out>/data)");
	};
	auto *gen = app.add_subcommand("gen-data", "Generate the synthetic multi-center dataset");
	common(gen);
	auto *tr = app.add_subcommand("train", "Train on the known centers");
	common(tr);
	tr->add_option("--experts", o.experts, "Override model.experts");
	tr->add_option("--gate", o.gate, "Override model.gate (relu, softmax, top2, no_h)");
	tr->add_option("--epochs", o.epochs, "Override train.epochs");
	auto *ev = app.add_subcommand("eval", "Per-record PSNR and lesion bias");
	common(ev);
	ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default <out>/train/model.drmc)");
	ev->add_option("--split", o.split, "train, test, or all");
	auto *in = app.add_subcommand("interference", "Center interference matrices per parameter group");
	common(in);
	in->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default <out>/train/model.drmc)");
	in->add_option("--form", o.form, "first_order or exact");
	auto *rh = app.add_subcommand("route-hist", "Top-1 expert histogram per layer, bank, and center");
	common(rh);
	rh->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default <out>/train/model.drmc)");
	rh->add_option("--split", o.split, "train, test, or all");
	rh->add_option("--logit-scale", o.logit_scale, "Positive factor applied to router logits");
	auto *ab = app.add_subcommand("ablate", "Train and compare the four routing variants");
	common(ab);
	ab->add_option("--epochs", o.epochs, "Override train.epochs");

	try
	{
		app.parse(argc, argv);
	} catch (const CLI::CallForHelp &e)
	{
		out << app.help();
		return 0;
	} catch (const CLI::ParseError &e)
	{
		err << "drmc: " << e.what() << "\n" << app.help();
		return 2;
	}

	try
	{
		if (gen->parsed())
			return gen_data(o, out);
		if (tr->parsed())
			return train_cmd(o, out);
		if (ev->parsed())
			return eval_cmd(o, out);
		if (in->parsed())
			return interference_cmd(o, out);
		if (rh->parsed())
			return route_hist_cmd(o, out);
		return ablate_cmd(o, out);
	} catch (const ConfigError &e)
	{
		err << "drmc: config error: " << e.what() << "\n";
		return 2;
	} catch (const std::exception &e)
	{
		err << "drmc: " << e.what() << "\n";
		return 1;
	}
}

} // namespace drmc::cli
