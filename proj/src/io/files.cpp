#include "../common/byte_io.hpp"
#include "../common/format.hpp"

#include <drmc/errors.hpp>
#include <drmc/io.hpp>

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace drmc::io
{

namespace fs = std::filesystem;
using detail::format_double;

namespace
{

constexpr char kVolumeMagic[4] = { 'V', 'O', 'L', '1' };

std::vector<std::string> split_csv(const std::string &line)
{
	std::vector<std::string> out;
	std::string cell;
	std::istringstream in(line);
	while (std::getline(in, cell, ','))
		out.push_back(cell);
	return out;
}

template<class T>
T parse_number(const std::string &s, const std::string &where)
{
	T v { };
	const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
	if (r.ec != std::errc() || r.ptr != s.data() + s.size())
		throw FormatError(where + ": bad number \"" + s + "\"");
	return v;
}

std::string record_stem(const synth::SampleRecord &r)
{
	return std::string(synth::split_name(r.split)) + "_" + std::to_string(r.index);
}

std::string center_dir(int id)
{
	return "center_" + std::to_string(id);
}

std::string sidecar(const synth::SampleRecord &r, const synth::CenterSpec &c)
{
	YAML::Emitter out;
	out << YAML::BeginMap;
	out << YAML::Key << "center_id" << YAML::Value << r.center_id;
	out << YAML::Key << "split" << YAML::Value << synth::split_name(r.split);
	out << YAML::Key << "index" << YAML::Value << r.index;
	out << YAML::Key << "seed" << YAML::Value << r.seed;
	out << YAML::Key << "unknown_center" << YAML::Value << c.unknown;
	out << YAML::Key << "drf" << YAML::Value << format_double(c.drf);
	out << YAML::Key << "psf_sigma" << YAML::Value << format_double(c.psf_sigma);
	out << YAML::Key << "spacing_scale" << YAML::Value << format_double(c.spacing_scale);
	out << YAML::Key << "count_scale" << YAML::Value << format_double(c.count_scale);
	out << YAML::Key << "intensity_gain" << YAML::Value << format_double(c.intensity_gain);
	out << YAML::Key << "intensity_offset" << YAML::Value << format_double(c.intensity_offset);
	out << YAML::Key << "ellipsoids" << YAML::Value << YAML::BeginSeq;
	for (const synth::Ellipsoid &e : r.ellipsoids)
	{
		out << YAML::Flow << YAML::BeginMap;
		out << YAML::Key << "center" << YAML::Value << YAML::Flow << YAML::BeginSeq;
		for (double v : e.center)
			out << format_double(v);
		out << YAML::EndSeq;
		out << YAML::Key << "axes" << YAML::Value << YAML::Flow << YAML::BeginSeq;
		for (double v : e.axes)
			out << format_double(v);
		out << YAML::EndSeq;
		out << YAML::Key << "intensity" << YAML::Value << format_double(e.intensity);
		out << YAML::Key << "lesion" << YAML::Value << e.lesion;
		out << YAML::EndMap;
	}
	out << YAML::EndSeq << YAML::EndMap;
	return std::string(out.c_str()) + "\n";
}

} // namespace

void write_text(const fs::path &path, const std::string &text)
{
	if (path.has_parent_path())
		fs::create_directories(path.parent_path());
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	out << text;
	if (!out)
		throw Error("cannot write " + path.string());
}

void write_volume(std::ostream &out, const Tensor &v)
{
	if (v.ndim() == 0 || v.ndim() > 255)
		throw DimensionError("write_volume: unsupported rank " + std::to_string(v.ndim()));
	detail::put_bytes(out, kVolumeMagic, 4);
	detail::put_u8(out, 0);
	detail::put_u8(out, static_cast<std::uint8_t>(v.ndim()));
	for (std::size_t d : v.shape())
		detail::put_u32(out, static_cast<std::uint32_t>(d));
	detail::put_f32(out, v.data());
	if (!out)
		throw Error("write_volume: write failed");
}

void write_volume(const fs::path &path, const Tensor &v)
{
	if (path.has_parent_path())
		fs::create_directories(path.parent_path());
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw Error("write_volume: cannot open " + path.string());
	write_volume(out, v);
}

Tensor read_volume(std::istream &in)
{
	detail::ByteReader r(in, "volume");
	char magic[4];
	r.bytes(magic, 4);
	if (!std::equal(magic, magic + 4, kVolumeMagic))
		throw FormatError("volume: bad magic \"" + std::string(magic, 4) + "\" at byte 0 (expected \"VOL1\")");
	const std::uint8_t dtype = r.u8();
	if (dtype != 0)
		throw FormatError("volume: unsupported dtype tag " + std::to_string(dtype) + " at byte 4 (only 0 = f32)");
	const std::uint8_t ndim = r.u8();
	if (ndim == 0)
		throw FormatError("volume: rank 0 at byte 5");
	Shape shape;
	for (std::uint8_t a = 0; a < ndim; a++)
		shape.push_back(r.u32());
	std::vector<float> data(shape_numel(shape));
	r.f32(data);
	if (!r.at_end())
		r.fail("trailing data after payload");
	return Tensor::from_data(std::move(shape), std::move(data));
}

Tensor read_volume(const fs::path &path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw Error("volume: cannot open " + path.string());
	try
	{
		return read_volume(in);
	} catch (const FormatError &e)
	{
		throw FormatError(path.string() + ": " + e.what());
	}
}

// ---------------------------------------------------------------------------

bool StoredDataset::is_unknown(int center_id) const
{
	return std::find(unknown_centers.begin(), unknown_centers.end(), center_id) != unknown_centers.end();
}

std::vector<int> StoredDataset::known_centers() const
{
	std::vector<int> out;
	for (const auto &r : records)
		if (!is_unknown(r.center_id) && std::find(out.begin(), out.end(), r.center_id) == out.end())
			out.push_back(r.center_id);
	return out;
}

void write_dataset(const fs::path &dir, const std::vector<synth::SampleRecord> &records, const std::vector<synth::CenterSpec> &centers)
{
	fs::create_directories(dir);
	std::ostringstream index;
	index << "center_id,split,index,unknown,seed,low,full,mask\n";
	for (const synth::SampleRecord &r : records)
	{
		const auto c = std::find_if(centers.begin(), centers.end(), [&](const synth::CenterSpec &s)
		{	return s.id == r.center_id;});
		if (c == centers.end())
			throw UsageError("write_dataset: record of unlisted center " + std::to_string(r.center_id));
		const std::string stem = center_dir(r.center_id) + "/" + record_stem(r);
		std::vector<float> mask(r.lesion_mask.begin(), r.lesion_mask.end());
		write_volume(dir / (stem + "_low.vol"), r.low);
		write_volume(dir / (stem + "_full.vol"), r.full);
		write_volume(dir / (stem + "_mask.vol"), Tensor::from_data(r.full.shape(), std::move(mask)));
		write_text(dir / (stem + ".yaml"), sidecar(r, *c));
		index << r.center_id << ',' << synth::split_name(r.split) << ',' << r.index << ',' << (c->unknown ? 1 : 0) << ',' << r.seed << ',' << stem << "_low.vol,"
				<< stem << "_full.vol," << stem << "_mask.vol\n";
	}
	write_text(dir / "index.csv", index.str());
}

StoredDataset read_dataset(const fs::path &dir)
{
	std::ifstream in(dir / "index.csv");
	if (!in)
		throw Error("dataset: cannot open " + (dir / "index.csv").string() + " (run gen-data first)");
	StoredDataset out;
	std::string line;
	std::getline(in, line);
	if (line != "center_id,split,index,unknown,seed,low,full,mask")
		throw FormatError("dataset: unexpected index.csv header");
	std::size_t row = 1;
	while (std::getline(in, line))
	{
		row++;
		if (line.empty())
			continue;
		const std::string where = "index.csv line " + std::to_string(row);
		const auto cells = split_csv(line);
		if (cells.size() != 8)
			throw FormatError(where + ": expected 8 fields");
		synth::SampleRecord r;
		r.center_id = parse_number<int>(cells[0], where);
		if (cells[1] == "train")
			r.split = synth::Split::train;
		else if (cells[1] == "test")
			r.split = synth::Split::test;
		else
			throw FormatError(where + ": bad split \"" + cells[1] + "\"");
		r.index = parse_number<std::size_t>(cells[2], where);
		if (parse_number<int>(cells[3], where) && !out.is_unknown(r.center_id))
			out.unknown_centers.push_back(r.center_id);
		r.seed = parse_number<std::uint64_t>(cells[4], where);
		r.low = read_volume(dir / cells[5]);
		r.full = read_volume(dir / cells[6]);
		const Tensor mask = read_volume(dir / cells[7]);
		if (r.low.shape() != r.full.shape() || mask.shape() != r.full.shape())
			throw FormatError(where + ": low, full, and mask shapes differ");
		for (float m : mask.data())
			r.lesion_mask.push_back(m > 0.5f ? 1 : 0);
		out.records.push_back(std::move(r));
	}
	if (out.records.empty())
		throw FormatError("dataset: index.csv lists no records");
	return out;
}

// ---------------------------------------------------------------------------

void write_metrics_csv(std::ostream &out, const std::vector<train::RecordMetrics> &metrics, const StoredDataset &data)
{
	out << "center_id,split,index,unknown,psnr,input_psnr,b_mean,b_max\n";
	for (const train::RecordMetrics &m : metrics)
	{
		out << m.center_id << ',' << synth::split_name(m.split) << ',' << m.index << ',' << (data.is_unknown(m.center_id) ? 1 : 0) << ',' << format_double(m.psnr) << ','
				<< format_double(m.input_psnr) << ',';
		// Lesion-free records carry a dash, like a table entry with no lesion.
		if (m.bias.has_lesion)
			out << format_double(m.bias.b_mean) << ',' << format_double(m.bias.b_max) << '\n';
		else
			out << "-,-\n";
	}
}

void write_interference_csv(std::ostream &out, const analysis::InterferenceMatrix &m)
{
	for (std::size_t j = 0; j < m.center_ids.size(); j++)
		out << (j ? "," : "") << m.center_ids[j];
	out << '\n';
	for (const auto &row : m.values)
	{
		for (std::size_t j = 0; j < row.size(); j++)
			out << (j ? "," : "") << format_double(row[j]);
		out << '\n';
	}
}

void write_histogram_csv(std::ostream &out, const analysis::RoutingHistogram &h)
{
	out << "layer,bank,center,expert,count\n";
	for (const auto &[key, counts] : h.counts)
		for (std::size_t e = 0; e < counts.size(); e++)
			out << std::get<0>(key) << ',' << model::bank_name(std::get<1>(key)) << ',' << std::get<2>(key) << ',' << e << ',' << counts[e] << '\n';
}

} // namespace drmc::io
