#pragma once

#include <drmc/analysis.hpp>
#include <drmc/model.hpp>
#include <drmc/synth.hpp>
#include <drmc/training.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

/// Configuration documents, the VOL1 volume format, dataset directories, and
/// CSV writers.
namespace drmc::io
{

struct DataConfig
{
	std::vector<synth::CenterSpec> centers = synth::default_centers();
	synth::DatasetConfig dataset;

	bool operator==(const DataConfig&) const = default;
};

/// A parameter group for the interference measurement.
struct GroupSpec
{
	std::size_t block = 0;
	model::BankKind bank = model::BankKind::attention;

	bool operator==(const GroupSpec&) const = default;
};

/// "2.att" or "0.ffn"; throws ConfigError otherwise.
GroupSpec parse_group(const std::string &text);
std::string group_name(const GroupSpec &group);

struct AnalysisConfig
{
	double lambda = 1e-4;
	std::size_t n_batches = 20;
	std::size_t batch_size = 1;
	std::uint64_t seed = 7;
	/// Empty: every block, both banks.
	std::vector<GroupSpec> groups;

	bool operator==(const AnalysisConfig&) const = default;
};

struct RunConfig
{
	DataConfig data;
	model::ModelConfig model;
	train::TrainConfig train;
	AnalysisConfig analysis;
	std::string output = "out";

	bool operator==(const RunConfig&) const = default;
};

/// Throws ConfigError naming the key path and line for unknown keys, wrong
/// types, and invalid values. An empty document yields the defaults.
RunConfig parse_config(const std::string &text);
RunConfig load_config(const std::filesystem::path &path);

/// Every field, defaults included; parse_config(emit_config(c)) == c.
std::string emit_config(const RunConfig &config);

// ---------------------------------------------------------------------------
// Volumes: "VOL1", u8 dtype (0 = f32), u8 ndim, ndim x u32 dims, f32 payload,
// all little-endian.

void write_volume(std::ostream &out, const Tensor &v);
void write_volume(const std::filesystem::path &path, const Tensor &v);
/// Throws FormatError with the byte offset on bad magic, dtype, truncation,
/// or trailing data.
Tensor read_volume(std::istream &in);
Tensor read_volume(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Dataset directories: index.csv plus, per record, center_<id>/<split>_<n>_
// {low,full,mask}.vol and a <split>_<n>.yaml metadata sidecar.

struct StoredDataset
{
	std::vector<synth::SampleRecord> records;
	std::vector<int> unknown_centers;

	bool is_unknown(int center_id) const;
	std::vector<int> known_centers() const;
};

void write_dataset(const std::filesystem::path &dir, const std::vector<synth::SampleRecord> &records, const std::vector<synth::CenterSpec> &centers);
StoredDataset read_dataset(const std::filesystem::path &dir);

// ---------------------------------------------------------------------------
// CSV

void write_metrics_csv(std::ostream &out, const std::vector<train::RecordMetrics> &metrics, const StoredDataset &data);
/// Header of center ids, then one row of values per center.
void write_interference_csv(std::ostream &out, const analysis::InterferenceMatrix &m);
void write_histogram_csv(std::ostream &out, const analysis::RoutingHistogram &h);

/// Writes text to a file, throwing Error when the file cannot be written.
void write_text(const std::filesystem::path &path, const std::string &text);

} // namespace drmc::io
