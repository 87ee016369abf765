// SPDX-License-Identifier: Apache-2.0
#include "dld/data.hpp"

#include <algorithm>
#include <map>

#include "binio.hpp"
#include "dld/errors.hpp"

namespace dld {

void DatasetConfig::validate() const {
    if (vocab_size < 2) throw ContractError("dataset config: vocab_size must be >= 2");
    if (input_dim < 1) throw ContractError("dataset config: input_dim must be >= 1");
    if (min_duration < 2) throw ContractError("dataset config: min_duration must be >= 2 for CTC feasibility");
    if (max_duration < min_duration) throw ContractError("dataset config: duration range empty");
    if (min_tokens < 1) throw ContractError("dataset config: min_tokens must be >= 1");
    if (max_tokens < min_tokens) throw ContractError("dataset config: token range empty");
    if (noise_sigma < 0.0) throw ContractError("dataset config: noise_sigma must be >= 0");
    if (num_train < 1) throw ContractError("dataset config: num_train must be >= 1");
    if (num_test < 0) throw ContractError("dataset config: num_test must be >= 0");
}

std::int64_t Dataset::max_frames() const {
    std::int64_t m = 0;
    for (const auto& s : train) m = std::max(m, s.frames());
    for (const auto& s : test) m = std::max(m, s.frames());
    return m;
}

namespace {

SyntheticSample make_sample(const DatasetConfig& cfg, const Tensor& templates, std::uint64_t id,
                            RngStream stream) {
    SyntheticSample sample;
    sample.sample_id = id;
    const std::int64_t num_tokens = stream.next_int(cfg.min_tokens, cfg.max_tokens);
    std::vector<std::int64_t> durations(static_cast<std::size_t>(num_tokens));
    sample.target.tokens.reserve(static_cast<std::size_t>(num_tokens));
    std::int64_t frames = 0;
    for (std::int64_t i = 0; i < num_tokens; ++i) {
        // tokens are 1-based; 0 is the CTC blank
        sample.target.tokens.push_back(static_cast<std::int32_t>(stream.next_int(1, cfg.vocab_size)));
        durations[static_cast<std::size_t>(i)] = stream.next_int(cfg.min_duration, cfg.max_duration);
        frames += durations[static_cast<std::size_t>(i)];
    }
    sample.features = Tensor::zeros({frames, cfg.input_dim});
    double* out = sample.features.data();
    for (std::int64_t i = 0; i < num_tokens; ++i) {
        const double* tmpl = templates.data() + (sample.target.tokens[static_cast<std::size_t>(i)] - 1) * cfg.input_dim;
        for (std::int64_t f = 0; f < durations[static_cast<std::size_t>(i)]; ++f) {
            for (std::int64_t d = 0; d < cfg.input_dim; ++d)
                *out++ = tmpl[d] + cfg.noise_sigma * stream.next_normal();
        }
    }
    return sample;
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& config) {
    config.validate();
    Dataset ds;
    ds.config = config;
    RngStream template_stream = make_stream(config.seed, "data.templates");
    ds.templates = Tensor::zeros({config.vocab_size, config.input_dim});
    for (std::int64_t i = 0; i < ds.templates.numel(); ++i)
        ds.templates.data()[i] = template_stream.next_normal();
    ds.train.reserve(static_cast<std::size_t>(config.num_train));
    for (std::int64_t j = 0; j < config.num_train; ++j)
        ds.train.push_back(make_sample(config, ds.templates, static_cast<std::uint64_t>(j),
                                       make_stream(config.seed, "data.train", static_cast<std::uint64_t>(j))));
    ds.test.reserve(static_cast<std::size_t>(config.num_test));
    for (std::int64_t j = 0; j < config.num_test; ++j)
        ds.test.push_back(make_sample(config, ds.templates,
                                      static_cast<std::uint64_t>(config.num_train + j),
                                      make_stream(config.seed, "data.test", static_cast<std::uint64_t>(j))));
    return ds;
}

std::vector<Batch> batch_iter(const std::vector<SyntheticSample>& samples, std::int64_t batch_size,
                              std::uint64_t epoch_seed) {
    if (batch_size < 1) throw ContractError("batch_iter: batch_size must be >= 1");
    RngStream stream = make_stream(epoch_seed, "batch.order");
    std::map<std::int64_t, Batch> buckets;  // keyed by frame count
    for (const auto& s : samples) buckets[s.frames()].push_back(&s);
    std::vector<Batch> batches;
    for (auto& [frames, bucket] : buckets) {
        for (std::size_t i = bucket.size(); i > 1; --i)
            std::swap(bucket[i - 1], bucket[static_cast<std::size_t>(stream.next_int(0, static_cast<std::int64_t>(i) - 1))]);
        for (std::size_t start = 0; start < bucket.size(); start += static_cast<std::size_t>(batch_size))
            batches.emplace_back(bucket.begin() + static_cast<std::ptrdiff_t>(start),
                                 bucket.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                      start + static_cast<std::size_t>(batch_size), bucket.size())));
    }
    for (std::size_t i = batches.size(); i > 1; --i)
        std::swap(batches[i - 1], batches[static_cast<std::size_t>(stream.next_int(0, static_cast<std::int64_t>(i) - 1))]);
    return batches;
}

namespace {

constexpr char kDatasetMagic[5] = "DLDS";
constexpr char kTemplateMagic[5] = "DLDT";
constexpr std::uint32_t kDatasetVersion = 1;

void write_sample(std::ostream& os, const SyntheticSample& s, std::int64_t input_dim) {
    binio::write_pod<std::uint64_t>(os, s.sample_id);
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.frames()));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.target.length()));
    for (auto t : s.target.tokens) binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t));
    (void)input_dim;
    binio::write_f64s(os, s.features.values());
}

SyntheticSample read_sample(std::istream& is, std::int64_t input_dim) {
    SyntheticSample s;
    s.sample_id = binio::read_pod<std::uint64_t>(is);
    const auto frames = static_cast<std::int64_t>(binio::read_pod<std::uint32_t>(is));
    const auto len = static_cast<std::int64_t>(binio::read_pod<std::uint32_t>(is));
    s.target.tokens.reserve(static_cast<std::size_t>(len));
    for (std::int64_t i = 0; i < len; ++i)
        s.target.tokens.push_back(static_cast<std::int32_t>(binio::read_pod<std::uint32_t>(is)));
    std::vector<double> values(static_cast<std::size_t>(frames * input_dim));
    binio::read_f64s(is, values);
    s.features = Tensor::from_data({frames, input_dim}, std::move(values));
    return s;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    binio::write_bytes(os, kDatasetMagic, 4);
    binio::write_pod<std::uint32_t>(os, kDatasetVersion);
    const auto& c = dataset.config;
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.vocab_size));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.input_dim));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.min_duration));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.max_duration));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.min_tokens));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.max_tokens));
    binio::write_pod<double>(os, c.noise_sigma);
    binio::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(c.num_train));
    binio::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(c.num_test));
    binio::write_pod<std::uint64_t>(os, c.seed);
    for (const auto& s : dataset.train) write_sample(os, s, c.input_dim);
    for (const auto& s : dataset.test) write_sample(os, s, c.input_dim);
    binio::write_bytes(os, kTemplateMagic, 4);
    binio::write_f64s(os, dataset.templates.values());
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    binio::expect_magic(is, kDatasetMagic, path.string());
    const auto version = binio::read_pod<std::uint32_t>(is);
    if (version != kDatasetVersion)
        throw IoError(path.string() + ": unsupported dataset version " + std::to_string(version));
    Dataset ds;
    auto& c = ds.config;
    c.vocab_size = binio::read_pod<std::uint32_t>(is);
    c.input_dim = binio::read_pod<std::uint32_t>(is);
    c.min_duration = binio::read_pod<std::uint32_t>(is);
    c.max_duration = binio::read_pod<std::uint32_t>(is);
    c.min_tokens = binio::read_pod<std::uint32_t>(is);
    c.max_tokens = binio::read_pod<std::uint32_t>(is);
    c.noise_sigma = binio::read_pod<double>(is);
    c.num_train = static_cast<std::int64_t>(binio::read_pod<std::uint64_t>(is));
    c.num_test = static_cast<std::int64_t>(binio::read_pod<std::uint64_t>(is));
    c.seed = binio::read_pod<std::uint64_t>(is);
    c.validate();
    ds.train.reserve(static_cast<std::size_t>(c.num_train));
    for (std::int64_t i = 0; i < c.num_train; ++i) ds.train.push_back(read_sample(is, c.input_dim));
    ds.test.reserve(static_cast<std::size_t>(c.num_test));
    for (std::int64_t i = 0; i < c.num_test; ++i) ds.test.push_back(read_sample(is, c.input_dim));
    binio::expect_magic(is, kTemplateMagic, path.string());
    std::vector<double> tmpl(static_cast<std::size_t>(c.vocab_size * c.input_dim));
    binio::read_f64s(is, tmpl);
    ds.templates = Tensor::from_data({c.vocab_size, c.input_dim}, std::move(tmpl));
    return ds;
}

}  // namespace dld
