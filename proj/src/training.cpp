#include "gazereg/training.hpp"

#include "gazereg/errors.hpp"
#include "gazereg/rng.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace gazereg::train {

using nn::Tensor;

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (max_epochs < 1) {
        throw ConfigError("max_epochs must be >= 1");
    }
    if (early_stop_patience < 1 || early_stop_patience > max_epochs) {
        throw ConfigError("early_stop_patience must be in [1, max_epochs]");
    }
    if (weight_decay < 0.0) {
        throw ConfigError("weight_decay must be >= 0");
    }
    if (!(smooth_l1_beta > 0.0)) {
        throw ConfigError("smooth_l1_beta must be positive");
    }
}

nn::Tensor<float> samples_to_inputs(const std::vector<PairedSample>& samples) {
    const auto n = static_cast<std::int64_t>(samples.size());
    Tensor<float> x =
        Tensor<float>::uninitialized({n, VelocitySequence::kChannels, VelocitySequence::kSteps});
    const std::size_t per = static_cast<std::size_t>(VelocitySequence::kChannels) *
                            VelocitySequence::kSteps;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& values = samples[static_cast<std::size_t>(i)].input.values;
        if (values.size() != per) {
            throw ShapeError("sample " + samples[static_cast<std::size_t>(i)].id.str() +
                             " has an unexpected velocity length");
        }
        std::copy(values.begin(), values.end(), x.data() + i * static_cast<std::int64_t>(per));
    }
    return x;
}

nn::Tensor<float> samples_to_targets(const std::vector<PairedSample>& samples, int n_targets) {
    const auto n = static_cast<std::int64_t>(samples.size());
    Tensor<float> y({n, n_targets});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& label = samples[static_cast<std::size_t>(i)].label;
        if (label.values.size() != static_cast<std::size_t>(n_targets)) {
            throw ConfigError("label schema of sample " +
                              samples[static_cast<std::size_t>(i)].id.str() +
                              " does not match the model's n_targets");
        }
        for (int j = 0; j < n_targets; ++j) {
            y(i, j) = static_cast<float>(label.values[static_cast<std::size_t>(j)]);
        }
    }
    return y;
}

namespace {

Tensor<float> gather_rows(const Tensor<float>& src, const std::vector<std::size_t>& idx,
                          std::size_t begin, std::size_t end) {
    std::vector<std::int64_t> shape = src.shape();
    shape[0] = static_cast<std::int64_t>(end - begin);
    Tensor<float> out = Tensor<float>::uninitialized(shape);
    const std::int64_t row = src.numel() / src.dim(0);
    for (std::size_t i = begin; i < end; ++i) {
        std::copy_n(src.data() + static_cast<std::int64_t>(idx[i]) * row, row,
                    out.data() + static_cast<std::int64_t>(i - begin) * row);
    }
    return out;
}

Tensor<float> slice_rows(const Tensor<float>& src, std::int64_t begin, std::int64_t end) {
    std::vector<std::int64_t> shape = src.shape();
    shape[0] = end - begin;
    Tensor<float> out = Tensor<float>::uninitialized(shape);
    const std::int64_t row = src.numel() / src.dim(0);
    std::copy_n(src.data() + begin * row, (end - begin) * row, out.data());
    return out;
}

double eval_loss(model::Model<float>& model, const Tensor<float>& x, const Tensor<float>& y,
                 int batch_size, double beta) {
    const std::int64_t n = x.dim(0);
    double total = 0.0;
    for (std::int64_t b0 = 0; b0 < n; b0 += batch_size) {
        const std::int64_t b1 = std::min(n, b0 + batch_size);
        Tensor<float> bx = slice_rows(x, b0, b1);
        Tensor<float> by = slice_rows(y, b0, b1);
        Tensor<float> pred = model::forward(model, bx, nn::Mode::Eval);
        total += nn::smooth_l1(pred, by, beta).loss * static_cast<double>(b1 - b0);
    }
    return total / static_cast<double>(n);
}

struct WeightSnapshot {
    std::vector<nn::TensorStorage<float>> values;
    std::vector<std::vector<float>> running;

    static WeightSnapshot take(model::Model<float>& model) {
        WeightSnapshot snap;
        for (auto* p : model.parameters()) {
            snap.values.push_back(p->value.raw());
        }
        for (auto& bn : model.pre_bn) {
            snap.running.push_back(bn.running_mean);
            snap.running.push_back(bn.running_var);
        }
        snap.running.push_back(model.gap_bn.running_mean);
        snap.running.push_back(model.gap_bn.running_var);
        return snap;
    }

    void restore(model::Model<float>& model) const {
        auto params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i]->value.raw() = values[i];
        }
        std::size_t r = 0;
        for (auto& bn : model.pre_bn) {
            bn.running_mean = running[r++];
            bn.running_var = running[r++];
        }
        model.gap_bn.running_mean = running[r++];
        model.gap_bn.running_var = running[r++];
    }
};

} // namespace

TrainHistory fit_tensors(model::Model<float>& model, const Tensor<float>& train_x,
                         const Tensor<float>& train_y, const Tensor<float>& val_x,
                         const Tensor<float>& val_y, const TrainConfig& config) {
    config.validate();
    if (train_x.dim(0) == 0 || val_x.dim(0) == 0) {
        throw ConfigError("training requires non-empty train and validation sets");
    }
    if (train_y.dim(1) != model.config.n_targets) {
        throw ConfigError("target width does not match the model's n_targets");
    }

    auto shuffle_rng = make_rng(config.seed, RngStream::Shuffle);
    auto params = model.parameters();
    nn::AdamConfig adam;
    adam.lr = config.lr;
    adam.weight_decay = config.weight_decay;

    const std::int64_t n = train_x.dim(0);
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    TrainHistory history;
    double best_val = std::numeric_limits<double>::infinity();
    WeightSnapshot best = WeightSnapshot::take(model);

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        deterministic_shuffle(order, shuffle_rng);

        double train_loss_sum = 0.0;
        int batch_index = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t b1 =
                std::min(order.size(), b0 + static_cast<std::size_t>(config.batch_size));
            Tensor<float> bx = gather_rows(train_x, order, b0, b1);
            Tensor<float> by = gather_rows(train_y, order, b0, b1);

            model::ForwardCache<float> cache;
            Tensor<float> pred = model::forward(model, bx, nn::Mode::Train, &cache);
            auto loss = nn::smooth_l1(pred, by, config.smooth_l1_beta);
            if (!std::isfinite(loss.loss)) {
                throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batch_index));
            }
            model.zero_grad();
            model::backward(model, cache, loss.grad);
            nn::adam_step<float>(params, adam);
            train_loss_sum += loss.loss * static_cast<double>(b1 - b0);
            ++batch_index;
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = train_loss_sum / static_cast<double>(n);
        record.val_loss = eval_loss(model, val_x, val_y, config.batch_size, config.smooth_l1_beta);
        if (!std::isfinite(record.val_loss)) {
            throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        record.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(record);

        if (record.val_loss < best_val) {
            best_val = record.val_loss;
            history.best_epoch = epoch;
            best = WeightSnapshot::take(model);
        } else if (epoch - history.best_epoch >= config.early_stop_patience) {
            history.stopped_early = true;
            break;
        }
    }

    best.restore(model);
    return history;
}

TrainHistory fit(model::Model<float>& model, const DatasetSplit& split, const TrainConfig& config) {
    if (split.train.empty() || split.val.empty()) {
        throw ConfigError("training requires non-empty train and validation splits");
    }
    return fit_tensors(model, samples_to_inputs(split.train),
                       samples_to_targets(split.train, model.config.n_targets),
                       samples_to_inputs(split.val),
                       samples_to_targets(split.val, model.config.n_targets), config);
}

nn::Tensor<float> predict(model::Model<float>& model, const std::vector<PairedSample>& samples,
                          int batch_size) {
    Tensor<float> x = samples_to_inputs(samples);
    const std::int64_t n = x.dim(0);
    Tensor<float> out({std::max<std::int64_t>(n, 1), model.config.n_targets});
    for (std::int64_t b0 = 0; b0 < n; b0 += batch_size) {
        const std::int64_t b1 = std::min(n, b0 + batch_size);
        Tensor<float> pred = model::forward(model, slice_rows(x, b0, b1), nn::Mode::Eval);
        std::copy_n(pred.data(), pred.numel(), out.data() + b0 * model.config.n_targets);
    }
    return out;
}

void save_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "epoch,train_loss,val_loss,seconds\n";
    char buf[64];
    for (const auto& e : history.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.3f\n", e.epoch, e.train_loss, e.val_loss,
                      e.seconds);
        out << buf;
    }
}

// --------------------------------------------------------------------------
// Checkpoint I/O
// --------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'G', 'Z', 'R', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json config_to_json(const model::ModelConfig& c) {
    return nlohmann::json{
        {"n_conv_layers", c.n_conv_layers},
        {"growth_rate", c.growth_rate},
        {"kernel", c.kernel},
        {"stride", c.stride},
        {"input_channels", c.input_channels},
        {"embed_dim", c.embed_dim},
        {"head_hidden", c.head_hidden},
        {"dropout_rate", c.dropout_rate},
        {"n_targets", c.n_targets},
        {"dilation_mode",
         c.dilation_mode == model::DilationMode::ModExponent ? "mod-exponent" : "literal"},
        {"output_bias_init", c.output_bias_init},
    };
}

model::ModelConfig config_from_json(const nlohmann::json& j) {
    model::ModelConfig c;
    c.n_conv_layers = j.at("n_conv_layers").get<int>();
    c.growth_rate = j.at("growth_rate").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.stride = j.at("stride").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.n_targets = j.at("n_targets").get<int>();
    c.output_bias_init = j.at("output_bias_init").get<double>();
    const std::string mode = j.at("dilation_mode").get<std::string>();
    if (mode == "mod-exponent") {
        c.dilation_mode = model::DilationMode::ModExponent;
    } else if (mode == "literal") {
        c.dilation_mode = model::DilationMode::Literal;
    } else {
        throw CheckpointError("unknown dilation_mode '" + mode + "'");
    }
    return c;
}

std::uint64_t fnv1a_bytes(const char* data, std::size_t size) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename T>
void append_pod(std::string& buf, const T& value) {
    buf.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

// Bounds-checked sequential reader over the loaded payload.
struct PayloadReader {
    const std::string& buf;
    std::size_t pos = 0;
    const std::filesystem::path& path;

    template <typename T>
    T pod() {
        if (pos + sizeof(T) > buf.size()) {
            throw CheckpointError("truncated checkpoint " + path.string());
        }
        T value;
        std::memcpy(&value, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return value;
    }

    std::string bytes(std::size_t n) {
        if (pos + n > buf.size()) {
            throw CheckpointError("truncated checkpoint " + path.string());
        }
        std::string out = buf.substr(pos, n);
        pos += n;
        return out;
    }

    void raw_into(void* dst, std::size_t n) {
        if (pos + n > buf.size()) {
            throw CheckpointError("truncated checkpoint " + path.string());
        }
        std::memcpy(dst, buf.data() + pos, n);
        pos += n;
    }
};

// Every serializable array with a stable name: parameter values plus the
// per-BN running statistics (and optionally Adam moments).
struct NamedArray {
    std::string name;
    std::vector<std::int64_t> dims;
    const float* data = nullptr;
    std::int64_t numel = 0;
};

std::vector<NamedArray> collect_arrays(model::Model<float>& m, bool include_moments) {
    std::vector<NamedArray> arrays;
    for (auto* p : m.parameters()) {
        arrays.push_back({p->name, p->value.shape(), p->value.data(), p->value.numel()});
    }
    auto add_running = [&arrays](nn::BatchNormState<float>& bn, const std::string& prefix) {
        const auto c = static_cast<std::int64_t>(bn.running_mean.size());
        arrays.push_back({prefix + ".running_mean", {c}, bn.running_mean.data(), c});
        arrays.push_back({prefix + ".running_var", {c}, bn.running_var.data(), c});
    };
    for (std::size_t i = 0; i < m.pre_bn.size(); ++i) {
        add_running(m.pre_bn[i], "bn" + std::to_string(i + 2));
    }
    add_running(m.gap_bn, "bn_gap");
    if (include_moments) {
        for (auto* p : m.parameters()) {
            arrays.push_back({p->name + "#m", p->m.shape(), p->m.data(), p->m.numel()});
            arrays.push_back({p->name + "#v", p->v.shape(), p->v.data(), p->v.numel()});
        }
    }
    return arrays;
}

std::map<std::string, std::pair<float*, std::int64_t>> mutable_array_map(model::Model<float>& m) {
    std::map<std::string, std::pair<float*, std::int64_t>> map;
    for (auto* p : m.parameters()) {
        map[p->name] = {p->value.data(), p->value.numel()};
        map[p->name + "#m"] = {p->m.data(), p->m.numel()};
        map[p->name + "#v"] = {p->v.data(), p->v.numel()};
    }
    auto add_running = [&map](nn::BatchNormState<float>& bn, const std::string& prefix) {
        const auto c = static_cast<std::int64_t>(bn.running_mean.size());
        map[prefix + ".running_mean"] = {bn.running_mean.data(), c};
        map[prefix + ".running_var"] = {bn.running_var.data(), c};
    };
    for (std::size_t i = 0; i < m.pre_bn.size(); ++i) {
        add_running(m.pre_bn[i], "bn" + std::to_string(i + 2));
    }
    add_running(m.gap_bn, "bn_gap");
    return map;
}

} // namespace

void save_checkpoint(const model::Model<float>& model, const std::filesystem::path& path,
                     bool include_moments) {
    std::string payload;
    const std::string config_json = config_to_json(model.config).dump();
    append_pod(payload, static_cast<std::uint32_t>(config_json.size()));
    payload += config_json;
    append_pod(payload, static_cast<std::uint8_t>(include_moments ? 1 : 0));

    auto& mutable_model = const_cast<model::Model<float>&>(model); // read-only traversal
    const auto arrays = collect_arrays(mutable_model, include_moments);
    append_pod(payload, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        append_pod(payload, static_cast<std::uint16_t>(a.name.size()));
        payload += a.name;
        append_pod(payload, static_cast<std::uint8_t>(a.dims.size()));
        for (auto d : a.dims) {
            append_pod(payload, d);
        }
        payload.append(reinterpret_cast<const char*>(a.data),
                       static_cast<std::size_t>(a.numel) * sizeof(float));
    }
    if (include_moments) {
        for (auto* p : mutable_model.parameters()) {
            append_pod(payload, p->step_count);
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t checksum = fnv1a_bytes(payload.data(), payload.size());
    out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

model::Model<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint " + path.string());
    }
    std::string file(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
    if (file.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
        throw CheckpointError("truncated checkpoint " + path.string());
    }
    if (std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(path.string() + " is not a checkpoint file");
    }
    std::uint32_t version;
    std::memcpy(&version, file.data() + sizeof(kMagic), sizeof(version));
    if (version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    std::uint64_t stored_checksum;
    std::memcpy(&stored_checksum, file.data() + sizeof(kMagic) + sizeof(version),
                sizeof(stored_checksum));
    const std::size_t header = sizeof(kMagic) + sizeof(version) + sizeof(stored_checksum);
    const std::string payload = file.substr(header);
    if (fnv1a_bytes(payload.data(), payload.size()) != stored_checksum) {
        throw CheckpointError("checksum mismatch, checkpoint " + path.string() + " is corrupted");
    }

    PayloadReader reader{payload, 0, path};
    const auto json_len = reader.pod<std::uint32_t>();
    model::ModelConfig config;
    try {
        config = config_from_json(nlohmann::json::parse(reader.bytes(json_len)));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("bad checkpoint config: " + std::string(e.what()));
    }

    model::Model<float> model = model::build_model<float>(config, 0);
    const auto has_moments = reader.pod<std::uint8_t>();
    const auto n_arrays = reader.pod<std::uint32_t>();
    auto map = mutable_array_map(model);
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        const auto name_len = reader.pod<std::uint16_t>();
        const std::string name = reader.bytes(name_len);
        const auto ndim = reader.pod<std::uint8_t>();
        std::int64_t numel = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            numel *= reader.pod<std::int64_t>();
        }
        auto it = map.find(name);
        if (it == map.end()) {
            throw CheckpointError("checkpoint array '" + name + "' does not exist in this model");
        }
        if (it->second.second != numel) {
            throw CheckpointError("checkpoint array '" + name + "' has mismatched shape");
        }
        reader.raw_into(it->second.first, static_cast<std::size_t>(numel) * sizeof(float));
    }
    if (has_moments) {
        for (auto* p : model.parameters()) {
            p->step_count = reader.pod<std::int64_t>();
        }
    }
    return model;
}

} // namespace gazereg::train
