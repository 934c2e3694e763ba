#include "eatseg/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "eatseg/errors.hpp"
#include "eatseg/kernels.hpp"

namespace eatseg {
namespace {

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;
constexpr char kMagic[8] = {'E', 'A', 'T', 'S', 'E', 'G', 'C', 'K'};

int level_width(const SegModelConfig& cfg, int level) { return cfg.base_width << level; }

class ParamStore {
public:
    Parameter* add(std::string name, std::vector<int> dims) {
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        auto p = std::make_unique<Parameter>();
        p->name = std::move(name);
        p->dims = std::move(dims);
        p->value.assign(n, 0.f);
        p->grad.assign(n, 0.f);
        params_.push_back(std::move(p));
        return params_.back().get();
    }
    Buffer* add_buffer(std::string name, std::size_t n, float fill) {
        auto b = std::make_unique<Buffer>();
        b->name = std::move(name);
        b->value.assign(n, fill);
        buffers_.push_back(std::move(b));
        return buffers_.back().get();
    }
    const std::vector<std::unique_ptr<Parameter>>& params() const { return params_; }
    const std::vector<std::unique_ptr<Buffer>>& buffers() const { return buffers_; }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::vector<std::unique_ptr<Buffer>> buffers_;
};

std::span<const float> cspan(const Parameter* p) { return p ? std::span<const float>(p->value) : std::span<const float>{}; }
std::span<float> gspan(Parameter* p) { return p ? std::span<float>(p->grad) : std::span<float>{}; }

// 3x3 conv -> (batch norm) -> ReLU
struct ConvUnit {
    int cout = 0;
    Parameter* w = nullptr;
    Parameter* b = nullptr;
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    Buffer* running_mean = nullptr;
    Buffer* running_var = nullptr;

    Tensor x, xhat, y;
    std::vector<float> inv_std;

    ConvUnit(ParamStore& store, const std::string& name, int cin, int cout_, bool bn) : cout(cout_) {
        w = store.add(name + ".conv.weight", {cout, cin, 3, 3});
        if (bn) {
            gamma = store.add(name + ".bn.weight", {cout});
            beta = store.add(name + ".bn.bias", {cout});
            running_mean = store.add_buffer(name + ".bn.running_mean", cout, 0.f);
            running_var = store.add_buffer(name + ".bn.running_var", cout, 1.f);
        } else {
            b = store.add(name + ".conv.bias", {cout});
        }
    }

    Tensor eval(const Tensor& in) const {
        Tensor z;
        kernels::conv2d_forward(in, w->value, cspan(b), cout, 3, z);
        if (gamma) {
            Tensor o;
            kernels::batchnorm_forward_eval(z, gamma->value, beta->value, running_mean->value, running_var->value,
                                            kBnEps, o);
            z = std::move(o);
        }
        kernels::relu_inplace(z);
        return z;
    }

    Tensor train(const Tensor& in) {
        x = in;
        Tensor z;
        kernels::conv2d_forward(in, w->value, cspan(b), cout, 3, z);
        if (gamma) {
            std::vector<float> mean, var;
            kernels::batchnorm_forward_train(z, gamma->value, beta->value, kBnEps, y, xhat, inv_std, mean, var);
            for (int c = 0; c < cout; ++c) {
                running_mean->value[c] = (1.f - kBnMomentum) * running_mean->value[c] + kBnMomentum * mean[c];
                running_var->value[c] = (1.f - kBnMomentum) * running_var->value[c] + kBnMomentum * var[c];
            }
        } else {
            y = std::move(z);
        }
        kernels::relu_inplace(y);
        return y;
    }

    Tensor backward(Tensor dy, bool need_dx) {
        kernels::relu_backward_inplace(y, dy);
        Tensor dz;
        if (gamma) {
            kernels::batchnorm_backward(xhat, inv_std, gamma->value, dy, dz, gamma->grad, beta->grad);
        } else {
            dz = std::move(dy);
        }
        Tensor dx;
        kernels::conv2d_backward(x, w->value, dz, 3, need_dx ? &dx : nullptr, w->grad, gspan(b));
        return dx;
    }

    void release() { x = xhat = y = Tensor(); }
};

struct DoubleConv {
    ConvUnit first, second;
    DoubleConv(ParamStore& store, const std::string& name, int cin, int cout, bool bn)
        : first(store, name + ".0", cin, cout, bn), second(store, name + ".1", cout, cout, bn) {}
    Tensor eval(const Tensor& in) const { return second.eval(first.eval(in)); }
    Tensor train(const Tensor& in) { return second.train(first.train(in)); }
    Tensor backward(Tensor dy, bool need_dx) { return first.backward(second.backward(std::move(dy), true), need_dx); }
    void release() {
        first.release();
        second.release();
    }
};

struct UpConv {
    int cout = 0;
    Parameter* w = nullptr;
    Parameter* b = nullptr;
    Tensor x;

    UpConv(ParamStore& store, const std::string& name, int cin, int cout_) : cout(cout_) {
        w = store.add(name + ".weight", {cin, cout, 2, 2});
        b = store.add(name + ".bias", {cout});
    }
    Tensor eval(const Tensor& in) const {
        Tensor y;
        kernels::upconv2x2_forward(in, w->value, b->value, cout, y);
        return y;
    }
    Tensor train(const Tensor& in) {
        x = in;
        return eval(in);
    }
    Tensor backward(const Tensor& dy) {
        Tensor dx;
        kernels::upconv2x2_backward(x, w->value, dy, dx, w->grad, b->grad);
        return dx;
    }
};

float fan_in_of(const Parameter& p) {
    if (p.dims.size() != 4) return 0.f;
    // conv: (cout, cin, k, k); transposed conv: (cin, cout, k, k) uses dims[1] * k * k like PyTorch.
    return static_cast<float>(p.dims[1] * p.dims[2] * p.dims[3]);
}

}  // namespace

struct SegModel::Impl {
    SegModelConfig cfg;
    std::uint64_t seed = 0;
    ParamStore store;
    std::vector<DoubleConv> enc;
    std::vector<UpConv> ups;
    std::vector<DoubleConv> dec;
    std::unique_ptr<DoubleConv> bottleneck;
    Parameter* head_w = nullptr;
    Parameter* head_b = nullptr;

    std::vector<std::vector<std::uint32_t>> pool_idx;
    std::vector<Shape4> pool_in;
    std::vector<int> skip_channels;
    Tensor head_in, prob;
    bool has_cache = false;

    Impl(const SegModelConfig& c, std::uint64_t s) : cfg(c), seed(s) {
        const bool bn = cfg.norm == NormKind::batch;
        int cin = cfg.in_channels;
        enc.reserve(cfg.depth);
        for (int l = 0; l < cfg.depth; ++l) {
            enc.emplace_back(store, "enc" + std::to_string(l), cin, level_width(cfg, l), bn);
            cin = level_width(cfg, l);
        }
        bottleneck = std::make_unique<DoubleConv>(store, "bottleneck", cin, level_width(cfg, cfg.depth), bn);
        ups.reserve(cfg.depth);
        dec.reserve(cfg.depth);
        for (int l = cfg.depth - 1; l >= 0; --l) {
            ups.emplace_back(store, "up" + std::to_string(l), level_width(cfg, l + 1), level_width(cfg, l));
            dec.emplace_back(store, "dec" + std::to_string(l), 2 * level_width(cfg, l), level_width(cfg, l), bn);
        }
        // ups/dec are stored deepest-first; index i corresponds to level depth-1-i.
        head_w = store.add("head.weight", {cfg.out_channels, level_width(cfg, 0), 1, 1});
        head_b = store.add("head.bias", {cfg.out_channels});
        pool_idx.resize(cfg.depth);
        pool_in.resize(cfg.depth);
        skip_channels.resize(cfg.depth);
        initialize();
    }

    void initialize() {
        std::mt19937_64 rng(seed);
        // Batch-norm affine parameters start at identity; everything else is
        // uniform in +-1/sqrt(fan_in), with biases sharing the owning weight's fan-in.
        float last_fan_in = 1.f;
        for (const auto& p : store.params()) {
            const bool is_bn = p->name.find(".bn.") != std::string::npos;
            if (is_bn) {
                const bool is_gamma = p->name.ends_with(".weight");
                std::fill(p->value.begin(), p->value.end(), is_gamma ? 1.f : 0.f);
                continue;
            }
            if (p->dims.size() == 4) last_fan_in = fan_in_of(*p);
            const float bound = 1.f / std::sqrt(last_fan_in);
            std::uniform_real_distribution<float> dist(-bound, bound);
            for (float& v : p->value) v = dist(rng);
        }
    }

    void check_input(const Tensor& batch) const {
        const Shape4 s = batch.shape();
        require(s.n >= 1 && s.c == cfg.in_channels && s.h == cfg.input_size && s.w == cfg.input_size,
                ErrorKind::invalid_argument,
                "forward: expected (B, " + std::to_string(cfg.in_channels) + ", " + std::to_string(cfg.input_size) +
                    ", " + std::to_string(cfg.input_size) + "), got " + to_string(s));
        for (float v : batch.span())
            require(std::isfinite(v), ErrorKind::invalid_argument, "forward: input contains non-finite values");
    }

    Tensor head_forward(const Tensor& h) const {
        Tensor z;
        kernels::conv2d_forward(h, head_w->value, head_b->value, cfg.out_channels, 1, z);
        kernels::sigmoid_inplace(z);
        return z;
    }

    Tensor eval(const Tensor& batch) const {
        check_input(batch);
        std::vector<Tensor> skips(cfg.depth);
        Tensor h = batch;
        for (int l = 0; l < cfg.depth; ++l) {
            skips[l] = enc[l].eval(h);
            std::vector<std::uint32_t> idx;
            kernels::maxpool2_forward(skips[l], h, idx);
        }
        h = bottleneck->eval(h);
        for (int i = 0; i < cfg.depth; ++i) {
            const int l = cfg.depth - 1 - i;
            Tensor cat;
            kernels::concat_channels(ups[i].eval(h), skips[l], cat);
            skips[l] = Tensor();
            h = dec[i].eval(cat);
        }
        return head_forward(h);
    }

    Tensor train(const Tensor& batch) {
        check_input(batch);
        std::vector<Tensor> skips(cfg.depth);
        Tensor h = batch;
        for (int l = 0; l < cfg.depth; ++l) {
            skips[l] = enc[l].train(h);
            pool_in[l] = skips[l].shape();
            skip_channels[l] = skips[l].c();
            kernels::maxpool2_forward(skips[l], h, pool_idx[l]);
        }
        h = bottleneck->train(h);
        for (int i = 0; i < cfg.depth; ++i) {
            const int l = cfg.depth - 1 - i;
            Tensor cat;
            kernels::concat_channels(ups[i].train(h), skips[l], cat);
            skips[l] = Tensor();
            h = dec[i].train(cat);
        }
        head_in = h;
        prob = head_forward(h);
        has_cache = true;
        return prob;
    }

    void backward(const Tensor& d_prob) {
        require(has_cache, ErrorKind::invalid_argument, "backward called without a preceding forward_train");
        require(d_prob.shape() == prob.shape(), ErrorKind::invalid_argument,
                "backward: gradient shape " + to_string(d_prob.shape()) + " does not match output " +
                    to_string(prob.shape()));
        Tensor dz(prob.shape());
        for (std::size_t i = 0; i < dz.numel(); ++i) {
            const float p = prob.data()[i];
            dz.data()[i] = d_prob.data()[i] * p * (1.f - p);
        }
        Tensor dh;
        kernels::conv2d_backward(head_in, head_w->value, dz, 1, &dh, head_w->grad, head_b->grad);

        std::vector<Tensor> dskips(cfg.depth);
        for (int i = cfg.depth - 1; i >= 0; --i) {
            const int l = cfg.depth - 1 - i;
            Tensor dcat = dec[i].backward(std::move(dh), true);
            Tensor du;
            kernels::split_channels(dcat, dcat.c() - skip_channels[l], du, dskips[l]);
            dh = ups[i].backward(du);
        }
        dh = bottleneck->backward(std::move(dh), true);
        for (int l = cfg.depth - 1; l >= 0; --l) {
            Tensor dpool;
            kernels::maxpool2_backward(dh, pool_idx[l], pool_in[l], dpool);
            float* d = dpool.data();
            const float* s = dskips[l].data();
            for (std::size_t k = 0; k < dpool.numel(); ++k) d[k] += s[k];
            dh = enc[l].backward(std::move(dpool), l > 0);
        }
        release();
    }

    void release() {
        for (auto& b : enc) b.release();
        for (auto& b : dec) b.release();
        bottleneck->release();
        for (auto& u : ups) u.x = Tensor();
        head_in = prob = Tensor();
        has_cache = false;
    }
};

void to_json(nlohmann::json& j, const SegModelConfig& c) {
    j = nlohmann::json{{"in_channels", c.in_channels},
                       {"out_channels", c.out_channels},
                       {"depth", c.depth},
                       {"base_width", c.base_width},
                       {"input_size", c.input_size},
                       {"norm", c.norm == NormKind::batch ? "batch" : "none"},
                       {"target_param_count", c.target_param_count},
                       {"param_tolerance", c.param_tolerance}};
}

void from_json(const nlohmann::json& j, SegModelConfig& c) {
    const SegModelConfig d;
    c.in_channels = j.value("in_channels", d.in_channels);
    c.out_channels = j.value("out_channels", d.out_channels);
    c.depth = j.value("depth", d.depth);
    c.base_width = j.value("base_width", d.base_width);
    c.input_size = j.value("input_size", d.input_size);
    const std::string norm = j.value("norm", std::string("batch"));
    require(norm == "batch" || norm == "none", ErrorKind::parse, "model.norm: expected \"batch\" or \"none\"");
    c.norm = norm == "batch" ? NormKind::batch : NormKind::none;
    c.target_param_count = j.value("target_param_count", d.target_param_count);
    c.param_tolerance = j.value("param_tolerance", d.param_tolerance);
}

std::int64_t count_parameters(const SegModelConfig& cfg) {
    const bool bn = cfg.norm == NormKind::batch;
    auto unit = [bn](std::int64_t cin, std::int64_t cout) { return cin * cout * 9 + (bn ? 2 * cout : cout); };
    auto dbl = [&](std::int64_t cin, std::int64_t cout) { return unit(cin, cout) + unit(cout, cout); };
    std::int64_t total = 0;
    std::int64_t cin = cfg.in_channels;
    for (int l = 0; l < cfg.depth; ++l) {
        total += dbl(cin, level_width(cfg, l));
        cin = level_width(cfg, l);
    }
    total += dbl(cin, level_width(cfg, cfg.depth));
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const std::int64_t wl = level_width(cfg, l);
        total += static_cast<std::int64_t>(level_width(cfg, l + 1)) * wl * 4 + wl;
        total += dbl(2 * wl, wl);
    }
    total += static_cast<std::int64_t>(level_width(cfg, 0)) * cfg.out_channels + cfg.out_channels;
    return total;
}

void validate(const SegModelConfig& cfg) {
    require(cfg.in_channels == 2, ErrorKind::configuration,
            "model.in_channels must be 2 (CT channel + depth channel), got " + std::to_string(cfg.in_channels));
    require(cfg.out_channels == 1, ErrorKind::configuration,
            "model.out_channels must be 1, got " + std::to_string(cfg.out_channels));
    require(cfg.depth >= 1 && cfg.depth <= 8, ErrorKind::configuration, "model.depth must be in [1, 8]");
    require(cfg.base_width >= 1, ErrorKind::configuration, "model.base_width must be positive");
    require(cfg.input_size > 0 && cfg.input_size % (1 << cfg.depth) == 0, ErrorKind::configuration,
            "model.input_size " + std::to_string(cfg.input_size) + " must be a positive multiple of 2^depth");
    require(cfg.param_tolerance >= 0.0, ErrorKind::configuration, "model.param_tolerance must be >= 0");
    if (cfg.target_param_count > 0) {
        const std::int64_t n = count_parameters(cfg);
        const double lo = static_cast<double>(cfg.target_param_count) * (1.0 - cfg.param_tolerance);
        const double hi = static_cast<double>(cfg.target_param_count) * (1.0 + cfg.param_tolerance);
        require(static_cast<double>(n) >= lo && static_cast<double>(n) <= hi, ErrorKind::configuration,
                "model parameter count " + std::to_string(n) + " is outside the budget [" +
                    std::to_string(static_cast<std::int64_t>(lo)) + ", " +
                    std::to_string(static_cast<std::int64_t>(hi)) + "]");
    }
}

SegModel SegModel::build(const SegModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    return SegModel(std::make_unique<Impl>(cfg, seed));
}

SegModel::SegModel(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
SegModel::SegModel(SegModel&&) noexcept = default;
SegModel& SegModel::operator=(SegModel&&) noexcept = default;
SegModel::~SegModel() = default;

const SegModelConfig& SegModel::config() const { return impl_->cfg; }
std::uint64_t SegModel::seed() const { return impl_->seed; }

std::int64_t SegModel::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : impl_->store.params()) n += static_cast<std::int64_t>(p->value.size());
    return n;
}

Tensor SegModel::forward(const Tensor& batch) const { return impl_->eval(batch); }
Tensor SegModel::forward_train(const Tensor& batch) { return impl_->train(batch); }
void SegModel::backward(const Tensor& d_prob) { impl_->backward(d_prob); }

void SegModel::zero_grad() {
    for (const auto& p : impl_->store.params()) std::fill(p->grad.begin(), p->grad.end(), 0.f);
}

std::vector<Parameter*> SegModel::parameters() {
    std::vector<Parameter*> out;
    for (const auto& p : impl_->store.params()) out.push_back(p.get());
    return out;
}
std::vector<const Parameter*> SegModel::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& p : impl_->store.params()) out.push_back(p.get());
    return out;
}
std::vector<Buffer*> SegModel::buffers() {
    std::vector<Buffer*> out;
    for (const auto& b : impl_->store.buffers()) out.push_back(b.get());
    return out;
}
std::vector<const Buffer*> SegModel::buffers() const {
    std::vector<const Buffer*> out;
    for (const auto& b : impl_->store.buffers()) out.push_back(b.get());
    return out;
}

ModelState SegModel::snapshot() const {
    ModelState s;
    for (const auto& p : impl_->store.params()) s.values.push_back(p->value);
    for (const auto& b : impl_->store.buffers()) s.values.push_back(b->value);
    return s;
}

void SegModel::restore(const ModelState& state) {
    const auto& ps = impl_->store.params();
    const auto& bs = impl_->store.buffers();
    require(state.values.size() == ps.size() + bs.size(), ErrorKind::invalid_argument,
            "restore: state does not match model layout");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        require(state.values[i].size() == ps[i]->value.size(), ErrorKind::invalid_argument,
                "restore: size mismatch for " + ps[i]->name);
        ps[i]->value = state.values[i];
    }
    for (std::size_t i = 0; i < bs.size(); ++i) {
        require(state.values[ps.size() + i].size() == bs[i]->value.size(), ErrorKind::invalid_argument,
                "restore: size mismatch for " + bs[i]->name);
        bs[i]->value = state.values[ps.size() + i];
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

template <typename T>
T swap_bytes(T v) {
    if constexpr (sizeof(T) == 4) return static_cast<T>(__builtin_bswap32(static_cast<std::uint32_t>(v)));
    else return static_cast<T>(__builtin_bswap64(static_cast<std::uint64_t>(v)));
}

template <typename T>
void write_le(std::ostream& os, T v) {
    if constexpr (std::endian::native == std::endian::big) v = swap_bytes(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if constexpr (std::endian::native == std::endian::big) v = swap_bytes(v);
    return v;
}

struct RawCheckpoint {
    nlohmann::json header;
    std::vector<char> payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_payload) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::io, "cannot open checkpoint " + path.string());
    char magic[8] = {};
    is.read(magic, 8);
    require(is && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::format,
            "checkpoint " + path.string() + ": bad magic, not an eatseg checkpoint");
    const auto version = read_le<std::uint32_t>(is);
    require(static_cast<bool>(is), ErrorKind::format, "checkpoint " + path.string() + ": truncated header");
    require(version == kCheckpointVersion, ErrorKind::format,
            "checkpoint " + path.string() + ": unsupported format version " + std::to_string(version) +
                " (expected " + std::to_string(kCheckpointVersion) + ")");
    const auto header_len = read_le<std::uint64_t>(is);
    require(is && header_len < (std::uint64_t{1} << 32), ErrorKind::format,
            "checkpoint " + path.string() + ": corrupt header length");
    std::string text(header_len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(header_len));
    require(static_cast<bool>(is), ErrorKind::format, "checkpoint " + path.string() + ": truncated header");
    RawCheckpoint raw;
    try {
        raw.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, "checkpoint " + path.string() + ": header is not valid JSON: " + e.what());
    }
    require(raw.header.value("format_version", 0u) == kCheckpointVersion, ErrorKind::format,
            "checkpoint " + path.string() + ": header format_version missing or mismatched");
    if (with_payload) raw.payload.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    return raw;
}

CheckpointInfo info_from_header(const nlohmann::json& h, const std::filesystem::path& path) {
    try {
        CheckpointInfo info;
        info.epoch = h.at("epoch").get<int>();
        info.val_loss = h.at("val_loss").get<double>();
        info.seed = h.at("seed").get<std::uint64_t>();
        info.config = h.at("config").get<SegModelConfig>();
        return info;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, "checkpoint " + path.string() + ": incomplete metadata: " + e.what());
    }
}

std::string first_config_mismatch(const SegModelConfig& a, const SegModelConfig& b) {
    const nlohmann::json ja = a, jb = b;
    for (const auto& [key, val] : ja.items())
        if (!jb.contains(key) || jb.at(key) != val) return key;
    return {};
}

}  // namespace

void save_checkpoint(const SegModel& model, int epoch, double val_loss, const std::filesystem::path& path) {
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const Parameter* p : model.parameters()) {
        tensors.push_back({{"name", p->name}, {"kind", "param"}, {"dims", p->dims}, {"offset", offset},
                           {"count", p->value.size()}});
        offset += p->value.size();
    }
    for (const Buffer* b : model.buffers()) {
        tensors.push_back({{"name", b->name}, {"kind", "buffer"}, {"dims", {b->value.size()}}, {"offset", offset},
                           {"count", b->value.size()}});
        offset += b->value.size();
    }
    const nlohmann::json header{{"format_version", kCheckpointVersion},
                                {"config", model.config()},
                                {"epoch", epoch},
                                {"val_loss", val_loss},
                                {"seed", model.seed()},
                                {"parameter_count", model.parameter_count()},
                                {"tensors", tensors}};
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(os), ErrorKind::io, "cannot write checkpoint " + tmp.string());
        os.write(kMagic, 8);
        write_le<std::uint32_t>(os, kCheckpointVersion);
        write_le<std::uint64_t>(os, text.size());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        auto dump = [&os](const std::vector<float>& v) {
            for (float f : v) write_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(f));
        };
        for (const Parameter* p : model.parameters()) dump(p->value);
        for (const Buffer* b : model.buffers()) dump(b->value);
        require(static_cast<bool>(os), ErrorKind::io, "short write to checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
    return info_from_header(read_raw(path, false).header, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    RawCheckpoint raw = read_raw(path, true);
    CheckpointInfo info = info_from_header(raw.header, path);
    SegModel model = SegModel::build(info.config, info.seed);

    std::map<std::string, std::vector<float>*> slots;
    for (Parameter* p : model.parameters()) slots[p->name] = &p->value;
    for (Buffer* b : model.buffers()) slots[b->name] = &b->value;

    const auto& table = raw.header.at("tensors");
    require(table.size() == slots.size(), ErrorKind::format,
            "checkpoint " + path.string() + ": tensor table has " + std::to_string(table.size()) +
                " entries, model expects " + std::to_string(slots.size()));
    for (const auto& t : table) {
        const auto name = t.at("name").get<std::string>();
        const auto off = t.at("offset").get<std::uint64_t>();
        const auto count = t.at("count").get<std::uint64_t>();
        auto it = slots.find(name);
        require(it != slots.end(), ErrorKind::format, "checkpoint " + path.string() + ": unknown tensor " + name);
        require(it->second->size() == count, ErrorKind::format,
                "checkpoint " + path.string() + ": tensor " + name + " has " + std::to_string(count) +
                    " values, model expects " + std::to_string(it->second->size()));
        require((off + count) * 4 <= raw.payload.size(), ErrorKind::format,
                "checkpoint " + path.string() + ": payload truncated at tensor " + name);
        for (std::uint64_t i = 0; i < count; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, raw.payload.data() + (off + i) * 4, 4);
            if constexpr (std::endian::native == std::endian::big) bits = swap_bytes(bits);
            (*it->second)[i] = std::bit_cast<float>(bits);
        }
    }
    return LoadedCheckpoint{std::move(model), info};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const SegModelConfig& expected) {
    const CheckpointInfo info = read_checkpoint_info(path);
    const std::string field = first_config_mismatch(expected, info.config);
    require(field.empty(), ErrorKind::configuration,
            "checkpoint " + path.string() + ": config field '" + field + "' does not match the requested model");
    return load_checkpoint(path);
}

}  // namespace eatseg
