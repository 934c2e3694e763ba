#include "eatseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace eatseg {

void to_json(nlohmann::json& j, const DiceLossConfig& c) { j = {{"smoothing_lambda", c.smoothing_lambda}}; }
void from_json(const nlohmann::json& j, DiceLossConfig& c) { c.smoothing_lambda = j.value("smoothing_lambda", 1.0); }

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"optimizer", c.optimizer},
                       {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
                       {"seed", c.seed},
                       {"fold_count", c.fold_count},
                       {"loss", c.loss}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.optimizer = j.value("optimizer", d.optimizer);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam.beta1 = a.value("beta1", d.adam.beta1);
        c.adam.beta2 = a.value("beta2", d.adam.beta2);
        c.adam.epsilon = a.value("epsilon", d.adam.epsilon);
    }
    c.seed = j.value("seed", d.seed);
    c.fold_count = j.value("fold_count", d.fold_count);
    if (j.contains("loss")) c.loss = j.at("loss").get<DiceLossConfig>();
}

void validate(const TrainConfig& c) {
    require(c.epochs > 0, ErrorKind::configuration, "train.epochs must be positive");
    require(c.batch_size > 0, ErrorKind::configuration, "train.batch_size must be positive");
    require(c.learning_rate > 0, ErrorKind::configuration, "train.learning_rate must be positive");
    require(c.optimizer == "adam", ErrorKind::configuration, "train.optimizer: unsupported \"" + c.optimizer + "\"");
    require(c.adam.beta1 >= 0 && c.adam.beta1 < 1 && c.adam.beta2 >= 0 && c.adam.beta2 < 1 && c.adam.epsilon > 0,
            ErrorKind::configuration, "train.adam: betas must lie in [0, 1) and epsilon be positive");
    require(c.fold_count >= 2, ErrorKind::configuration, "train.fold_count must be at least 2");
    require(c.loss.smoothing_lambda > 0, ErrorKind::configuration, "train.loss.smoothing_lambda must be positive");
}

double batch_dice_loss(const Tensor& prob, const std::vector<const Mask*>& targets, const DiceLossConfig& cfg,
                       Tensor* grad) {
    require(prob.c() == 1 && static_cast<std::size_t>(prob.n()) == targets.size(), ErrorKind::invalid_argument,
            "batch_dice_loss: expected (B, 1, S, S) with B targets, got " + to_string(prob.shape()));
    if (grad) *grad = Tensor(prob.shape());
    const std::size_t plane = prob.plane_size();
    const double scale = 1.0 / prob.n();
    double total = 0;
    for (int b = 0; b < prob.n(); ++b) {
        std::span<const float> p(prob.plane(b, 0), plane);
        std::span<const std::uint8_t> t(targets[b]->px);
        total += grad ? dice_loss_with_grad(p, t, cfg, std::span<float>(grad->plane(b, 0), plane), scale)
                      : dice_loss(p, t, cfg);
    }
    return total * scale;
}

Adam::Adam(double learning_rate, AdamConfig cfg) : lr_(learning_rate), cfg_(cfg) {}

void Adam::step(const std::vector<Parameter*>& params) {
    if (m_.empty()) {
        for (const Parameter* p : params) {
            m_.emplace_back(p->value.size(), 0.f);
            v_.emplace_back(p->value.size(), 0.f);
        }
    }
    require(m_.size() == params.size(), ErrorKind::invalid_argument, "Adam: parameter set changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float step = static_cast<float>(lr_ / bc1);
    const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const float eps = static_cast<float>(cfg_.epsilon);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        float* m = m_[k].data();
        float* v = v_[k].data();
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(p.value.size());
#pragma omp parallel for schedule(static) if (n > 65536)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const float g = p.grad[i];
            m[i] = b1 * m[i] + (1.f - b1) * g;
            v[i] = b2 * v[i] + (1.f - b2) * g * g;
            p.value[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
        }
    }
}

nlohmann::json to_json(const TrainRunRecord& r, bool include_timing) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.epochs) {
        nlohmann::json je{{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"train_augmented", e.train_augmented},
                          {"val_augmented", e.val_augmented}};
        if (include_timing) je["seconds"] = e.seconds;
        epochs.push_back(je);
    }
    nlohmann::json j{{"fold", r.fold},
                     {"best_epoch", r.best_epoch},
                     {"best_val_loss", r.best_val_loss},
                     {"train_patients", r.train_patients},
                     {"val_patients", r.val_patients},
                     {"parameter_count", r.parameter_count},
                     {"epochs", epochs}};
    if (include_timing) j["checkpoint"] = r.checkpoint.string();
    return j;
}

namespace {

std::vector<std::string> patients_of(const std::vector<TrainSample>& samples) {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.patient_id);
    return {ids.begin(), ids.end()};
}

struct Batch {
    Tensor input;
    std::vector<Mask> targets;
    int augmented = 0;
};

Batch assemble(const std::vector<TrainSample>& samples, std::span<const std::size_t> idx, const AugmentPolicy& policy,
               std::uint64_t seed, int epoch) {
    const int size = samples[idx[0]].size();
    Batch b;
    b.input = Tensor(static_cast<int>(idx.size()), 2, size, size);
    b.targets.resize(idx.size());
    std::vector<char> fired(idx.size(), 0);
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(idx.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        const TrainSample& s = samples[idx[k]];
        AugmentRng rng(sample_seed(seed, s.patient_id, s.slice_index, epoch));
        AugmentResult r = augment_sample(s, policy, rng);
        std::copy_n(r.sample.input.data(), r.sample.input.numel(), b.input.plane(static_cast<int>(k), 0));
        b.targets[k] = std::move(r.sample.target);
        fired[k] = r.outcome.any_fired();
    }
    b.augmented = static_cast<int>(std::count(fired.begin(), fired.end(), 1));
    return b;
}

double validation_loss(const SegModel& model, const std::vector<TrainSample>& val, int batch_size,
                       const DiceLossConfig& loss_cfg, int& augmented) {
    const AugmentPolicy off = AugmentPolicy::none();
    double total = 0;
    augmented = 0;
    for (std::size_t start = 0; start < val.size(); start += batch_size) {
        const std::size_t end = std::min(val.size(), start + batch_size);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Batch b = assemble(val, idx, off, 0, 0);
        augmented += b.augmented;
        const Tensor prob = model.forward(b.input);
        std::vector<const Mask*> targets;
        for (const auto& t : b.targets) targets.push_back(&t);
        total += batch_dice_loss(prob, targets, loss_cfg) * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(val.size());
}

void write_csv_header(const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write " + p.string());
    os << "epoch,train_loss,val_loss,seconds\n";
}

void append_csv(const std::filesystem::path& p, const EpochLog& e) {
    std::ofstream os(p, std::ios::app);
    require(static_cast<bool>(os), ErrorKind::io, "cannot append to " + p.string());
    os.precision(10);
    os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.seconds << '\n';
}

}  // namespace

std::vector<TrainSample> select_patients(const std::vector<TrainSample>& samples,
                                         const std::vector<std::string>& patients) {
    const std::set<std::string> want(patients.begin(), patients.end());
    std::vector<TrainSample> out;
    for (const auto& s : samples)
        if (want.contains(s.patient_id)) out.push_back(s);
    return out;
}

TrainResult train_fold(const std::vector<TrainSample>& train, const std::vector<TrainSample>& val,
                       const SegModelConfig& model_cfg, const TrainConfig& train_cfg, const AugmentPolicy& policy,
                       const TrainOptions& options) {
    validate(train_cfg);
    validate(policy);
    require(!train.empty(), ErrorKind::invalid_argument, "train_fold: no training samples");
    require(!val.empty(), ErrorKind::invalid_argument, "train_fold: no validation samples");

    TrainRunRecord rec;
    rec.fold = options.fold;
    rec.train_patients = patients_of(train);
    rec.val_patients = patients_of(val);
    std::vector<std::string> overlap;
    std::set_intersection(rec.train_patients.begin(), rec.train_patients.end(), rec.val_patients.begin(),
                          rec.val_patients.end(), std::back_inserter(overlap));
    require(overlap.empty(), ErrorKind::data_leak,
            "train_fold: patient " + (overlap.empty() ? std::string() : overlap.front()) +
                " appears in both training and validation sets");
    for (const auto* set : {&train, &val})
        for (const auto& s : *set)
            require(s.size() == model_cfg.input_size && s.input.c() == model_cfg.in_channels,
                    ErrorKind::configuration,
                    "train_fold: sample size " + std::to_string(s.size()) + " does not match model input_size " +
                        std::to_string(model_cfg.input_size));

    SegModel model = SegModel::build(model_cfg, train_cfg.seed);
    rec.parameter_count = model.parameter_count();
    Adam adam(train_cfg.learning_rate, train_cfg.adam);

    std::optional<std::filesystem::path> csv;
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        csv = *options.out_dir / "epochs.csv";
        write_csv_header(*csv);
    }

    std::vector<std::size_t> order(train.size());
    ModelState best_state = model.snapshot();
    rec.best_val_loss = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(train_cfg.seed ^ (0x5851f42d4c957f2dULL * static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

        EpochLog log;
        log.epoch = epoch;
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + train_cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            Batch b = assemble(train, idx, policy, train_cfg.seed, epoch);
            log.train_augmented += b.augmented;
            model.zero_grad();
            const Tensor prob = model.forward_train(b.input);
            std::vector<const Mask*> targets;
            for (const auto& t : b.targets) targets.push_back(&t);
            Tensor grad;
            const double loss = batch_dice_loss(prob, targets, train_cfg.loss, &grad);
            require(std::isfinite(loss), ErrorKind::divergence,
                    "training diverged: non-finite loss at epoch " + std::to_string(epoch));
            loss_sum += loss * static_cast<double>(idx.size());
            model.backward(grad);
            adam.step(model.parameters());
        }
        log.train_loss = loss_sum / static_cast<double>(train.size());
        log.val_loss = validation_loss(model, val, train_cfg.batch_size, train_cfg.loss, log.val_augmented);
        require(std::isfinite(log.val_loss), ErrorKind::divergence,
                "training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (log.val_loss < rec.best_val_loss) {
            rec.best_val_loss = log.val_loss;
            rec.best_epoch = epoch;
            best_state = model.snapshot();
            if (options.out_dir) {
                rec.checkpoint = *options.out_dir / "best.ckpt";
                save_checkpoint(model, epoch, log.val_loss, rec.checkpoint);
            }
        }
        if (options.out_dir) {
            save_checkpoint(model, epoch, log.val_loss, *options.out_dir / "last.ckpt");
            append_csv(*csv, log);
        }
        rec.epochs.push_back(log);
        if (options.on_epoch) options.on_epoch(log);
    }

    if (options.out_dir) {
        std::ofstream os(*options.out_dir / "record.json", std::ios::trunc);
        require(static_cast<bool>(os), ErrorKind::io, "cannot write record.json");
        os << to_json(rec).dump(2) << '\n';
    }
    model.restore(best_state);
    return {std::move(rec), std::move(model)};
}

std::vector<ImagePlane> predict(const SegModel& model, const std::vector<TrainSample>& samples, int batch_size) {
    require(batch_size > 0, ErrorKind::invalid_argument, "predict: batch_size must be positive");
    std::vector<ImagePlane> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t end = std::min(samples.size(), start + batch_size);
        const int size = samples[start].size();
        Tensor in(static_cast<int>(end - start), 2, size, size);
        for (std::size_t k = start; k < end; ++k) {
            require(samples[k].size() == size, ErrorKind::invalid_argument, "predict: mixed sample sizes");
            std::copy_n(samples[k].input.data(), samples[k].input.numel(), in.plane(static_cast<int>(k - start), 0));
        }
        const Tensor prob = model.forward(in);
        for (int b = 0; b < prob.n(); ++b) {
            ImagePlane p(size, size);
            std::copy_n(prob.plane(b, 0), p.size(), p.px.begin());
            out.push_back(std::move(p));
        }
    }
    return out;
}

CrossValidationResult cross_validate(const std::vector<TrainSample>& samples, const FoldSplit& split,
                                     const SegModelConfig& model_cfg, const TrainConfig& train_cfg,
                                     const AugmentPolicy& policy,
                                     const std::optional<std::filesystem::path>& out_dir,
                                     const std::function<void(int, const EpochLog&)>& on_epoch) {
    require(split.fold_count >= 2, ErrorKind::invalid_argument, "cross_validate: needs at least 2 folds");
    CrossValidationResult cv;
    double sum = 0;
    for (int f = 0; f < split.fold_count; ++f) {
        TrainOptions opt;
        opt.fold = f;
        if (out_dir) opt.out_dir = *out_dir / ("fold" + std::to_string(f));
        if (on_epoch) opt.on_epoch = [&on_epoch, f](const EpochLog& e) { on_epoch(f, e); };
        const auto train = select_patients(samples, split.patients_not_in(f));
        const auto val = select_patients(samples, split.patients_in(f));
        cv.folds.push_back(train_fold(train, val, model_cfg, train_cfg, policy, opt));
        sum += cv.folds.back().record.best_val_loss;
    }
    cv.mean_best_val_loss = sum / split.fold_count;
    return cv;
}

}  // namespace eatseg
