#include "dprof/profiler.hpp"

#include "dprof/error.hpp"
#include "dprof/io.hpp"
#include "dprof/nn/adam.hpp"
#include "dprof/nn/loss.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace dprof {

using nlohmann::json;
using nn::Mode;
using nn::Tensor2;

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError("profiler config: " + what);
}

void add_into(Tensor2& dst, const Tensor2& src, double scale = 1.0) {
    nn::require_same_shape(dst, src, "add_into");
    auto d = dst.flat();
    auto s = src.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

Tensor2 scaled(const Tensor2& t, double s) {
    Tensor2 out = t;
    for (auto& v : out.flat()) v *= s;
    return out;
}

void accumulate_linear(nn::Linear& layer, const nn::LinearGrads& g) {
    add_into(layer.weight.grad, g.dW);
    add_into(layer.bias.grad, g.db);
}

Tensor2 gather_rows(const Tensor2& src, std::span<const std::size_t> rows) {
    Tensor2 out(rows.size(), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto s = src.row(rows[i]);
        std::copy(s.begin(), s.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace

void ProfilerConfig::validate() const {
    require(input_dim > 0, "input_dim must be positive");
    require(hidden_width > 0, "hidden_width must be positive");
    require(encoder_blocks > 0, "encoder_blocks must be positive");
    require(latent_dim > 0, "latent_dim must be positive");
    for (auto [name, w] : {std::pair{"w_recon", w_recon}, {"w_kl", w_kl}, {"w_cls", w_cls}}) {
        require(std::isfinite(w) && w >= 0.0, std::string(name) + " must be finite and >= 0");
    }
    require(pretrain_epochs >= 0, "pretrain_epochs must be >= 0");
    require(finetune_epochs >= 0, "finetune_epochs must be >= 0");
    require(batch_size >= 2, "batch_size must be >= 2");
    require(mask_fraction >= 0.0 && mask_fraction < 1.0, "mask_fraction must be in [0, 1)");
    require(finetune_mask_fraction >= 0.0 && finetune_mask_fraction < 1.0,
            "finetune_mask_fraction must be in [0, 1)");
    require(std::isfinite(lr) && lr > 0.0, "lr must be positive");
    require(leaky_slope >= 0.0, "leaky_slope must be >= 0");
    require(bn_momentum > 0.0 && bn_momentum <= 1.0, "bn_momentum must be in (0, 1]");
    require(bn_epsilon > 0.0, "bn_epsilon must be positive");
}

json to_json(const ProfilerConfig& c) {
    return json{{"input_dim", c.input_dim},
                {"hidden_width", c.hidden_width},
                {"encoder_blocks", c.encoder_blocks},
                {"latent_dim", c.latent_dim},
                {"w_recon", c.w_recon},
                {"w_kl", c.w_kl},
                {"w_cls", c.w_cls},
                {"pretrain_epochs", c.pretrain_epochs},
                {"finetune_epochs", c.finetune_epochs},
                {"batch_size", c.batch_size},
                {"mask_fraction", c.mask_fraction},
                {"finetune_mask_fraction", c.finetune_mask_fraction},
                {"lr", c.lr},
                {"leaky_slope", c.leaky_slope},
                {"bn_momentum", c.bn_momentum},
                {"bn_epsilon", c.bn_epsilon},
                {"seed", c.seed}};
}

ProfilerConfig profiler_config_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("profiler config: expected an object");
    ProfilerConfig c;
    static const std::set<std::string> known{
        "input_dim", "hidden_width", "encoder_blocks", "latent_dim", "w_recon", "w_kl",
        "w_cls", "pretrain_epochs", "finetune_epochs", "batch_size", "mask_fraction",
        "finetune_mask_fraction", "lr", "leaky_slope", "bn_momentum", "bn_epsilon", "seed"};
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ValidationError("profiler config: unknown field '" + k + "'");
    }
    try {
        c.input_dim = j.value("input_dim", c.input_dim);
        c.hidden_width = j.value("hidden_width", c.hidden_width);
        c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
        c.latent_dim = j.value("latent_dim", c.latent_dim);
        c.w_recon = j.value("w_recon", c.w_recon);
        c.w_kl = j.value("w_kl", c.w_kl);
        c.w_cls = j.value("w_cls", c.w_cls);
        c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
        c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
        c.finetune_mask_fraction = j.value("finetune_mask_fraction", c.finetune_mask_fraction);
        c.lr = j.value("lr", c.lr);
        c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
        c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
        c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("profiler config: ") + e.what());
    }
    return c;
}

std::vector<nn::Param*> ProfilerModel::parameters(bool include_classifier) {
    std::vector<nn::Param*> out;
    for (std::size_t b = 0; b < enc_linear.size(); ++b) {
        out.insert(out.end(), {&enc_linear[b].weight, &enc_linear[b].bias, &enc_bn[b].gamma, &enc_bn[b].beta});
    }
    out.insert(out.end(), {&mu_head.weight, &mu_head.bias, &logvar_head.weight, &logvar_head.bias});
    for (std::size_t b = 0; b < dec_linear.size(); ++b) {
        out.insert(out.end(), {&dec_linear[b].weight, &dec_linear[b].bias, &dec_bn[b].gamma, &dec_bn[b].beta});
    }
    out.insert(out.end(), {&dec_out.weight, &dec_out.bias});
    if (include_classifier) out.insert(out.end(), {&classifier.weight, &classifier.bias});
    return out;
}

std::vector<const nn::Param*> ProfilerModel::parameters(bool include_classifier) const {
    auto mut = const_cast<ProfilerModel*>(this)->parameters(include_classifier);
    return {mut.begin(), mut.end()};
}

std::size_t ProfilerModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters(true)) n += p->value.size();
    return n;
}

ProfilerModel build_model(const ProfilerConfig& config) {
    config.validate();
    ProfilerModel m;
    m.config = config;
    const std::size_t d = config.input_dim, w = config.hidden_width, k = config.latent_dim;
    std::size_t in = 2 * d;
    for (std::size_t b = 0; b < config.encoder_blocks; ++b) {
        const std::string name = "encoder." + std::to_string(b);
        m.enc_linear.emplace_back(name, in, w);
        m.enc_bn.emplace_back(name + ".bn", w, config.bn_momentum, config.bn_epsilon);
        in = w;
    }
    m.mu_head = nn::Linear("mu", w, k);
    m.logvar_head = nn::Linear("logvar", w, k);
    in = k;
    for (std::size_t b = 0; b < config.encoder_blocks; ++b) {
        const std::string name = "decoder." + std::to_string(b);
        m.dec_linear.emplace_back(name, in, w);
        m.dec_bn.emplace_back(name + ".bn", w, config.bn_momentum, config.bn_epsilon);
        in = w;
    }
    m.dec_out = nn::Linear("decoder.out", w, d);
    m.classifier = nn::Linear("classifier", k, 1);

    Rng rng(derive_seed(config.seed, "init"));
    for (auto& l : m.enc_linear) l.init(rng);
    m.mu_head.init(rng);
    m.logvar_head.init(rng);
    for (auto& l : m.dec_linear) l.init(rng);
    m.dec_out.init(rng);
    m.classifier.init(rng);
    return m;
}

namespace {

Tensor2 encoder_input(const ProfilerModel& model, const Tensor2& values, const Tensor2& mask) {
    const std::size_t d = model.config.input_dim;
    if (values.cols() != d) {
        throw ValidationError("profiler: input has " + std::to_string(values.cols()) +
                              " features, model expects " + std::to_string(d));
    }
    nn::require_same_shape(values, mask, "profiler input");
    Tensor2 x(values.rows(), 2 * d);
    for (std::size_t i = 0; i < values.rows(); ++i) {
        auto v = values.row(i);
        auto m = mask.row(i);
        auto out = x.row(i);
        std::copy(v.begin(), v.end(), out.begin());
        std::copy(m.begin(), m.end(), out.begin() + static_cast<std::ptrdiff_t>(d));
    }
    return x;
}

// Encoder and mu head only; shared by scoring paths that skip the decoder.
Tensor2 encode_mu(const ProfilerModel& model, const Tensor2& values, const Tensor2& mask) {
    Tensor2 x = encoder_input(model, values, mask);
    nn::BatchNormCache cache;
    for (std::size_t b = 0; b < model.enc_linear.size(); ++b) {
        x = nn::linear_forward(model.enc_linear[b], x);
        x = nn::batchnorm_forward(model.enc_bn[b], x, Mode::eval, cache);
        x = nn::leaky_relu_forward(x, model.config.leaky_slope);
    }
    return nn::linear_forward(model.mu_head, x);
}

}  // namespace

ForwardPass forward(const ProfilerModel& model, const Tensor2& values, const Tensor2& mask, Mode mode,
                    const Tensor2* noise) {
    ForwardPass p;
    p.mode = mode;
    Tensor2 x = encoder_input(model, values, mask);
    const std::size_t blocks = model.enc_linear.size();
    p.enc_cache.resize(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        p.enc_in.push_back(x);
        Tensor2 pre = nn::linear_forward(model.enc_linear[b], x);
        p.enc_bn_out.push_back(nn::batchnorm_forward(model.enc_bn[b], pre, mode, p.enc_cache[b]));
        x = nn::leaky_relu_forward(p.enc_bn_out.back(), model.config.leaky_slope);
    }
    p.h = x;
    p.mu = nn::linear_forward(model.mu_head, p.h);
    p.logvar = nn::linear_forward(model.logvar_head, p.h);
    if (noise != nullptr) {
        p.noise = *noise;
        p.z = nn::reparameterize(p.mu, p.logvar, p.noise);
    } else {
        p.z = p.mu;
    }
    x = p.z;
    p.dec_cache.resize(model.dec_linear.size());
    for (std::size_t b = 0; b < model.dec_linear.size(); ++b) {
        p.dec_in.push_back(x);
        Tensor2 pre = nn::linear_forward(model.dec_linear[b], x);
        p.dec_bn_out.push_back(nn::batchnorm_forward(model.dec_bn[b], pre, mode, p.dec_cache[b]));
        x = nn::relu_forward(p.dec_bn_out.back());
    }
    p.dec_last = x;
    p.recon = nn::linear_forward(model.dec_out, p.dec_last);
    p.logits = nn::linear_forward(model.classifier, p.mu);
    return p;
}

void update_running_stats(ProfilerModel& model, const ForwardPass& pass) {
    for (std::size_t b = 0; b < model.enc_bn.size(); ++b) nn::batchnorm_update_running(model.enc_bn[b], pass.enc_cache[b]);
    for (std::size_t b = 0; b < model.dec_bn.size(); ++b) nn::batchnorm_update_running(model.dec_bn[b], pass.dec_cache[b]);
}

LossParts profiler_loss(ProfilerModel& model, const ForwardPass& pass, const Tensor2& target,
                        const Tensor2& target_mask, const std::vector<double>* labels, bool backward) {
    const auto& c = model.config;
    const std::size_t n = pass.mu.rows();
    const auto mse = nn::masked_mse(pass.recon, target, target_mask);
    const auto kl = nn::kl_divergence(pass.mu, pass.logvar);
    LossParts parts;
    parts.recon = mse.loss;
    parts.kl = kl.loss;
    nn::LossGrad cls;
    if (labels != nullptr) {
        if (labels->size() != n) throw std::invalid_argument("profiler_loss: label count mismatch");
        cls = nn::bce_with_logits(pass.logits, Tensor2(n, 1, *labels));
        parts.bce = cls.loss;
    }
    parts.total = c.w_recon * parts.recon + c.w_kl * parts.kl + (labels != nullptr ? c.w_cls * parts.bce : 0.0);
    if (!backward) return parts;

    for (auto* p : model.parameters(true)) p->zero_grad();

    // Decoder.
    auto g = nn::linear_backward(model.dec_out, pass.dec_last, scaled(mse.grad, c.w_recon));
    accumulate_linear(model.dec_out, g);
    Tensor2 d = std::move(g.dx);
    for (std::size_t b = model.dec_linear.size(); b-- > 0;) {
        d = nn::relu_backward(pass.dec_bn_out[b], d);
        auto bg = nn::batchnorm_backward(model.dec_bn[b], pass.dec_cache[b], d);
        add_into(model.dec_bn[b].gamma.grad, bg.dgamma);
        add_into(model.dec_bn[b].beta.grad, bg.dbeta);
        auto lg = nn::linear_backward(model.dec_linear[b], pass.dec_in[b], bg.dx);
        accumulate_linear(model.dec_linear[b], lg);
        d = std::move(lg.dx);
    }

    // Latent.
    Tensor2 dmu = scaled(kl.dmu, c.w_kl);
    Tensor2 dlogvar = scaled(kl.dlogvar, c.w_kl);
    if (pass.noise.size() != 0) {
        auto rg = nn::reparameterize_backward(pass.logvar, pass.noise, d);
        add_into(dmu, rg.dmu);
        add_into(dlogvar, rg.dlogvar);
    } else {
        add_into(dmu, d);
    }
    if (labels != nullptr && c.w_cls != 0.0) {
        auto cg = nn::linear_backward(model.classifier, pass.mu, scaled(cls.grad, c.w_cls));
        accumulate_linear(model.classifier, cg);
        add_into(dmu, cg.dx);
    }
    auto gm = nn::linear_backward(model.mu_head, pass.h, dmu);
    auto gl = nn::linear_backward(model.logvar_head, pass.h, dlogvar);
    accumulate_linear(model.mu_head, gm);
    accumulate_linear(model.logvar_head, gl);
    d = std::move(gm.dx);
    add_into(d, gl.dx);

    // Encoder.
    for (std::size_t b = model.enc_linear.size(); b-- > 0;) {
        d = nn::leaky_relu_backward(pass.enc_bn_out[b], d, c.leaky_slope);
        auto bg = nn::batchnorm_backward(model.enc_bn[b], pass.enc_cache[b], d);
        add_into(model.enc_bn[b].gamma.grad, bg.dgamma);
        add_into(model.enc_bn[b].beta.grad, bg.dbeta);
        auto lg = nn::linear_backward(model.enc_linear[b], pass.enc_in[b], bg.dx);
        accumulate_linear(model.enc_linear[b], lg);
        d = std::move(lg.dx);
    }
    return parts;
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.values = gather_rows(values, rows);
    out.mask = gather_rows(mask, rows);
    for (std::size_t r : rows) {
        if (!labels.empty()) out.labels.push_back(labels[r]);
        if (!groups.empty()) out.groups.push_back(groups[r]);
    }
    return out;
}

Dataset Dataset::from_vectors(const std::vector<FeatureVector>& rows, std::vector<double> labels,
                              std::vector<std::string> groups) {
    if (labels.size() != rows.size()) throw std::invalid_argument("Dataset: label count mismatch");
    if (!groups.empty() && groups.size() != rows.size()) throw std::invalid_argument("Dataset: group count mismatch");
    const std::size_t d = rows.empty() ? 0 : rows.front().values.size();
    std::vector<double> v, m;
    v.reserve(rows.size() * d);
    m.reserve(rows.size() * d);
    for (const auto& fv : rows) {
        if (fv.values.size() != d || fv.mask.size() != d) throw std::invalid_argument("Dataset: ragged feature vectors");
        v.insert(v.end(), fv.values.begin(), fv.values.end());
        m.insert(m.end(), fv.mask.begin(), fv.mask.end());
    }
    Dataset out;
    out.values = Tensor2(rows.size(), d, std::move(v));
    out.mask = Tensor2(rows.size(), d, std::move(m));
    out.labels = std::move(labels);
    out.groups = std::move(groups);
    return out;
}

void corrupt_observed(Tensor2& values, Tensor2& mask, double fraction, Rng& rng) {
    if (fraction <= 0.0) return;
    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < mask.rows(); ++i) {
        observed.clear();
        auto m = mask.row(i);
        for (std::size_t j = 0; j < m.size(); ++j)
            if (m[j] != 0.0) observed.push_back(j);
        const auto k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(observed.size())));
        for (std::size_t t = 0; t < k; ++t) {
            const std::size_t pick = t + static_cast<std::size_t>(rng.below(observed.size() - t));
            std::swap(observed[t], observed[pick]);
            values(i, observed[t]) = 0.0;
            mask(i, observed[t]) = 0.0;
        }
    }
}

namespace {

// Deterministic eval-mode loss; the decoder reads mu.
LossParts evaluate_loss(ProfilerModel& model, const Dataset& data, double corrupt_fraction, bool use_labels) {
    Tensor2 v = data.values;
    Tensor2 m = data.mask;
    Rng rng(derive_seed(model.config.seed, "monitor"));
    corrupt_observed(v, m, corrupt_fraction, rng);
    const auto pass = forward(model, v, m, Mode::eval, nullptr);
    return profiler_loss(model, pass, data.values, data.mask, use_labels ? &data.labels : nullptr, false);
}

std::vector<EpochLog> run_stage(ProfilerModel& model, const Dataset& train, const Dataset* monitor, Rng& rng,
                                const std::string& stage, int epochs, double corrupt_fraction, bool use_labels) {
    const auto& c = model.config;
    if (train.size() < 2) throw ValidationError(stage + ": training set needs at least 2 samples");
    if (train.dim() != c.input_dim) throw ValidationError(stage + ": dataset dimension does not match model");
    if (use_labels && train.labels.size() != train.size()) throw ValidationError(stage + ": labels missing");

    std::vector<nn::Param*> params = model.parameters(use_labels);
    nn::AdamState adam;
    adam.lr = c.lr;

    std::vector<EpochLog> logs;
    auto monitor_entry = [&](EpochLog& e) {
        if (monitor != nullptr && monitor->size() > 0) {
            e.has_monitor = true;
            e.monitor_loss = evaluate_loss(model, *monitor, corrupt_fraction, use_labels).total;
        }
    };
    EpochLog first{stage, 0, {}, 0.0, false};
    first.train = evaluate_loss(model, train, corrupt_fraction, use_labels);
    monitor_entry(first);
    logs.push_back(first);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t latent = c.latent_dim;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        LossParts sum;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
            const std::size_t bs = std::min(c.batch_size, order.size() - start);
            if (bs < 2) break;  // batch norm needs two rows
            std::span<const std::size_t> idx(order.data() + start, bs);
            Tensor2 target = gather_rows(train.values, idx);
            Tensor2 target_mask = gather_rows(train.mask, idx);
            Tensor2 in_v = target;
            Tensor2 in_m = target_mask;
            corrupt_observed(in_v, in_m, corrupt_fraction, rng);
            Tensor2 noise(bs, latent);
            for (auto& e : noise.flat()) e = rng.normal();
            std::vector<double> labels;
            if (use_labels) {
                labels.reserve(bs);
                for (std::size_t r : idx) labels.push_back(train.labels[r]);
            }
            const auto pass = forward(model, in_v, in_m, Mode::train, &noise);
            update_running_stats(model, pass);
            const auto parts = profiler_loss(model, pass, target, target_mask, use_labels ? &labels : nullptr, true);
            if (!std::isfinite(parts.total)) {
                throw NumericError(stage + ": non-finite loss at epoch " + std::to_string(epoch));
            }
            nn::adam_step(params, adam);
            const double w = static_cast<double>(bs);
            sum.total += w * parts.total;
            sum.recon += w * parts.recon;
            sum.kl += w * parts.kl;
            sum.bce += w * parts.bce;
            seen += bs;
        }
        EpochLog e{stage, epoch, {}, 0.0, false};
        if (seen > 0) {
            const double inv = 1.0 / static_cast<double>(seen);
            e.train = {sum.total * inv, sum.recon * inv, sum.kl * inv, sum.bce * inv};
        }
        monitor_entry(e);
        logs.push_back(e);
    }
    return logs;
}

}  // namespace

std::vector<EpochLog> pretrain(ProfilerModel& model, const Dataset& train, const Dataset* monitor, Rng& rng) {
    if (train.size() == 0) throw ValidationError("pretrain: empty training set");
    return run_stage(model, train, monitor, rng, "pretrain", model.config.pretrain_epochs,
                     model.config.mask_fraction, false);
}

std::vector<EpochLog> finetune(ProfilerModel& model, const Dataset& train, const Dataset* monitor, Rng& rng) {
    if (train.size() == 0) throw ValidationError("finetune: empty training set");
    bool pos = false, neg = false;
    for (double y : train.labels) (y > 0.5 ? pos : neg) = true;
    if (!(pos && neg)) throw ValidationError("finetune: training labels contain a single class");
    return run_stage(model, train, monitor, rng, "finetune", model.config.finetune_epochs,
                     model.config.finetune_mask_fraction, true);
}

std::vector<double> score_batch(const ProfilerModel& model, const Tensor2& values, const Tensor2& mask) {
    const Tensor2 mu = encode_mu(model, values, mask);
    const Tensor2 logits = nn::linear_forward(model.classifier, mu);
    std::vector<double> out(logits.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = nn::sigmoid(logits(i, 0));
    return out;
}

RiskAssessment summarize_scores(std::vector<double> scores, double c) {
    if (scores.empty()) throw std::invalid_argument("summarize_scores: no member scores");
    RiskAssessment r;
    double sum = 0.0;
    for (double s : scores) sum += s;
    r.mean = sum / static_cast<double>(scores.size());
    double ss = 0.0;
    for (double s : scores) ss += (s - r.mean) * (s - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(scores.size()));
    r.ci_low = std::clamp(r.mean - c * r.std, 0.0, 1.0);
    r.ci_high = std::clamp(r.mean + c * r.std, 0.0, 1.0);
    r.member_scores = std::move(scores);
    return r;
}

ProfilerEnsemble train_ensemble(const Dataset& dev, const ProfilerConfig& config, const EnsembleOptions& options,
                                std::vector<TrainLogRow>* log) {
    config.validate();
    if (options.members == 0) throw ValidationError("ensemble: members must be positive");
    if (!(options.subsample_fraction > 0.0 && options.subsample_fraction <= 1.0)) {
        throw ValidationError("ensemble: subsample_fraction must be in (0, 1]");
    }
    if (dev.size() == 0) throw ValidationError("ensemble: empty development set");
    if (dev.labels.size() != dev.size()) throw ValidationError("ensemble: labels missing");

    std::vector<std::string> groups = dev.groups;
    if (groups.empty()) {
        for (std::size_t i = 0; i < dev.size(); ++i) groups.push_back("row" + std::to_string(i));
    }
    std::map<std::string, bool> patient_positive;
    for (std::size_t i = 0; i < dev.size(); ++i) {
        bool& p = patient_positive[groups[i]];
        p = p || dev.labels[i] > 0.5;
    }
    std::vector<std::string> pos_ids, neg_ids;
    for (const auto& [id, p] : patient_positive) (p ? pos_ids : neg_ids).push_back(id);

    ProfilerEnsemble ens;
    ens.config = config;
    ens.ci_multiplier = options.ci_multiplier;
    ens.master_seed = options.master_seed;
    ens.members.resize(options.members);
    ens.subsets.resize(options.members);
    std::vector<std::vector<TrainLogRow>> member_logs(options.members);

    auto train_member = [&](std::size_t k) {
        const std::uint64_t member_seed = derive_seed(derive_seed(options.master_seed, "member"), k);
        Rng sub_rng(derive_seed(member_seed, "subsample"));
        std::set<std::string> chosen;
        for (const auto* ids : {&pos_ids, &neg_ids}) {
            std::vector<std::string> shuffled = *ids;
            sub_rng.shuffle(std::span<std::string>(shuffled));
            auto take = static_cast<std::size_t>(std::lround(options.subsample_fraction * static_cast<double>(shuffled.size())));
            if (!shuffled.empty()) take = std::clamp<std::size_t>(take, 1, shuffled.size());
            chosen.insert(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(take));
        }
        std::vector<std::size_t> train_rows, monitor_rows;
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < dev.size(); ++i) {
            if (chosen.count(groups[i])) {
                train_rows.push_back(i);
                if (dev.labels[i] > 0.5) ++n_pos;
            } else {
                monitor_rows.push_back(i);
            }
        }
        if (n_pos == 0) throw ValidationError("ensemble: member " + std::to_string(k) + " subsample has no positives");

        std::string joined;
        for (const auto& id : chosen) joined += id + "\n";
        ens.subsets[k] = {k, member_seed, chosen.size(), train_rows.size(), n_pos, io::sha256_hex(joined)};

        const Dataset train = dev.subset(train_rows);
        const Dataset monitor = dev.subset(monitor_rows);
        ProfilerConfig mc = config;
        mc.seed = member_seed;
        ProfilerModel model = build_model(mc);
        Rng rng(derive_seed(member_seed, "train"));
        const Dataset* mon = monitor.size() > 0 ? &monitor : nullptr;
        for (auto& e : pretrain(model, train, mon, rng)) member_logs[k].push_back({k, e});
        for (auto& e : finetune(model, train, mon, rng)) member_logs[k].push_back({k, e});
        ens.members[k] = std::move(model);
    };

    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(options.members)));
    if (threads == 1) {
        for (std::size_t k = 0; k < options.members; ++k) train_member(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(options.members);
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < options.members; k = next++) {
                    try {
                        train_member(k);
                    } catch (...) {
                        errors[k] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    if (log != nullptr) {
        for (auto& rows : member_logs) log->insert(log->end(), rows.begin(), rows.end());
    }
    return ens;
}

std::vector<RiskAssessment> predict_batch(const ProfilerEnsemble& ensemble, const Tensor2& values, const Tensor2& mask) {
    if (ensemble.members.empty()) throw ValidationError("predict: ensemble has no members");
    if (values.cols() != ensemble.config.input_dim) {
        throw ValidationError("predict: input has " + std::to_string(values.cols()) + " features, ensemble expects " +
                              std::to_string(ensemble.config.input_dim));
    }
    std::vector<std::vector<double>> per_member;
    for (const auto& m : ensemble.members) per_member.push_back(score_batch(m, values, mask));
    std::vector<RiskAssessment> out;
    out.reserve(values.rows());
    for (std::size_t i = 0; i < values.rows(); ++i) {
        std::vector<double> s;
        s.reserve(per_member.size());
        for (const auto& pm : per_member) s.push_back(pm[i]);
        out.push_back(summarize_scores(std::move(s), ensemble.ci_multiplier));
    }
    return out;
}

RiskAssessment predict(const ProfilerEnsemble& ensemble, const FeatureVector& x) {
    const std::size_t d = x.values.size();
    if (x.mask.size() != d) throw ValidationError("predict: mask length differs from values");
    return predict_batch(ensemble, Tensor2(1, d, x.values), Tensor2(1, d, x.mask)).front();
}

json model_to_json(const ProfilerModel& model) {
    json params = json::array();
    for (const auto* p : model.parameters(true)) {
        for (double v : p->value.flat()) {
            if (!std::isfinite(v)) throw NumericError("model_to_json: non-finite weight in " + p->name);
        }
        params.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"data", p->value.data()}});
    }
    json bn = json::array();
    auto add_bn = [&](const nn::BatchNorm& b) {
        bn.push_back({{"name", b.gamma.name.substr(0, b.gamma.name.rfind('.'))},
                      {"running_mean", b.running_mean},
                      {"running_var", b.running_var}});
    };
    for (const auto& b : model.enc_bn) add_bn(b);
    for (const auto& b : model.dec_bn) add_bn(b);
    return json{{"config", to_json(model.config)}, {"params", params}, {"batchnorm", bn}};
}

ProfilerModel model_from_json(const json& j) {
    try {
        ProfilerModel m = build_model(profiler_config_from_json(j.at("config")));
        const auto& params = j.at("params");
        auto targets = m.parameters(true);
        if (params.size() != targets.size()) throw IntegrityError("model: parameter count mismatch");
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto& pj = params[i];
            auto* p = targets[i];
            if (pj.at("name").get<std::string>() != p->name) throw IntegrityError("model: unexpected parameter " + pj.at("name").get<std::string>());
            const auto shape = pj.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols()) {
                throw IntegrityError("model: shape mismatch for " + p->name);
            }
            auto data = pj.at("data").get<std::vector<double>>();
            if (data.size() != p->value.size()) throw IntegrityError("model: data length mismatch for " + p->name);
            p->value = Tensor2(shape[0], shape[1], std::move(data));
        }
        std::vector<nn::BatchNorm*> bns;
        for (auto& b : m.enc_bn) bns.push_back(&b);
        for (auto& b : m.dec_bn) bns.push_back(&b);
        const auto& bj = j.at("batchnorm");
        if (bj.size() != bns.size()) throw IntegrityError("model: batch norm count mismatch");
        for (std::size_t i = 0; i < bns.size(); ++i) {
            auto mean = bj[i].at("running_mean").get<std::vector<double>>();
            auto var = bj[i].at("running_var").get<std::vector<double>>();
            if (mean.size() != bns[i]->features() || var.size() != bns[i]->features()) {
                throw IntegrityError("model: running statistics length mismatch");
            }
            bns[i]->running_mean = std::move(mean);
            bns[i]->running_var = std::move(var);
        }
        return m;
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("model: malformed document: ") + e.what());
    }
}

json ensemble_to_json(const ProfilerEnsemble& e) {
    json members = json::array();
    for (const auto& m : e.members) members.push_back(model_to_json(m));
    json subsets = json::array();
    for (const auto& s : e.subsets) {
        subsets.push_back({{"index", s.index},
                           {"seed", s.seed},
                           {"n_patients", s.n_patients},
                           {"n_samples", s.n_samples},
                           {"n_positive", s.n_positive},
                           {"patients_sha256", s.patients_sha256}});
    }
    return json{{"config", to_json(e.config)},
                {"normalization", to_json(e.normalization)},
                {"catalog_version", e.catalog_version},
                {"cancer_type", e.cancer_type},
                {"ci_multiplier", e.ci_multiplier},
                {"master_seed", e.master_seed},
                {"members", members},
                {"subsets", subsets}};
}

ProfilerEnsemble ensemble_from_json(const json& j) {
    try {
        ProfilerEnsemble e;
        e.config = profiler_config_from_json(j.at("config"));
        e.normalization = normalization_from_json(j.at("normalization"));
        e.catalog_version = j.at("catalog_version").get<std::string>();
        e.cancer_type = j.at("cancer_type").get<std::string>();
        e.ci_multiplier = j.at("ci_multiplier").get<double>();
        e.master_seed = j.at("master_seed").get<std::uint64_t>();
        for (const auto& mj : j.at("members")) e.members.push_back(model_from_json(mj));
        for (const auto& sj : j.at("subsets")) {
            e.subsets.push_back({sj.at("index").get<std::size_t>(), sj.at("seed").get<std::uint64_t>(),
                                 sj.at("n_patients").get<std::size_t>(), sj.at("n_samples").get<std::size_t>(),
                                 sj.at("n_positive").get<std::size_t>(), sj.at("patients_sha256").get<std::string>()});
        }
        for (const auto& m : e.members) {
            if (m.config.input_dim != e.config.input_dim) throw IntegrityError("ensemble: member input_dim differs");
        }
        return e;
    } catch (const json::exception& ex) {
        throw IntegrityError(std::string("ensemble: malformed document: ") + ex.what());
    }
}

namespace {
constexpr const char* kFormat = "dprof-ensemble";
}

std::string serialize_ensemble(const ProfilerEnsemble& ensemble) {
    const json payload = ensemble_to_json(ensemble);
    const json doc{{"format", kFormat},
                   {"version", ProfilerEnsemble::kVersion},
                   {"sha256", io::sha256_hex(payload.dump())},
                   {"payload", payload}};
    return doc.dump() + "\n";
}

ProfilerEnsemble deserialize_ensemble(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception&) {
        throw IntegrityError("model file is truncated or corrupt");
    }
    if (!doc.is_object() || doc.value("format", "") != kFormat) throw IntegrityError("model file: unknown format");
    if (!doc.contains("version") || doc["version"] != ProfilerEnsemble::kVersion) {
        throw IntegrityError("model file: unsupported version " + (doc.contains("version") ? doc["version"].dump() : "none"));
    }
    if (!doc.contains("payload") || !doc.contains("sha256")) throw IntegrityError("model file: missing payload or checksum");
    if (io::sha256_hex(doc["payload"].dump()) != doc["sha256"]) throw IntegrityError("model file: checksum mismatch");
    return ensemble_from_json(doc["payload"]);
}

void save_ensemble(const ProfilerEnsemble& ensemble, const std::filesystem::path& path) {
    io::write_file_atomic(path, serialize_ensemble(ensemble));
}

ProfilerEnsemble load_ensemble(const std::filesystem::path& path) {
    return deserialize_ensemble(io::read_file(path));
}

std::string training_log_tsv(const std::vector<TrainLogRow>& rows) {
    std::ostringstream out;
    out << "member\tstage\tepoch\tloss\trecon\tkl\tbce\tmonitor_loss\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        const auto& e = r.log;
        out << r.member << '\t' << e.stage << '\t' << e.epoch << '\t' << num(e.train.total) << '\t'
            << num(e.train.recon) << '\t' << num(e.train.kl) << '\t' << num(e.train.bce) << '\t'
            << (e.has_monitor ? num(e.monitor_loss) : std::string("NA")) << '\n';
    }
    return out.str();
}

}  // namespace dprof
