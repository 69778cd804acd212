#pragma once

#include "dprof/nn/layers.hpp"
#include "dprof/nn/tensor.hpp"
#include "dprof/preprocess.hpp"
#include "dprof/rng.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dprof {

struct ProfilerConfig {
    std::size_t input_dim = 0;  // features d; the network reads [values | mask]
    std::size_t hidden_width = 32;
    std::size_t encoder_blocks = 3;  // the decoder mirrors this depth
    std::size_t latent_dim = 16;
    double w_recon = 1.0;
    double w_kl = 0.1;
    double w_cls = 1.0;
    int pretrain_epochs = 50;
    int finetune_epochs = 100;
    std::size_t batch_size = 64;
    double mask_fraction = 0.25;           // hidden share of observed entries while pretraining
    double finetune_mask_fraction = 0.0;   // same corruption applied during finetuning
    double lr = 1e-4;
    double leaky_slope = 0.2;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
    std::uint64_t seed = 1;

    // Throws ValidationError naming the offending field.
    void validate() const;
    bool operator==(const ProfilerConfig&) const = default;
};

nlohmann::json to_json(const ProfilerConfig& config);
// Missing fields keep their defaults.
ProfilerConfig profiler_config_from_json(const nlohmann::json& j);

struct ProfilerModel {
    ProfilerConfig config;
    std::vector<nn::Linear> enc_linear;
    std::vector<nn::BatchNorm> enc_bn;
    nn::Linear mu_head;
    nn::Linear logvar_head;
    std::vector<nn::Linear> dec_linear;
    std::vector<nn::BatchNorm> dec_bn;
    nn::Linear dec_out;
    nn::Linear classifier;

    // Trainable parameters in a fixed order; the classifier head comes last.
    std::vector<nn::Param*> parameters(bool include_classifier = true);
    std::vector<const nn::Param*> parameters(bool include_classifier = true) const;
    std::size_t parameter_count() const;
};

// Uniform fan-in initialization from config.seed.
ProfilerModel build_model(const ProfilerConfig& config);

// Activations kept for the backward pass.
struct ForwardPass {
    nn::Mode mode = nn::Mode::train;
    std::vector<nn::Tensor2> enc_in;
    std::vector<nn::BatchNormCache> enc_cache;
    std::vector<nn::Tensor2> enc_bn_out;
    nn::Tensor2 h;
    nn::Tensor2 mu;
    nn::Tensor2 logvar;
    nn::Tensor2 noise;
    nn::Tensor2 z;
    std::vector<nn::Tensor2> dec_in;
    std::vector<nn::BatchNormCache> dec_cache;
    std::vector<nn::Tensor2> dec_bn_out;
    nn::Tensor2 dec_last;
    nn::Tensor2 recon;
    nn::Tensor2 logits;  // classifier on mu
};

// Encoder input is [values | mask]. With noise the decoder reads
// z = mu + exp(logvar / 2) * noise, otherwise z = mu.
ForwardPass forward(const ProfilerModel& model, const nn::Tensor2& values, const nn::Tensor2& mask,
                    nn::Mode mode, const nn::Tensor2* noise = nullptr);
void update_running_stats(ProfilerModel& model, const ForwardPass& pass);

struct LossParts {
    double total = 0.0;
    double recon = 0.0;
    double kl = 0.0;
    double bce = 0.0;
};

// Weighted loss of a forward pass. Reconstruction is scored on target_mask
// entries; labels may be null, which drops the classification term. When
// backward is set, every parameter gradient is overwritten.
LossParts profiler_loss(ProfilerModel& model, const ForwardPass& pass, const nn::Tensor2& target,
                        const nn::Tensor2& target_mask, const std::vector<double>* labels,
                        bool backward);

struct Dataset {
    nn::Tensor2 values;
    nn::Tensor2 mask;
    std::vector<double> labels;
    std::vector<std::string> groups;  // patient id per row

    std::size_t size() const { return values.rows(); }
    std::size_t dim() const { return values.cols(); }
    Dataset subset(const std::vector<std::size_t>& rows) const;
    static Dataset from_vectors(const std::vector<FeatureVector>& rows, std::vector<double> labels,
                                std::vector<std::string> groups);
};

// Hides round(fraction * observed) observed entries per row: value zeroed,
// mask bit cleared.
void corrupt_observed(nn::Tensor2& values, nn::Tensor2& mask, double fraction, Rng& rng);

struct EpochLog {
    std::string stage;
    int epoch = 0;  // 0 is the untrained state
    LossParts train;
    double monitor_loss = 0.0;
    bool has_monitor = false;
};

// Masked-imputation pretraining of encoder and decoder; the classifier head
// is left untouched.
std::vector<EpochLog> pretrain(ProfilerModel& model, const Dataset& train, const Dataset* monitor,
                               Rng& rng);
// Full-network training on the combined loss. Throws ValidationError when the
// training labels hold a single class.
std::vector<EpochLog> finetune(ProfilerModel& model, const Dataset& train, const Dataset* monitor,
                               Rng& rng);

// Classifier probability per row, eval mode.
std::vector<double> score_batch(const ProfilerModel& model, const nn::Tensor2& values,
                                const nn::Tensor2& mask);

struct RiskAssessment {
    std::vector<double> member_scores;
    double mean = 0.0;
    double std = 0.0;  // population convention
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// mean, std and the clamped interval mean +- c * std.
RiskAssessment summarize_scores(std::vector<double> scores, double c);

struct MemberSubset {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::size_t n_patients = 0;
    std::size_t n_samples = 0;
    std::size_t n_positive = 0;
    std::string patients_sha256;
};

struct EnsembleOptions {
    std::size_t members = 10;
    double subsample_fraction = 0.8;
    double ci_multiplier = 1.0;
    std::uint64_t master_seed = 1;
    unsigned threads = 1;
};

struct ProfilerEnsemble {
    static constexpr int kVersion = 1;
    ProfilerConfig config;
    NormalizationParams normalization;
    std::string catalog_version;
    std::string cancer_type;
    double ci_multiplier = 1.0;
    std::uint64_t master_seed = 0;
    std::vector<ProfilerModel> members;
    std::vector<MemberSubset> subsets;
};

struct TrainLogRow {
    std::size_t member = 0;
    EpochLog log;
};

// Each member trains on a label-stratified subsample of patients; the
// remaining development rows monitor its loss.
ProfilerEnsemble train_ensemble(const Dataset& dev, const ProfilerConfig& config,
                                const EnsembleOptions& options,
                                std::vector<TrainLogRow>* log = nullptr);

RiskAssessment predict(const ProfilerEnsemble& ensemble, const FeatureVector& x);
std::vector<RiskAssessment> predict_batch(const ProfilerEnsemble& ensemble, const nn::Tensor2& values,
                                          const nn::Tensor2& mask);

nlohmann::json model_to_json(const ProfilerModel& model);
ProfilerModel model_from_json(const nlohmann::json& j);
nlohmann::json ensemble_to_json(const ProfilerEnsemble& ensemble);
ProfilerEnsemble ensemble_from_json(const nlohmann::json& j);

// Checksummed model document. Parsing failures, a wrong format tag or a
// checksum mismatch throw IntegrityError.
std::string serialize_ensemble(const ProfilerEnsemble& ensemble);
ProfilerEnsemble deserialize_ensemble(std::string_view text);
void save_ensemble(const ProfilerEnsemble& ensemble, const std::filesystem::path& path);
ProfilerEnsemble load_ensemble(const std::filesystem::path& path);

std::string training_log_tsv(const std::vector<TrainLogRow>& rows);

}  // namespace dprof
