#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "attamba/model.hpp"

namespace attamba {

struct TrainConfig {
    ModelConfig model;
    int batch = 2;
    int steps = 600;
    double learning_rate = 3e-3;
    int warmup_steps = 100;
    double grad_clip = 1.0;
    int eval_interval = 100;
    int eval_windows = 8;
    std::string corpus_path;
    std::string out_dir;
    uint64_t seed = 1;
};

TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

// Byte-level corpus, split contiguously; the tail becomes the eval stream.
struct Corpus {
    std::vector<uint8_t> train, eval;
};
Corpus ingest_corpus(const std::string& path, double eval_fraction = 0.05);

struct EvalOptions {
    int max_windows = 8;
    int swa_window = 0;    // >0 forces a sliding window on baseline modes
    int lead_override = 0; // >0 replaces the configured lead
    uint64_t plan_seed = 0;
};
double evaluate(ModelParams<float>& model, const std::vector<uint8_t>& data,
                const EvalOptions& opt = {});

struct TrainResult {
    double initial_train_loss = 0;  // mean over the first few steps
    double final_train_loss = 0;    // mean over the last few steps
    double final_eval_loss = 0;
    double final_ppl = 0;
    long long tokens = 0;
    double wall_seconds = 0;
    std::string checkpoint_path, metrics_path;
};

// Full training loop: Adam with linear warmup and cosine decay, global-norm
// gradient clipping, periodic eval, JSONL metrics, final checkpoint.
// Non-finite values abort with a diagnostic naming the step and layer.
TrainResult train(const TrainConfig& cfg, std::ostream* log = nullptr);

// Named experiment bundles (several training runs sharing one corpus).
std::vector<std::string> preset_names();
struct PresetRun {
    std::string name;
    TrainConfig config;
};
std::vector<PresetRun> preset_runs(const std::string& preset, const std::string& corpus,
                                   const std::string& out_root);
std::map<std::string, TrainResult> run_preset(const std::string& preset,
                                              const std::string& corpus,
                                              const std::string& out_root,
                                              std::ostream* log = nullptr);

// Deterministic template-grammar text, enough structure for a byte model to
// make steady progress at desk scale.
void write_synthetic_corpus(const std::string& path, std::size_t bytes, uint64_t seed);

}  // namespace attamba
