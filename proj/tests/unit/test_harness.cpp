#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "attamba/checkpoint.hpp"
#include "attamba/harness.hpp"
#include "doctest.h"

#include <nlohmann/json.hpp>

using namespace attamba;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("attamba-harness-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

TrainConfig tiny_train_config(const TempDir& tmp) {
    TrainConfig tc;
    tc.model.vocab = 256;
    tc.model.seq_len = 32;
    tc.model.model_dim = 16;
    tc.model.heads = 2;
    tc.model.layers = 1;
    tc.model.chunk_size = 4;
    tc.model.lead = 4;
    tc.model.state_dim = 4;
    tc.batch = 1;
    tc.steps = 30;
    tc.learning_rate = 3e-3;
    tc.warmup_steps = 5;
    tc.eval_interval = 10;
    tc.eval_windows = 2;
    tc.corpus_path = tmp.file("corpus.txt");
    tc.out_dir = tmp.file("run");
    tc.seed = 7;
    return tc;
}

}  // namespace

TEST_CASE("synthetic corpus is deterministic and well formed") {
    TempDir tmp;
    std::string a = tmp.file("a.txt"), b = tmp.file("b.txt");
    write_synthetic_corpus(a, 40000, 3);
    write_synthetic_corpus(b, 40000, 3);
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa.size() == 40000);
    CHECK(sa == sb);
    CHECK(sa.find(" the ") != std::string::npos);  // looks like text, not noise
    std::string c = tmp.file("c.txt");
    write_synthetic_corpus(c, 40000, 4);
    std::ifstream fc(c, std::ios::binary);
    std::string sc((std::istreambuf_iterator<char>(fc)), std::istreambuf_iterator<char>());
    CHECK(sc != sa);
}

TEST_CASE("corpus ingestion splits train and eval") {
    TempDir tmp;
    std::string path = tmp.file("corpus.txt");
    write_synthetic_corpus(path, 10000, 5);
    Corpus c = ingest_corpus(path, 0.1);
    CHECK(c.train.size() == 9000);
    CHECK(c.eval.size() == 1000);

    std::string small = tmp.file("small.txt");
    {
        std::ofstream out(small, std::ios::binary);
        out << "too short";
    }
    CHECK_THROWS_AS(ingest_corpus(small), IoError);
    CHECK_THROWS_AS(ingest_corpus(tmp.file("absent.txt")), IoError);
}

TEST_CASE("train config json round trip") {
    TempDir tmp;
    TrainConfig tc = tiny_train_config(tmp);
    tc.model.mode = ModelMode::BaselineKvcSwa;
    tc.model.chunk_strategy = ChunkStrategy::Cyclic;
    tc.model.baseline_attn_dim = 8;
    std::string text = train_config_to_json(tc);
    TrainConfig back = train_config_from_json(text);
    CHECK(back.model.mode == ModelMode::BaselineKvcSwa);
    CHECK(back.model.chunk_strategy == ChunkStrategy::Cyclic);
    CHECK(back.model.seq_len == 32);
    CHECK(back.model.baseline_attn_dim == 8);
    CHECK(back.batch == tc.batch);
    CHECK(back.steps == tc.steps);
    CHECK(back.learning_rate == tc.learning_rate);
    CHECK(back.warmup_steps == tc.warmup_steps);
    CHECK(back.corpus_path == tc.corpus_path);
    CHECK(back.seed == tc.seed);
    CHECK_THROWS_AS(train_config_from_json("{"), IoError);
    CHECK_THROWS_AS(train_config_from_json(R"({"model":{"mode":"bogus"}})"), ConfigError);
}

TEST_CASE("a short run trains, logs metrics and saves a loadable model") {
    TempDir tmp;
    TrainConfig tc = tiny_train_config(tmp);
    write_synthetic_corpus(tc.corpus_path, 60000, 6);
    std::ostringstream log;
    TrainResult res = train(tc, &log);

    CHECK(res.final_train_loss < res.initial_train_loss);
    CHECK(res.tokens == 30LL * 32);
    CHECK(res.final_ppl == doctest::Approx(std::exp(res.final_eval_loss)).epsilon(1e-9));

    // Metrics: one JSON object per eval interval (steps 10, 20, 30).
    std::ifstream metrics(res.metrics_path);
    REQUIRE(metrics.good());
    std::string line;
    int rows = 0;
    double last_train = 0;
    while (std::getline(metrics, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        CHECK(j.contains("step"));
        CHECK(j.contains("train_loss"));
        CHECK(j.contains("eval_loss"));
        CHECK(j.contains("ppl"));
        CHECK(j.contains("tokens"));
        CHECK(j.contains("wall_s"));
        last_train = j["train_loss"].get<double>();
        ++rows;
    }
    CHECK(rows == 3);
    CHECK(last_train > 0.0);

    ModelParams<float> back = load_checkpoint(res.checkpoint_path);
    CHECK(back.cfg.model_dim == 16);
    Corpus c = ingest_corpus(tc.corpus_path);
    EvalOptions eo;
    eo.max_windows = 2;
    double replay = evaluate(back, c.eval, eo);
    CHECK(replay == doctest::Approx(res.final_eval_loss).epsilon(1e-6));
}

TEST_CASE("evaluation is deterministic and needs enough bytes") {
    TempDir tmp;
    TrainConfig tc = tiny_train_config(tmp);
    write_synthetic_corpus(tc.corpus_path, 30000, 8);
    Corpus c = ingest_corpus(tc.corpus_path);
    ModelParams<float> mp = init_params<float>(tc.model, 9);
    EvalOptions eo;
    eo.max_windows = 3;
    double a = evaluate(mp, c.eval, eo);
    double b = evaluate(mp, c.eval, eo);
    CHECK(a == b);
    CHECK(a > 0.0);
    std::vector<uint8_t> tiny(tc.model.seq_len / 2, 65);
    CHECK_THROWS_AS(evaluate(mp, tiny, eo), ContractError);
}

TEST_CASE("preset bundles are shaped for side-by-side comparison") {
    auto names = preset_names();
    REQUIRE(names.size() >= 5);
    for (const std::string& name : names) {
        auto runs = preset_runs(name, "corpus.txt", "out");
        CHECK(runs.size() >= 2);
        for (const auto& run : runs) {
            CHECK(!run.name.empty());
            CHECK(run.config.corpus_path == "corpus.txt");
            CHECK(run.config.model.vocab == 256);
            run.config.model.validate();
        }
    }

    auto iso = preset_runs("iso-baselines", "c.txt", "o");
    REQUIRE(iso.size() == 3);
    bool saw_kvc = false;
    for (const auto& run : iso) {
        CHECK(run.config.steps == 2000);
        CHECK(run.config.model.layers == 2);
        CHECK(run.config.model.model_dim == 64);
        if (run.config.model.mode == ModelMode::BaselineKvc) {
            saw_kvc = true;
            // Width solved so the baseline stores no more than the compressed cache.
            CHECK(run.config.model.baseline_attn_dim == 16);
        }
    }
    CHECK(saw_kvc);

    auto sizes = preset_runs("chunk-sizes", "c.txt", "o");
    REQUIRE(sizes.size() == 4);
    for (const auto& run : sizes) CHECK(run.config.model.lead == run.config.model.chunk_size);

    CHECK_THROWS_AS(preset_runs("no-such-preset", "c.txt", "o"), ConfigError);
}
