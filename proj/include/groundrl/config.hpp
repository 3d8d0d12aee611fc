#pragma once

// Run configuration: a flat "key = value" text file. Unknown keys are
// rejected; every key has a default.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "groundrl/env.hpp"
#include "groundrl/lang.hpp"
#include "groundrl/mem.hpp"
#include "groundrl/rl.hpp"
#include "groundrl/tsne.hpp"

namespace groundrl {

struct RunConfig {
    env::EnvConfig env;

    int data_quota = 1000;
    std::uint64_t data_seed = 1;
    int data_max_episodes = 200000;

    lang::Word2VecConfig w2v;
    int w2v_repeats = 20;

    mem::MemConfig mem;  // vocab_size is filled in from the vocabulary
    mem::MemTrainConfig mem_train;

    tsne::TsneConfig tsne;
    int tsne_per_class = 500;

    rl::RLConfig rl;
    std::string rl_script;  // empty selects the built-in script
    int rl_eval_episodes = 100;

    std::string run_dir = "runs";

    RunConfig();

    // Applies one assignment. Throws ConfigError for unknown keys or bad values.
    void set(std::string_view key, std::string_view value);
    // Cross-field checks; throws ConfigError.
    void validate() const;
    // Every key with its effective value, one "key = value" per line, sorted.
    std::string to_text() const;
    static std::vector<std::string> keys();

private:
    // Propagates shared settings (grid size, word and embedding dims) into
    // the module configs that repeat them.
    void sync();
};

// Reads assignments into config. Blank lines and '#' comments are ignored.
// Errors cite the 1-based line number.
void parse_config(std::string_view text, RunConfig& config);
void load_config(const std::string& path, RunConfig& config);

}  // namespace groundrl
