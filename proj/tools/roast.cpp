#include <algorithm>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "roast/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"roast: attack simulation, risk profiling, vulnerability clustering and selective detector training"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::string out_dir;
    bool force = false;
    bool timing_strict = false;
    int jobs = 1;

    const std::vector<std::pair<std::string, std::string>> commands{
        {"run", "run every stage in order"},
        {"attack", "train the victim and simulate attacks on both splits"},
        {"risk", "fit the severity model and build risk profiles"},
        {"cluster", "cluster risk profiles and label vulnerability"},
        {"train", "build training sets and fit detectors"},
        {"evaluate", "score detectors on the test split and write reports"},
        {"sensitivity", "threshold and coefficient Jaccard sweeps"},
        {"outlier-stats", "per-patient outlier fractions of the cohort"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config,-c", config_path, "JSON run config")->required()->check(CLI::ExistingFile);
        sub->add_option("--out,-o", out_dir, "output directory (overrides output_dir)");
        sub->add_flag("--force", force, "recompute even when the cache is current");
        sub->add_option("--jobs,-j", jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_flag("--timing-strict", timing_strict, "fit detectors one at a time for clean wall-clock timings");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    const std::string stage = app.get_subcommands().front()->get_name();

    try {
        auto cfg = roast::load_config(config_path);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        roast::Pipeline pipeline(std::move(cfg), {jobs, force, timing_strict});
        const auto ran = pipeline.execute(stage);
        for (const auto& s : roast::stage_names()) {
            if (stage != "run" && s != stage) continue;
            const bool computed = std::find(ran.begin(), ran.end(), s) != ran.end();
            std::cerr << s << ": " << (computed ? "done" : "cached") << '\n';
        }
        std::cerr << "artifacts in " << pipeline.out_dir().string() << '\n';
        return 0;
    } catch (const roast::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const roast::StageError& e) {
        std::cerr << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "stage '" << stage << "' failed: " << e.what() << '\n';
        return 3;
    }
}
