// farl: command-line driver for data generation, training, evaluation and exports.
//
// Settings resolve as: command-line flag, then --config file, then built-in default.
// Every configuration key is also a flag (underscores become dashes).

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "farl/io.hpp"
#include "farl/pipeline.hpp"
#include "farl/selfcheck.hpp"

namespace {

using namespace farl;

struct Common {
    std::string config_path;
    std::map<std::string, std::string> flags;
};

std::string flag_name(const std::string& key) {
    std::string f = key;
    for (char& c : f)
        if (c == '_') c = '-';
    return "--" + f;
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "key=value settings file");
    for (const auto& key : RunConfig::keys()) cmd->add_option(flag_name(key), c.flags[key]);
}

RunConfig resolve(CLI::App* cmd, const Common& c) {
    io::Config cfg;
    if (!c.config_path.empty()) cfg = io::Config::load(c.config_path);
    for (const auto& [key, value] : c.flags)
        if (cmd->count(flag_name(key))) cfg.set(key, value);
    return RunConfig::from(cfg);
}

void write_gray(const fs::path& p, const Image& img) { io::write_pgm(p, img); }

int cmd_decompose(const std::string& in, const fs::path& out_dir) {
    const Decomposition d = render_decomposition(io::read_ppm(in));
    fs::create_directories(out_dir);
    write_gray(out_dir / "phase.pgm", d.phase);
    write_gray(out_dir / "amp.pgm", d.amp);
    write_gray(out_dir / "spectrum-log-amp.pgm", d.spectrum);
    std::cout << "decompose: wrote phase.pgm, amp.pgm, spectrum-log-amp.pgm to " << out_dir.string() << "\n";
    return 0;
}

int cmd_attnmap(const RunConfig& rc, const std::string& image, const fs::path& out_dir) {
    const Image raw = io::read_ppm(image);
    Backbone bb = load_stage_backbone(rc);
    if (!fs::exists(rc.adapter_path())) throw MissingArtifact(rc.adapter_path(), "adapt");
    const Adapter ad = adapter_from_checkpoint(io::load_checkpoint(rc.adapter_path()), bb);
    const AttentionExport ex = export_attention(bb, ad, raw, rc.decompose_normalized);
    fs::create_directories(out_dir);
    if (ex.phase_heat) write_gray(out_dir / "attn-phase.pgm", *ex.phase_heat);
    if (ex.amp_heat) write_gray(out_dir / "attn-amp.pgm", *ex.amp_heat);
    write_gray(out_dir / "phase.pgm", ex.decomposition.phase);
    write_gray(out_dir / "amp.pgm", ex.decomposition.amp);
    std::cout << "attnmap: wrote heatmaps and decomposition to " << out_dir.string() << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t points) {
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p) {
        for (const auto& r : op_gradchecks(seed + p)) {
            std::cout << "op   " << r.name << " point " << p << " " << r.max_rel_error << "\n";
            worst = std::max(worst, r.max_rel_error);
        }
        for (const auto& r : loss_gradchecks(seed + p)) {
            std::cout << "loss " << r.name << " point " << p << " " << r.max_rel_error << "\n";
            worst = std::max(worst, r.max_rel_error);
        }
    }
    std::cout << "max relative error " << worst << (worst < 1e-4 ? " (ok)" : " (FAILED)") << "\n";
    return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FARL: Fourier-attentive representation learning on a synthetic shapes benchmark"};
    app.require_subcommand(1);

    std::map<std::string, Common> common;
    auto sub = [&](const char* name, const char* help) {
        CLI::App* c = app.add_subcommand(name, help);
        add_common(c, common[name]);
        return c;
    };

    std::string in_path, out_path, image_path;
    std::size_t points = 3;
    CLI::App* decompose = sub("decompose", "phase-only, amplitude-only and log-spectrum images of a PPM");
    decompose->add_option("--in", in_path, "input PPM")->required();

    CLI::App* gen = sub("gen-data", "generate the synthetic dataset directory");
    CLI::App* pre = sub("pretrain", "contrastive pretraining of the frozen backbone");
    CLI::App* adapt = sub("adapt", "train one adapter on the 16-shot base split");
    CLI::App* eval = sub("eval", "zero-shot and adapted base/novel metrics");
    CLI::App* ablate = sub("ablate", "train and evaluate every variant over several seeds");
    CLI::App* attn = sub("attnmap", "attention heatmaps and decomposition for one image");
    attn->add_option("--image", image_path, "input PPM")->required();
    attn->add_option("--dest", out_path, "directory for the PGM outputs")->required();
    CLI::App* grad = sub("gradcheck", "finite-difference check of every op and of the objective");
    grad->add_option("--points", points, "seeded points per check")->check(CLI::PositiveNumber);
    CLI::App* pipe = sub("pipeline", "gen-data, pretrain, adapt, eval and ablate in sequence");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        const RunConfig rc = resolve(cmd, common[cmd->get_name()]);
        if (cmd == decompose) return cmd_decompose(in_path, rc.out_dir);
        if (cmd == gen) stage_gen_data(rc, std::cout);
        else if (cmd == pre) stage_pretrain(rc, std::cout);
        else if (cmd == adapt) stage_adapt(rc, std::cout);
        else if (cmd == eval) stage_eval(rc, std::cout);
        else if (cmd == ablate) stage_ablate(rc, std::cout);
        else if (cmd == attn) return cmd_attnmap(rc, image_path, out_path);
        else if (cmd == grad) return cmd_gradcheck(rc.seed, points);
        else if (cmd == pipe) run_pipeline(rc, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "farl: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
