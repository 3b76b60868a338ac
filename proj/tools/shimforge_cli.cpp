// shimforge: desk-scale watermark embedding, removal attacks, and evaluation
// around a small trainable diffusion model.
//
// Exit codes: 0 success, 2 config error, 3 numeric error, 4 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "shimforge/attack.hpp"
#include "shimforge/benchmark.hpp"
#include "shimforge/dataset.hpp"
#include "shimforge/manifest.hpp"
#include "shimforge/metrics.hpp"
#include "shimforge/png_io.hpp"
#include "shimforge/train.hpp"
#include "shimforge/weights_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shimforge;

namespace {

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::string weights;
    int jobs = 0;
    std::string out;
    bool force = false;
};

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& text, bool force) {
    io::require_fresh(path, force);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write: " + path);
    out << text;
}

diffusion::DenoiserParams load_weights_or_die(const std::string& path) {
    if (path.empty())
        throw ConfigError("this command needs trained weights (--weights FILE); run `shimforge train` first");
    return diffusion::load_weights(path);
}

struct Runtime {
    diffusion::DenoiserParams params;
    diffusion::NoiseSchedule sched;
    diffusion::TimeGrid grid;
};

Runtime make_runtime(const std::string& weights_path) {
    Runtime rt{load_weights_or_die(weights_path), {}, {}};
    rt.sched = diffusion::make_schedule(rt.params.cfg.T);
    rt.grid = diffusion::make_grid(rt.params.cfg.T, {});
    return rt;
}

// ------------------------------------------------------------ gen-data

int cmd_gen_data(const GlobalOpts& g, int n) {
    if (g.out.empty()) throw ConfigError("gen-data: --out DIR is required");
    fs::create_directories(g.out);
    RunManifest man;
    man.command = "gen-data";
    man.config = {{"n", n}, {"seed", g.seed}};
    man.master_seed = g.seed;
    man.stage_seeds["image"] = derive_seed(g.seed, "image", 0);
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05d.png", i);
        const std::string path = (fs::path(g.out) / name).string();
        io::require_fresh(path, g.force);
        io::write_png(path, dataset::make_scene(derive_seed(g.seed, "image", i)));
        man.outputs.push_back(path);
    }
    man.write((fs::path(g.out) / "manifest.json").string());
    std::cout << "wrote " << n << " images to " << g.out << "\n";
    return 0;
}

// ------------------------------------------------------------ train

int cmd_train(const GlobalOpts& g, const std::string& data_dir, long steps, int batch,
              const std::string& resume) {
    if (g.out.empty()) throw ConfigError("train: --out WEIGHTS is required");
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(data_dir))
        if (entry.path().extension() == ".png") paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());  // directory order is not deterministic
    if (paths.empty()) throw ConfigError("train: no PNG files in " + data_dir);
    std::vector<Image> images;
    images.reserve(paths.size());
    for (const std::string& p : paths) images.push_back(io::read_png(p));

    diffusion::DenoiserParams params;
    if (!resume.empty())
        params = diffusion::load_weights(resume);
    else
        params = diffusion::init_denoiser({}, derive_seed(g.seed, "init"));

    diffusion::TrainConfig tc;
    tc.steps = steps;
    tc.batch = batch;
    tc.seed = derive_seed(g.seed, "train-loop", static_cast<std::uint64_t>(params.train_step));
    const diffusion::TrainStats stats = diffusion::train_denoiser_images(params, images, tc);

    io::require_fresh(g.out, g.force);
    diffusion::save_weights(g.out, params);

    std::ostringstream csv;
    csv << "step,loss\n";
    csv.precision(17);
    for (const auto& [s, l] : stats.loss_log) csv << s << ',' << l << '\n';
    write_text_file(g.out + ".train_log.csv", csv.str(), true);

    RunManifest man;
    man.command = "train";
    man.config = {{"data_dir", data_dir}, {"steps", steps}, {"batch", batch},
                  {"seed", g.seed},       {"resume", resume}};
    man.master_seed = g.seed;
    man.stage_seeds["train-loop"] = tc.seed;
    man.inputs.push_back(data_dir);
    man.outputs = {g.out, g.out + ".train_log.csv"};
    man.write(g.out + ".manifest.json");

    std::cout << "trained to step " << stats.end_step << "; loss " << stats.first_window_mean
              << " -> " << stats.last_window_mean << "; weights at " << g.out << "\n";
    return 0;
}

// ------------------------------------------------------------ watermark

int cmd_watermark(const GlobalOpts& g, const std::string& scheme, const std::string& key_file,
                  bool new_key, double strength, const std::string& in_path) {
    if (g.out.empty()) throw ConfigError("watermark: --out FILE is required");

    watermark::AnyKey key;
    std::string key_out;
    if (!key_file.empty() && !new_key) {
        key = watermark::key_from_json(read_json_file(key_file));
        if (key.scheme != (scheme == "treering-generate" ? "treering" : scheme))
            throw ConfigError("watermark: key scheme does not match --scheme");
    } else {
        key.scheme = scheme == "treering-generate" ? "treering" : scheme;
        if (key.scheme == "treering") {
            key.ring.seed = derive_seed(g.seed, "key");
            if (strength > 0.0) key.ring.amplitude = strength;
        } else {
            key.bit = watermark::make_bitkey(
                derive_seed(g.seed, "key"),
                strength > 0.0 ? strength
                               : (key.scheme == "blocksvd" ? watermark::kDefaultBlockSvdStrength
                                                           : watermark::kDefaultSpreadStrength));
        }
        key_out = g.out + ".key.json";
    }

    Image result;
    RunManifest man;
    man.command = "watermark";
    man.master_seed = g.seed;
    if (scheme == "blocksvd" || scheme == "spread") {
        if (in_path.empty()) throw ConfigError("watermark: --in IMAGE is required for bit schemes");
        const Image img = io::read_png(in_path);
        result = scheme == "blocksvd" ? watermark::embed_blocksvd(img, key.bit)
                                      : watermark::embed_spread(img, key.bit);
        man.inputs.push_back(in_path);
    } else if (scheme == "treering-generate") {
        const Runtime rt = make_runtime(g.weights);
        result = watermark::treering_generate(key.ring, rt.params, rt.sched, rt.grid,
                                              derive_seed(g.seed, "treering-sample"))
                     .image;
        man.inputs.push_back(g.weights);
    } else {
        throw ConfigError("watermark: scheme must be blocksvd, spread, or treering-generate");
    }

    io::require_fresh(g.out, g.force);
    io::write_png(g.out, result);
    man.outputs.push_back(g.out);
    if (!key_out.empty()) {
        const json kj = key.scheme == "treering" ? watermark::treering_to_json(key.ring)
                                                 : watermark::bitkey_to_json(key.bit, key.scheme);
        write_text_file(key_out, kj.dump(2) + "\n", g.force);
        man.outputs.push_back(key_out);
    }
    man.config = {{"scheme", scheme}, {"key_file", key_file}, {"strength", strength}};
    man.write(g.out + ".manifest.json");
    std::cout << "wrote " << g.out << (key_out.empty() ? "" : " and " + key_out) << "\n";
    return 0;
}

// ------------------------------------------------------------ detect

int cmd_detect(const GlobalOpts& g, const std::string& key_file, const std::string& in_path) {
    const watermark::AnyKey key = watermark::key_from_json(read_json_file(key_file));
    const Image img = io::read_png(in_path);
    if (key.scheme == "treering") {
        const Runtime rt = make_runtime(g.weights);
        const auto score = watermark::treering_detect(img, key.ring, rt.params, rt.sched, rt.grid);
        std::cout << "scheme treering score " << score.score << "\n";
    } else {
        const auto [score, bits] = key.scheme == "blocksvd"
                                       ? watermark::detect_blocksvd(img, key.bit)
                                       : watermark::detect_spread(img, key.bit);
        std::cout << "scheme " << key.scheme << " BA " << score.score << " bits "
                  << watermark::bits_to_hex(bits) << "\n";
    }
    return 0;
}

// ------------------------------------------------------------ attack

int cmd_attack(const GlobalOpts& g, const std::string& in_path, const std::string& mode,
               const std::string& preset, const std::string& config_file, int t_star, int rounds,
               const std::string& dump_iters_csv) {
    if (g.out.empty()) throw ConfigError("attack: --out FILE is required");
    const Runtime rt = make_runtime(g.weights);
    const Image img = io::read_png(in_path);

    RunManifest man;
    man.command = "attack";
    man.master_seed = g.seed;
    man.inputs = {in_path, g.weights};

    if (mode == "regen" || mode == "rinse") {
        if (!rt.grid.contains(t_star))
            throw ConfigError("attack: --t-star must be a sampler grid timestep");
        const Image out = mode == "regen"
                              ? attack::regen(rt.params, rt.sched, rt.grid, img, t_star,
                                              derive_seed(g.seed, "attack"))
                              : attack::rinse(rt.params, rt.sched, rt.grid, img, t_star, rounds,
                                              derive_seed(g.seed, "attack"));
        io::require_fresh(g.out, g.force);
        io::write_png(g.out, out);
        man.config = {{"mode", mode}, {"t_star", t_star}, {"rounds", rounds}, {"seed", g.seed}};
        man.outputs.push_back(g.out);
        man.write(g.out + ".manifest.json");
        std::cout << "wrote " << g.out << "\n";
        return 0;
    }
    if (mode != "shim") throw ConfigError("attack: --mode must be shim, regen, or rinse");

    attack::AttackConfig acfg;
    if (!config_file.empty())
        acfg = attack::config_from_json(read_json_file(config_file));
    else
        acfg = attack::AttackConfig::preset(preset.empty() ? "late-noisy" : preset);
    acfg.seed = derive_seed(g.seed, "attack");

    attack::IterDumps dumps;
    if (!dump_iters_csv.empty()) {
        std::stringstream ss(dump_iters_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) dumps.iters.push_back(std::stoi(tok));
    }
    const attack::AttackResult res = attack::run_attack(rt.params, rt.sched, rt.grid, img, acfg,
                                                        dumps.iters.empty() ? nullptr : &dumps);

    io::require_fresh(g.out, g.force);
    io::write_png(g.out, res.attacked);
    man.outputs.push_back(g.out);
    write_text_file(g.out + ".trace.csv", attack::traces_to_csv(res.traces), g.force);
    man.outputs.push_back(g.out + ".trace.csv");
    for (const auto& [iter, frame] : dumps.frames) {
        const std::string p = g.out + ".iter" + std::to_string(iter) + ".png";
        io::require_fresh(p, g.force);
        io::write_png(p, frame);
        man.outputs.push_back(p);
    }
    man.config = attack::config_to_json(acfg);
    man.config["mode"] = "shim";
    man.write(g.out + ".manifest.json");
    std::cout << "wrote " << g.out << " (" << res.denoiser_calls << " denoiser calls, "
              << res.wall_seconds << " s)\n";
    return 0;
}

// ------------------------------------------------------------ eval

int cmd_eval(const GlobalOpts& g, const std::string& config_file) {
    if (g.out.empty()) throw ConfigError("eval: --out DIR is required");
    const Runtime rt = make_runtime(g.weights);
    bench::BenchmarkConfig bc;
    if (!config_file.empty()) bc = bench::benchmark_config_from_json(read_json_file(config_file));
    if (g.seed != 0) bc.seed = g.seed;
    bc.jobs = g.jobs;

    const bench::MetricsReport rep = bench::run_benchmark(rt.params, rt.sched, rt.grid, bc);

    fs::create_directories(g.out);
    write_text_file((fs::path(g.out) / "report.json").string(), rep.to_json().dump(2) + "\n", g.force);
    write_text_file((fs::path(g.out) / "report.txt").string(), rep.to_text(), g.force);
    for (const std::string& scheme : bc.schemes)
        write_text_file((fs::path(g.out) / ("roc_" + scheme + ".csv")).string(),
                        rep.roc_csv(scheme), g.force);

    RunManifest man;
    man.command = "eval";
    man.config = rep.config;
    man.master_seed = bc.seed;
    man.stage_seeds = rep.stage_seeds;
    man.inputs = {g.weights, config_file};
    man.outputs = {(fs::path(g.out) / "report.json").string(),
                   (fs::path(g.out) / "report.txt").string()};
    man.write((fs::path(g.out) / "manifest.json").string());

    std::cout << rep.to_text();
    if (rep.any_failed) {
        std::cerr << "some cells failed; see report\n";
        return 1;
    }
    return 0;
}

// ------------------------------------------------------------ diffgrid

int cmd_diffgrid(const GlobalOpts& g, const std::string& target_path,
                 const std::vector<std::string>& dump_paths, double gain) {
    if (g.out.empty()) throw ConfigError("diffgrid: --out FILE is required");
    const Image target = io::read_png(target_path);
    std::vector<Image> dumps;
    for (const std::string& p : dump_paths) {
        Image d = io::read_png(p);
        if (!d.same_shape(target)) throw ShapeError("diffgrid: dump shape differs from target");
        dumps.push_back(std::move(d));
    }
    if (dumps.empty()) throw ConfigError("diffgrid: need at least one iterate dump");

    // Panels: target, |target - dump_k| heatmaps, final dump.
    const int panels = static_cast<int>(dumps.size()) + 2;
    const int h = target.height, w = target.width;
    Image grid(h, w * panels, 3);
    auto blit = [&](int panel, const Image& src) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    grid.at(c, y, panel * w + x) = src.channels == 3 ? src.at(c, y, x) : src.at(0, y, x);
    };
    blit(0, target);
    for (std::size_t k = 0; k < dumps.size(); ++k) {
        Image diff(h, w, 3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double d = 0.0;
                for (int c = 0; c < target.channels; ++c)
                    d += std::abs(target.at(c, y, x) - dumps[k].at(c, y, x));
                d = clamp01(gain * d / target.channels);
                for (int c = 0; c < 3; ++c) diff.at(c, y, x) = d;
            }
        blit(static_cast<int>(k) + 1, diff);
    }
    blit(panels - 1, dumps.back());

    io::require_fresh(g.out, g.force);
    io::write_png(g.out, grid);

    RunManifest man;
    man.command = "diffgrid";
    man.config = {{"target", target_path}, {"dumps", dump_paths}, {"gain", gain}};
    man.inputs = dump_paths;
    man.inputs.push_back(target_path);
    man.outputs = {g.out};
    man.write(g.out + ".manifest.json");
    std::cout << "wrote " << g.out << " (" << panels << " panels)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shimforge: watermarks, regeneration attacks, and shim optimization at desk scale"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "master seed")->capture_default_str();
    app.add_option("--weights", g.weights, "weights file");
    app.add_option("--jobs", g.jobs, "worker cap for eval fan-out");
    app.add_option("--out", g.out, "output file or directory");
    app.add_flag("--force", g.force, "overwrite existing outputs");
    app.fallthrough();

    int gen_n = 2000;
    auto* gen = app.add_subcommand("gen-data", "generate procedural training images");
    gen->add_option("--n", gen_n, "image count")->capture_default_str();

    std::string train_data, train_resume;
    long train_steps = 20000;
    int train_batch = 4;
    auto* train = app.add_subcommand("train", "train the denoiser");
    train->add_option("--data", train_data, "directory of PNGs")->required();
    train->add_option("--steps", train_steps, "optimizer steps")->capture_default_str();
    train->add_option("--batch", train_batch, "batch size")->capture_default_str();
    train->add_option("--resume", train_resume, "continue from weights file");

    std::string wm_scheme, wm_key, wm_in;
    bool wm_new_key = false;
    double wm_strength = 0.0;
    auto* wm = app.add_subcommand("watermark", "embed a watermark / generate a watermarked image");
    wm->add_option("--scheme", wm_scheme, "blocksvd | spread | treering-generate")->required();
    wm->add_option("--key", wm_key, "key JSON file");
    wm->add_flag("--new-key", wm_new_key, "derive a fresh key from --seed");
    wm->add_option("--strength", wm_strength, "override embedding strength");
    wm->add_option("--in", wm_in, "input PNG (bit schemes)");

    std::string det_key, det_in;
    auto* det = app.add_subcommand("detect", "run a detector against a key");
    det->add_option("--key", det_key, "key JSON file")->required();
    det->add_option("--in", det_in, "input PNG")->required();

    std::string atk_in, atk_mode = "shim", atk_preset, atk_config, atk_dump;
    int atk_tstar = 140, atk_rounds = 2;
    auto* atk = app.add_subcommand("attack", "run the shim attack or a regeneration baseline");
    atk->add_option("--in", atk_in, "input PNG")->required();
    atk->add_option("--mode", atk_mode, "shim | regen | rinse")->capture_default_str();
    atk->add_option("--preset", atk_preset, "late-noisy | early-inverse");
    atk->add_option("--config", atk_config, "attack config JSON");
    atk->add_option("--t-star", atk_tstar, "regen/rinse noise timestep")->capture_default_str();
    atk->add_option("--rounds", atk_rounds, "rinse rounds")->capture_default_str();
    atk->add_option("--dump-iters", atk_dump, "comma-separated optimizer iterations to dump");

    std::string eval_config;
    auto* ev = app.add_subcommand("eval", "run the benchmark and write reports");
    ev->add_option("--config", eval_config, "benchmark config JSON");

    std::string dg_target;
    std::vector<std::string> dg_dumps;
    double dg_gain = 4.0;
    auto* dg = app.add_subcommand("diffgrid", "assemble a target/diff/final panel grid");
    dg->add_option("--target", dg_target, "target PNG")->required();
    dg->add_option("--dumps", dg_dumps, "iterate dump PNGs in order")->required();
    dg->add_option("--gain", dg_gain, "diff amplification")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(g, gen_n);
        if (train->parsed()) return cmd_train(g, train_data, train_steps, train_batch, train_resume);
        if (wm->parsed()) return cmd_watermark(g, wm_scheme, wm_key, wm_new_key, wm_strength, wm_in);
        if (det->parsed()) return cmd_detect(g, det_key, det_in);
        if (atk->parsed())
            return cmd_attack(g, atk_in, atk_mode, atk_preset, atk_config, atk_tstar, atk_rounds, atk_dump);
        if (ev->parsed()) return cmd_eval(g, eval_config);
        if (dg->parsed()) return cmd_diffgrid(g, dg_target, dg_dumps, dg_gain);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
