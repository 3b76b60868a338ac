#pragma once

// The benchmark runner: scheme x attack cells with detection and quality
// statistics, thresholds calibrated at 1% FPR on a fixed null set, and a
// report that serializes deterministically for a given config and seed.

#include <atomic>

#include "shimforge/attack.hpp"
#include "shimforge/dataset.hpp"
#include "shimforge/metrics.hpp"
#include "shimforge/png_io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace shimforge::bench {

struct BenchmarkConfig {
    int n_images = 64;
    int null_size = 500;
    std::uint64_t seed = 0;
    int regen_t = 140;
    int rinse_rounds = 2;
    std::vector<std::string> schemes = {"blocksvd", "spread", "treering"};
    std::vector<std::string> attacks = {"watermarked", "regen", "rinse", "shim-late", "shim-early"};
    double blocksvd_strength = watermark::kDefaultBlockSvdStrength;
    double spread_strength = watermark::kDefaultSpreadStrength;
    double treering_amplitude = 2.0;
    int jobs = 0;  // worker cap for per-image fan-out; 0 = library default
};

inline nlohmann::json benchmark_config_to_json(const BenchmarkConfig& c) {
    return {{"n_images", c.n_images},
            {"null_size", c.null_size},
            {"seed", c.seed},
            {"regen_t", c.regen_t},
            {"rinse_rounds", c.rinse_rounds},
            {"schemes", c.schemes},
            {"attacks", c.attacks},
            {"blocksvd_strength", c.blocksvd_strength},
            {"spread_strength", c.spread_strength},
            {"treering_amplitude", c.treering_amplitude}};
}

inline BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j) {
    BenchmarkConfig c;
    c.n_images = j.value("n_images", c.n_images);
    c.null_size = j.value("null_size", c.null_size);
    c.seed = j.value("seed", static_cast<std::uint64_t>(0));
    c.regen_t = j.value("regen_t", c.regen_t);
    c.rinse_rounds = j.value("rinse_rounds", c.rinse_rounds);
    if (j.contains("schemes")) c.schemes = j.at("schemes").get<std::vector<std::string>>();
    if (j.contains("attacks")) c.attacks = j.at("attacks").get<std::vector<std::string>>();
    c.blocksvd_strength = j.value("blocksvd_strength", c.blocksvd_strength);
    c.spread_strength = j.value("spread_strength", c.spread_strength);
    c.treering_amplitude = j.value("treering_amplitude", c.treering_amplitude);
    return c;
}

struct CellStats {
    double ba = std::numeric_limits<double>::quiet_NaN();
    double acc = std::numeric_limits<double>::quiet_NaN();
    double tpr = std::numeric_limits<double>::quiet_NaN();
    double psnr_db = std::numeric_limits<double>::quiet_NaN();
    double ssim_v = std::numeric_limits<double>::quiet_NaN();
    double fd = std::numeric_limits<double>::quiet_NaN();
    int n = 0;
    bool failed = false;
    std::string error;
};

struct MetricsReport {
    nlohmann::json config;
    std::uint64_t master_seed = 0;
    std::map<std::string, std::uint64_t> stage_seeds;
    std::map<std::string, CellStats> cells;                   // "scheme/attack"
    std::map<std::string, double> thresholds;                 // per scheme
    std::map<std::string, std::vector<double>> null_scores;   // per scheme
    std::map<std::string, std::map<std::string, std::vector<double>>> positives;
    bool any_failed = false;

    nlohmann::json to_json() const;
    std::string to_text() const;
    std::string roc_csv(const std::string& scheme) const;
};

namespace detail {

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// PSNR capped for aggregation so one identical pair cannot drag a mean to
/// infinity; 99 dB is far above anything the pipeline produces honestly.
inline double finite_psnr(const Image& a, const Image& b) {
    const double v = metrics::psnr(a, b);
    return std::isinf(v) ? 99.0 : v;
}

template <typename Fn>
inline void parallel_for(int n, int jobs, Fn&& fn) {
#ifdef _OPENMP
    if (jobs > 0) {
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
        for (int i = 0; i < n; ++i) fn(i);
    } else {
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < n; ++i) fn(i);
    }
#else
    (void)jobs;
    for (int i = 0; i < n; ++i) fn(i);
#endif
}

}  // namespace detail

/// Runs every scheme x attack cell. All randomness comes from the seed
/// manifest; stage boundaries pass through 8-bit quantization, the same
/// rounding a PNG save would apply.
inline MetricsReport run_benchmark(const diffusion::DenoiserParams& params,
                                   const diffusion::NoiseSchedule& sched,
                                   const diffusion::TimeGrid& grid, const BenchmarkConfig& cfg) {
    MetricsReport rep;
    rep.config = benchmark_config_to_json(cfg);
    rep.master_seed = cfg.seed;
    auto stage = [&](const std::string& name) {
        const std::uint64_t s = derive_seed(cfg.seed, name);
        rep.stage_seeds[name] = s;
        return s;
    };

    const int n = cfg.n_images;
    std::vector<Image> originals(n);
    stage("bench-data");
    for (int i = 0; i < n; ++i)
        originals[i] = dataset::make_scene(derive_seed(cfg.seed, "bench-data", i));

    std::vector<Image> null_images(cfg.null_size);
    stage("null");
    for (int i = 0; i < cfg.null_size; ++i)
        null_images[i] = io::quantize_u8(dataset::make_scene(derive_seed(cfg.seed, "null", i)));

    for (const std::string& scheme : cfg.schemes) {
        const bool is_ring = scheme == "treering";
        watermark::BitKey bitkey;
        watermark::TreeRingKey ringkey;
        std::vector<Image> watermarked(n);
        std::vector<Image> reference;  // distribution baseline for FD-DCT

        if (is_ring) {
            ringkey.seed = derive_seed(cfg.seed, "key-" + scheme);
            ringkey.amplitude = cfg.treering_amplitude;
            rep.stage_seeds["key-" + scheme] = ringkey.seed;
            stage("tr-gen");
            detail::parallel_for(n, cfg.jobs, [&](int i) {
                watermarked[i] = io::quantize_u8(
                    watermark::treering_generate(ringkey, params, sched, grid,
                                                 derive_seed(cfg.seed, "tr-gen", i))
                        .image);
            });
            reference.resize(n);
            stage("tr-ref");
            detail::parallel_for(n, cfg.jobs, [&](int i) {
                Rng rng(derive_seed(cfg.seed, "tr-ref", i));
                const Tensor x_T = Tensor::randn(
                    {params.cfg.in_channels, params.cfg.image_size, params.cfg.image_size}, rng);
                reference[i] = io::quantize_u8(
                    diffusion::decode(diffusion::generate(params, sched, grid, x_T, params.null_ctx)));
            });
        } else {
            bitkey = watermark::make_bitkey(
                derive_seed(cfg.seed, "key-" + scheme),
                scheme == "blocksvd" ? cfg.blocksvd_strength : cfg.spread_strength);
            rep.stage_seeds["key-" + scheme] = bitkey.seed;
            for (int i = 0; i < n; ++i)
                watermarked[i] = io::quantize_u8(scheme == "blocksvd"
                                                     ? watermark::embed_blocksvd(originals[i], bitkey)
                                                     : watermark::embed_spread(originals[i], bitkey));
            reference = originals;
        }

        auto detect_score = [&](const Image& img) {
            if (is_ring) return watermark::treering_detect(img, ringkey, params, sched, grid).score;
            return scheme == "blocksvd" ? watermark::detect_blocksvd(img, bitkey).first.score
                                        : watermark::detect_spread(img, bitkey).first.score;
        };

        std::vector<double>& nulls = rep.null_scores[scheme];
        nulls.assign(cfg.null_size, 0.0);
        detail::parallel_for(cfg.null_size, cfg.jobs,
                             [&](int i) { nulls[i] = detect_score(null_images[i]); });

        for (const std::string& attack_name : cfg.attacks) {
            const std::string cell_key = scheme + "/" + attack_name;
            CellStats cell;
            cell.n = n;
            try {
                std::vector<Image> attacked(n);
                const std::string tag = attack_name + "-" + scheme;
                stage(tag);
                if (attack_name == "watermarked") {
                    attacked = watermarked;
                } else if (attack_name == "regen") {
                    detail::parallel_for(n, cfg.jobs, [&](int i) {
                        attacked[i] = io::quantize_u8(attack::regen(
                            params, sched, grid, watermarked[i], cfg.regen_t,
                            derive_seed(cfg.seed, tag, i)));
                    });
                } else if (attack_name == "rinse") {
                    detail::parallel_for(n, cfg.jobs, [&](int i) {
                        attacked[i] = io::quantize_u8(attack::rinse(
                            params, sched, grid, watermarked[i], cfg.regen_t, cfg.rinse_rounds,
                            derive_seed(cfg.seed, tag, i)));
                    });
                } else if (attack_name == "shim-late" || attack_name == "shim-early") {
                    attack::AttackConfig acfg = attack::AttackConfig::preset(
                        attack_name == "shim-late" ? "late-noisy" : "early-inverse");
                    detail::parallel_for(n, cfg.jobs, [&](int i) {
                        attack::AttackConfig ac = acfg;
                        ac.seed = derive_seed(cfg.seed, tag, i);
                        attacked[i] = io::quantize_u8(
                            attack::run_attack(params, sched, grid, watermarked[i], ac).attacked);
                    });
                } else {
                    throw ConfigError("run_benchmark: unknown attack " + attack_name);
                }

                std::vector<double> scores(n);
                detail::parallel_for(n, cfg.jobs, [&](int i) { scores[i] = detect_score(attacked[i]); });
                rep.positives[scheme][attack_name] = scores;

                if (!is_ring) {
                    cell.ba = detail::mean(scores);
                    int acc_hits = 0;
                    for (double s : scores)
                        if (metrics::acc_rule(s, watermark::kBits)) ++acc_hits;
                    cell.acc = static_cast<double>(acc_hits) / n;
                }
                const metrics::RocResult roc = metrics::tpr_at_fpr(nulls, scores, 0.01);
                rep.thresholds[scheme] = roc.threshold;
                cell.tpr = roc.tpr;

                if (!(is_ring && attack_name == "watermarked")) {
                    const std::vector<Image>& base = attack_name == "watermarked" ? originals : watermarked;
                    std::vector<double> ps(n), ss(n);
                    for (int i = 0; i < n; ++i) {
                        ps[i] = detail::finite_psnr(attacked[i], base[i]);
                        ss[i] = metrics::ssim(attacked[i], base[i]);
                    }
                    cell.psnr_db = detail::mean(ps);
                    cell.ssim_v = detail::mean(ss);
                }
                cell.fd = metrics::frechet_dct(attacked, reference);
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.error = e.what();
                rep.any_failed = true;
            }
            rep.cells[cell_key] = cell;
        }
    }
    return rep;
}

// ------------------------------------------------------------ serialization

inline nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["note"] = "FD-DCT is a Frechet distance over 8x8 DCT luminance features; "
                "its values are not comparable to Inception-based FID.";
    j["tool_version"] = kToolVersion;
    j["config"] = config;
    j["master_seed"] = master_seed;
    j["stage_seeds"] = stage_seeds;
    nlohmann::json cellsj;
    for (const auto& [key, c] : cells) {
        nlohmann::json cj;
        cj["n"] = c.n;
        if (c.failed) {
            cj["failed"] = true;
            cj["error"] = c.error;
        } else {
            auto put = [&](const char* name, double v) {
                if (std::isnan(v))
                    cj[name] = nullptr;
                else
                    cj[name] = v;
            };
            put("BA", c.ba);
            put("ACC", c.acc);
            put("T@1%F", c.tpr);
            put("PSNR", c.psnr_db);
            put("SSIM", c.ssim_v);
            put("FD-DCT", c.fd);
        }
        cellsj[key] = cj;
    }
    j["cells"] = cellsj;
    nlohmann::json th;
    for (const auto& [scheme, t] : thresholds) th[scheme] = t;
    j["thresholds"] = th;
    return j;
}

inline std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os << "shimforge benchmark report (tool " << kToolVersion << ")\n";
    os << "note: FD-DCT is a Frechet distance over DCT features; not comparable to Inception FID.\n";
    os << "master seed: " << master_seed << "\n\n";
    std::vector<std::string> schemes;
    for (const auto& [key, c] : cells) {
        const std::string s = key.substr(0, key.find('/'));
        if (std::find(schemes.begin(), schemes.end(), s) == schemes.end()) schemes.push_back(s);
    }
    char line[256];
    for (const std::string& scheme : schemes) {
        const auto th = thresholds.find(scheme);
        os << scheme;
        if (th != thresholds.end()) {
            std::snprintf(line, sizeof line, "  (threshold@1%%FPR = %.6g)", th->second);
            os << line;
        }
        os << '\n';
        std::snprintf(line, sizeof line, "  %-12s %6s %6s %7s %7s %6s %8s %4s\n", "attack", "BA",
                      "ACC", "T@1%F", "PSNR", "SSIM", "FD-DCT", "n");
        os << line;
        for (const auto& [key, c] : cells) {
            if (key.substr(0, key.find('/')) != scheme) continue;
            const std::string attack_name = key.substr(key.find('/') + 1);
            if (c.failed) {
                std::snprintf(line, sizeof line, "  %-12s FAILED: %s\n", attack_name.c_str(),
                              c.error.c_str());
                os << line;
                continue;
            }
            auto fmt = [](double v, const char* f, char* buf, std::size_t bufn) {
                if (std::isnan(v))
                    std::snprintf(buf, bufn, "%s", "-");
                else
                    std::snprintf(buf, bufn, f, v);
                return buf;
            };
            char ba[16], acc[16], tpr[16], ps[16], ssim_s[16], fd[16];
            std::snprintf(line, sizeof line, "  %-12s %6s %6s %7s %7s %6s %8s %4d\n",
                          attack_name.c_str(), fmt(c.ba, "%.3f", ba, 16), fmt(c.acc, "%.3f", acc, 16),
                          fmt(c.tpr, "%.3f", tpr, 16), fmt(c.psnr_db, "%.2f", ps, 16),
                          fmt(c.ssim_v, "%.3f", ssim_s, 16), fmt(c.fd, "%.3f", fd, 16), c.n);
            os << line;
        }
        os << '\n';
    }
    return os.str();
}

inline std::string MetricsReport::roc_csv(const std::string& scheme) const {
    std::ostringstream os;
    os << "set,index,score\n";
    os.precision(17);
    const auto ns = null_scores.find(scheme);
    if (ns != null_scores.end())
        for (std::size_t i = 0; i < ns->second.size(); ++i)
            os << "null," << i << ',' << ns->second[i] << '\n';
    const auto ps = positives.find(scheme);
    if (ps != positives.end())
        for (const auto& [attack_name, scores] : ps->second)
            for (std::size_t i = 0; i < scores.size(); ++i)
                os << attack_name << ',' << i << ',' << scores[i] << '\n';
    return os.str();
}

}  // namespace shimforge::bench
