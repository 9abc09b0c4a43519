#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcad/error.hpp"
#include "lcad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lcad;

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

std::vector<ContourMask> load_bindings(const fs::path& file, const std::vector<std::string>& words) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open mask binding file " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("mask binding file " + file.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("mask binding file must map mask filenames to token positions");
  std::vector<ContourMask> out;
  int k = 0;
  for (auto it = j.begin(); it != j.end(); ++it, ++k) {
    const Mask m = load_mask(file.parent_path() / it.key());
    int token = -1;
    if (it.value().is_number_integer()) {
      token = it.value().get<int>();
    } else if (it.value().is_string()) {
      const std::string w = it.value().get<std::string>();
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i] == w) {
          token = static_cast<int>(i);
          break;
        }
      }
      if (token < 0) throw ValidationError("colour word '" + w + "' does not occur in the description");
    } else {
      throw ValidationError("binding for " + it.key() + " must be a token position or a colour word");
    }
    if (token < 0 || token >= static_cast<int>(words.size())) {
      throw ValidationError("binding for " + it.key() + " points at token " + std::to_string(token) +
                            ", outside the description");
    }
    out.push_back(ContourMask::make(m.height, m.width, m.bits, k, token));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-based colorization with latent diffusion (toy scale)"};
  app.require_subcommand(1);
  std::string config_path, ablate;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "flat key=value run configuration");
  auto* seed_opt = app.add_option("--seed", seed, "override the run seed");
  auto* ablate_opt = app.add_option("--ablate", ablate, "comma list of no_lic,no_slr,no_iss");
  app.add_option("--set", sets, "override a config key (key=value)");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/eval splits");
  int train_n = -1, eval_n = -1;
  gen->add_option("--train-scenes", train_n);
  gen->add_option("--eval-scenes", eval_n);

  auto* tpix = app.add_subcommand("train-pixel", "train the compression and luminance encoders");
  auto* tlat = app.add_subcommand("train-latent", "train the conditional denoiser");

  auto* col = app.add_subcommand("colorize", "colorize a grayscale image or a dataset split");
  std::string gray_path, text, masks_path, out_path, split, level_name_s = "complete";
  int limit = 0;
  col->add_option("--gray", gray_path, "grayscale (or colour) PNG input");
  col->add_option("--text", text, "description");
  col->add_option("--masks", masks_path, "JSON mapping mask PNG -> token position or colour word");
  col->add_option("--out", out_path, "output PNG (single image) or directory (split)")->required();
  col->add_option("--split", split, "colorize a dataset split (train|eval) instead of one image");
  col->add_option("--level", level_name_s, "description level for --split");
  col->add_option("--limit", limit, "first N scenes of the split");

  auto* ev = app.add_subcommand("evaluate", "compute metrics; with --ablate, compare variants");
  std::string results_dir, dataset_dir, report_dir;
  std::string ev_level = "complete";
  int ev_limit = 0;
  ev->add_option("--results", results_dir, "directory of <id>.png results");
  ev->add_option("--dataset", dataset_dir, "dataset directory (default: eval split)");
  ev->add_option("--level", ev_level, "description level used for instance accuracy");
  ev->add_option("--out", report_dir, "report directory (default: results dir or run dir)");
  ev->add_option("--limit", ev_limit, "first N scenes of the split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (*seed_opt) cfg.seed = seed;
    if (*ablate_opt) cfg.ablate = Ablation::parse(ablate);
    if (*gen) {
      if (train_n >= 0) cfg.train_scenes = train_n;
      if (eval_n >= 0) cfg.eval_scenes = eval_n;
    }
    cfg.validate();
    const std::string started = timestamp_now();

    if (*gen) {
      gen_data(cfg, log_line);
      fs::create_directories(cfg.data_dir);
      write_file(fs::path(cfg.data_dir) / "gen-data.config", cfg.to_text());
      write_run_metadata(cfg, "gen-data", started);
    } else if (*tpix) {
      train_pixel(cfg, log_line);
    } else if (*tlat) {
      train_latent(cfg, log_line);
    } else if (*col) {
      Models m = load_models(cfg);
      if (!split.empty()) {
        if (split != "train" && split != "eval") throw ConfigError("--split must be train or eval");
        Dataset d = read_manifest(split == "eval" ? eval_dir(cfg) : train_dir(cfg));
        BenchmarkOptions opts;
        opts.level = level_from_name(level_name_s);
        opts.ablate = cfg.ablate;
        opts.limit = limit;
        auto res = run_benchmark(m, cfg, d.scenes, opts, log_line);
        fs::create_directories(out_path);
        for (std::size_t i = 0; i < res.outputs.size(); ++i) {
          save_image(res.outputs[i], fs::path(out_path) / (d.scenes[i].id + ".png"));
        }
        write_file(fs::path(out_path) / "report.json", res.report.to_json() + "\n");
        write_file(fs::path(out_path) / "report.txt", format_table(std::span(&res.report, 1)));
        std::cout << format_table(std::span(&res.report, 1));
      } else {
        if (gray_path.empty()) throw ConfigError("colorize needs --gray or --split");
        ColorizeRequest r;
        r.gray = to_grayscale(load_image(gray_path));
        r.words = split_words(text.empty() ? std::string(kScarceText) : text);
        bool has_color = false;
        for (const auto& w : r.words) has_color = has_color || is_color_word(w);
        if (!masks_path.empty()) {
          r.masks = load_bindings(masks_path, r.words);
        } else if (has_color && !cfg.ablate.no_iss) {
          log_line("warning: description names colours but no masks were given; using plain sampling");
        }
        r.seed = cfg.seed;
        auto out = colorize(m, cfg, {std::move(r)});
        save_image(out[0].image, out_path);
      }
      nlohmann::json extra;
      extra["output"] = out_path;
      write_run_metadata(cfg, "colorize", started, extra.dump());
    } else if (*ev) {
      const fs::path ds = dataset_dir.empty() ? eval_dir(cfg) : fs::path(dataset_dir);
      Dataset d = read_manifest(ds);
      if (ev_limit > 0 && d.scenes.size() > static_cast<std::size_t>(ev_limit)) d.scenes.resize(static_cast<std::size_t>(ev_limit));
      const Level lv = level_from_name(ev_level);
      std::vector<MetricReport> reports;
      if (!results_dir.empty()) {
        std::vector<std::string> missing;
        for (const auto& s : d.scenes) {
          if (!fs::exists(fs::path(results_dir) / (s.id + ".png"))) missing.push_back(s.id);
        }
        if (!missing.empty()) {
          std::string list;
          for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
          throw ValidationError("results missing for " + std::to_string(missing.size()) + " scene ids: " + list);
        }
        MetricReport rep;
        rep.label = fs::path(results_dir).filename().string();
        for (const auto& s : d.scenes) {
          const RgbImage img = load_image(fs::path(results_dir) / (s.id + ".png"));
          const Description& desc = s.descriptions.at(lv);
          rep.images.push_back(evaluate_image(s.id, img, s.image, s.instances, &desc));
        }
        reports.push_back(std::move(rep));
      }
      if (cfg.ablate.any()) {
        Models m = load_models(cfg);
        std::vector<Ablation> variants{Ablation{}};
        if (cfg.ablate.no_lic) variants.push_back({true, false, false});
        if (cfg.ablate.no_slr) variants.push_back({false, true, false});
        if (cfg.ablate.no_iss) variants.push_back({false, false, true});
        for (const auto& a : variants) {
          BenchmarkOptions opts;
          opts.level = lv;
          opts.ablate = a;
          opts.limit = ev_limit;
          log_line("running variant: " + a.label());
          reports.push_back(run_benchmark(m, cfg, d.scenes, opts, log_line).report);
        }
      }
      if (reports.empty()) throw ConfigError("evaluate needs --results and/or --ablate");
      const fs::path out_dir = !report_dir.empty() ? fs::path(report_dir)
                               : !results_dir.empty() ? fs::path(results_dir)
                                                      : fs::path(cfg.run_dir);
      fs::create_directories(out_dir);
      nlohmann::json all = nlohmann::json::array();
      for (const auto& r : reports) all.push_back(nlohmann::json::parse(r.to_json()));
      write_file(out_dir / "metrics.json", all.dump(2) + "\n");
      const std::string table = format_table(reports);
      write_file(out_dir / "metrics.txt", table);
      std::cout << table;
      write_run_metadata(cfg, "evaluate", started);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
