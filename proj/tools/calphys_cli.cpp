// calphys: extract / synth / train / infer / eval / baseline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "calphys/baselines.hpp"
#include "calphys/config.hpp"
#include "calphys/csv.hpp"
#include "calphys/metrics.hpp"
#include "calphys/net.hpp"
#include "calphys/pipeline.hpp"
#include "calphys/repr.hpp"
#include "calphys/synth.hpp"

namespace fs = std::filesystem;
using namespace calphys;

namespace {

void write_wave_csv(const Waveform& w, const fs::path& path) {
  CsvTable t;
  t.columns = {"t_sec", "value"};
  for (std::size_t i = 0; i < w.size(); ++i) t.rows.push_back({static_cast<double>(i) / w.fps, w.samples[i]});
  write_csv(t, path);
}

InputNorm parse_norm(const std::string& s) {
  if (s == "none") return InputNorm::None;
  if (s == "row_mean") return InputNorm::RowMean;
  throw Error("unknown input norm '" + s + "'");
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

// Rate overlay: prediction and reference against time.
void write_plot_svg(const RateSeries& pred, const RateSeries& truth, const fs::path& path) {
  double lo = 1e9, hi = -1e9, tmax = 1.0;
  for (const auto* s : {&pred, &truth}) {
    for (std::size_t i = 0; i < s->size(); ++i) {
      lo = std::min(lo, s->bpm[i]);
      hi = std::max(hi, s->bpm[i]);
      tmax = std::max(tmax, s->t_sec[i]);
    }
  }
  if (hi - lo < 1.0) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double W = 640, H = 320, pad = 40;
  auto line = [&](const RateSeries& s, const char* colour) {
    std::string pts;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double x = pad + (W - 2 * pad) * s.t_sec[i] / tmax;
      const double y = H - pad - (H - 2 * pad) * (s.bpm[i] - lo) / (hi - lo);
      pts += std::to_string(x) + "," + std::to_string(y) + " ";
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  };
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << pad << "\" y=\"20\" font-size=\"12\">bpm " << lo << " - " << hi << ", t 0 - " << tmax
     << " s; black = reference, red = prediction</text>\n"
     << line(truth, "black") << line(pred, "red") << "</svg>\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CalibrationPhys toolkit: cross-camera contrastive HR/RR estimation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  bool seed_given = false;
  app.add_option_function<std::uint64_t>(
         "--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "Seed for every random draw")
      ->ignore_case();

  std::string frames_dir, landmarks_path, task_name = "hr", out_path;
  auto* extract = app.add_subcommand("extract", "Build an RGB (hr) or flow (rr) map from PPM frames and landmarks");
  extract->add_option("--frames", frames_dir, "Directory of *.ppm frames")->required()->check(CLI::ExistingDirectory);
  extract->add_option("--landmarks", landmarks_path, "Landmarks JSONL")->required()->check(CLI::ExistingFile);
  extract->add_option("--task", task_name, "hr or rr")->check(CLI::IsMember({"hr", "rr"}));
  double fps = 30.0;
  extract->add_option("--fps", fps, "Frame rate");
  extract->add_option("--out", out_path, "Output STM")->required();

  std::string config_path;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic two-camera dataset");
  synth_cmd->add_option("--config", config_path, "Key-value config")->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", out_path, "Output directory")->required();

  std::string manifest_path, mode_name, pretrained_path, split = "train";
  auto* train_cmd = app.add_subcommand("train", "Train camera models on a manifest");
  train_cmd->add_option("--manifest", manifest_path, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--task", task_name, "hr or rr")->check(CLI::IsMember({"hr", "rr"}));
  train_cmd->add_option("--mode", mode_name, "dual, pretrain_anchor, general (general_shared) or pretrain")
      ->check(CLI::IsMember({"dual", "pretrain_anchor", "general", "general_shared", "pretrain"}));
  train_cmd->add_option("--config", config_path, "Key-value training config")->check(CLI::ExistingFile);
  train_cmd->add_option("--pretrained", pretrained_path, "Checkpoint used as frozen anchor or initialization")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--split", split, "Manifest split to train on (empty for all)");
  train_cmd->add_option("--out", out_path, "Checkpoint directory")->required();

  std::string ckpt_path, stm_path, norm_name = "row_mean", wave_out;
  auto* infer_cmd = app.add_subcommand("infer", "Predict a wave and per-second rates from a map");
  infer_cmd->add_option("--ckpt", ckpt_path, "Model checkpoint")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--stm", stm_path, "Input map")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--input-norm", norm_name, "Input scaling used in training")
      ->check(CLI::IsMember({"none", "row_mean"}));
  infer_cmd->add_option("--wave", wave_out, "Also write the predicted wave (t_sec,value)");
  infer_cmd->add_option("--out", out_path, "Rates CSV (t_sec,bpm)")->required();

  std::string pred_path, truth_path, report_path, plot_path;
  auto* eval_cmd = app.add_subcommand("eval", "Compare predicted and reference rates");
  eval_cmd->add_option("--pred", pred_path, "Predicted rates CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--truth", truth_path, "Reference rates CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--task", task_name, "hr or rr")->check(CLI::IsMember({"hr", "rr"}));
  eval_cmd->add_option("--report", report_path, "Report JSON")->required();
  eval_cmd->add_option("--plot", plot_path, "Optional SVG rate overlay");

  std::string method;
  auto* base_cmd = app.add_subcommand("baseline", "Label-free reference rates");
  base_cmd->add_option("--method", method, "chrom, pos, rgb_mean or flow_mean")
      ->required()
      ->check(CLI::IsMember({"chrom", "pos", "rgb_mean", "flow_mean"}));
  base_cmd->add_option("--stm", stm_path, "Input map")->required()->check(CLI::ExistingFile);
  base_cmd->add_option("--wave", wave_out, "Also write the wave (t_sec,value)");
  base_cmd->add_option("--out", out_path, "Rates CSV (t_sec,bpm)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const Task task = parse_task(task_name);
    if (*extract) {
      if (task == Task::HR) {
        const auto frames = read_ppm_sequence(frames_dir);
        const auto lms = read_landmarks(landmarks_path);
        stm_write(build_rgb_map(frames, lms, static_cast<float>(fps)), out_path);
      } else {
        const auto frames = read_ppm_sequence(frames_dir);
        const auto lms = read_landmarks(landmarks_path);
        if (lms.empty()) throw Error("landmarks file is empty");
        std::vector<GrayImage> gray;
        gray.reserve(frames.size());
        for (const auto& f : frames) gray.push_back(to_gray(f));
        stm_write(build_flow_map(gray, lms.front(), static_cast<float>(fps)), out_path);
      }
    } else if (*synth_cmd) {
      auto kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
      if (seed_given) kv.set("seed", std::to_string(seed));
      const auto cfg = synth::DatasetConfig::from_config(kv);
      for (const auto& k : kv.unused_keys()) std::cerr << "warning: unused config key '" << k << "'\n";
      synth::gen_dataset(cfg, out_path);
    } else if (*train_cmd) {
      auto kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
      if (seed_given) kv.set("seed", std::to_string(seed));
      const bool supervised = mode_name == "pretrain";
      if (!mode_name.empty() && !supervised) kv.set("mode", mode_name);
      const auto cfg = TrainConfig::from_config(kv, task);
      for (const auto& k : kv.unused_keys()) std::cerr << "warning: unused config key '" << k << "'\n";
      const auto videos = load_manifest(manifest_path, task, split);
      std::optional<Checkpoint> pre;
      if (!pretrained_path.empty()) {
        pre = checkpoint_load(pretrained_path);
        if (pre->task != task) throw Error("pretrained checkpoint is for another task");
      }
      fs::create_directories(out_path);
      auto report = [](const EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss << '\n';
        return true;
      };
      TrainResult result = [&] {
        if (supervised) return pretrain_supervised(videos, cfg, pre ? &pre->net : nullptr, report);
        TrainInit init;
        if (pre) {
          init.anchor = &pre->net;
          init.init_b = &pre->net;
        }
        return train(videos, cfg, init, report);
      }();
      const fs::path dir = out_path;
      write_history_csv(result.history, dir / "history.csv");
      checkpoint_save(dir / "model_a.ckpt", result.model_a, result.optimizer_a, task);
      if (!supervised) checkpoint_save(dir / "model_b.ckpt", result.model_b, result.optimizer_b, task);
      write_json({{"best_epoch", result.best_epoch},
                  {"mode", supervised ? std::string("pretrain") : to_string(cfg.mode)},
                  {"task", to_string(task)},
                  {"digest_a", parameter_digest(result.model_a)},
                  {"digest_b", parameter_digest(result.model_b)}},
                 dir / "train.json");
    } else if (*infer_cmd) {
      const auto ckpt = checkpoint_load(ckpt_path);
      const auto wave = infer_wave(ckpt.net, stm_read(stm_path), parse_norm(norm_name));
      if (!wave_out.empty()) write_wave_csv(wave, wave_out);
      write_rates_csv(rates_from_wave(wave, ckpt.task), out_path);
    } else if (*eval_cmd) {
      const auto pred = read_rates_csv(pred_path, task);
      const auto truth = read_rates_csv(truth_path, task);
      write_json(to_json(metrics(pred, truth)), report_path);
      if (!plot_path.empty()) write_plot_svg(pred, truth, plot_path);
    } else if (*base_cmd) {
      const auto map = stm_read(stm_path);
      Waveform wave;
      Task rate_task = Task::HR;
      if (method == "chrom") {
        wave = chrom_wave(mean_trace(map));
      } else if (method == "pos") {
        wave = pos_wave(mean_trace(map));
      } else {
        wave = rr_benchmark_wave(map, method == "rgb_mean" ? RrBenchmark::RgbMean : RrBenchmark::FlowMean);
        rate_task = Task::RR;
      }
      if (!wave_out.empty()) write_wave_csv(wave, wave_out);
      write_rates_csv(rates_from_wave(wave, rate_task), out_path);
    }
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
