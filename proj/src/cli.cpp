#include "tvr/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tvr/codec.hpp"
#include "tvr/experiments.hpp"
#include "tvr/serialize.hpp"

namespace tvr {

namespace {

namespace fs = std::filesystem;

std::vector<int> parse_qps(const std::string& text) {
  std::vector<int> qps;
  if (text.find('-') != std::string::npos && text.find(',') == std::string::npos) {
    // range form "17-27"
    size_t dash = text.find('-');
    int lo = std::stoi(text.substr(0, dash));
    int hi = std::stoi(text.substr(dash + 1));
    for (int q = lo; q <= hi; ++q) qps.push_back(q);
  } else {
    size_t pos = 0;
    while (pos < text.size()) {
      size_t comma = text.find(',', pos);
      if (comma == std::string::npos) comma = text.size();
      qps.push_back(std::stoi(text.substr(pos, comma - pos)));
      pos = comma + 1;
    }
  }
  if (qps.empty()) fail(ErrorKind::Usage, "empty qp list");
  return qps;
}

std::vector<VideoClip> load_dataset(const std::string& dir) {
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".tvc") paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  std::vector<VideoClip> clips;
  for (const fs::path& p : paths) clips.push_back(load_clip(p.string()));
  if (clips.empty()) fail(ErrorKind::InvalidDataset, "no .tvc clips in " + dir);
  return clips;
}

// Clips regrouped to the pipeline's group size (padding by duplication).
std::vector<VideoClip> regroup(const std::vector<VideoClip>& clips) {
  std::vector<VideoClip> out;
  for (const VideoClip& clip : clips) {
    VideoClip padded = pad_to_multiple(clip, kGroupSize);
    for (int start = 0; start + kGroupSize <= padded.frame_count(); start += kGroupSize) {
      VideoClip group;
      group.width = padded.width;
      group.height = padded.height;
      for (int t = 0; t < kGroupSize; ++t)
        group.frames.push_back(padded.frames[static_cast<size_t>(start + t)]);
      out.push_back(std::move(group));
    }
  }
  return out;
}

void write_frames_dump(const std::vector<Tensor>& frames, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Format, "cannot open for writing: " + path);
  for (const Tensor& f : frames) write_tensor(os, f);
}

std::vector<Tensor> read_frames_dump(const std::string& path) {
  std::vector<Tensor> loaded = load_tensors(path);
  if (loaded.empty()) fail(ErrorKind::Format, "empty tensor dump: " + path);
  return loaded;
}

void emit_csv(const std::string& path, const std::vector<std::string>& header,
              const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Format, "cannot open for writing: " + path);
  for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
}

struct GlobalFlags {
  uint64_t seed = 0;
  int threads = 1;
  bool deterministic = false;
};

int run_app(const std::vector<std::string>& args) {
  CLI::App app{"temporal video rescaling toolkit"};
  app.require_subcommand(1);
  GlobalFlags global;
  app.add_option("--seed", global.seed, "global RNG seed");
  app.add_option("--threads", global.threads, "worker threads (current kernels are serial)");
  app.add_flag("--deterministic", global.deterministic, "force deterministic reductions");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic clip");
  std::string gen_pattern = "rect", gen_out;
  double gen_vx = 1.0, gen_vy = 0.0, gen_noise = 0.0;
  int gen_frames = 7, gen_size = 32;
  gen->add_option("--pattern", gen_pattern, "rect | sine | parallax");
  gen->add_option("--velocity", gen_vx, "x velocity in pixels/frame");
  gen->add_option("--velocity-y", gen_vy, "y velocity in pixels/frame");
  gen->add_option("--frames", gen_frames);
  gen->add_option("--size", gen_size, "square frame size");
  gen->add_option("--noise", gen_noise);
  gen->add_option("--out", gen_out)->required();

  // codec
  auto* codec_cmd = app.add_subcommand("codec", "run the toy codec");
  std::string codec_in, codec_out, codec_meta;
  int codec_qp = 27;
  codec_cmd->add_option("--in", codec_in)->required();
  codec_cmd->add_option("--qp", codec_qp)->required();
  codec_cmd->add_option("--out", codec_out)->required();
  codec_cmd->add_option("--meta", codec_meta);

  // train-surrogate
  auto* tsur = app.add_subcommand("train-surrogate", "fit the codec surrogate");
  std::string tsur_data, tsur_out, tsur_qps = "17,22,27,32,37", tsur_report;
  int tsur_steps = 2000;
  tsur->add_option("--data", tsur_data)->required();
  tsur->add_option("--steps", tsur_steps);
  tsur->add_option("--qps", tsur_qps);
  tsur->add_option("--out", tsur_out)->required();
  tsur->add_option("--report", tsur_report, "fidelity CSV (qp, simulation psnr)");

  // train-ranker
  auto* trank = app.add_subcommand("train-ranker", "pretrain compression encoder + ranker");
  std::string trank_data, trank_out, trank_qps = "17,22,27,32,37";
  int trank_steps = 1500;
  trank->add_option("--data", trank_data)->required();
  trank->add_option("--steps", trank_steps);
  trank->add_option("--qps", trank_qps);
  trank->add_option("--out", trank_out)->required();

  // train-enhancer
  auto* tenh = app.add_subcommand("train-enhancer", "train the gated enhancer");
  std::string tenh_data, tenh_ranker, tenh_out, tenh_qps = "17,22,27,32,37";
  int tenh_steps = 1500;
  tenh->add_option("--data", tenh_data)->required();
  tenh->add_option("--ranker", tenh_ranker, "checkpoint from train-ranker")->required();
  tenh->add_option("--steps", tenh_steps);
  tenh->add_option("--qps", tenh_qps);
  tenh->add_option("--out", tenh_out)->required();

  // train
  auto* train = app.add_subcommand("train", "alternate training of the full model");
  std::string train_data, train_out, train_qps = "17-27", train_curves, train_init;
  int train_steps = 2000, train_batch = 4;
  double train_lambda = 10.0;
  train->add_option("--data", train_data)->required();
  train->add_option("--steps", train_steps);
  train->add_option("--lambda", train_lambda);
  train->add_option("--qps", train_qps);
  train->add_option("--batch", train_batch);
  train->add_option("--init", train_init, "warm-start checkpoint");
  train->add_option("--out", train_out)->required();
  train->add_option("--curves", train_curves, "training curves CSV");

  // rescale
  auto* rescale = app.add_subcommand("rescale", "downscale or upscale a clip");
  std::string rs_mode, rs_in, rs_out, rs_ckpt, rs_aux, rs_meta;
  int rs_qp = 27;
  bool rs_bypass = false;
  rescale->add_option("--mode", rs_mode, "down | up")->required();
  rescale->add_option("--in", rs_in)->required();
  rescale->add_option("--out", rs_out)->required();
  rescale->add_option("--ckpt", rs_ckpt)->required();
  rescale->add_option("--qp", rs_qp);
  rescale->add_option("--aux", rs_aux, "float state for --bypass-codec roundtrips");
  rescale->add_option("--meta", rs_meta, "codec metadata output");
  rescale->add_flag("--bypass-codec", rs_bypass);

  // eval
  auto* eval = app.add_subcommand("eval", "quality metrics between two clips");
  std::string ev_recon, ev_ref, ev_csv;
  eval->add_option("--recon", ev_recon)->required();
  eval->add_option("--ref", ev_ref)->required();
  eval->add_option("--csv", ev_csv);

  // rd-sweep
  auto* sweep = app.add_subcommand("rd-sweep", "RD curves and BD-rate vs baselines");
  std::string sw_data, sw_ckpt, sw_out, sw_qps = "17,22,27,32";
  sweep->add_option("--data", sw_data)->required();
  sweep->add_option("--ckpt", sw_ckpt)->required();
  sweep->add_option("--qps", sw_qps);
  sweep->add_option("--out", sw_out)->required();

  // grad-bound
  auto* gb = app.add_subcommand("grad-bound", "gradient error bound experiment");
  std::string gb_data, gb_ckpt, gb_out;
  int gb_qp = 27, gb_k = 8;
  double gb_eps = 1e-2;
  gb->add_option("--data", gb_data)->required();
  gb->add_option("--ckpt", gb_ckpt)->required();
  gb->add_option("--qp", gb_qp);
  gb->add_option("--eps", gb_eps);
  gb->add_option("--K", gb_k);
  gb->add_option("--out", gb_out)->required();

  // grad-noise
  auto* gn = app.add_subcommand("grad-noise", "gradient-noise degradation study");
  std::string gn_data, gn_out, gn_alphas = "0,0.4", gn_qps = "17,22,27,32";
  int gn_steps = 300;
  gn->add_option("--data", gn_data)->required();
  gn->add_option("--alphas", gn_alphas);
  gn->add_option("--steps", gn_steps);
  gn->add_option("--qps", gn_qps);
  gn->add_option("--out", gn_out)->required();

  // freq-analysis
  auto* fa = app.add_subcommand("freq-analysis", "LFR spectrum overlap vs frame skipping");
  std::string fa_data, fa_ckpt, fa_out;
  int fa_qp = 27;
  fa->add_option("--data", fa_data)->required();
  fa->add_option("--ckpt", fa_ckpt)->required();
  fa->add_option("--qp", fa_qp);
  fa->add_option("--out", fa_out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    SyntheticSpec spec;
    spec.pattern = pattern_from_name(gen_pattern);
    spec.vx = gen_vx;
    spec.vy = gen_vy;
    spec.frames = gen_frames;
    spec.width = gen_size;
    spec.height = gen_size;
    spec.noise = gen_noise;
    spec.seed = global.seed;
    SyntheticClip clip = generate_synthetic(spec);
    save_clip(clip.clip, gen_out);
    std::cout << "wrote " << gen_out << " (" << spec.frames << " frames, " << gen_size << "x"
              << gen_size << ")\n";
    return 0;
  }

  if (codec_cmd->parsed()) {
    VideoClip clip = load_clip(codec_in);
    CodedClip coded = encode(clip, codec_qp);
    save_clip(coded.reconstruction, codec_out);
    if (!codec_meta.empty()) save_metadata(coded.metadata, codec_meta);
    double bpp = static_cast<double>(coded.metadata.bits) /
                 (static_cast<double>(clip.frame_count()) * clip.height * clip.width);
    std::cout << "qp " << codec_qp << " bits " << coded.metadata.bits << " bpp " << bpp << " psnr "
              << psnr(coded.reconstruction, clip) << "\n";
    return 0;
  }

  if (tsur->parsed()) {
    std::vector<VideoClip> clips = regroup(load_dataset(tsur_data));
    SurrogateCodec surrogate = [&] {
      Rng rng(global.seed);
      return SurrogateCodec::make(rng);
    }();
    SurrogateTrainReport report =
        train_surrogate(surrogate, clips, parse_qps(tsur_qps), tsur_steps, 1e-3, global.seed);
    std::vector<Tensor*> ps;
    surrogate.params(ps);
    save_tensors(tsur_out, std::vector<const Tensor*>(ps.begin(), ps.end()));
    std::vector<std::vector<double>> rows;
    for (const SurrogateFidelity& f : report.fidelity) {
      std::cout << "qp " << f.qp << " simulation-psnr " << f.sim_psnr << " baseline "
                << f.baseline_psnr << "\n";
      rows.push_back({static_cast<double>(f.qp), f.sim_psnr, f.baseline_psnr});
    }
    if (!tsur_report.empty()) emit_csv(tsur_report, {"qp", "simulation_psnr", "baseline_psnr"}, rows);
    return 0;
  }

  if (trank->parsed()) {
    std::vector<VideoClip> clips = regroup(load_dataset(trank_data));
    Rng rng(global.seed);
    CompressionEncoder encoder = CompressionEncoder::make(rng);
    Ranker ranker = Ranker::make(rng);
    RankerTrainReport report =
        train_ranker(encoder, ranker, clips, parse_qps(trank_qps), trank_steps, 1e-3, global.seed);
    std::vector<Tensor*> ps;
    encoder.params(ps);
    ranker.params(ps);
    save_tensors(trank_out, std::vector<const Tensor*>(ps.begin(), ps.end()));
    std::cout << "holdout pairwise accuracy " << report.holdout_accuracy << "\n";
    return 0;
  }

  if (tenh->parsed()) {
    std::vector<VideoClip> clips = regroup(load_dataset(tenh_data));
    Rng rng(global.seed);
    CompressionEncoder encoder = CompressionEncoder::make(rng);
    Ranker ranker = Ranker::make(rng);
    {
      std::vector<Tensor*> ps;
      encoder.params(ps);
      ranker.params(ps);
      load_tensors_into(tenh_ranker, ps);
    }
    Enhancer enhancer = Enhancer::make(rng);
    train_enhancer(enhancer, encoder, clips, parse_qps(tenh_qps), tenh_steps, 1e-3, global.seed);
    std::vector<Tensor*> ps;
    enhancer.params(ps);
    save_tensors(tenh_out, std::vector<const Tensor*>(ps.begin(), ps.end()));
    std::cout << "wrote " << tenh_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    std::vector<VideoClip> clips = regroup(load_dataset(train_data));
    size_t holdout = std::max<size_t>(1, clips.size() / 5);
    std::vector<VideoClip> val(clips.end() - static_cast<long>(holdout), clips.end());
    clips.resize(clips.size() - holdout);
    TvrnModel model = TvrnModel::make(global.seed);
    if (!train_init.empty()) model.load(train_init);
    TrainConfig config;
    config.lambda = train_lambda;
    config.qps = parse_qps(train_qps);
    config.steps = train_steps;
    config.batch = train_batch;
    config.seed = global.seed;
    TrainCurves curves = alternate_train(model, clips, val, config);
    model.save(train_out);
    if (!train_curves.empty()) {
      std::vector<std::vector<double>> rows;
      for (size_t i = 0; i < curves.basic_loss.size(); ++i)
        rows.push_back({static_cast<double>(i), curves.basic_loss[i], curves.surrogate_loss[i]});
      emit_csv(train_curves, {"step", "basic_loss", "surrogate_loss"}, rows);
    }
    std::cout << "final basic loss " << curves.basic_loss.back() << "\n";
    return 0;
  }

  if (rescale->parsed()) {
    TvrnModel model = TvrnModel::make(global.seed);
    model.load(rs_ckpt);
    if (rs_mode == "down") {
      VideoClip clip = load_clip(rs_in);
      if (clip.frame_count() != kGroupSize) clip = pad_to_multiple(clip, kGroupSize);
      DownscaleResult down = downscale(nullptr, clip, model);
      VideoClip y;
      y.width = clip.width;
      y.height = clip.height;
      for (const Tensor& f : down.low) y.frames.push_back(Tensor(f.shape(), f.values()));
      if (rs_bypass) {
        if (rs_aux.empty()) fail(ErrorKind::Usage, "--bypass-codec requires --aux");
        std::vector<Tensor> state = down.low;
        state.insert(state.end(), down.high.begin(), down.high.end());
        write_frames_dump(state, rs_aux);
        save_clip(y, rs_out);
      } else {
        CodedClip coded = encode(y, rs_qp);
        save_clip(coded.reconstruction, rs_out);
        if (!rs_meta.empty()) save_metadata(coded.metadata, rs_meta);
      }
      return 0;
    }
    if (rs_mode == "up") {
      UpscaleOptions opts;
      std::vector<Tensor> low, high;
      if (rs_bypass) {
        if (rs_aux.empty()) fail(ErrorKind::Usage, "--bypass-codec requires --aux");
        std::vector<Tensor> state = read_frames_dump(rs_aux);
        size_t n_low = static_cast<size_t>((kGroupSize + 1) / 2);
        low.assign(state.begin(), state.begin() + static_cast<long>(n_low));
        high.assign(state.begin() + static_cast<long>(n_low), state.end());
        opts.true_high = &high;
        opts.enhance_lfr = false;
        opts.enhance_hfr = false;
      } else {
        VideoClip y = load_clip(rs_in);
        low = y.frames;
      }
      std::vector<Tensor> recon = upscale(nullptr, low, model, opts);
      if (rs_out.size() > 4 && rs_out.substr(rs_out.size() - 4) == ".tvt") {
        write_frames_dump(recon, rs_out);
      } else {
        std::vector<Tensor> clamped;
        for (const Tensor& f : recon) clamped.push_back(clamp(f, 0.0, 1.0));
        save_clip(clip_from_frames(std::move(clamped)), rs_out);
      }
      return 0;
    }
    fail(ErrorKind::Usage, "rescale: --mode must be down or up");
  }

  if (eval->parsed()) {
    VideoClip recon = load_clip(ev_recon);
    VideoClip ref = load_clip(ev_ref);
    FlowFn flow_fn = [](const Tensor& a, const Tensor& b) { return block_flow(a, b).first; };
    double p_log = psnr(recon, ref, PsnrMode::AvgLog);
    double p_mse = psnr(recon, ref, PsnrMode::AvgMse);
    double s = ssim(recon, ref);
    double sp = sigma_psnr(recon, ref);
    double t = tof(recon, ref, flow_fn);
    double wp = warp_psnr(recon, flow_fn);
    std::cout << "psnr " << p_log << " psnr-avg-mse " << p_mse << " ssim " << s << " sigma-psnr "
              << sp << " tof " << t << " warp-psnr " << wp << "\n";
    if (!ev_csv.empty())
      emit_csv(ev_csv, {"psnr", "psnr_avg_mse", "ssim", "sigma_psnr", "tof", "warp_psnr"},
               {{p_log, p_mse, s, sp, t, wp}});
    return 0;
  }

  if (sweep->parsed()) {
    std::vector<VideoClip> clips = regroup(load_dataset(sw_data));
    TvrnModel model = TvrnModel::make(global.seed);
    model.load(sw_ckpt);
    std::vector<int> qps = parse_qps(sw_qps);
    RdCurve ours = rd_sweep(clips, model, qps);
    RdCurve avg = rd_sweep_baseline(clips, BaselineKind::Average, qps);
    RdCurve flow = rd_sweep_baseline(clips, BaselineKind::FlowWarp, qps);
    std::vector<std::vector<double>> rows;
    for (size_t i = 0; i < qps.size(); ++i) {
      rows.push_back({static_cast<double>(qps[i]), ours.points[i].bpp, ours.points[i].psnr,
                      ours.points[i].ssim, avg.points[i].bpp, avg.points[i].psnr,
                      flow.points[i].bpp, flow.points[i].psnr});
    }
    emit_csv(sw_out,
             {"qp", "tvrn_bpp", "tvrn_psnr", "tvrn_ssim", "skip_avg_bpp", "skip_avg_psnr",
              "skip_flow_bpp", "skip_flow_psnr"},
             rows);
    std::cout << "bd-rate vs frame-skip-avg " << bd_rate(avg.points, ours.points) << "%\n";
    std::cout << "bd-rate vs frame-skip-flow " << bd_rate(flow.points, ours.points) << "%\n";
    return 0;
  }

  if (gb->parsed()) {
    std::vector<VideoClip> clips = regroup(load_dataset(gb_data));
    TvrnModel model = TvrnModel::make(global.seed);
    model.load(gb_ckpt);
    // LFR clips: downscaled groups
    std::vector<VideoClip> lfr;
    for (const VideoClip& clip : clips) {
      DownscaleResult down = downscale(nullptr, clip, model);
      VideoClip y;
      y.width = clip.width;
      y.height = clip.height;
      for (const Tensor& f : down.low) y.frames.push_back(Tensor(f.shape(), f.values()));
      lfr.push_back(std::move(y));
    }
    GradBoundReport report =
        grad_bound_experiment(model.surrogate, lfr, gb_qp, gb_eps, gb_k, global.seed);
    std::vector<std::vector<double>> rows;
    for (const GradBoundSample& s : report.samples) rows.push_back({s.d_hat, s.delta_g});
    emit_csv(gb_out, {"d_hat", "delta_g"}, rows);
    std::cout << "envelope a " << report.envelope_a << " b " << report.envelope_b << " coverage "
              << report.coverage << " median " << report.median_delta_g << "\n";
    return 0;
  }

  if (gn->parsed()) {
    std::vector<VideoClip> clips = regroup(load_dataset(gn_data));
    size_t holdout = std::max<size_t>(1, clips.size() / 4);
    std::vector<VideoClip> eval_clips(clips.end() - static_cast<long>(holdout), clips.end());
    clips.resize(clips.size() - holdout);
    std::vector<double> alphas;
    for (const std::string& tok : CLI::detail::split(gn_alphas, ','))
      alphas.push_back(std::stod(tok));
    TrainConfig config;
    config.steps = gn_steps;
    config.seed = global.seed;
    std::vector<GradNoiseResult> results =
        grad_noise_experiment(alphas, clips, eval_clips, config, parse_qps(gn_qps));
    std::vector<std::vector<double>> rows;
    for (const GradNoiseResult& r : results) {
      rows.push_back({r.alpha, r.bd_rate_vs_clean, r.avg_psnr});
      std::cout << "alpha " << r.alpha << " bd-rate-vs-clean " << r.bd_rate_vs_clean
                << "% avg-psnr " << r.avg_psnr << "\n";
    }
    emit_csv(gn_out, {"alpha", "bd_rate_vs_clean", "avg_psnr"}, rows);
    return 0;
  }

  if (fa->parsed()) {
    std::vector<VideoClip> clips = regroup(load_dataset(fa_data));
    TvrnModel model = TvrnModel::make(global.seed);
    model.load(fa_ckpt);
    std::vector<FreqMethodReport> reports = freq_analysis(clips, model, fa_qp);
    std::vector<std::vector<double>> rows;
    for (const FreqMethodReport& r : reports) {
      std::cout << r.method << " rho_ovl " << r.rho_ovl << "%\n";
      rows.push_back({static_cast<double>(&r - reports.data()), r.rho_ovl});
    }
    emit_csv(fa_out, {"method_index", "rho_ovl"}, rows);
    return 0;
  }

  return 2;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  try {
    return run_app(args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tvr
