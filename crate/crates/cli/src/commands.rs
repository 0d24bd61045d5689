use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use rawvid::calib::{
    estimate_camera_nlf, fit_affine_nlf, flatfield_calibrate, uniform_levels, AffineNlf, FlatfieldConfig,
    NlfEstimatorConfig, NlfPointCloud,
};
use rawvid::dataset::{
    read_raw_dataset, read_srgb_sequences, write_file_atomically, write_raw_dataset, write_raw_datasets, RawDataset,
};
use rawvid::demosaic::{demosaic, demosaic_warp_remosaic};
use rawvid::flow::{occlusion_mask, read_flo, tvl1_flow, warp_plane, warp_rgb, write_flo, OcclusionParams, TvL1Params};
use rawvid::frame::{mosaic, Levels};
use rawvid::losses::{
    blindspot_loss, build_stack, probe_receptive_field, BlindSpotNet, Denoiser, FrameStack, GaussianBlur, Identity,
    Mf2fConfig, Mf2fEvaluator, TemporalMean, BLINDSPOT_OFFSETS,
};
use rawvid::noise::{HeteroGaussianParams, NoiseModel};
use rawvid::pipeline::{
    add_noise, average_gt_dataset, evaluate, format_psnr, make_synthetic, subsample_dataset, unprocess_to_dataset,
    NoiseSource, SyntheticConfig, TargetSource,
};
use rawvid::rng::{derive_stream, stage};
use rawvid::tonemap::{gamma_display, PercentileStats};
use rawvid::unprocess::{CameraProfile, GainSample, UnprocessOptions};
use rawvid::{RawFrame, VideoSequence};

use crate::cli::*;
use crate::images::{self, Image};
use crate::manifest::Run;

fn read_dataset(path: &Path) -> Result<RawDataset> {
    read_raw_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file_atomically(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn levels(args: &LevelArgs) -> Result<Levels> {
    Ok(Levels::new(args.black_level, args.white_level)?)
}

fn load_profile(path: Option<&Path>, run: &mut Run) -> Result<CameraProfile> {
    match path {
        None => Ok(CameraProfile::default()),
        Some(p) => {
            run.input("profile", p)?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CameraProfile::from_json(&text).with_context(|| format!("in profile {}", p.display()))
        }
    }
}

fn unprocess_options(opts: &UnprocessOpts) -> Result<UnprocessOptions> {
    let gains = match opts.gains.as_deref() {
        None => None,
        Some(&[red, blue, global]) => Some(GainSample { red, blue, global }),
        Some(other) => bail!("--gains takes red,blue,global; got {} values", other.len()),
    };
    Ok(UnprocessOptions {
        dequantize: opts.dequantize,
        gains,
        levels: levels(&opts.levels)?,
    })
}

fn target_source(args: &TargetArgs, run: &mut Run) -> Result<TargetSource> {
    match (&args.surrogate, args.target_low, args.target_high) {
        (Some(p), _, _) => {
            run.input("surrogate", p)?;
            Ok(TargetSource::Surrogate(read_dataset(p)?))
        }
        (None, Some(low), Some(high)) => Ok(TargetSource::Stats(PercentileStats { low, high })),
        _ => bail!("give either --surrogate or --target-low and --target-high"),
    }
}

fn noise_model(args: &NoiseArgs, run: &mut Run) -> Result<Option<NoiseModel>> {
    match (&args.model, args.a, args.b) {
        (Some(p), _, _) => {
            run.input("model", p)?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Some(
                NoiseModel::from_json(&text).with_context(|| format!("in noise model {}", p.display()))?,
            ))
        }
        (None, Some(a), Some(b)) => Ok(Some(NoiseModel::HeteroGaussian(HeteroGaussianParams::new(a, b)?))),
        _ => Ok(None),
    }
}

fn require_noise(args: &NoiseArgs, run: &mut Run) -> Result<NoiseModel> {
    noise_model(args, run)?.ok_or_else(|| anyhow!("give a noise model with --model or --a and --b"))
}

fn nlf_config(args: &NlfArgs) -> NlfEstimatorConfig {
    NlfEstimatorConfig {
        hf_cutoff: args.hf_cutoff,
        bins: args.bins,
        percentile: args.percentile,
        min_blocks: args.min_blocks,
    }
}

fn tvl1(args: &TvL1Args) -> TvL1Params {
    TvL1Params {
        lambda: args.lambda,
        theta: args.theta,
        tau: args.tau,
        scales: args.scales,
        zoom: args.zoom,
        warps: args.warps,
        epsilon: args.flow_epsilon,
        max_iterations: args.max_iterations,
    }
}

fn occlusion(args: &OcclusionArgs) -> OcclusionParams {
    OcclusionParams {
        alpha: args.alpha,
        beta: args.beta,
        div_thresh: args.div_thresh,
    }
}

fn fit_json(fit: &AffineNlf) -> serde_json::Value {
    json!({ "a": fit.a, "b": fit.b, "fit_residual": fit.fit_residual })
}

fn report_fit(fit: &AffineNlf, model_out: Option<&Path>, run: &mut Run) -> Result<()> {
    println!(
        "a = {:.6e}\nb = {:.6e}\nrms residual = {:.6e}",
        fit.a, fit.b, fit.fit_residual
    );
    if let Some(p) = model_out {
        write_text(p, &(fit.to_noise_model()?.to_json() + "\n"))?;
        run.output_file("model", p)?;
    }
    run.manifest.details = fit_json(fit);
    Ok(())
}

pub fn unprocess(args: &UnprocessArgs, seed: u64, run: &mut Run) -> Result<()> {
    run.stage("load");
    run.input("input", &args.input)?;
    let srgb = read_srgb_sequences(&args.input, args.opts.frame_rate)?;
    let profile = load_profile(args.opts.profile.as_deref(), run)?;
    let target = target_source(&args.opts.target, run)?.resolve()?;
    let options = unprocess_options(&args.opts)?;
    run.stage("unprocess");
    let (clean, gains, source, tone_map) = unprocess_to_dataset(&srgb, &profile, target, &options, seed)?;
    run.stage("write");
    write_raw_dataset(&args.output, &clean)?;
    run.output_dir("output", &args.output)?;
    run.manifest.details = json!({
        "gains": clean.sequences.iter().zip(&gains).map(|(s, g)| (s.id.clone(), json!(g))).collect::<serde_json::Map<_, _>>(),
        "source_stats": source,
        "target_stats": target,
        "tone_map": tone_map,
    });
    eprintln!("wrote {} frames to {}", clean.frame_count(), args.output.display());
    Ok(())
}

pub fn add_noise_cmd(args: &AddNoiseArgs, seed: u64, run: &mut Run) -> Result<()> {
    run.stage("load");
    run.input("input", &args.input)?;
    let clean = read_dataset(&args.input)?;
    let model = require_noise(&args.noise, run)?;
    run.stage("synthesize");
    let noisy = add_noise(&clean, &model, seed, args.clamp)?;
    run.stage("write");
    write_raw_dataset(&args.output, &noisy)?;
    run.output_dir("output", &args.output)?;
    run.manifest.details = json!({ "noise_model": model });
    Ok(())
}

pub fn calibrate_flatfield(args: &FlatfieldArgs, seed: u64, run: &mut Run) -> Result<()> {
    let model = require_noise(&args.noise, run)?;
    let config = FlatfieldConfig {
        levels: uniform_levels(args.levels, args.low, args.high),
        patch_size: args.patch_size,
        streams: args.streams.into(),
    };
    run.stage("flatfield");
    let cloud = flatfield_calibrate(&model, &config, seed)?;
    let fit = fit_affine_nlf(&cloud, args.weighted)?;
    if let Some(p) = &args.output {
        cloud.write_csv(p)?;
        run.output_file("points", p)?;
    }
    report_fit(&fit, args.model_out.as_deref(), run)
}

pub fn estimate_nlf(args: &EstimateNlfArgs, run: &mut Run) -> Result<()> {
    run.stage("load");
    run.input("input", &args.input)?;
    let ds = read_dataset(&args.input)?;
    run.stage("estimate");
    let (fit, cloud) = estimate_camera_nlf(&ds.sequences, &nlf_config(&args.nlf), args.nlf.weighted)?;
    if let Some(p) = &args.output {
        cloud.write_csv(p)?;
        run.output_file("points", p)?;
    }
    report_fit(&fit, args.model_out.as_deref(), run)
}

pub fn fit_nlf(args: &FitNlfArgs, run: &mut Run) -> Result<()> {
    run.input("input", &args.input)?;
    let cloud = NlfPointCloud::read_csv(&args.input)?;
    let fit = fit_affine_nlf(&cloud, args.weighted)?;
    report_fit(&fit, args.model_out.as_deref(), run)
}

pub fn make_synthetic_cmd(args: &MakeSyntheticArgs, seed: u64, run: &mut Run) -> Result<()> {
    run.stage("load");
    run.input("input", &args.input)?;
    let srgb = read_srgb_sequences(&args.input, args.opts.frame_rate)?;
    let profile = load_profile(args.opts.profile.as_deref(), run)?;
    let target = target_source(&args.opts.target, run)?;
    let noise = match (&args.calibrate_from, noise_model(&args.noise, run)?) {
        (Some(p), _) => {
            run.input("calibrate_from", p)?;
            NoiseSource::CalibrateFrom {
                reference: read_dataset(p)?,
                estimator: nlf_config(&args.nlf),
                weighted: args.nlf.weighted,
            }
        }
        (None, Some(m)) => NoiseSource::Model(m),
        (None, None) => bail!("give a noise model (--model, or --a and --b) or --calibrate-from"),
    };
    let cfg = SyntheticConfig {
        profile,
        target,
        noise,
        options: unprocess_options(&args.opts)?,
        clamp: args.clamp,
    };
    run.stage("synthesize");
    let out = make_synthetic(&srgb, &cfg, seed)?;
    run.stage("write");
    write_raw_datasets(&args.output, &[("clean", &out.clean), ("noisy", &out.noisy)])?;
    run.output("clean", &args.output.join("clean"))?;
    run.output("noisy", &args.output.join("noisy"))?;
    run.output_dir("output", &args.output)?;
    run.manifest.details = json!({
        "noise_model": out.noise,
        "fit": out.fit.as_ref().map(fit_json),
        "gains": out.clean.sequences.iter().zip(&out.gains).map(|(s, g)| (s.id.clone(), json!(g))).collect::<serde_json::Map<_, _>>(),
        "source_stats": out.source_stats,
        "target_stats": out.target,
        "tone_map": out.tone_map,
    });
    eprintln!(
        "wrote {} clean and noisy frames to {}",
        out.clean.frame_count(),
        args.output.display()
    );
    Ok(())
}

pub fn flow(args: &FlowArgs, run: &mut Run) -> Result<()> {
    run.input("target", &args.target)?;
    run.input("reference", &args.reference)?;
    let target = images::read_gray(&args.target)?;
    let reference = images::read_gray(&args.reference)?;
    let params = tvl1(&args.tvl1);
    run.stage("forward");
    let fwd = tvl1_flow(&target, &reference, &params)?;
    write_flo(&args.output, &fwd)?;
    run.output_file("flow", &args.output)?;
    let mut details = json!({ "mean_magnitude": fwd.mean_magnitude() });
    if let Some(mask_path) = &args.mask {
        run.stage("backward");
        let bwd = tvl1_flow(&reference, &target, &params)?;
        let mask = occlusion_mask(&fwd, &bwd, &occlusion(&args.occlusion))?;
        images::write_mask(mask_path, &mask)?;
        run.output("mask", mask_path)?;
        let trusted = mask.data().iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        details["trusted_fraction"] = json!(trusted);
    }
    run.manifest.details = details;
    Ok(())
}

pub fn warp(args: &WarpArgs, run: &mut Run) -> Result<()> {
    run.input("input", &args.input)?;
    run.input("flow", &args.flow)?;
    let flow = read_flo(&args.flow)?;
    let valid = if args.raw {
        let raw = images::read_raw(&args.input, args.cfa.cfa, levels(&args.levels)?)?;
        let (out, valid) = demosaic_warp_remosaic(&raw, &flow, args.method, args.interp)?;
        images::write_raw(&args.output, &out)?;
        valid
    } else {
        match images::read_image(&args.input)? {
            Image::Gray(p, m) => {
                let (out, valid) = warp_plane(&p, &flow, args.interp)?;
                images::write_image(&args.output, &Image::Gray(out, m))?;
                valid
            }
            Image::Rgb(rgb, m) => {
                let (out, valid) = warp_rgb(&rgb, &flow, args.interp)?;
                images::write_image(&args.output, &Image::Rgb(out, m))?;
                valid
            }
        }
    };
    run.output_file("output", &args.output)?;
    if let Some(p) = &args.valid_mask {
        images::write_mask(p, &valid)?;
        run.output("valid_mask", p)?;
    }
    Ok(())
}

pub fn demosaic_cmd(args: &DemosaicArgs, run: &mut Run) -> Result<()> {
    run.input("input", &args.input)?;
    let raw = images::read_raw(&args.input, args.cfa.cfa, levels(&args.levels)?)?;
    let rgb = demosaic(&raw, args.method)?;
    let image = match args.gamma {
        Some(gamma) => {
            let gains: [f64; 3] = args
                .wb_gains
                .as_slice()
                .try_into()
                .map_err(|_| anyhow!("--wb-gains takes red,green,blue"))?;
            Image::Rgb(gamma_display(&rgb, gamma, gains)?, 255)
        }
        None => Image::Rgb(rgb, 65535),
    };
    images::write_image(&args.output, &image)?;
    run.output_file("output", &args.output)
}

pub fn mosaic_cmd(args: &MosaicArgs, run: &mut Run) -> Result<()> {
    run.input("input", &args.input)?;
    let (rgb, _) = images::require_rgb(images::read_image(&args.input)?, &args.input)?;
    let raw = mosaic(&rgb, args.cfa.cfa, levels(&args.levels)?)?;
    images::write_raw(&args.output, &raw)?;
    run.output_file("output", &args.output)
}

/// Frames of a dataset sequence used as the denoiser output at the stack's `t`.
struct Predictions<'a> {
    frames: &'a [RawFrame],
}

impl Denoiser for Predictions<'_> {
    fn denoise(&self, stack: &FrameStack) -> rawvid::Result<RawFrame> {
        self.frames
            .get(stack.t)
            .cloned()
            .ok_or_else(|| rawvid::Error::Mismatch(format!("no prediction for frame {}", stack.t)))
    }

    fn name(&self) -> String {
        "predictions".into()
    }
}

fn blindspot_net(args: &DenoiserArgs, seed: u64) -> Result<BlindSpotNet> {
    let mut rng = derive_stream(seed, "blindspot-net", stage::WEIGHTS, 0);
    Ok(BlindSpotNet::random(args.depth, args.channels, &mut rng)?.with_blindspot_removed(args.remove_blindspot))
}

/// Denoiser for one sequence; `predictions` supplies the frames of the
/// `predictions` kind.
fn denoiser<'a>(
    args: &DenoiserArgs,
    seed: u64,
    predictions: Option<&'a VideoSequence<RawFrame>>,
) -> Result<Box<dyn Denoiser + 'a>> {
    Ok(match args.denoiser {
        DenoiserKind::Predictions => {
            let seq = predictions.ok_or_else(|| anyhow!("--denoiser predictions needs --predictions"))?;
            Box::new(Predictions { frames: &seq.frames })
        }
        DenoiserKind::Identity => Box::new(Identity),
        DenoiserKind::TemporalMean => Box::new(TemporalMean),
        DenoiserKind::GaussianBlur => Box::new(GaussianBlur { sigma: args.sigma }),
        DenoiserKind::BlindspotNet => Box::new(blindspot_net(args, seed)?),
    })
}

fn load_predictions(args: &DenoiserArgs, noisy: &RawDataset, run: &mut Run) -> Result<Option<RawDataset>> {
    if args.denoiser != DenoiserKind::Predictions {
        return Ok(None);
    }
    let p = args
        .predictions
        .as_ref()
        .ok_or_else(|| anyhow!("--denoiser predictions needs --predictions"))?;
    run.input("predictions", p)?;
    let ds = read_dataset(p)?;
    for s in &noisy.sequences {
        let pred = ds
            .sequence(&s.id)
            .ok_or_else(|| anyhow!("sequence {:?} missing from the predictions", s.id))?;
        if pred.len() != s.len() {
            bail!("sequence {:?}: {} predictions for {} frames", s.id, pred.len(), s.len());
        }
    }
    Ok(Some(ds))
}

fn selected<'a>(ds: &'a RawDataset, ids: &[String]) -> Result<Vec<&'a VideoSequence<RawFrame>>> {
    if ids.is_empty() {
        return Ok(ds.sequences.iter().collect());
    }
    ids.iter()
        .map(|id| {
            ds.sequence(id)
                .ok_or_else(|| anyhow!("no sequence {id:?} in the dataset"))
        })
        .collect()
}

fn emit_report(text: &str, output: Option<&Path>, run: &mut Run) -> Result<()> {
    match output {
        Some(p) => {
            write_text(p, text)?;
            run.output_file("report", p)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn mf2f_loss(args: &Mf2fArgs, seed: u64, run: &mut Run) -> Result<()> {
    run.stage("load");
    run.input("noisy", &args.noisy)?;
    let noisy = read_dataset(&args.noisy)?;
    let predictions = load_predictions(&args.denoiser, &noisy, run)?;
    let config = Mf2fConfig {
        offsets: args.offsets.clone(),
        tvl1: tvl1(&args.tvl1),
        occlusion: occlusion(&args.occlusion),
        demosaic: args.method,
        interpolation: args.interp,
    };
    run.stage("evaluate");
    let mut csv = String::from("sequence,t,target,loss,coverage\n");
    let mut losses = Vec::new();
    for seq in selected(&noisy, &args.sequences)? {
        let pred = predictions.as_ref().and_then(|p| p.sequence(&seq.id));
        let den = denoiser(&args.denoiser, seed, pred)?;
        let evaluator = Mf2fEvaluator::new(seq, config.clone())?;
        let eval_t = |t: usize| -> rawvid::Result<_> {
            let r = evaluator.loss(den.as_ref(), t)?;
            Ok((t, evaluator.alignment(t)?.target_index, r.loss, r.coverage))
        };
        let rows = if den.concurrent() {
            (0..seq.len())
                .into_par_iter()
                .map(eval_t)
                .collect::<rawvid::Result<Vec<_>>>()?
        } else {
            (0..seq.len()).map(eval_t).collect::<rawvid::Result<Vec<_>>>()?
        };
        for (t, target, loss, coverage) in rows {
            csv += &format!("{},{t},{target},{loss:.9e},{coverage:.6}\n", seq.id);
            losses.push(loss);
        }
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    csv += &format!("all,mean,,{mean:.9e},\n");
    run.manifest.details = json!({ "mean_loss": mean, "denoiser": format!("{:?}", args.denoiser.denoiser) });
    emit_report(&csv, args.output.as_deref(), run)
}

pub fn bs_loss(args: &BsLossArgs, seed: u64, run: &mut Run) -> Result<()> {
    run.stage("load");
    run.input("noisy", &args.noisy)?;
    let noisy = read_dataset(&args.noisy)?;
    let predictions = load_predictions(&args.denoiser, &noisy, run)?;
    run.stage("evaluate");
    let mut csv = String::from("sequence,t,loss\n");
    let mut losses = Vec::new();
    for seq in selected(&noisy, &args.sequences)? {
        let pred = predictions.as_ref().and_then(|p| p.sequence(&seq.id));
        let den = denoiser(&args.denoiser, seed, pred)?;
        let eval_t = |t: usize| blindspot_loss(den.as_ref(), seq, t);
        let rows = if den.concurrent() {
            (0..seq.len())
                .into_par_iter()
                .map(eval_t)
                .collect::<rawvid::Result<Vec<_>>>()?
        } else {
            (0..seq.len()).map(eval_t).collect::<rawvid::Result<Vec<_>>>()?
        };
        for (t, loss) in rows.into_iter().enumerate() {
            csv += &format!("{},{t},{loss:.9e}\n", seq.id);
            losses.push(loss);
        }
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    csv += &format!("all,mean,{mean:.9e}\n");
    run.manifest.details = json!({ "mean_loss": mean });
    emit_report(&csv, args.output.as_deref(), run)
}

pub fn probe_rf(args: &ProbeArgs, seed: u64, run: &mut Run) -> Result<()> {
    if args.size < 8 || !args.size.is_multiple_of(2) {
        bail!("--size must be an even number of at least 8");
    }
    let frames = (0..BLINDSPOT_OFFSETS.len())
        .map(|i| {
            use rand::Rng;
            let mut rng = derive_stream(seed, "probe", "frames", i as u64);
            let data = rawvid::Plane::from_fn(args.size, args.size, |_, _| rng.random::<f64>());
            RawFrame::new(data, rawvid::CfaPattern::Rggb, Levels::default())
        })
        .collect::<rawvid::Result<Vec<_>>>()?;
    let seq = VideoSequence::new("probe", 1.0, frames)?;
    let stack = build_stack(&seq, BLINDSPOT_OFFSETS.len() / 2, &BLINDSPOT_OFFSETS)?;
    let (den, default_radius): (Box<dyn Denoiser>, usize) = match args.denoiser.denoiser {
        DenoiserKind::BlindspotNet => {
            let net = blindspot_net(&args.denoiser, seed)?;
            let r = net.radius();
            (Box::new(net), r)
        }
        DenoiserKind::Predictions => bail!("probe-rf needs a built-in denoiser"),
        _ => (denoiser(&args.denoiser, seed, None)?, 3),
    };
    let radius = args.radius.unwrap_or(default_radius);
    let pixel = (args.x.unwrap_or(args.size / 2), args.y.unwrap_or(args.size / 2));
    let report = probe_receptive_field(den.as_ref(), &stack, pixel, radius, args.epsilon)?;
    eprintln!(
        "{}: {} influential inputs, center delta {:.3e}, blind spot: {}",
        den.name(),
        report.influential.len(),
        report.center_delta,
        report.has_blind_spot
    );
    let text = serde_json::to_string_pretty(&report)? + "\n";
    run.manifest.details = json!({ "has_blind_spot": report.has_blind_spot, "center_delta": report.center_delta });
    emit_report(&text, args.output.as_deref(), run)
}

pub fn eval(args: &EvalArgs, run: &mut Run) -> Result<()> {
    run.input("denoised", &args.denoised)?;
    run.input("reference", &args.reference)?;
    let denoised = read_dataset(&args.denoised)?;
    let reference = read_dataset(&args.reference)?;
    run.stage("evaluate");
    let report = evaluate(&denoised, &reference)?;
    run.manifest.details = json!({ "psnr": format_psnr(report.psnr), "ssim": report.ssim });
    match &args.output {
        Some(p) => {
            write_text(p, &report.to_csv())?;
            run.output_file("report", p)?;
            println!("PSNR {} dB, SSIM {:.6}", format_psnr(report.psnr), report.ssim);
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

pub fn subsample(args: &SubsampleArgs, run: &mut Run) -> Result<()> {
    run.input("input", &args.input)?;
    let ds = read_dataset(&args.input)?;
    let out = subsample_dataset(&ds, args.stride as usize)?;
    write_raw_dataset(&args.output, &out)?;
    run.output_dir("output", &args.output)
}

pub fn avg_gt(args: &AvgGtArgs, run: &mut Run) -> Result<()> {
    run.input("input", &args.input)?;
    let ds = read_dataset(&args.input)?;
    let out = average_gt_dataset(&ds)?;
    write_raw_dataset(&args.output, &out)?;
    run.output_dir("output", &args.output)
}
