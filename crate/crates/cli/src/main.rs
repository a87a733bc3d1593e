use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use tppi_core::flops::count_flops;
use tppi_core::infer::{
    predict_image, predict_patchwise, predict_tiled, verify_equivalence, PixelSelection,
    PredictOptions,
};
use tppi_core::ir::NetworkGraph;
use tppi_core::metrics::{evaluate_map, MetricsReport, PixelMask};
use tppi_core::presets;
use tppi_core::scene::{default_palette, gen_synthetic, HsiCube, SceneSpec};
use tppi_core::tensor::{crop_window, pad_spatial, BorderFill, Precision};
use tppi_core::train::{split_dataset, train, DatasetSplit, TrainConfig, TrainError};
use tppi_core::transform::transform;

use tppi_cli::bench::time_runs;
use tppi_cli::error::CliError;
use tppi_cli::netfile::{load_network, save_network};
use tppi_cli::raster::{
    self, load_cube, load_gt, load_split_mask, save_cube, save_gt, save_map, save_ppm,
    save_probability_planes, save_split_mask, SplitMask, SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL,
};
use tppi_cli::report::{
    self, macs_u64, write_json, BenchDoc, BenchModeDoc, FlopsDoc, LayerCostDoc, MachineDoc,
    MetricsDoc, PredictDoc, SweepDoc, SweepRowDoc, TrainDoc, TransformDoc, VerifyDoc,
};

/// Classify hyperspectral scenes with networks trained on pixels,
/// rewrite patch classifiers into image-runnable form, and measure the
/// cost gap between the two prediction mechanisms.
#[derive(Parser)]
#[command(name = "tppi", version)]
struct Cli {
    /// Worker thread cap. Results never depend on it. The TPPI_THREADS
    /// environment variable applies when the flag is absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for everything randomized: scene synthesis, weight
    /// initialization, dataset splits, batch shuffling.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Patch,
    Image,
    Tiled,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    SsrnLike,
    PresnetLike,
    SmallTppi,
    Sweep,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite a patch classifier into an image-runnable network.
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the rewrite report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify a cube and write the class map.
    Predict {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_enum, default_value = "image")]
        mode: ModeArg,
        /// Mirror-pad the scene so every pixel is classified.
        #[arg(long)]
        pad_full: bool,
        /// Tile edge for --mode tiled.
        #[arg(long)]
        tile: Option<usize>,
        /// Map header path; the class raster lands beside it.
        #[arg(long)]
        out: PathBuf,
        /// Retain per-pixel scores (needed for --probs).
        #[arg(long)]
        logits: bool,
        /// Write per-class probability planes.
        #[arg(long)]
        probs: Option<PathBuf>,
        /// Render the map as a binary pixmap.
        #[arg(long)]
        ppm: Option<PathBuf>,
        /// Palette text file for --ppm; defaults to the ground truth's
        /// palette or a generated one.
        #[arg(long)]
        palette: Option<PathBuf>,
        /// Score the map against this ground truth.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Split mask whose pixels are dropped from scoring.
        #[arg(long)]
        exclude_mask: Option<PathBuf>,
        /// Split codes the exclusion drops.
        #[arg(long, value_delimiter = ',', default_values_t = [SPLIT_TRAIN, SPLIT_VAL])]
        exclude_codes: Vec<u16>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit a network template to labeled pixels of a cube.
    Train {
        #[arg(long)]
        net_template: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Trained checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// JSON file with optimizer fields; flags override it.
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long, value_enum)]
        precision: Option<PrecisionArg>,
        #[arg(long, default_value_t = 0.2)]
        train_frac: f64,
        #[arg(long, default_value_t = 0.16)]
        val_frac: f64,
        /// Write the training log as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the pixel-role raster of the split.
        #[arg(long)]
        split_out: Option<PathBuf>,
    },
    /// Check that patch and image prediction agree on every pixel.
    Verify {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        /// Largest acceptable per-score gap.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Count multiply-accumulates for both prediction mechanisms.
    Flops {
        #[arg(long)]
        net: PathBuf,
        /// Scene extent as HxW, e.g. 145x145.
        #[arg(long)]
        image_size: String,
        /// Count multiplies and adds separately (doubles every figure).
        #[arg(long)]
        double: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Time prediction modes on a cube.
    Bench {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_delimiter = ',', default_values = ["patch", "image"])]
        modes: Vec<String>,
        /// Timed runs per mode, after one untimed warm-up.
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Time both modes across sample sizes with cost-matched networks.
    Sweep {
        /// Comma-separated odd sample sizes, ascending.
        #[arg(long, value_delimiter = ',')]
        m_list: Vec<usize>,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        /// Classes for the generated networks when no --gt is given.
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Train each network this many epochs and report test accuracy
        /// (requires --gt).
        #[arg(long)]
        train_epochs: Option<usize>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Synthesize a labeled scene.
    Gen {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        bands: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        noise: Option<f32>,
        #[arg(long)]
        regions: Option<usize>,
        /// Fraction of pixels left unlabeled in the ground truth.
        #[arg(long, default_value_t = 0.0)]
        unlabeled_frac: f32,
        /// Base path; writes BASE.cube.json/.raw and BASE.gt.json/.raw.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a ready-made network.
    Preset {
        #[arg(long, value_enum)]
        kind: PresetArg,
        #[arg(long)]
        bands: usize,
        #[arg(long)]
        classes: usize,
        /// Sample size for --kind sweep.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::try_parse().unwrap_or_else(|err| {
        // Keep clap's usage errors on exit 1; code 2 is reserved for
        // structural refusals (not image-runnable / not rewritable).
        let code = if err.use_stderr() { 1 } else { 0 };
        let _ = err.print();
        std::process::exit(code);
    });
    let threads = cli.threads.or_else(|| {
        std::env::var("TPPI_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = threads {
        if n >= 1 {
            // Ignore failure: the pool can already be initialized.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Transform { input, out, report } => cmd_transform(&input, &out, report.as_deref()),
        Command::Predict {
            net,
            cube,
            mode,
            pad_full,
            tile,
            out,
            logits,
            probs,
            ppm,
            palette,
            gt,
            exclude_mask,
            exclude_codes,
            report,
        } => cmd_predict(PredictArgs {
            net,
            cube,
            mode,
            pad_full,
            tile,
            out,
            logits,
            probs,
            ppm,
            palette,
            gt,
            exclude_mask,
            exclude_codes,
            report,
        }),
        Command::Train {
            net_template,
            cube,
            gt,
            out,
            cfg,
            epochs,
            batch_size,
            learning_rate,
            momentum,
            weight_decay,
            precision,
            train_frac,
            val_frac,
            log,
            split_out,
        } => cmd_train(TrainArgs {
            net_template,
            cube,
            gt,
            out,
            cfg,
            epochs,
            batch_size,
            learning_rate,
            momentum,
            weight_decay,
            precision,
            train_frac,
            val_frac,
            log,
            split_out,
            seed,
        }),
        Command::Verify {
            net,
            cube,
            tolerance,
            report,
        } => cmd_verify(&net, &cube, tolerance, report.as_deref()),
        Command::Flops {
            net,
            image_size,
            double,
            json,
        } => cmd_flops(&net, &image_size, double, json.as_deref()),
        Command::Bench {
            net,
            cube,
            modes,
            runs,
            report,
            csv,
        } => cmd_bench(&net, &cube, &modes, runs, seed, report.as_deref(), csv.as_deref()),
        Command::Sweep {
            m_list,
            cube,
            runs,
            classes,
            train_epochs,
            gt,
            csv,
            report,
        } => cmd_sweep(SweepArgs {
            m_list,
            cube,
            runs,
            classes,
            train_epochs,
            gt,
            csv,
            report,
            seed,
        }),
        Command::Gen {
            height,
            width,
            bands,
            classes,
            noise,
            regions,
            unlabeled_frac,
            out,
        } => cmd_gen(height, width, bands, classes, noise, regions, unlabeled_frac, seed, &out),
        Command::Preset {
            kind,
            bands,
            classes,
            m,
            out,
        } => cmd_preset(kind, bands, classes, m, seed, &out),
    }
}

fn cmd_transform(input: &Path, out: &Path, report: Option<&Path>) -> Result<(), CliError> {
    let net = load_network(input)?;
    let (rewritten, rep) = transform(&net)?;
    save_network(&rewritten, out)?;
    println!(
        "{} -> {}: {} rewrite(s), retrain_required={}, receptive field {} -> {}",
        net.name,
        rewritten.name,
        rep.rewrites.len(),
        rep.retrain_required,
        rep.receptive_field_before,
        rep.receptive_field_after,
    );
    if let Some(path) = report {
        write_json(&TransformDoc::new(&net.name, &rewritten.name, &rep), path)?;
    }
    Ok(())
}

struct PredictArgs {
    net: PathBuf,
    cube: PathBuf,
    mode: ModeArg,
    pad_full: bool,
    tile: Option<usize>,
    out: PathBuf,
    logits: bool,
    probs: Option<PathBuf>,
    ppm: Option<PathBuf>,
    palette: Option<PathBuf>,
    gt: Option<PathBuf>,
    exclude_mask: Option<PathBuf>,
    exclude_codes: Vec<u16>,
    report: Option<PathBuf>,
}

fn exclusion_mask(mask: &SplitMask, codes: &[u16]) -> PixelMask {
    let mut out = PixelMask::new(mask.height, mask.width);
    for (i, code) in mask.codes.iter().enumerate() {
        if codes.contains(code) {
            out.set(i / mask.width, i % mask.width);
        }
    }
    out
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let net = load_network(&args.net)?;
    let cube = load_cube(&args.cube)?;
    let opts = PredictOptions {
        keep_logits: args.logits || args.probs.is_some(),
        ..PredictOptions::default()
    };
    let start = Instant::now();
    let map = match args.mode {
        ModeArg::Image => predict_image(&net, &cube, args.pad_full, &opts)?,
        ModeArg::Patch => predict_patchwise(&net, &cube, PixelSelection::All, &opts)?,
        ModeArg::Tiled => {
            let tile = args.tile.ok_or_else(|| {
                CliError::Usage("--mode tiled requires --tile".to_string())
            })?;
            predict_tiled(&net, &cube, tile, args.pad_full, &opts)?
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    save_map(&map, &args.out)?;
    println!(
        "{} mode: {}x{} map of {} classes in {seconds:.3}s -> {}",
        map.provenance.mode.as_str(),
        map.height,
        map.width,
        map.num_classes,
        args.out.display(),
    );

    let gt = args.gt.as_deref().map(load_gt).transpose()?;
    if let Some(path) = &args.ppm {
        let palette = match (&args.palette, &gt) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
                raster::parse_palette(&text, p)?.1
            }
            (None, Some(gt)) => gt.palette.clone(),
            (None, None) => default_palette(map.num_classes),
        };
        save_ppm(&map, &palette, path)?;
    }
    if let Some(path) = &args.probs {
        save_probability_planes(&map, path)?;
    }

    let metrics = match &gt {
        Some(gt) => {
            let exclude = args
                .exclude_mask
                .as_deref()
                .map(load_split_mask)
                .transpose()?
                .map(|m| exclusion_mask(&m, &args.exclude_codes));
            let m = evaluate_map(&map, gt, exclude.as_ref())?;
            print_metrics(&m);
            Some(m)
        }
        None => None,
    };

    if let Some(path) = &args.report {
        write_json(
            &PredictDoc {
                schema_version: report::SCHEMA_VERSION,
                report: "predict",
                net: net.name.clone(),
                cube: cube.name.clone(),
                mode: map.provenance.mode.as_str().to_string(),
                padded: map.provenance.padded,
                height: map.height,
                width: map.width,
                seconds,
                metrics: metrics.as_ref().map(MetricsDoc::new),
            },
            path,
        )?;
    }
    Ok(())
}

fn print_metrics(m: &MetricsReport) {
    println!(
        "scored {} pixels: OA {:.4}, AA {:.4}, kappa {:.4}",
        m.pixels_evaluated, m.overall_accuracy, m.average_accuracy, m.kappa
    );
}

struct TrainArgs {
    net_template: PathBuf,
    cube: PathBuf,
    gt: PathBuf,
    out: PathBuf,
    cfg: Option<PathBuf>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    precision: Option<PrecisionArg>,
    train_frac: f64,
    val_frac: f64,
    log: Option<PathBuf>,
    split_out: Option<PathBuf>,
    seed: u64,
}

fn split_to_mask(split: &DatasetSplit) -> SplitMask {
    let mut codes = vec![0u16; split.height * split.width];
    for (pixels, code) in [
        (&split.train, SPLIT_TRAIN),
        (&split.val, SPLIT_VAL),
        (&split.test, SPLIT_TEST),
    ] {
        for p in pixels {
            codes[p.row * split.width + p.col] = code;
        }
    }
    SplitMask {
        height: split.height,
        width: split.width,
        codes,
    }
}

fn load_train_cfg(path: &Path, config: &mut TrainConfig) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.into(),
        message: format!("not valid JSON: {e}"),
    })?;
    let obj = v.as_object().ok_or_else(|| CliError::Format {
        path: path.into(),
        message: "expected a JSON object".to_string(),
    })?;
    for key in obj.keys() {
        let known = [
            "batch_size",
            "learning_rate",
            "momentum",
            "weight_decay",
            "epochs",
            "precision",
        ];
        if !known.contains(&key.as_str()) {
            return Err(CliError::Format {
                path: path.into(),
                message: format!("unknown config field {key:?}"),
            });
        }
    }
    if let Some(n) = obj.get("batch_size").and_then(|v| v.as_u64()) {
        config.batch_size = n as usize;
    }
    if let Some(n) = obj.get("epochs").and_then(|v| v.as_u64()) {
        config.epochs = n as usize;
    }
    if let Some(x) = obj.get("learning_rate").and_then(|v| v.as_f64()) {
        config.learning_rate = x;
    }
    if let Some(x) = obj.get("momentum").and_then(|v| v.as_f64()) {
        config.momentum = x;
    }
    if let Some(x) = obj.get("weight_decay").and_then(|v| v.as_f64()) {
        config.weight_decay = x;
    }
    match obj.get("precision").and_then(|v| v.as_str()) {
        Some("f32") => config.precision = Precision::F32,
        Some("f64") => config.precision = Precision::F64,
        Some(other) => {
            return Err(CliError::Format {
                path: path.into(),
                message: format!("precision must be \"f32\" or \"f64\", got {other:?}"),
            });
        }
        None => {}
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let template = load_network(&args.net_template)?;
    let cube = load_cube(&args.cube)?;
    let gt = load_gt(&args.gt)?;

    let mut config = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    if let Some(path) = &args.cfg {
        load_train_cfg(path, &mut config)?;
    }
    if let Some(n) = args.epochs {
        config.epochs = n;
    }
    if let Some(n) = args.batch_size {
        config.batch_size = n;
    }
    if let Some(x) = args.learning_rate {
        config.learning_rate = x;
    }
    if let Some(x) = args.momentum {
        config.momentum = x;
    }
    if let Some(x) = args.weight_decay {
        config.weight_decay = x;
    }
    if let Some(p) = args.precision {
        config.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }

    let split = split_dataset(&gt, args.train_frac, args.val_frac, args.seed)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "split: {} train / {} val / {} test pixels",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    if let Some(path) = &args.split_out {
        save_split_mask(&split_to_mask(&split), path)?;
    }

    let finish = |net: &NetworkGraph, log: &tppi_core::train::TrainLog| -> Result<(), CliError> {
        save_network(net, &args.out)?;
        if let Some(path) = &args.log {
            write_json(&TrainDoc::new(&net.name, &cube.name, log), path)?;
        }
        Ok(())
    };

    match train(&template, &cube, &split, &config) {
        Ok(outcome) => {
            finish(&outcome.net, &outcome.log)?;
            println!(
                "trained {} epoch(s) in {:.1}s; kept epoch {} with val OA {:.4} -> {}",
                outcome.log.epochs.len(),
                outcome.log.wall_seconds,
                outcome.log.best_epoch,
                outcome.log.best_val_oa,
                args.out.display(),
            );
            Ok(())
        }
        Err(TrainError::Diverged { epoch, outcome }) => {
            finish(&outcome.net, &outcome.log)?;
            eprintln!(
                "loss became non-finite at epoch {epoch}; saved the best finite checkpoint (epoch {})",
                outcome.log.best_epoch
            );
            Err(CliError::Diverged {
                epoch,
                best_epoch: outcome.log.best_epoch,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_verify(
    net_path: &Path,
    cube_path: &Path,
    tolerance: f64,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let net = load_network(net_path)?;
    let cube = load_cube(cube_path)?;
    let rep = verify_equivalence(&net, &cube, tolerance)?;
    println!(
        "compared {} pixels: max score gap {:.3e}, {} argmax disagreement(s)",
        rep.pixels_compared, rep.max_abs_logit_diff, rep.argmax_disagreements
    );
    if let Some(path) = report {
        write_json(&VerifyDoc::new(&net.name, &cube.name, &rep), path)?;
    }
    if rep.argmax_disagreements != 0 {
        return Err(CliError::Failed(format!(
            "prediction modes disagree on {} pixel(s), first at {:?}",
            rep.argmax_disagreements,
            rep.disagreeing_pixels.first()
        )));
    }
    Ok(())
}

fn parse_image_size(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    let parse = |s: &str| s.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match parts.as_slice() {
        [h, w] => match (parse(h), parse(w)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(CliError::Usage(format!(
                "--image-size {text:?} is not HxW with positive extents"
            ))),
        },
        _ => Err(CliError::Usage(format!(
            "--image-size {text:?} is not HxW"
        ))),
    }
}

fn cmd_flops(
    net_path: &Path,
    image_size: &str,
    double: bool,
    json: Option<&Path>,
) -> Result<(), CliError> {
    let net = load_network(net_path)?;
    let (h, w) = parse_image_size(image_size)?;
    let rep = count_flops(&net, h, w)?;
    let factor: u128 = if double { 2 } else { 1 };
    let unit = if double { "flops" } else { "macs" };

    println!(
        "{:>3}  {:<12} {:<16} {:>16} {:>16} {:>8}",
        "#", "id", "kind", format!("image {unit}"), format!("patch {unit}/px"), "ratio"
    );
    let mut layer_docs = Vec::with_capacity(rep.layers.len());
    for layer in &rep.layers {
        let ratio = layer.macs_ratio_exact(rep.num_pixels);
        let ratio_text = ratio.map_or_else(|| "-".to_string(), |r| r.to_string());
        println!(
            "{:>3}  {:<12} {:<16} {:>16} {:>16} {:>8}",
            layer.index,
            layer.id,
            layer.kind,
            layer.image_macs * factor,
            layer.patch_macs_per_pixel * factor,
            ratio_text
        );
        layer_docs.push(LayerCostDoc {
            index: layer.index,
            id: layer.id.clone(),
            kind: layer.kind.to_string(),
            image_macs: macs_u64(layer.image_macs * factor, "layer image cost")?,
            patch_macs_per_pixel: macs_u64(
                layer.patch_macs_per_pixel * factor,
                "layer patch cost",
            )?,
            ratio: ratio.map(|r| macs_u64(r, "layer ratio")).transpose()?,
        });
    }
    println!(
        "totals on {h}x{w}: image {} {unit}, patch {} {unit}; ratio {:.2} (sample size {} squared is {})",
        rep.image_macs * factor,
        rep.patch_macs_total() * factor,
        rep.macs_ratio(),
        rep.sample_size,
        rep.sample_size * rep.sample_size,
    );

    if let Some(path) = json {
        write_json(
            &FlopsDoc {
                schema_version: report::SCHEMA_VERSION,
                report: "flops",
                net: net.name.clone(),
                height: h,
                width: w,
                sample_size: rep.sample_size,
                counting: if double { "flops" } else { "macs" },
                layers: layer_docs,
                image_macs: macs_u64(rep.image_macs * factor, "image total")?,
                patch_macs_per_pixel: macs_u64(rep.patch_macs_per_pixel * factor, "patch cost")?,
                patch_macs_total: macs_u64(rep.patch_macs_total() * factor, "patch total")?,
                image_elementwise: macs_u64(rep.image_elementwise * factor, "elementwise")?,
                patch_elementwise_per_pixel: macs_u64(
                    rep.patch_elementwise_per_pixel * factor,
                    "elementwise",
                )?,
                macs_ratio: rep.macs_ratio(),
                sample_size_squared: rep.sample_size * rep.sample_size,
            },
            path,
        )?;
    }
    Ok(())
}

/// The window-cutting work of patch mode, run on its own so its share
/// of the patch-mode time can be reported.
fn extraction_pass(cube: &HsiCube, m: usize) {
    let scene = cube.to_tensor(tppi_core::ir::InputRank::Rank3);
    let r = (m - 1) / 2;
    let padded = pad_spatial(&scene, r, r, r, r, BorderFill::Mirror).expect("scene extent checked");
    for row in 0..cube.height {
        for col in 0..cube.width {
            let window = crop_window(&padded, row, col, m, m).expect("window in bounds");
            std::hint::black_box(window);
        }
    }
}

fn cmd_bench(
    net_path: &Path,
    cube_path: &Path,
    modes: &[String],
    runs: usize,
    seed: u64,
    report: Option<&Path>,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let net = load_network(net_path)?;
    let cube = load_cube(cube_path)?;
    let flops = count_flops(&net, cube.height, cube.width)?;
    let opts = PredictOptions::default();

    let mut mode_docs = Vec::new();
    let mut patch_median = None;
    let mut image_median = None;
    for mode in modes {
        let doc = match mode.as_str() {
            "patch" => {
                predict_patchwise(&net, &cube, PixelSelection::All, &opts)?;
                let timing = time_runs(runs, || {
                    let map = predict_patchwise(&net, &cube, PixelSelection::All, &opts)
                        .expect("validated by the warm-up");
                    std::hint::black_box(map);
                })?;
                let extract =
                    time_runs(runs, || extraction_pass(&cube, net.input.sample_size))?;
                patch_median = Some(timing.median);
                BenchModeDoc {
                    mode: mode.clone(),
                    seconds_median: timing.median,
                    seconds_min: timing.min,
                    seconds_max: timing.max,
                    extract_seconds_median: Some(extract.median),
                    macs: macs_u64(flops.patch_macs_total(), "patch total")?,
                }
            }
            "image" => {
                predict_image(&net, &cube, true, &opts)?;
                let timing = time_runs(runs, || {
                    let map = predict_image(&net, &cube, true, &opts)
                        .expect("validated by the warm-up");
                    std::hint::black_box(map);
                })?;
                image_median = Some(timing.median);
                BenchModeDoc {
                    mode: mode.clone(),
                    seconds_median: timing.median,
                    seconds_min: timing.min,
                    seconds_max: timing.max,
                    extract_seconds_median: None,
                    macs: macs_u64(flops.image_macs, "image total")?,
                }
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown mode {other:?}; --modes takes patch,image"
                )));
            }
        };
        println!(
            "{}: median {:.4}s (min {:.4}, max {:.4}) over {} runs",
            doc.mode, doc.seconds_median, doc.seconds_min, doc.seconds_max, runs
        );
        mode_docs.push(doc);
    }
    let speedup = match (patch_median, image_median) {
        (Some(p), Some(i)) if i > 0.0 => {
            let s = p / i;
            println!("speedup (patch / image medians): {s:.1}x");
            Some(s)
        }
        _ => None,
    };

    if let Some(path) = csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        w.write_record([
            "mode",
            "seconds_median",
            "seconds_min",
            "seconds_max",
            "extract_seconds_median",
            "macs",
        ])
        .and_then(|()| {
            for d in &mode_docs {
                w.write_record([
                    d.mode.clone(),
                    d.seconds_median.to_string(),
                    d.seconds_min.to_string(),
                    d.seconds_max.to_string(),
                    d.extract_seconds_median
                        .map_or_else(String::new, |v| v.to_string()),
                    d.macs.to_string(),
                ])?;
            }
            w.flush().map_err(csv::Error::from)
        })
        .map_err(|e| CliError::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
    }
    if let Some(path) = report {
        write_json(
            &BenchDoc {
                schema_version: report::SCHEMA_VERSION,
                report: "bench",
                net: net.name.clone(),
                cube: cube.name.clone(),
                seed,
                runs,
                machine: MachineDoc::current(),
                modes: mode_docs,
                speedup,
            },
            path,
        )?;
    }
    Ok(())
}

struct SweepArgs {
    m_list: Vec<usize>,
    cube: PathBuf,
    runs: usize,
    classes: usize,
    train_epochs: Option<usize>,
    gt: Option<PathBuf>,
    csv: Option<PathBuf>,
    report: Option<PathBuf>,
    seed: u64,
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    if args.m_list.is_empty() {
        return Err(CliError::Usage("--m-list must name at least one sample size".to_string()));
    }
    let mut m_list = args.m_list.clone();
    m_list.sort_unstable();
    m_list.dedup();
    if let Some(&badm) = m_list.iter().find(|&&m| m % 2 == 0 || m < 3) {
        return Err(CliError::Usage(format!(
            "sample size {badm} is not an odd value of at least 3"
        )));
    }
    let cube = load_cube(&args.cube)?;
    let gt = args.gt.as_deref().map(load_gt).transpose()?;
    if args.train_epochs.is_some() && gt.is_none() {
        return Err(CliError::Usage(
            "--train-epochs needs --gt for labels".to_string(),
        ));
    }
    let classes = gt.as_ref().map_or(args.classes, |g| g.num_classes);
    let opts = PredictOptions::default();

    let mut rows = Vec::new();
    for &m in &m_list {
        let mut net = presets::sweep_net(m, cube.bands, classes)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        presets::init_weights(&mut net, args.seed ^ m as u64);

        let mut oa = None;
        if let (Some(epochs), Some(gt)) = (args.train_epochs, gt.as_ref()) {
            let split = split_dataset(gt, 0.2, 0.16, args.seed)?;
            let config = TrainConfig {
                epochs,
                seed: args.seed,
                ..TrainConfig::default()
            };
            let outcome = train(&net, &cube, &split, &config)?;
            net = outcome.net;
            let map = predict_image(&net, &cube, true, &opts)?;
            let metrics = evaluate_map(&map, gt, Some(&split.non_test_mask()))?;
            oa = Some(metrics.overall_accuracy);
        }

        predict_patchwise(&net, &cube, PixelSelection::All, &opts)?;
        let patch = time_runs(args.runs, || {
            let map = predict_patchwise(&net, &cube, PixelSelection::All, &opts)
                .expect("validated by the warm-up");
            std::hint::black_box(map);
        })?;
        let image = time_runs(args.runs, || {
            let map =
                predict_image(&net, &cube, true, &opts).expect("validated by the warm-up");
            std::hint::black_box(map);
        })?;
        let flops = count_flops(&net, cube.height, cube.width)?;

        let row = SweepRowDoc {
            m,
            patch_time: patch.median,
            image_time: image.median,
            patch_flops: macs_u64(flops.patch_macs_total(), "patch total")?,
            image_flops: macs_u64(flops.image_macs, "image total")?,
            oa,
        };
        println!(
            "m={:>2}: patch {:.4}s, image {:.4}s, flops ratio {:.0}{}",
            row.m,
            row.patch_time,
            row.image_time,
            row.patch_flops as f64 / row.image_flops as f64,
            row.oa.map_or_else(String::new, |v| format!(", OA {v:.4}")),
        );
        rows.push(row);
    }

    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        w.write_record(["m", "patch_time", "image_time", "patch_flops", "image_flops", "oa"])
            .and_then(|()| {
                for r in &rows {
                    w.write_record([
                        r.m.to_string(),
                        r.patch_time.to_string(),
                        r.image_time.to_string(),
                        r.patch_flops.to_string(),
                        r.image_flops.to_string(),
                        r.oa.map_or_else(String::new, |v| v.to_string()),
                    ])?;
                }
                w.flush().map_err(csv::Error::from)
            })
            .map_err(|e| CliError::Format {
                path: path.into(),
                message: e.to_string(),
            })?;
    }
    if let Some(path) = &args.report {
        write_json(
            &SweepDoc {
                schema_version: report::SCHEMA_VERSION,
                report: "sweep",
                cube: cube.name.clone(),
                seed: args.seed,
                runs: args.runs,
                machine: MachineDoc::current(),
                rows,
            },
            path,
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    noise: Option<f32>,
    regions: Option<usize>,
    unlabeled_frac: f32,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let mut spec = SceneSpec::new(height, width, bands, classes);
    spec.seed = seed;
    spec.unlabeled_frac = unlabeled_frac;
    if let Some(s) = noise {
        spec.noise_sigma = s;
    }
    if let Some(r) = regions {
        spec.regions = r;
    }
    let (cube, gt) = gen_synthetic(&spec)?;

    let base = out.to_string_lossy();
    let cube_path = PathBuf::from(format!("{base}.cube.json"));
    let gt_path = PathBuf::from(format!("{base}.gt.json"));
    save_cube(&cube, &cube_path)?;
    save_gt(&gt, &gt_path)?;
    println!(
        "wrote {}x{} cube with {} bands -> {}",
        cube.height,
        cube.width,
        cube.bands,
        cube_path.display()
    );
    println!(
        "wrote ground truth with {} classes, {} labeled pixels -> {}",
        gt.num_classes,
        gt.labeled_count(),
        gt_path.display()
    );
    Ok(())
}

fn cmd_preset(
    kind: PresetArg,
    bands: usize,
    classes: usize,
    m: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let mut net = match kind {
        PresetArg::SsrnLike => presets::ssrn_like(bands, classes),
        PresetArg::PresnetLike => presets::presnet_like(bands, classes),
        PresetArg::SmallTppi => presets::small_tppi(bands, classes),
        PresetArg::Sweep => {
            let m = m.ok_or_else(|| {
                CliError::Usage("--kind sweep requires --m".to_string())
            })?;
            presets::sweep_net(m, bands, classes).map_err(|e| CliError::Usage(e.to_string()))?
        }
        PresetArg::Random => presets::random_tppi_net(seed, bands, classes),
    };
    if !matches!(kind, PresetArg::Random) {
        presets::init_weights(&mut net, seed);
    }
    save_network(&net, out)?;
    println!(
        "wrote {} (sample size {}, {} layers) -> {}",
        net.name,
        net.input.sample_size,
        net.layers.len(),
        out.display()
    );
    Ok(())
}
