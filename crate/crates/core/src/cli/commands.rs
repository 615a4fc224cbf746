//! Implementations of the CLI subcommands.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{load_config, Args};
use crate::config::Config;
use crate::data::{
    ingest_csv, kfold_subjects, make_windows, read_ppm, resample, split_subjects,
    synth_image_corpus, synth_imu_dataset, write_ppm, CsvSchema, ImageCorpus, SubjectSplit,
    SynthSpec, Window,
};
use crate::error::{Error, Result};
use crate::moco::{decode_checkpoint, encode_checkpoint, Pretrainer};
use crate::nn::{encoder_forward_single, Tensor};
use crate::probe::{
    self, eval_varying_n, extract_features, grad_cam, linear_probe, overlay_heatmap,
    sample_few_shot, varying_n_csv, AblationConfig,
};
use crate::spectro::{convert_window, resize_bilinear, to_rgb_spectrogram};

fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn dataset_windows(args: &Args, cfg: &Config) -> Result<Vec<Window>> {
    let windows = match args.get("input") {
        Some(path) => {
            let report = ingest_csv(path, &CsvSchema::default())?;
            if report.rejected_rows > 0 {
                eprintln!("note: rejected {} rows with non-finite values", report.rejected_rows);
            }
            let mut windows = Vec::new();
            for series in &report.series {
                let series = resample(series, cfg.data.rate_hz)?;
                windows.extend(make_windows(
                    &series,
                    cfg.data.window_seconds,
                    cfg.data.overlap,
                )?);
            }
            windows
        }
        None => {
            let spec = SynthSpec::preset(
                cfg.data.synth_classes,
                cfg.data.rate_hz,
                cfg.data.window_seconds,
            )?;
            synth_imu_dataset(
                &spec,
                cfg.data.synth_subjects,
                cfg.data.synth_windows_per_class,
                cfg.data.seed,
            )?
        }
    };
    if windows.is_empty() {
        return Err(Error::data("dataset produced no windows"));
    }
    Ok(windows)
}

fn subjects_of(windows: &[Window]) -> BTreeSet<String> {
    windows.iter().map(|w| w.subject_id.clone()).collect()
}

fn n_classes_of(windows: &[Window]) -> Result<usize> {
    windows
        .iter()
        .filter_map(|w| w.label)
        .max()
        .map(|m| m as usize + 1)
        .ok_or_else(|| Error::data("dataset has no labels"))
}

fn load_checkpoint_file(path: &str, cfg: &Config) -> Result<Pretrainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let trainer = decode_checkpoint(&bytes)?;
    trainer.require_feature_dim(cfg.pretrain.feature_dim)?;
    Ok(trainer)
}

/// Apply the --threads override onto the configured worker count.
fn apply_threads(args: &Args, cfg: &mut Config) -> Result<()> {
    if let Some(threads) = parse_flag::<usize>(args, "threads")? {
        cfg.pretrain.threads = threads;
    }
    Ok(())
}

fn parse_flag<T: std::str::FromStr>(args: &Args, key: &str) -> Result<Option<T>> {
    match args.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::config(format!("bad value '{raw}' for --{key}"))),
    }
}

pub fn convert(args: &Args) -> Result<()> {
    args.finish(&["input", "out", "config", "ckpt", "threads"])?;
    let mut cfg = load_config(args)?;
    apply_threads(args, &mut cfg)?;
    let cfg = cfg;
    let out_dir = PathBuf::from(args.require("out")?);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let windows = dataset_windows(args, &cfg)?;
    let spectro_cfg = cfg.spectro_config();
    let stats = match args.get("ckpt") {
        Some(path) => Some(load_checkpoint_file(path, &cfg)?.stats),
        None => None,
    };

    let mut manifest = String::from("path,label,subject\n");
    for (i, window) in windows.iter().enumerate() {
        let native = to_rgb_spectrogram(window, &spectro_cfg)?;
        let image = resize_bilinear(&native, spectro_cfg.out_h, spectro_cfg.out_w);
        let name = format!("win_{i:05}.ppm");
        write_ppm(out_dir.join(&name), &image)?;

        let label = window
            .label
            .map(|l| l.to_string())
            .unwrap_or_else(|| "none".into());
        let mut sidecar = format!(
            "nfft = {}\nnoverlap = {}\nlabel = {}\nsubject = {}\norigin_index = {}\nrate_hz = {}\n",
            spectro_cfg.nfft,
            spectro_cfg.noverlap,
            label,
            window.subject_id,
            window.origin_index,
            window.rate_hz
        );
        match &stats {
            Some(s) => {
                sidecar.push_str(&format!(
                    "normalize_mean = {},{},{}\nnormalize_std = {},{},{}\n",
                    s.mean[0], s.mean[1], s.mean[2], s.std[0], s.std[1], s.std[2]
                ));
            }
            None => sidecar.push_str("normalize_mean = none\nnormalize_std = none\n"),
        }
        write_file(out_dir.join(format!("win_{i:05}.txt")), sidecar.as_bytes())?;
        manifest.push_str(&format!("{name},{label},{}\n", window.subject_id));
    }
    write_file(out_dir.join("manifest.csv"), manifest.as_bytes())?;
    println!("wrote {} images to {}", windows.len(), out_dir.display());
    Ok(())
}

fn load_corpus(args: &Args, cfg: &Config) -> Result<ImageCorpus> {
    if let Some(dir) = args.get("corpus") {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "ppm"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::data(format!("no .ppm images in {dir}")));
        }
        let images: Vec<_> = paths.iter().map(read_ppm).collect::<Result<_>>()?;
        return ImageCorpus::from_images(&images);
    }
    let n = parse_flag(args, "synth")?.unwrap_or(cfg.pretrain.corpus_n);
    synth_image_corpus(n, cfg.pretrain.corpus_h, cfg.pretrain.corpus_w, cfg.pretrain.seed)
}

pub fn pretrain(args: &Args) -> Result<()> {
    args.finish(&["corpus", "synth", "config", "out", "resume", "log", "threads"])?;
    let mut cfg = load_config(args)?;
    apply_threads(args, &mut cfg)?;
    let cfg = cfg;
    let out_path = args.require("out")?.to_string();
    let log_path = args
        .get("log")
        .map(String::from)
        .unwrap_or_else(|| format!("{out_path}.loss.csv"));

    let corpus = load_corpus(args, &cfg)?;
    let policy = cfg.aug_policy()?;
    let mut trainer = match args.get("resume") {
        Some(path) => {
            let trainer = load_checkpoint_file(path, &cfg)?;
            if trainer.config_hash != cfg.hash() {
                return Err(Error::config(format!(
                    "resume checkpoint was written with config hash {:016x}, current is {:016x}",
                    trainer.config_hash,
                    cfg.hash()
                )));
            }
            trainer
        }
        None => Pretrainer::new(&cfg.arch()?, cfg.pretrain_config(), corpus.stats(), cfg.hash())?,
    };

    let mut log = if trainer.epochs_done == 0 {
        String::from("epoch,loss,pos_cos,lr\n")
    } else {
        std::fs::read_to_string(&log_path).unwrap_or_else(|_| String::from("epoch,loss,pos_cos,lr\n"))
    };
    let total = cfg.pretrain.epochs;
    while trainer.epochs_done < total {
        let epoch = trainer.epochs_done;
        let stats = trainer
            .run_epoch(&corpus, &policy)
            .map_err(|e| Error::numeric(format!("epoch {epoch}: {e}")))?;
        println!(
            "epoch {:>3}/{total}  loss {:.4}  pos_cos {:.4}  lr {:.2e}",
            stats.epoch + 1,
            stats.mean_loss,
            stats.mean_pos_cos,
            stats.lr
        );
        log.push_str(&format!(
            "{},{:.6},{:.6},{:e}\n",
            stats.epoch, stats.mean_loss, stats.mean_pos_cos, stats.lr
        ));
    }
    write_file(&out_path, &encode_checkpoint(&trainer))?;
    write_file(&log_path, log.as_bytes())?;
    let meta = format!(
        "config_hash = {:016x}\nfeature_dim = {}\nepochs = {}\nsteps = {}\n\
         corpus_mean = {},{},{}\ncorpus_std = {},{},{}\n",
        trainer.config_hash,
        trainer.state.query.arch.feature_dim,
        trainer.epochs_done,
        trainer.state.step,
        trainer.stats.mean[0],
        trainer.stats.mean[1],
        trainer.stats.mean[2],
        trainer.stats.std[0],
        trainer.stats.std[1],
        trainer.stats.std[2],
    );
    write_file(format!("{out_path}.meta.txt"), meta.as_bytes())?;
    println!("checkpoint written to {out_path}");
    Ok(())
}

fn probe_split(windows: &[Window], cfg: &Config) -> Result<SubjectSplit> {
    let split = split_subjects(
        &subjects_of(windows),
        (cfg.data.ratio_train, cfg.data.ratio_val, cfg.data.ratio_test),
        cfg.data.seed,
    )?;
    if split.test.is_empty() {
        return Err(Error::data(format!(
            "test split is empty with {} subjects at the configured ratio; add subjects",
            subjects_of(windows).len()
        )));
    }
    Ok(split)
}

fn collect(windows: &[Window], subjects: &BTreeSet<String>) -> Vec<Window> {
    windows
        .iter()
        .filter(|w| subjects.contains(&w.subject_id))
        .cloned()
        .collect()
}

pub fn probe(args: &Args) -> Result<()> {
    args.finish(&["ckpt", "input", "config", "out", "n", "threads"])?;
    let mut cfg = load_config(args)?;
    apply_threads(args, &mut cfg)?;
    let cfg = cfg;
    let trainer = load_checkpoint_file(args.require("ckpt")?, &cfg)?;
    let windows = dataset_windows(args, &cfg)?;
    let n_classes = n_classes_of(&windows)?;
    let split = probe_split(&windows, &cfg)?;

    let mut spectro_cfg = cfg.spectro_config();
    spectro_cfg.normalize_stats = Some(trainer.stats);
    let mut probe_cfg = cfg.probe_config();
    if let Some(n) = parse_flag(args, "n")? {
        probe_cfg.n_per_class = n;
    }

    let train_windows = collect(&windows, &split.train);
    let chosen = sample_few_shot(&train_windows, probe_cfg.n_per_class, probe_cfg.seed)?;
    let few_shot: Vec<Window> = chosen.iter().map(|&i| train_windows[i].clone()).collect();
    let encoder = &trainer.state.query;
    let (head, mut report) = linear_probe(
        encoder,
        &few_shot,
        &probe_cfg,
        &spectro_cfg,
        n_classes,
        cfg.hash(),
        0,
    )?;

    let test_windows = collect(&windows, &split.test);
    let test_features = extract_features(encoder, &test_windows, &spectro_cfg, 0)?;
    report.metrics = probe::evaluate_head(&head, &test_features, n_classes)?;

    let out = args.require("out")?;
    write_file(out, report.to_csv().as_bytes())?;
    println!(
        "test macro-F1 {:.4} over {} windows ({} classes); report in {out}",
        report.metrics.macro_f1,
        test_windows.len(),
        n_classes
    );
    Ok(())
}

pub fn evaluate(args: &Args) -> Result<()> {
    args.finish(&["ckpt", "input", "config", "out", "n", "threads"])?;
    let mut cfg = load_config(args)?;
    apply_threads(args, &mut cfg)?;
    let cfg = cfg;
    let trainer = load_checkpoint_file(args.require("ckpt")?, &cfg)?;
    let windows = dataset_windows(args, &cfg)?;
    let n_classes = n_classes_of(&windows)?;

    let n_list: Vec<usize> = match args.get("n") {
        Some(raw) => raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("bad n value '{s}'")))
            })
            .collect::<Result<_>>()?,
        None => cfg.eval.n_list.clone(),
    };

    let mut spectro_cfg = cfg.spectro_config();
    spectro_cfg.normalize_stats = Some(trainer.stats);
    let folds = kfold_subjects(
        &subjects_of(&windows),
        cfg.data.folds,
        (cfg.data.ratio_train, cfg.data.ratio_val),
        cfg.data.seed,
    )?;
    let seeds: Vec<u64> = (0..cfg.eval.seeds as u64)
        .map(|s| crate::rng::derive_seed(cfg.finetune.seed, &[0x5eed, s]))
        .collect();

    let cells = eval_varying_n(
        &trainer.state.query,
        &windows,
        &n_list,
        &folds,
        &seeds,
        &cfg.probe_config(),
        &spectro_cfg,
        n_classes,
    )?;
    let out = args.require("out")?;
    write_file(out, varying_n_csv(&cells, cfg.hash()).as_bytes())?;
    for cell in &cells {
        if cell.runs == 0 {
            println!("n {:>3}: absent (class support shortfall)", cell.n);
        } else {
            println!(
                "n {:>3}: macro-F1 {:.4} ± {:.4} over {} runs",
                cell.n, cell.mean_f1, cell.std_f1, cell.runs
            );
        }
    }
    println!("table written to {out}");
    Ok(())
}

pub fn ablate(args: &Args) -> Result<()> {
    args.finish(&["config", "out", "threads"])?;
    let mut cfg = load_config(args)?;
    apply_threads(args, &mut cfg)?;
    let cfg = cfg;
    let corpus = load_corpus(args, &cfg)?;
    let windows = dataset_windows(args, &cfg)?;
    let ablation = AblationConfig {
        pretrain: cfg.pretrain_config(),
        probe: cfg.probe_config(),
        arch: cfg.arch()?,
        split_seed: cfg.data.seed,
        split_ratio: (cfg.data.ratio_train, cfg.data.ratio_val, cfg.data.ratio_test),
        config_hash: cfg.hash(),
        ..AblationConfig::default()
    };
    let report = probe::ablation_table(&corpus, &windows, &cfg.spectro_config(), &ablation)?;
    let out = args.require("out")?;
    write_file(out, report.to_csv(cfg.hash()).as_bytes())?;
    for (row, subset) in report.subsets.iter().enumerate() {
        let cells: Vec<String> = report
            .variants
            .iter()
            .enumerate()
            .map(|(col, v)| format!("{v} {:.3} ({:+.1}%)", report.f1[row][col], report.drop[row][col]))
            .collect();
        println!("{subset:>5}: {}", cells.join("  "));
    }
    println!("report written to {out}");
    Ok(())
}

pub fn gradcam(args: &Args) -> Result<()> {
    args.finish(&["ckpt", "input", "config", "out", "stage", "threads"])?;
    let mut cfg = load_config(args)?;
    apply_threads(args, &mut cfg)?;
    let cfg = cfg;
    let trainer = load_checkpoint_file(args.require("ckpt")?, &cfg)?;
    let out_dir = PathBuf::from(args.require("out")?);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let windows = dataset_windows(args, &cfg)?;
    let n_classes = n_classes_of(&windows)?;
    let split = probe_split(&windows, &cfg)?;
    let encoder = &trainer.state.query;
    let stage = parse_flag(args, "stage")?.unwrap_or(encoder.arch.stages.len() - 1);

    let mut spectro_cfg = cfg.spectro_config();
    spectro_cfg.normalize_stats = Some(trainer.stats);
    let probe_cfg = cfg.probe_config();

    let train_windows = collect(&windows, &split.train);
    let chosen = sample_few_shot(&train_windows, probe_cfg.n_per_class, probe_cfg.seed)?;
    let few_shot: Vec<Window> = chosen.iter().map(|&i| train_windows[i].clone()).collect();
    let (head, _) = linear_probe(
        encoder,
        &few_shot,
        &probe_cfg,
        &spectro_cfg,
        n_classes,
        cfg.hash(),
        0,
    )?;

    let test_windows = collect(&windows, &split.test);
    let mut manifest = String::from("class,file,logit\n");
    for class in 0..n_classes {
        let Some(window) = test_windows.iter().find(|w| w.label == Some(class as u32)) else {
            continue;
        };
        let display = resize_bilinear(
            &to_rgb_spectrogram(window, &spectro_cfg)?,
            spectro_cfg.out_h,
            spectro_cfg.out_w,
        );
        let normalized = convert_window(window, &spectro_cfg)?;
        let input = image_to_chw(&normalized)?;
        let cam = grad_cam(encoder, &head, &input, class, stage)?;
        let overlay = overlay_heatmap(&display, &cam);
        let name = format!("gradcam_class{class}.ppm");
        write_ppm(out_dir.join(&name), &overlay)?;
        manifest.push_str(&format!("{class},{name},{:.6}\n", cam.logit));
    }
    write_file(out_dir.join("manifest.csv"), manifest.as_bytes())?;
    println!("overlays written to {}", out_dir.display());
    Ok(())
}

fn image_to_chw(img: &crate::image::Image) -> Result<Tensor> {
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for r in 0..h {
            for c in 0..w {
                data.push(img.get(r, c, ch));
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub fn bench(args: &Args) -> Result<()> {
    args.finish(&["ckpt", "window-seconds", "iters", "config", "threads"])?;
    let mut cfg = load_config(args)?;
    apply_threads(args, &mut cfg)?;
    let cfg = cfg;
    let trainer = load_checkpoint_file(args.require("ckpt")?, &cfg)?;
    let window_seconds: f64 = parse_flag(args, "window-seconds")?.unwrap_or(cfg.data.window_seconds);
    let iters: usize = parse_flag(args, "iters")?.unwrap_or(50);
    if iters == 0 {
        return Err(Error::config("--iters must be at least 1"));
    }

    let spec = SynthSpec::preset(cfg.data.synth_classes, cfg.data.rate_hz, window_seconds)?;
    let windows = synth_imu_dataset(&spec, 1, 1, cfg.data.seed)?;
    let window = &windows[0];
    let mut spectro_cfg = cfg.spectro_config();
    spectro_cfg.normalize_stats = Some(trainer.stats);

    let image = convert_window(window, &spectro_cfg)?;
    let input = image_to_chw(&image)?;
    let encoder = &trainer.state.query;

    let time = |mut f: Box<dyn FnMut() -> Result<()>>| -> Result<(f64, f64)> {
        let mut samples = Vec::with_capacity(iters);
        for _ in 0..iters {
            let start = Instant::now();
            f()?;
            samples.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let mean = samples.iter().sum::<f64>() / iters as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / iters as f64;
        Ok((mean, var.sqrt()))
    };

    let (gen_mean, gen_std) = time(Box::new(|| convert_window(window, &spectro_cfg).map(|_| ())))?;
    let (inf_mean, inf_std) =
        time(Box::new(|| encoder_forward_single(encoder, &input).map(|_| ())))?;

    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "{{\"metric\":\"spectrogram_generation_ms\",\"mean\":{gen_mean:.4},\"std\":{gen_std:.4},\"iters\":{iters},\"window_seconds\":{window_seconds}}}"
    )
    .ok();
    writeln!(
        stdout,
        "{{\"metric\":\"encoder_inference_ms\",\"mean\":{inf_mean:.4},\"std\":{inf_std:.4},\"iters\":{iters},\"window_seconds\":{window_seconds}}}"
    )
    .ok();
    Ok(())
}
