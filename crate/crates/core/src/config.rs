//! Run configuration: INI-style sections of key=value pairs.
//!
//! Every key has a default; unknown sections or keys are errors. The
//! canonical serialization is a parse fixed point, and its FNV-1a digest is
//! the config hash recorded in checkpoints and reports.

use crate::error::{Error, Result};
use crate::imageaug::AugPolicy;
use crate::moco::PretrainConfig;
use crate::nn::{ArchDescriptor, LrSchedule};
use crate::probe::ProbeConfig;
use crate::spectro::SpectrogramConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub rate_hz: f64,
    pub window_seconds: f64,
    pub overlap: f64,
    pub ratio_train: f64,
    pub ratio_val: f64,
    pub ratio_test: f64,
    pub folds: usize,
    pub synth_classes: usize,
    pub synth_subjects: usize,
    pub synth_windows_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramSection {
    pub nfft: usize,
    pub noverlap: usize,
    pub log_floor_db: f64,
    pub out_w: usize,
    pub out_h: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSection {
    pub augs: String,
    pub p: f64,
    pub jitter_max: f64,
    pub hue_max_deg: f64,
    pub permute_chunks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub queue_size: usize,
    pub feature_dim: usize,
    pub lr: f64,
    pub tau: f64,
    pub momentum: f64,
    pub corpus_n: usize,
    pub corpus_h: usize,
    pub corpus_w: usize,
    pub arch: String,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSection {
    pub n_per_class: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub n_list: Vec<usize>,
    pub folds: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub data: DataSection,
    pub spectrogram: SpectrogramSection,
    pub augment: AugmentSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
}

impl Default for Config {
    /// The desk-scale preset, identical to presets/desk.cfg.
    fn default() -> Self {
        Config {
            data: DataSection {
                rate_hz: 50.0,
                window_seconds: 2.0,
                overlap: 0.5,
                ratio_train: 0.6,
                ratio_val: 0.2,
                ratio_test: 0.2,
                folds: 5,
                synth_classes: 3,
                synth_subjects: 5,
                synth_windows_per_class: 40,
                seed: 42,
            },
            spectrogram: SpectrogramSection {
                nfft: 32,
                noverlap: 24,
                log_floor_db: -80.0,
                out_w: 128,
                out_h: 96,
            },
            augment: AugmentSection {
                augs: "T,P,H,J".into(),
                p: 0.5,
                jitter_max: 0.1,
                hue_max_deg: 360.0,
                permute_chunks: vec![2, 3, 4],
            },
            pretrain: PretrainSection {
                epochs: 10,
                batch_size: 32,
                queue_size: 512,
                feature_dim: 64,
                lr: 1e-3,
                tau: 0.07,
                momentum: 0.99,
                corpus_n: 2000,
                corpus_h: 96,
                corpus_w: 128,
                arch: "tiny".into(),
                seed: 7,
                threads: 0,
            },
            finetune: FinetuneSection {
                n_per_class: 10,
                epochs: 50,
                batch_size: 4,
                warmup_epochs: 10,
                lr_start: 1e-8,
                lr_peak: 1e-5,
                lr_end: 1e-6,
                seed: 3,
            },
            eval: EvalSection {
                n_list: vec![1, 2, 5, 10, 20, 50],
                folds: 5,
                seeds: 5,
            },
        }
    }
}

impl Config {
    /// Desk preset: small corpus, short schedule; what the acceptance suite
    /// runs.
    pub fn desk() -> Self {
        Config::default()
    }

    /// Published-scale hyperparameters: queue 4096, batch 256, 40 epochs,
    /// lr 1e-6, momentum 0.999.
    pub fn paper() -> Self {
        let mut cfg = Config::default();
        cfg.pretrain.epochs = 40;
        cfg.pretrain.batch_size = 256;
        cfg.pretrain.queue_size = 4096;
        cfg.pretrain.lr = 1e-6;
        cfg.pretrain.momentum = 0.999;
        cfg
    }

    /// Parse INI text over the defaults; unknown sections or keys fail.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "data" | "spectrogram" | "augment" | "pretrain" | "finetune" | "eval"
                ) {
                    return Err(Error::config(format!(
                        "line {}: unknown section [{section}]",
                        line_no + 1
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key = value, got '{line}'", line_no + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value).map_err(|e| {
                Error::config(format!("line {}: {e}", line_no + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> std::result::Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value '{value}' for {key}"))
        }
        fn parse_list<T: std::str::FromStr>(
            key: &str,
            value: &str,
        ) -> std::result::Result<Vec<T>, String> {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| format!("bad list entry '{s}' for {key}"))
                })
                .collect()
        }
        match (section, key) {
            ("data", "rate_hz") => self.data.rate_hz = parse(key, value)?,
            ("data", "window_seconds") => self.data.window_seconds = parse(key, value)?,
            ("data", "overlap") => self.data.overlap = parse(key, value)?,
            ("data", "ratio_train") => self.data.ratio_train = parse(key, value)?,
            ("data", "ratio_val") => self.data.ratio_val = parse(key, value)?,
            ("data", "ratio_test") => self.data.ratio_test = parse(key, value)?,
            ("data", "folds") => self.data.folds = parse(key, value)?,
            ("data", "synth_classes") => self.data.synth_classes = parse(key, value)?,
            ("data", "synth_subjects") => self.data.synth_subjects = parse(key, value)?,
            ("data", "synth_windows_per_class") => {
                self.data.synth_windows_per_class = parse(key, value)?
            }
            ("data", "seed") => self.data.seed = parse(key, value)?,
            ("spectrogram", "nfft") => self.spectrogram.nfft = parse(key, value)?,
            ("spectrogram", "noverlap") => self.spectrogram.noverlap = parse(key, value)?,
            ("spectrogram", "log_floor_db") => self.spectrogram.log_floor_db = parse(key, value)?,
            ("spectrogram", "out_w") => self.spectrogram.out_w = parse(key, value)?,
            ("spectrogram", "out_h") => self.spectrogram.out_h = parse(key, value)?,
            ("augment", "augs") => self.augment.augs = value.to_string(),
            ("augment", "p") => self.augment.p = parse(key, value)?,
            ("augment", "jitter_max") => self.augment.jitter_max = parse(key, value)?,
            ("augment", "hue_max_deg") => self.augment.hue_max_deg = parse(key, value)?,
            ("augment", "permute_chunks") => self.augment.permute_chunks = parse_list(key, value)?,
            ("pretrain", "epochs") => self.pretrain.epochs = parse(key, value)?,
            ("pretrain", "batch_size") => self.pretrain.batch_size = parse(key, value)?,
            ("pretrain", "queue_size") => self.pretrain.queue_size = parse(key, value)?,
            ("pretrain", "feature_dim") => self.pretrain.feature_dim = parse(key, value)?,
            ("pretrain", "lr") => self.pretrain.lr = parse(key, value)?,
            ("pretrain", "tau") => self.pretrain.tau = parse(key, value)?,
            ("pretrain", "momentum") => self.pretrain.momentum = parse(key, value)?,
            ("pretrain", "corpus_n") => self.pretrain.corpus_n = parse(key, value)?,
            ("pretrain", "corpus_h") => self.pretrain.corpus_h = parse(key, value)?,
            ("pretrain", "corpus_w") => self.pretrain.corpus_w = parse(key, value)?,
            ("pretrain", "arch") => self.pretrain.arch = value.to_string(),
            ("pretrain", "seed") => self.pretrain.seed = parse(key, value)?,
            ("pretrain", "threads") => self.pretrain.threads = parse(key, value)?,
            ("finetune", "n_per_class") => self.finetune.n_per_class = parse(key, value)?,
            ("finetune", "epochs") => self.finetune.epochs = parse(key, value)?,
            ("finetune", "batch_size") => self.finetune.batch_size = parse(key, value)?,
            ("finetune", "warmup_epochs") => self.finetune.warmup_epochs = parse(key, value)?,
            ("finetune", "lr_start") => self.finetune.lr_start = parse(key, value)?,
            ("finetune", "lr_peak") => self.finetune.lr_peak = parse(key, value)?,
            ("finetune", "lr_end") => self.finetune.lr_end = parse(key, value)?,
            ("finetune", "seed") => self.finetune.seed = parse(key, value)?,
            ("eval", "n_list") => self.eval.n_list = parse_list(key, value)?,
            ("eval", "folds") => self.eval.folds = parse(key, value)?,
            ("eval", "seeds") => self.eval.seeds = parse(key, value)?,
            ("", key) => return Err(format!("key '{key}' appears before any [section]")),
            (section, key) => return Err(format!("unknown key '{key}' in section [{section}]")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.spectro_config().validate()?;
        self.aug_policy()?.validate()?;
        self.schedule().validate()?;
        self.arch()?;
        if self.data.synth_classes < 2 {
            return Err(Error::config("need at least 2 synthetic classes"));
        }
        let ratio_sum = self.data.ratio_train + self.data.ratio_val + self.data.ratio_test;
        if (ratio_sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios sum to {ratio_sum}, expected 1")));
        }
        Ok(())
    }

    /// Canonical serialization; `parse(canonical(c)) == c`.
    pub fn canonical(&self) -> String {
        let list = |values: &[usize]| {
            values
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "[data]\nrate_hz = {}\nwindow_seconds = {}\noverlap = {}\nratio_train = {}\n\
             ratio_val = {}\nratio_test = {}\nfolds = {}\nsynth_classes = {}\n\
             synth_subjects = {}\nsynth_windows_per_class = {}\nseed = {}\n\n\
             [spectrogram]\nnfft = {}\nnoverlap = {}\nlog_floor_db = {}\nout_w = {}\nout_h = {}\n\n\
             [augment]\naugs = {}\np = {}\njitter_max = {}\nhue_max_deg = {}\npermute_chunks = {}\n\n\
             [pretrain]\nepochs = {}\nbatch_size = {}\nqueue_size = {}\nfeature_dim = {}\nlr = {}\n\
             tau = {}\nmomentum = {}\ncorpus_n = {}\ncorpus_h = {}\ncorpus_w = {}\narch = {}\n\
             seed = {}\nthreads = {}\n\n\
             [finetune]\nn_per_class = {}\nepochs = {}\nbatch_size = {}\nwarmup_epochs = {}\n\
             lr_start = {}\nlr_peak = {}\nlr_end = {}\nseed = {}\n\n\
             [eval]\nn_list = {}\nfolds = {}\nseeds = {}\n",
            self.data.rate_hz,
            self.data.window_seconds,
            self.data.overlap,
            self.data.ratio_train,
            self.data.ratio_val,
            self.data.ratio_test,
            self.data.folds,
            self.data.synth_classes,
            self.data.synth_subjects,
            self.data.synth_windows_per_class,
            self.data.seed,
            self.spectrogram.nfft,
            self.spectrogram.noverlap,
            self.spectrogram.log_floor_db,
            self.spectrogram.out_w,
            self.spectrogram.out_h,
            self.augment.augs,
            self.augment.p,
            self.augment.jitter_max,
            self.augment.hue_max_deg,
            list(&self.augment.permute_chunks),
            self.pretrain.epochs,
            self.pretrain.batch_size,
            self.pretrain.queue_size,
            self.pretrain.feature_dim,
            self.pretrain.lr,
            self.pretrain.tau,
            self.pretrain.momentum,
            self.pretrain.corpus_n,
            self.pretrain.corpus_h,
            self.pretrain.corpus_w,
            self.pretrain.arch,
            self.pretrain.seed,
            self.pretrain.threads,
            self.finetune.n_per_class,
            self.finetune.epochs,
            self.finetune.batch_size,
            self.finetune.warmup_epochs,
            self.finetune.lr_start,
            self.finetune.lr_peak,
            self.finetune.lr_end,
            self.finetune.seed,
            list(&self.eval.n_list),
            self.eval.folds,
            self.eval.seeds,
        )
    }

    /// FNV-1a digest of the canonical serialization.
    ///
    /// The worker count is normalized out first: it cannot change any
    /// result, so it is not part of a run's identity.
    pub fn hash(&self) -> u64 {
        let mut normalized = self.clone();
        normalized.pretrain.threads = 0;
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in normalized.canonical().bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100_0000_01b3);
        }
        hash
    }

    pub fn spectro_config(&self) -> SpectrogramConfig {
        SpectrogramConfig {
            nfft: self.spectrogram.nfft,
            noverlap: self.spectrogram.noverlap,
            log_floor_db: self.spectrogram.log_floor_db,
            out_h: self.spectrogram.out_h,
            out_w: self.spectrogram.out_w,
            normalize_stats: None,
        }
    }

    pub fn aug_policy(&self) -> Result<AugPolicy> {
        let mut policy = AugPolicy::subset(&self.augment.augs)?;
        policy.probability = self.augment.p;
        policy.jitter_max = self.augment.jitter_max;
        policy.hue_max_deg = self.augment.hue_max_deg;
        policy.permute_chunks = self.augment.permute_chunks.clone();
        Ok(policy)
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            queue_size: self.pretrain.queue_size,
            learning_rate: self.pretrain.lr,
            tau: self.pretrain.tau,
            momentum: self.pretrain.momentum,
            seed: self.pretrain.seed,
            threads: self.pretrain.threads,
        }
    }

    pub fn arch(&self) -> Result<ArchDescriptor> {
        match self.pretrain.arch.as_str() {
            "tiny" => Ok(ArchDescriptor::tiny(self.pretrain.feature_dim)),
            "micro" => Ok(ArchDescriptor::micro(self.pretrain.feature_dim)),
            other => Err(Error::config(format!(
                "unknown architecture '{other}' (expected tiny or micro)"
            ))),
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            warmup_epochs: self.finetune.warmup_epochs,
            lr_start: self.finetune.lr_start,
            lr_peak: self.finetune.lr_peak,
            lr_end: self.finetune.lr_end,
            total_epochs: self.finetune.epochs,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            n_per_class: self.finetune.n_per_class,
            epochs: self.finetune.epochs,
            batch_size: self.finetune.batch_size,
            schedule: self.schedule(),
            seed: self.finetune.seed,
            threads: self.pretrain.threads,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_is_a_parse_fixed_point() {
        for cfg in [Config::desk(), Config::paper()] {
            let text = cfg.canonical();
            let parsed = Config::parse(&text).unwrap();
            assert_eq!(parsed, cfg);
            assert_eq!(parsed.canonical(), text);
            assert_eq!(parsed.hash(), cfg.hash());
        }
    }

    #[test]
    fn presets_differ_in_hash() {
        assert_ne!(Config::desk().hash(), Config::paper().hash());
    }

    #[test]
    fn hash_ignores_worker_count() {
        let mut cfg = Config::desk();
        let base = cfg.hash();
        cfg.pretrain.threads = 7;
        assert_eq!(cfg.hash(), base);
        cfg.pretrain.seed += 1;
        assert_ne!(cfg.hash(), base);
    }

    #[test]
    fn paper_preset_carries_published_hyperparameters() {
        let cfg = Config::paper();
        assert_eq!(cfg.pretrain.queue_size, 4096);
        assert_eq!(cfg.pretrain.feature_dim, 64);
        assert_eq!(cfg.pretrain.batch_size, 256);
        assert_eq!(cfg.pretrain.epochs, 40);
        assert_eq!(cfg.pretrain.lr, 1e-6);
        assert_eq!(cfg.finetune.batch_size, 4);
        assert_eq!(cfg.finetune.epochs, 50);
        assert_eq!(cfg.finetune.n_per_class, 10);
    }

    #[test]
    fn shipped_preset_files_parse_to_the_presets() {
        let desk = Config::parse(include_str!("../presets/desk.cfg")).unwrap();
        assert_eq!(desk, Config::desk());
        let paper = Config::parse(include_str!("../presets/paper.cfg")).unwrap();
        assert_eq!(paper, Config::paper());
    }

    #[test]
    fn overrides_apply_over_defaults() {
        let cfg = Config::parse("[pretrain]\nepochs = 3\nqueue_size = 64\n").unwrap();
        assert_eq!(cfg.pretrain.epochs, 3);
        assert_eq!(cfg.pretrain.queue_size, 64);
        assert_eq!(cfg.pretrain.batch_size, Config::default().pretrain.batch_size);
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        let err = Config::parse("[pretrain]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = Config::parse("[nonsense]\n").unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");
        let err = Config::parse("rate_hz = 50\n").unwrap_err();
        assert!(err.to_string().contains("before any"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = Config::parse("# top comment\n\n[data]\n; another\nseed = 9\n").unwrap();
        assert_eq!(cfg.data.seed, 9);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::parse("[spectrogram]\nnfft = 33\n").is_err());
        assert!(Config::parse("[augment]\naugs = TXQ\n").is_err());
        assert!(Config::parse("[data]\nratio_train = 0.9\n").is_err());
        assert!(Config::parse("[pretrain]\narch = resnet\n").is_err());
    }

    #[test]
    fn domain_objects_reflect_sections() {
        let cfg = Config::desk();
        let spectro = cfg.spectro_config();
        assert_eq!((spectro.nfft, spectro.noverlap), (32, 24));
        assert_eq!((spectro.out_h, spectro.out_w), (96, 128));
        let policy = cfg.aug_policy().unwrap();
        assert_eq!(policy.letters(), "TPHJ");
        let schedule = cfg.schedule();
        assert_eq!(schedule.lr_at(0), 1e-8);
        assert_eq!(schedule.lr_at(10), 1e-5);
        assert_eq!(schedule.lr_at(50), 1e-6);
    }
}
