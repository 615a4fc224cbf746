//! Downstream adaptation and analysis: few-shot sampling, frozen-encoder
//! linear evaluation, macro-F1, the varying-n study, and the augmentation
//! robustness (ablation) harness.
//!
//! The encoder never trains here, so window features are extracted once and
//! every probe run reuses them.

mod gradcam;

pub use gradcam::{grad_cam, overlay_heatmap, GradCamResult};

use std::collections::BTreeMap;

use crate::data::{split_subjects, SubjectSplit, Window};
use crate::error::{Error, Result};
use crate::imageaug::AugPolicy;
use crate::moco::{images_to_batch, PretrainConfig, Pretrainer};
use crate::nn::{
    adam_step, cross_entropy, encoder_forward, linear_head_backward, linear_head_forward,
    ArchDescriptor, EncoderParams, LinearLayer, LrSchedule, Tensor,
};
use crate::parallel;
use crate::rng::{derive_seed, Rng};
use crate::sensoraug;
use crate::spectro::{convert_window, SpectrogramConfig};

/// Few-shot fine-tuning configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub n_per_class: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_per_class: 10,
            epochs: 50,
            batch_size: 4,
            schedule: LrSchedule::default(),
            seed: 1,
            threads: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("probe needs positive n, batch size, and epochs"));
        }
        self.schedule.validate()
    }

    fn effective_threads(&self) -> usize {
        if self.threads == 0 {
            parallel::default_threads()
        } else {
            self.threads
        }
    }
}

/// Per-class precision/recall/F1 plus support.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
}

/// Macro-averaged F1 over classes.
///
/// Per class, 0/0 ratios are defined as 0. Classes that never occur in
/// `labels` are excluded from the macro average; classes with support count
/// even when their F1 is 0.
pub fn macro_f1(preds: &[u32], labels: &[u32], n_classes: usize) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::config(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::config("need at least one class"));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fne = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p as usize >= n_classes || l as usize >= n_classes {
            return Err(Error::data(format!(
                "prediction {p} or label {l} out of range for {n_classes} classes"
            )));
        }
        support[l as usize] += 1;
        if p == l {
            tp[p as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fne[l as usize] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(n_classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..n_classes {
        let precision = ratio(tp[c], tp[c] + fp[c]);
        let recall = ratio(tp[c], tp[c] + fne[c]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support: support[c],
        });
        if support[c] > 0 {
            sum += f1;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::data("no labeled samples"));
    }
    Ok(Metrics {
        per_class,
        macro_f1: sum / counted as f64,
    })
}

/// Table-style relative drop in percent: (variant - original) / original.
pub fn drop_percent(f1_variant: f64, f1_original: f64) -> f64 {
    if f1_original == 0.0 {
        return 0.0;
    }
    (f1_variant - f1_original) / f1_original * 100.0
}

/// One probe run's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub metrics: Metrics,
    pub config_hash: u64,
    pub fold_id: usize,
    pub seed: u64,
    pub loss_curve: Vec<f64>,
}

impl RunReport {
    /// CSV with a header comment carrying the config hash.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# config_hash={:016x} fold={} seed={}\nclass,precision,recall,f1,support\n",
            self.config_hash, self.fold_id, self.seed
        );
        for (c, m) in self.metrics.per_class.iter().enumerate() {
            out.push_str(&format!(
                "{c},{:.6},{:.6},{:.6},{}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!("macro,,,{:.6},\n", self.metrics.macro_f1));
        out
    }
}

/// Uniform without-replacement draw of `n_per_class` training windows per
/// class; errors name the class and its available count.
pub fn sample_few_shot(windows: &[Window], n_per_class: usize, seed: u64) -> Result<Vec<usize>> {
    if n_per_class == 0 {
        return Err(Error::config("n per class must be at least 1"));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        let label = w
            .label
            .ok_or_else(|| Error::data(format!("window {i} has no label")))?;
        by_class.entry(label).or_default().push(i);
    }
    if by_class.is_empty() {
        return Err(Error::data("no labeled windows to sample from"));
    }
    let mut chosen = Vec::with_capacity(by_class.len() * n_per_class);
    for (class, mut indices) in by_class {
        if indices.len() < n_per_class {
            return Err(Error::data(format!(
                "class {class} has only {} training windows, need {n_per_class}",
                indices.len()
            )));
        }
        Rng::substream(seed, &[0xf5, class as u64]).shuffle(&mut indices);
        indices.truncate(n_per_class);
        indices.sort_unstable();
        chosen.extend(indices);
    }
    Ok(chosen)
}

/// Encoder outputs for a list of windows, extracted once and reused.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub features: Tensor,
    pub labels: Vec<u32>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Rows restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.features.data()[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        FeatureSet {
            features: Tensor::from_vec(&[indices.len(), d], data).unwrap(),
            labels,
        }
    }
}

/// Convert windows to normalized spectrogram images and encode them.
pub fn extract_features(
    encoder: &EncoderParams,
    windows: &[Window],
    cfg: &SpectrogramConfig,
    threads: usize,
) -> Result<FeatureSet> {
    if windows.is_empty() {
        return Err(Error::data("no windows to extract features from"));
    }
    let images = parallel::parallel_map(windows.len(), threads, |i| convert_window(&windows[i], cfg));
    let mut converted = Vec::with_capacity(windows.len());
    let mut labels = Vec::with_capacity(windows.len());
    for (w, img) in windows.iter().zip(images) {
        converted.push(img?);
        labels.push(w.label.ok_or_else(|| Error::data("window without label"))?);
    }
    let batch = images_to_batch(&converted)?;
    let features = encoder_forward(encoder, &batch, threads)?;
    Ok(FeatureSet { features, labels })
}

/// Train a zero-initialized linear head on cached features with Adam and the
/// warmup/cosine schedule. Returns the head and the per-epoch loss curve.
pub fn train_linear_head(
    features: &FeatureSet,
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(LinearLayer, Vec<f64>)> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::data("no training features"));
    }
    let d = features.dim();
    let mut head = LinearLayer::zeros(n_classes, d);
    let mut adam = crate::nn::AdamState::new(&[n_classes * d, n_classes]);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let n = features.len();

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        Rng::substream(cfg.seed, &[0x9e4d, epoch as u64]).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let subset = features.subset(chunk);
            let logits = linear_head_forward(&head, &subset.features)?;
            let (loss, grad_logits) = cross_entropy(&logits, &subset.labels)?;
            let (grad_head, _) = linear_head_backward(&head, &subset.features, &grad_logits, false)?;
            let mut params = vec![
                head.weight.data_mut(),
                head.bias.data_mut(),
            ];
            let grads = vec![grad_head.weight.data(), grad_head.bias.data()];
            adam_step(&mut params, &grads, &mut adam, lr)?;
            epoch_loss += loss;
            batches += 1;
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    Ok((head, curve))
}

/// Argmax predictions; ties resolve to the lower class id.
pub fn predict(head: &LinearLayer, features: &Tensor) -> Result<Vec<u32>> {
    let logits = linear_head_forward(head, features)?;
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let mut preds = Vec::with_capacity(b);
    for i in 0..b {
        let row = &logits.data()[i * c..(i + 1) * c];
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, &v) in row.iter().enumerate() {
            if v > best.1 {
                best = (j, v);
            }
        }
        preds.push(best.0 as u32);
    }
    Ok(preds)
}

/// Frozen-encoder linear evaluation on a training subset.
///
/// The returned report carries training-set metrics and the loss curve; use
/// [`evaluate_head`] for held-out evaluation.
pub fn linear_probe(
    encoder: &EncoderParams,
    train_windows: &[Window],
    cfg: &ProbeConfig,
    spectro_cfg: &SpectrogramConfig,
    n_classes: usize,
    config_hash: u64,
    fold_id: usize,
) -> Result<(LinearLayer, RunReport)> {
    let checksum_before = encoder.checksum();
    let features = extract_features(encoder, train_windows, spectro_cfg, cfg.effective_threads())?;
    let (head, curve) = train_linear_head(&features, n_classes, cfg)?;
    let preds = predict(&head, &features.features)?;
    let metrics = macro_f1(&preds, &features.labels, n_classes)?;
    debug_assert_eq!(encoder.checksum(), checksum_before);
    Ok((
        head,
        RunReport {
            metrics,
            config_hash,
            fold_id,
            seed: cfg.seed,
            loss_curve: curve,
        },
    ))
}

/// Metrics of a trained head on a feature set.
pub fn evaluate_head(head: &LinearLayer, features: &FeatureSet, n_classes: usize) -> Result<Metrics> {
    let preds = predict(head, &features.features)?;
    macro_f1(&preds, &features.labels, n_classes)
}

/// One cell of the varying-n table.
#[derive(Debug, Clone, PartialEq)]
pub struct VaryingNCell {
    pub n: usize,
    pub runs: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Window indices whose subject is in the given set.
fn indices_of<'a>(windows: &[Window], subjects: impl Fn(&str) -> bool + 'a) -> Vec<usize> {
    windows
        .iter()
        .enumerate()
        .filter(|(_, w)| subjects(&w.subject_id))
        .map(|(i, _)| i)
        .collect()
}

/// Few-shot macro-F1 as a function of n, over folds and seeds.
///
/// Features are extracted once per encoder. A (fold, n) cell whose class
/// support falls short is marked absent (runs = 0) and the sweep continues.
#[allow(clippy::too_many_arguments)]
pub fn eval_varying_n(
    encoder: &EncoderParams,
    windows: &[Window],
    n_list: &[usize],
    folds: &[SubjectSplit],
    seeds: &[u64],
    cfg: &ProbeConfig,
    spectro_cfg: &SpectrogramConfig,
    n_classes: usize,
) -> Result<Vec<VaryingNCell>> {
    let threads = cfg.effective_threads();
    let all_features = extract_features(encoder, windows, spectro_cfg, threads)?;
    let mut cells = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut scores = Vec::new();
        for (fold_id, fold) in folds.iter().enumerate() {
            let train_idx = indices_of(windows, |s| fold.train.contains(s));
            let test_idx = indices_of(windows, |s| fold.test.contains(s));
            if train_idx.is_empty() || test_idx.is_empty() {
                continue;
            }
            let train_windows: Vec<Window> =
                train_idx.iter().map(|&i| windows[i].clone()).collect();
            for &seed in seeds {
                let sample_seed = derive_seed(seed, &[0xfe11, fold_id as u64, n as u64]);
                let subset_local = match sample_few_shot(&train_windows, n, sample_seed) {
                    Ok(s) => s,
                    Err(_) => continue, // support shortfall: cell stays absent
                };
                let subset_idx: Vec<usize> =
                    subset_local.iter().map(|&i| train_idx[i]).collect();
                let train_features = all_features.subset(&subset_idx);
                let run_cfg = ProbeConfig {
                    n_per_class: n,
                    seed: derive_seed(seed, &[0x4ead, fold_id as u64, n as u64]),
                    ..cfg.clone()
                };
                let (head, _) = train_linear_head(&train_features, n_classes, &run_cfg)?;
                let test_features = all_features.subset(&test_idx);
                let metrics = evaluate_head(&head, &test_features, n_classes)?;
                scores.push(metrics.macro_f1);
            }
        }
        let runs = scores.len();
        let (mean, std) = if runs == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = scores.iter().sum::<f64>() / runs as f64;
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / runs as f64;
            (mean, var.sqrt())
        };
        cells.push(VaryingNCell {
            n,
            runs,
            mean_f1: mean,
            std_f1: std,
        });
    }
    Ok(cells)
}

/// CSV for the varying-n table; absent cells print `na`.
pub fn varying_n_csv(cells: &[VaryingNCell], config_hash: u64) -> String {
    let mut out = format!("# config_hash={config_hash:016x}\nn,runs,mean_f1,std_f1\n");
    for cell in cells {
        if cell.runs == 0 {
            out.push_str(&format!("{},0,na,na\n", cell.n));
        } else {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                cell.n, cell.runs, cell.mean_f1, cell.std_f1
            ));
        }
    }
    out
}

/// The robustness-test variants applied to raw windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensoryVariant {
    Original,
    TimeShifted,
    Masked,
    Noised,
    Rotated,
}

impl SensoryVariant {
    pub const ALL: [SensoryVariant; 5] = [
        SensoryVariant::Original,
        SensoryVariant::TimeShifted,
        SensoryVariant::Masked,
        SensoryVariant::Noised,
        SensoryVariant::Rotated,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SensoryVariant::Original => "original",
            SensoryVariant::TimeShifted => "time_shifted",
            SensoryVariant::Masked => "masked",
            SensoryVariant::Noised => "noised",
            SensoryVariant::Rotated => "rotated",
        }
    }
}

/// Apply a variant to every window with the default magnitudes: shift N/4,
/// mask length N/4 at a seeded position, noise at 0.1 x pooled std, rotation
/// 90 degrees about z.
pub fn apply_variant(windows: &[Window], variant: SensoryVariant, seed: u64) -> Result<Vec<Window>> {
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let n = w.len();
            match variant {
                SensoryVariant::Original => Ok(w.clone()),
                SensoryVariant::TimeShifted => Ok(sensoraug::time_shift(w, (n / 4) as i64)),
                SensoryVariant::Masked => {
                    let len = n / 4;
                    let start = Rng::substream(seed, &[0x3a5c, i as u64]).index(n - len + 1);
                    sensoraug::mask(w, start, len)
                }
                SensoryVariant::Noised => {
                    let amplitude = 0.1 * w.pooled_std();
                    sensoraug::add_noise(w, amplitude, derive_seed(seed, &[0x01f, i as u64]))
                }
                SensoryVariant::Rotated => {
                    let r = sensoraug::axis_rotation("z", 90.0)?;
                    sensoraug::rotate(w, &r)
                }
            }
        })
        .collect()
}

/// The ablation report: one row per augmentation subset, one F1 and drop
/// per sensory variant.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub subsets: Vec<String>,
    pub variants: Vec<&'static str>,
    /// `f1[row][col]` matches subsets x variants.
    pub f1: Vec<Vec<f64>>,
    /// Relative drop vs the original column, in percent.
    pub drop: Vec<Vec<f64>>,
}

impl AblationReport {
    pub fn to_csv(&self, config_hash: u64) -> String {
        let mut out = format!("# config_hash={config_hash:016x}\nsubset");
        for v in &self.variants {
            out.push_str(&format!(",{v}_f1,{v}_drop_pct"));
        }
        out.push('\n');
        for (row, subset) in self.subsets.iter().enumerate() {
            out.push_str(subset);
            for col in 0..self.variants.len() {
                out.push_str(&format!(",{:.6},{:.2}", self.f1[row][col], self.drop[row][col]));
            }
            out.push('\n');
        }
        out
    }
}

/// Settings for one ablation study run.
pub struct AblationConfig {
    pub subsets: Vec<String>,
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
    pub arch: ArchDescriptor,
    pub split_seed: u64,
    pub split_ratio: (f64, f64, f64),
    pub config_hash: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            subsets: ["TPHJ", "PHJ", "THJ", "TPH", "TPJ"]
                .into_iter()
                .map(String::from)
                .collect(),
            pretrain: PretrainConfig::default(),
            probe: ProbeConfig::default(),
            arch: ArchDescriptor::tiny(64),
            split_seed: 11,
            split_ratio: (0.6, 0.2, 0.2),
            config_hash: 0,
        }
    }
}

/// Full robustness study: for each augmentation subset, pre-train an encoder
/// with that policy, then probe each sensory variant of the dataset and
/// report macro-F1 plus its drop against the original data.
pub fn ablation_table(
    corpus: &crate::data::ImageCorpus,
    windows: &[Window],
    spectro_cfg: &SpectrogramConfig,
    ablation: &AblationConfig,
) -> Result<AblationReport> {
    let subjects: std::collections::BTreeSet<String> =
        windows.iter().map(|w| w.subject_id.clone()).collect();
    let split = split_subjects(&subjects, ablation.split_ratio, ablation.split_seed)?;
    let n_classes = windows
        .iter()
        .filter_map(|w| w.label)
        .max()
        .map(|m| m as usize + 1)
        .ok_or_else(|| Error::data("ablation dataset has no labels"))?;

    let mut f1 = Vec::with_capacity(ablation.subsets.len());
    let mut drop = Vec::with_capacity(ablation.subsets.len());
    for subset in &ablation.subsets {
        let policy = AugPolicy::subset(subset)?;
        let mut trainer = Pretrainer::new(
            &ablation.arch,
            ablation.pretrain.clone(),
            corpus.stats(),
            ablation.config_hash,
        )?;
        for _ in 0..ablation.pretrain.epochs {
            trainer.run_epoch(corpus, &policy)?;
        }
        let encoder = trainer.state.query;
        let mut cfg = spectro_cfg.clone();
        cfg.normalize_stats = Some(trainer.stats);

        let mut row_f1 = Vec::with_capacity(SensoryVariant::ALL.len());
        for variant in SensoryVariant::ALL {
            let varied = apply_variant(windows, variant, ablation.probe.seed)?;
            let train_idx = indices_of(&varied, |s| split.train.contains(s));
            let test_idx = indices_of(&varied, |s| split.test.contains(s));
            let train_windows: Vec<Window> = train_idx.iter().map(|&i| varied[i].clone()).collect();
            let chosen =
                sample_few_shot(&train_windows, ablation.probe.n_per_class, ablation.probe.seed)?;
            let few_shot: Vec<Window> = chosen.iter().map(|&i| train_windows[i].clone()).collect();
            let (head, _) = linear_probe(
                &encoder,
                &few_shot,
                &ablation.probe,
                &cfg,
                n_classes,
                ablation.config_hash,
                0,
            )?;
            let test_windows: Vec<Window> = test_idx.iter().map(|&i| varied[i].clone()).collect();
            let test_features =
                extract_features(&encoder, &test_windows, &cfg, ablation.probe.effective_threads())?;
            let metrics = evaluate_head(&head, &test_features, n_classes)?;
            row_f1.push(metrics.macro_f1);
        }
        let original = row_f1[0];
        drop.push(row_f1.iter().map(|&v| drop_percent(v, original)).collect());
        f1.push(row_f1);
    }
    Ok(AblationReport {
        subsets: ablation.subsets.clone(),
        variants: SensoryVariant::ALL.iter().map(|v| v.name()).collect(),
        f1,
        drop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_f1_trivial_cases() {
        let perfect = macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(perfect.macro_f1, 1.0);

        let all_wrong = macro_f1(&[1, 0, 1, 0], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(all_wrong.macro_f1, 0.0);
    }

    #[test]
    fn macro_f1_worked_confusion_example() {
        // Two classes, each with TP=1, FP=1, FN=1: per-class F1 = 0.5.
        // Confusion-matrix oracle by hand: preds (0,1,0,1), labels
        // (0,0,1,1) gives class 0 TP=1 FP=1 FN=1 and likewise class 1.
        let metrics = macro_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((metrics.per_class[0].f1 - 0.5).abs() < 1e-12);
        assert!((metrics.per_class[1].f1 - 0.5).abs() < 1e-12);
        assert!((metrics.macro_f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_matches_confusion_oracle_on_random_draws() {
        // Brute-force confusion-matrix oracle, 1000 random draws.
        let mut rng = Rng::seeded(15);
        for _ in 0..1000 {
            let n_classes = 2 + rng.index(5);
            let len = 1 + rng.index(40);
            let preds: Vec<u32> = (0..len).map(|_| rng.index(n_classes) as u32).collect();
            let labels: Vec<u32> = (0..len).map(|_| rng.index(n_classes) as u32).collect();

            let mut confusion = vec![vec![0usize; n_classes]; n_classes];
            for (&p, &l) in preds.iter().zip(&labels) {
                confusion[l as usize][p as usize] += 1;
            }
            let mut sum = 0.0;
            let mut counted = 0;
            for c in 0..n_classes {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = (0..n_classes).map(|l| confusion[l][c]).sum();
                if support == 0 {
                    continue;
                }
                let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
                let r = tp as f64 / support as f64;
                sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                counted += 1;
            }
            let oracle = sum / counted as f64;
            let metrics = macro_f1(&preds, &labels, n_classes).unwrap();
            assert_eq!(metrics.macro_f1, oracle);
            // The report invariant: macro equals the mean of supported
            // per-class F1 values.
            let mean: f64 = metrics
                .per_class
                .iter()
                .filter(|m| m.support > 0)
                .map(|m| m.f1)
                .sum::<f64>()
                / counted as f64;
            assert!((metrics.macro_f1 - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn macro_f1_excludes_absent_classes() {
        // Class 2 never appears in labels; the mean runs over classes 0, 1.
        let metrics = macro_f1(&[0, 1, 2], &[0, 1, 0], 3).unwrap();
        assert_eq!(metrics.per_class[2].support, 0);
        let expected = (metrics.per_class[0].f1 + metrics.per_class[1].f1) / 2.0;
        assert!((metrics.macro_f1 - expected).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_validates_inputs() {
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
        assert!(macro_f1(&[5], &[0], 2).is_err());
    }

    #[test]
    fn drop_formula_matches_published_rounding() {
        // 0.754 -> 0.545 is a -27.7% drop within 0.1.
        let drop = drop_percent(0.545, 0.754);
        assert!((drop - (-27.7)).abs() <= 0.1, "drop {drop}");
        assert_eq!(drop_percent(0.5, 0.5), 0.0);
    }

    fn labeled_windows(per_class: usize, n_classes: usize) -> Vec<Window> {
        let mut rng = Rng::seeded(3);
        let mut windows = Vec::new();
        for class in 0..n_classes {
            for i in 0..per_class {
                windows.push(Window {
                    samples: (0..40).map(|_| [rng.f64(), rng.f64(), rng.f64()]).collect(),
                    rate_hz: 20.0,
                    label: Some(class as u32),
                    subject_id: format!("s{}", i % 4),
                    origin_index: i,
                });
            }
        }
        windows
    }

    #[test]
    fn few_shot_counts_and_determinism() {
        let windows = labeled_windows(12, 3);
        let chosen = sample_few_shot(&windows, 10, 7).unwrap();
        assert_eq!(chosen.len(), 30);
        let mut counts = [0usize; 3];
        for &i in &chosen {
            counts[windows[i].label.unwrap() as usize] += 1;
        }
        assert_eq!(counts, [10, 10, 10]);
        // No repeats.
        let mut dedup = chosen.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), chosen.len());

        assert_eq!(chosen, sample_few_shot(&windows, 10, 7).unwrap());
        assert_ne!(chosen, sample_few_shot(&windows, 10, 8).unwrap());
    }

    #[test]
    fn few_shot_full_class_and_shortfall() {
        let windows = labeled_windows(5, 2);
        let all = sample_few_shot(&windows, 5, 1).unwrap();
        assert_eq!(all.len(), 10);
        let err = sample_few_shot(&windows, 6, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("class 0") && msg.contains("5"), "{msg}");
    }

    #[test]
    fn separable_features_reach_perfect_training_f1() {
        // One-hot cluster features: class c concentrated on coordinate c.
        let n_classes = 3;
        let per_class = 8;
        let d = 6;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut rng = Rng::seeded(9);
        for c in 0..n_classes {
            for _ in 0..per_class {
                let mut row = vec![0.0f64; d];
                row[c] = 1.0;
                for v in row.iter_mut() {
                    *v += rng.range(-0.05, 0.05);
                }
                data.extend_from_slice(&row);
                labels.push(c as u32);
            }
        }
        let features = FeatureSet {
            features: Tensor::from_vec(&[n_classes * per_class, d], data).unwrap(),
            labels,
        };
        let cfg = ProbeConfig {
            seed: 5,
            threads: 1,
            ..ProbeConfig::default()
        };
        let (head, curve) = train_linear_head(&features, n_classes, &cfg).unwrap();
        assert_eq!(curve.len(), cfg.epochs);
        let preds = predict(&head, &features.features).unwrap();
        let metrics = macro_f1(&preds, &features.labels, n_classes).unwrap();
        assert_eq!(metrics.macro_f1, 1.0, "training macro-F1 {}", metrics.macro_f1);
    }

    #[test]
    fn head_training_is_deterministic() {
        let features = FeatureSet {
            features: Tensor::from_vec(
                &[6, 4],
                (0..24).map(|i| ((i * 37 % 11) as f64) / 11.0).collect(),
            )
            .unwrap(),
            labels: vec![0, 1, 2, 0, 1, 2],
        };
        let cfg = ProbeConfig {
            seed: 21,
            epochs: 10,
            ..ProbeConfig::default()
        };
        let (head_a, curve_a) = train_linear_head(&features, 3, &cfg).unwrap();
        let (head_b, curve_b) = train_linear_head(&features, 3, &cfg).unwrap();
        assert_eq!(head_a, head_b);
        assert_eq!(curve_a, curve_b);
    }

    #[test]
    fn predict_breaks_ties_toward_lower_class() {
        let head = LinearLayer::zeros(4, 3);
        let features = Tensor::from_vec(&[2, 3], vec![0.5; 6]).unwrap();
        let preds = predict(&head, &features).unwrap();
        assert_eq!(preds, vec![0, 0]);
    }

    #[test]
    fn more_shots_do_not_hurt_on_separable_data() {
        // Monotone-oracle sanity: on a cleanly separable synthetic set, the
        // mean macro-F1 at n = 50 must not fall more than 0.02 below n = 1,
        // since a linear probe on fixed features cannot be systematically
        // hurt by more data. Statistical over 5 seeds, deterministic here.
        let spec = crate::data::SynthSpec {
            classes: vec![
                crate::data::SynthClassSpec {
                    carrier_hz: [2.0, 2.0, 2.0],
                    envelope: crate::data::Envelope::Constant,
                    noise_amp: 0.02,
                },
                crate::data::SynthClassSpec {
                    carrier_hz: [8.0, 8.0, 8.0],
                    envelope: crate::data::Envelope::Constant,
                    noise_amp: 0.02,
                },
            ],
            rate_hz: 20.0,
            window_seconds: 2.0,
            subject_gain: (0.9, 1.1),
        };
        let windows = crate::data::synth_imu_dataset(&spec, 3, 60, 11).unwrap();
        let subjects: std::collections::BTreeSet<String> =
            windows.iter().map(|w| w.subject_id.clone()).collect();
        let folds =
            crate::data::kfold_subjects(&subjects, 3, (0.75, 0.25), 13).unwrap();
        let encoder =
            crate::nn::EncoderParams::init(&crate::nn::ArchDescriptor::tiny(64), 15).unwrap();
        let cfg = SpectrogramConfig {
            normalize_stats: Some(crate::image::ChannelStats {
                mean: [0.5; 3],
                std: [0.25; 3],
            }),
            ..SpectrogramConfig::default()
        };
        let probe_cfg = ProbeConfig {
            epochs: 20,
            schedule: LrSchedule {
                warmup_epochs: 4,
                total_epochs: 20,
                ..LrSchedule::default()
            },
            threads: 2,
            ..ProbeConfig::default()
        };
        let seeds = [3u64, 5, 7, 9, 11];
        let cells =
            eval_varying_n(&encoder, &windows, &[1, 50], &folds, &seeds, &probe_cfg, &cfg, 2)
                .unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.runs == 15));
        println!("monotone check: n=1 {:.4}, n=50 {:.4}", cells[0].mean_f1, cells[1].mean_f1);
        assert!(
            cells[1].mean_f1 >= cells[0].mean_f1 - 0.02,
            "n=50 mean {:.4} fell below n=1 mean {:.4} - 0.02",
            cells[1].mean_f1,
            cells[0].mean_f1
        );
    }

    #[test]
    fn ablation_report_shape_and_original_column() {
        // Micro-scale end-to-end run of the robustness harness: five
        // augmentation subsets by five sensory variants, original drop 0.
        let corpus = crate::data::synth_image_corpus(24, 16, 16, 3).unwrap();
        let spec = crate::data::SynthSpec::preset(2, 20.0, 2.0).unwrap();
        let windows = crate::data::synth_imu_dataset(&spec, 4, 4, 5).unwrap();
        let ablation = AblationConfig {
            pretrain: PretrainConfig {
                epochs: 1,
                batch_size: 8,
                queue_size: 8,
                learning_rate: 1e-3,
                tau: 0.1,
                momentum: 0.9,
                seed: 2,
                threads: 2,
            },
            probe: ProbeConfig {
                n_per_class: 3,
                epochs: 4,
                batch_size: 4,
                schedule: LrSchedule {
                    warmup_epochs: 1,
                    total_epochs: 4,
                    ..LrSchedule::default()
                },
                seed: 4,
                threads: 2,
            },
            arch: crate::nn::ArchDescriptor::micro(8),
            split_seed: 6,
            split_ratio: (0.5, 0.25, 0.25),
            config_hash: 0xfeed,
            ..AblationConfig::default()
        };
        let cfg = SpectrogramConfig {
            nfft: 8,
            noverlap: 4,
            out_h: 16,
            out_w: 16,
            ..SpectrogramConfig::default()
        };
        let report = ablation_table(&corpus, &windows, &cfg, &ablation).unwrap();
        assert_eq!(report.subsets.len(), 5);
        assert_eq!(report.variants.len(), 5);
        assert_eq!(report.f1.len(), 5);
        for row in 0..5 {
            assert_eq!(report.f1[row].len(), 5);
            assert_eq!(report.drop[row][0], 0.0, "original column drop must be 0");
            for col in 0..5 {
                assert!((0.0..=1.0).contains(&report.f1[row][col]));
            }
        }
        let csv = report.to_csv(0xfeed);
        assert!(csv.starts_with("# config_hash=000000000000feed"));
        assert_eq!(csv.lines().count(), 7, "{csv}");
    }

    #[test]
    fn variants_preserve_metadata_and_count() {
        let windows = labeled_windows(4, 2);
        for variant in SensoryVariant::ALL {
            let out = apply_variant(&windows, variant, 3).unwrap();
            assert_eq!(out.len(), windows.len());
            for (a, b) in windows.iter().zip(&out) {
                assert_eq!(a.label, b.label);
                assert_eq!(a.subject_id, b.subject_id);
                assert_eq!(a.len(), b.len());
            }
        }
        let original = apply_variant(&windows, SensoryVariant::Original, 3).unwrap();
        assert_eq!(original, windows);
        // Determinism.
        for variant in [SensoryVariant::Masked, SensoryVariant::Noised] {
            let a = apply_variant(&windows, variant, 5).unwrap();
            let b = apply_variant(&windows, variant, 5).unwrap();
            assert_eq!(a, b);
        }
    }
}
