//! Synthetic parallel corpora, feature-file I/O, and minibatch assembly.
//!
//! The generator stands in for aligned far-field/close-talk recordings:
//! hidden Markov states pick per-state Gaussian close-talk frames, and the
//! far-field channel applies a causal decaying convolution (a toy room
//! response), a per-utterance gain, and additive noise. Labels are the
//! hidden states, playing the role of frame alignments derived from the
//! clean channel.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::SeedMix;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_states: usize,
    pub state_stay_probability: f64,
    pub feature_dim: usize,
    pub rir_kernel_length: usize,
    pub rir_decay: f64,
    pub noise_std: f64,
    pub channel_gain_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_states: 10,
            state_stay_probability: 0.9,
            feature_dim: 8,
            rir_kernel_length: 6,
            rir_decay: 0.6,
            noise_std: 0.3,
            channel_gain_range: (0.7, 1.0),
            seed: 0,
        }
    }
}

/// Standard deviation of the within-state close-talk jitter.
pub const INTRA_STATE_NOISE_STD: f64 = 0.1;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 {
            return Err(Error::Config("num-states must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.state_stay_probability) {
            return Err(Error::Config(
                "state-stay-probability must be in [0, 1]".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature-dim must be positive".into()));
        }
        if self.rir_kernel_length == 0 {
            return Err(Error::Config("rir-kernel-length must be at least 1".into()));
        }
        if self.rir_decay <= 0.0 {
            return Err(Error::Config("rir-decay must be positive".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise-std must be non-negative".into()));
        }
        if self.channel_gain_range.0 > self.channel_gain_range.1 {
            return Err(Error::Config("channel-gain-range must be ordered".into()));
        }
        Ok(())
    }

    /// Normalized exponentially decaying kernel, weights `decay^k`.
    pub fn rir_kernel(&self) -> Vec<f64> {
        let mut kernel: Vec<f64> = (0..self.rir_kernel_length)
            .map(|k| self.rir_decay.powi(k as i32))
            .collect();
        let total: f64 = kernel.iter().sum();
        for w in &mut kernel {
            *w /= total;
        }
        kernel
    }

    fn echo(&self) -> String {
        format!(
            "num-states={} state-stay-probability={} feature-dim={} rir-kernel-length={} rir-decay={} noise-std={} channel-gain-range={},{} seed={}",
            self.num_states,
            self.state_stay_probability,
            self.feature_dim,
            self.rir_kernel_length,
            self.rir_decay,
            self.noise_std,
            self.channel_gain_range.0,
            self.channel_gain_range.1,
            self.seed
        )
    }
}

/// A time-aligned (far-field, close-talk, labels) triple.
#[derive(Clone)]
pub struct ParallelUtterance {
    pub id: String,
    pub far_field: Tensor,
    pub close_talk: Tensor,
    pub labels: Vec<usize>,
}

impl ParallelUtterance {
    pub fn frames(&self) -> usize {
        self.far_field.shape()[0]
    }
}

/// Per-state close-talk means: unit-norm vectors kept at least unit
/// distance apart so states stay distinguishable above the jitter floor.
fn state_means(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = SeedMix::new(cfg.seed).with_str("means").rng();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_states);
    let mut attempts = 0;
    while means.len() < cfg.num_states {
        let mut v: Vec<f64> = (0..cfg.feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in &mut v {
            *x /= norm;
        }
        attempts += 1;
        let min_dist = means
            .iter()
            .map(|m| {
                m.iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        // After many rejections accept whatever comes (tiny feature dims).
        if min_dist >= 1.0 || attempts > 1000 * cfg.num_states {
            means.push(v);
        }
    }
    means
}

/// Per-dimension causal convolution of a row-major `frames x dim` buffer;
/// frames before the start contribute nothing, so the map is linear in the
/// input.
pub fn causal_convolve(data: &[f64], frames: usize, dim: usize, kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; frames * dim];
    for t in 0..frames {
        for k in 0..dim {
            let mut acc = 0.0;
            for (lag, &w) in kernel.iter().enumerate() {
                if t >= lag {
                    acc += w * data[(t - lag) * dim + k];
                }
            }
            out[t * dim + k] = acc;
        }
    }
    out
}

fn markov_labels(rng: &mut ChaCha8Rng, cfg: &SynthConfig, frames: usize) -> Vec<usize> {
    let mut labels = Vec::with_capacity(frames);
    let mut state = rng.gen_range(0..cfg.num_states);
    for _ in 0..frames {
        labels.push(state);
        let stay = rng.gen_range(0.0..1.0) < cfg.state_stay_probability;
        if !stay && cfg.num_states > 1 {
            let jump = rng.gen_range(0..cfg.num_states - 1);
            state = if jump >= state { jump + 1 } else { jump };
        }
    }
    labels
}

/// Generate one utterance from its own seed-derived stream.
pub fn generate_utterance(
    cfg: &SynthConfig,
    means: &[Vec<f64>],
    index: usize,
    t_range: (usize, usize),
) -> ParallelUtterance {
    let d = cfg.feature_dim;
    let mut rng = SeedMix::new(cfg.seed)
        .with_str("utt")
        .with_u64(index as u64)
        .rng();
    let frames = rng.gen_range(t_range.0..=t_range.1);
    let labels = markov_labels(&mut rng, cfg, frames);

    let mut close = vec![0.0; frames * d];
    for (t, &state) in labels.iter().enumerate() {
        for k in 0..d {
            close[t * d + k] = means[state][k]
                + INTRA_STATE_NOISE_STD * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let kernel = cfg.rir_kernel();
    let gain = if cfg.channel_gain_range.0 == cfg.channel_gain_range.1 {
        cfg.channel_gain_range.0
    } else {
        rng.gen_range(cfg.channel_gain_range.0..cfg.channel_gain_range.1)
    };
    let mut far = causal_convolve(&close, frames, d, &kernel);
    for v in &mut far {
        *v = gain * *v + cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
    }

    ParallelUtterance {
        id: format!("utt{index:05}"),
        far_field: Tensor::from_vec(far, &[frames, d]).expect("sized buffer"),
        close_talk: Tensor::from_vec(close, &[frames, d]).expect("sized buffer"),
        labels,
    }
}

/// Generate a whole corpus in memory.
pub fn generate_utterances(
    cfg: &SynthConfig,
    num_utts: usize,
    t_range: (usize, usize),
) -> Result<Vec<ParallelUtterance>> {
    cfg.validate()?;
    if t_range.0 > t_range.1 {
        return Err(Error::Config("tmin must not exceed tmax".into()));
    }
    if t_range.0 < cfg.rir_kernel_length {
        return Err(Error::Config(format!(
            "tmin ({}) must be at least the channel kernel length ({})",
            t_range.0, cfg.rir_kernel_length
        )));
    }
    let means = state_means(cfg);
    Ok((0..num_utts)
        .map(|i| generate_utterance(cfg, &means, i, t_range))
        .collect())
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub id: String,
    pub x_path: PathBuf,
    pub y_path: PathBuf,
    pub label_path: PathBuf,
    pub frames: usize,
}

/// Index of a corpus on disk: one record per utterance plus the feature
/// dimension and an echo of the generator settings.
#[derive(Clone, Debug)]
pub struct CorpusManifest {
    pub dim: usize,
    pub synth_echo: Option<String>,
    pub entries: Vec<ManifestEntry>,
    pub path: PathBuf,
}

/// Generate a corpus, write all files under `out_dir`, and return the
/// manifest (also written as `manifest.tsv`).
pub fn generate_corpus(
    cfg: &SynthConfig,
    num_utts: usize,
    t_range: (usize, usize),
    out_dir: &Path,
) -> Result<CorpusManifest> {
    let utts = generate_utterances(cfg, num_utts, t_range)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let manifest_path = out_dir.join("manifest.tsv");
    let file = std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# dim={}", cfg.feature_dim).map_err(|e| Error::io(&manifest_path, e))?;
    writeln!(out, "# synth: {}", cfg.echo()).map_err(|e| Error::io(&manifest_path, e))?;

    let mut entries = Vec::with_capacity(utts.len());
    for utt in &utts {
        // Paths are stored relative to the manifest so corpora relocate.
        let x_name = format!("{}.x.fbt", utt.id);
        let y_name = format!("{}.y.fbt", utt.id);
        let label_name = format!("{}.lab", utt.id);
        let x_path = out_dir.join(&x_name);
        let y_path = out_dir.join(&y_name);
        let label_path = out_dir.join(&label_name);
        write_features(&x_path, &utt.far_field)?;
        write_features(&y_path, &utt.close_talk)?;
        write_labels(&label_path, &utt.labels)?;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            utt.id,
            x_name,
            y_name,
            label_name,
            utt.frames()
        )
        .map_err(|e| Error::io(&manifest_path, e))?;
        entries.push(ManifestEntry {
            id: utt.id.clone(),
            x_path,
            y_path,
            label_path,
            frames: utt.frames(),
        });
    }
    out.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(CorpusManifest {
        dim: cfg.feature_dim,
        synth_echo: Some(cfg.echo()),
        entries,
        path: manifest_path,
    })
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<CorpusManifest> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let path_str = path.display().to_string();
        let mut dim = None;
        let mut synth_echo = None;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line_no = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("dim=") {
                    dim = Some(v.trim().parse::<usize>().map_err(|_| {
                        Error::parse(&path_str, line_no, "bad dim header")
                    })?);
                } else if let Some(v) = rest.strip_prefix("synth:") {
                    synth_echo = Some(v.trim().to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::parse(
                    &path_str,
                    line_no,
                    format!("expected 5 tab-separated fields, got {}", fields.len()),
                ));
            }
            let frames = fields[4].parse::<usize>().map_err(|_| {
                Error::parse(&path_str, line_no, format!("bad frame count {:?}", fields[4]))
            })?;
            // Relative paths resolve against the manifest's own directory.
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            let resolve = |s: &str| {
                let p = PathBuf::from(s);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            let entry = ManifestEntry {
                id: fields[0].to_string(),
                x_path: resolve(fields[1]),
                y_path: resolve(fields[2]),
                label_path: resolve(fields[3]),
                frames,
            };
            for p in [&entry.x_path, &entry.y_path, &entry.label_path] {
                if !p.exists() {
                    return Err(Error::parse(
                        &path_str,
                        line_no,
                        format!("referenced file {} does not exist", p.display()),
                    ));
                }
            }
            entries.push(entry);
        }
        let dim = dim.ok_or_else(|| Error::parse(&path_str, 0, "missing '# dim=' header"))?;
        Ok(CorpusManifest {
            dim,
            synth_echo,
            entries,
            path: path.to_path_buf(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_utterance(&self, index: usize) -> Result<ParallelUtterance> {
        let entry = &self.entries[index];
        let far_field = read_features(&entry.x_path)?;
        let close_talk = read_features(&entry.y_path)?;
        let labels = read_labels(&entry.label_path)?;
        let utt = ParallelUtterance {
            id: entry.id.clone(),
            far_field,
            close_talk,
            labels,
        };
        if utt.far_field.shape() != utt.close_talk.shape()
            || utt.labels.len() != utt.far_field.shape()[0]
        {
            return Err(Error::Config(format!(
                "utterance {} is misaligned: x {:?}, y {:?}, {} labels",
                utt.id,
                utt.far_field.shape(),
                utt.close_talk.shape(),
                utt.labels.len()
            )));
        }
        Ok(utt)
    }

    /// Seeded-shuffle minibatches for one epoch. Utterances are kept whole;
    /// the shuffle is a deterministic function of the seed.
    pub fn batches(&self, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
        if self.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if batch_size == 0 {
            return Err(Error::Config("batch-size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        let mut rng = SeedMix::new(shuffle_seed).rng();
        order.shuffle(&mut rng);
        Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }
}

/// Write a feature matrix in FBT1 form: `FBT1 <T> <D>` then one line per
/// frame with 17-significant-digit decimals (round-trips f64 exactly).
pub fn write_features(path: &Path, m: &Tensor) -> Result<()> {
    if m.shape().len() != 2 {
        return Err(Error::InvalidShape {
            op: "write_features",
            message: format!("expected a T x D matrix, got {:?}", m.shape()),
        });
    }
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidShape {
            op: "write_features",
            message: "matrix contains non-finite values".to_string(),
        });
    }
    let (t_len, d) = (m.shape()[0], m.shape()[1]);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut buf = String::new();
    writeln!(buf, "FBT1 {t_len} {d}").expect("string write");
    for t in 0..t_len {
        for (k, v) in m.row(t).iter().enumerate() {
            if k > 0 {
                buf.push(' ');
            }
            write!(buf, "{v:.16e}").expect("string write");
        }
        buf.push('\n');
    }
    out.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read an FBT1 feature file. Errors carry the offending line number.
pub fn read_features(path: &Path) -> Result<Tensor> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let path_str = path.display().to_string();
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(&path_str, 1, "empty file, expected FBT1 header")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "FBT1" {
        return Err(Error::parse(
            &path_str,
            1,
            format!("malformed header {header:?}, expected 'FBT1 <T> <D>'"),
        ));
    }
    let t_len: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse(&path_str, 1, format!("bad frame count {:?}", fields[1])))?;
    let d: usize = fields[2]
        .parse()
        .map_err(|_| Error::parse(&path_str, 1, format!("bad dimension {:?}", fields[2])))?;

    let mut data = Vec::with_capacity(t_len * d);
    for t in 0..t_len {
        let line_no = t + 2;
        let line = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => {
                return Err(Error::parse(
                    &path_str,
                    line_no,
                    format!("missing row {} of {}", t + 1, t_len),
                ))
            }
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != d {
            return Err(Error::parse(
                &path_str,
                line_no,
                format!("row has {} values, expected {}", tokens.len(), d),
            ));
        }
        for tok in tokens {
            let v: f64 = tok.parse().map_err(|_| {
                Error::parse(&path_str, line_no, format!("non-numeric token {tok:?}"))
            })?;
            data.push(v);
        }
    }
    Tensor::from_vec(data, &[t_len, d])
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut buf = String::new();
    for l in labels {
        writeln!(buf, "{l}").expect("string write");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let path_str = path.display().to_string();
    content
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            line.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(&path_str, i + 1, format!("bad label {line:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_channel_copies_close_talk() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            rir_kernel_length: 1,
            channel_gain_range: (1.0, 1.0),
            ..SynthConfig::default()
        };
        let utts = generate_utterances(&cfg, 3, (8, 12)).unwrap();
        for utt in utts {
            assert_eq!(utt.far_field.data(), utt.close_talk.data());
        }
    }

    #[test]
    fn absorbing_chain_keeps_one_label() {
        let cfg = SynthConfig {
            state_stay_probability: 1.0,
            ..SynthConfig::default()
        };
        for utt in generate_utterances(&cfg, 4, (6, 10)).unwrap() {
            let first = utt.labels[0];
            assert!(utt.labels.iter().all(|&l| l == first));
        }
    }

    #[test]
    fn generated_streams_are_aligned_and_reproducible() {
        let cfg = SynthConfig::default();
        let a = generate_utterances(&cfg, 5, (6, 20)).unwrap();
        let b = generate_utterances(&cfg, 5, (6, 20)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.far_field.shape(), u.close_talk.shape());
            assert_eq!(u.labels.len(), u.frames());
            assert_eq!(u.far_field.data(), v.far_field.data());
            assert_eq!(u.labels, v.labels);
        }
    }

    #[test]
    fn tmin_below_kernel_length_is_rejected() {
        let cfg = SynthConfig::default();
        assert!(generate_utterances(&cfg, 1, (3, 10)).is_err());
    }

    #[test]
    fn state_means_are_separated() {
        let cfg = SynthConfig::default();
        let means = state_means(&cfg);
        assert_eq!(means.len(), cfg.num_states);
        for i in 0..means.len() {
            for j in 0..i {
                let dist: f64 = means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist >= 1.0, "means {i} and {j} are only {dist} apart");
            }
        }
    }

    #[test]
    fn feature_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fbt");
        let mut rng = crate::seed::SeedMix::new(9).with_str("fbt").rng();
        let m = Tensor::from_vec(
            (0..15).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            &[5, 3],
        )
        .unwrap();
        write_features(&path, &m).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.shape(), m.shape());
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_matrix_is_readable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.fbt");
        std::fs::write(&path, "FBT1 0 3\n").unwrap();
        let m = read_features(&path).unwrap();
        assert_eq!(m.shape(), &[0, 3]);
    }

    #[test]
    fn missing_row_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.fbt");
        std::fs::write(&path, "FBT1 5 1\n1\n2\n3\n4\n").unwrap();
        match read_features(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fbt");
        std::fs::write(&path, "FBT2 1 1\n0\n").unwrap();
        match read_features(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("header"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tok.fbt");
        std::fs::write(&path, "FBT1 2 2\n1 2\n3 oops\n").unwrap();
        match read_features(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn row_length_mismatch_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("row.fbt");
        std::fs::write(&path, "FBT1 2 3\n1 2 3\n4 5\n").unwrap();
        match read_features(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn corpus_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let manifest = generate_corpus(&cfg, 4, (8, 12), dir.path()).unwrap();
        assert_eq!(manifest.len(), 4);

        let loaded = CorpusManifest::load(&manifest.path).unwrap();
        assert_eq!(loaded.dim, cfg.feature_dim);
        assert_eq!(loaded.len(), 4);
        assert!(loaded.synth_echo.is_some());
        for i in 0..loaded.len() {
            let utt = loaded.load_utterance(i).unwrap();
            assert_eq!(utt.frames(), loaded.entries[i].frames);
        }
    }

    #[test]
    fn manifest_with_missing_file_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let manifest = generate_corpus(&cfg, 2, (8, 10), dir.path()).unwrap();
        std::fs::remove_file(&manifest.entries[1].y_path).unwrap();
        assert!(CorpusManifest::load(&manifest.path).is_err());
    }

    #[test]
    fn batches_are_deterministic_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_corpus(&SynthConfig::default(), 7, (8, 10), dir.path()).unwrap();
        let a = manifest.batches(1, 99).unwrap();
        let b = manifest.batches(1, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        let flat: Vec<usize> = a.iter().flatten().copied().collect();
        let mut sorted = flat.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());

        let c = manifest.batches(3, 99).unwrap();
        assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 1]);
        assert_eq!(c.concat(), flat);
    }

    #[test]
    fn empty_manifest_cannot_batch() {
        let manifest = CorpusManifest {
            dim: 8,
            synth_echo: None,
            entries: Vec::new(),
            path: PathBuf::from("none"),
        };
        assert!(matches!(manifest.batches(2, 0), Err(Error::EmptyCorpus)));
    }
}
