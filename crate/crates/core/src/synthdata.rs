//! Multi-domain synthetic benchmark with a held-out forgery domain.
//!
//! A sample of domain `t` with nuisance cluster `rho` is
//!
//! ```text
//! x = signal_scale * W_t s + nuisance_scale * U_rho z + noise_scale * n
//! ```
//!
//! where the columns of every `W_t` and `U_rho` are disjoint columns of one
//! random orthonormal frame. `W_0` is the real pattern, `W_1..W_N` the
//! training forgery patterns and `W_{N+1}` the held-out forgery pattern.
//! The nuisance bases are shared by all domains and the cluster index is
//! assigned round-robin within each domain, so it carries no information
//! about the domain. The codes `s` and `z` are folded Gaussians `|xi|`: a
//! symmetric code would place every pattern subspace on both sides of any
//! hyperplane and no linear detector could exist even without noise.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, gaussian, seeded};

/// Largest admissible normalised mutual information between the domain
/// and the nuisance cluster in the training split.
pub const NMI_THRESHOLD: f64 = 0.05;

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub input_dim: usize,
    #[serde(rename = "N_train_forgery")]
    pub num_train_forgery: usize,
    pub signal_dims: usize,
    pub nuisance_dims: usize,
    pub nuisance_clusters: usize,
    pub signal_scale: f64,
    pub nuisance_scale: f64,
    pub noise_scale: f64,
    pub samples_per_domain: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            input_dim: 32,
            num_train_forgery: 4,
            signal_dims: 8,
            nuisance_dims: 16,
            nuisance_clusters: 8,
            signal_scale: 1.0,
            nuisance_scale: 2.0,
            noise_scale: 0.25,
            samples_per_domain: 2000,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_train_forgery == 0 {
            return bad("N_train_forgery must be at least 1".into());
        }
        if self.signal_dims < self.num_train_forgery + 2 {
            return bad(format!(
                "signal_dims = {} cannot hold {} disjoint domain patterns",
                self.signal_dims,
                self.num_train_forgery + 2
            ));
        }
        if self.nuisance_clusters == 0 || self.nuisance_dims < self.nuisance_clusters {
            return bad(format!(
                "nuisance_dims = {} cannot hold {} cluster bases",
                self.nuisance_dims, self.nuisance_clusters
            ));
        }
        if self.signal_dims + self.nuisance_dims > self.input_dim {
            return bad(format!(
                "signal_dims + nuisance_dims = {} exceeds input_dim = {}",
                self.signal_dims + self.nuisance_dims,
                self.input_dim
            ));
        }
        for (name, v) in [
            ("signal_scale", self.signal_scale),
            ("nuisance_scale", self.nuisance_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if self.nuisance_scale != 0.0 && self.nuisance_scale < self.signal_scale {
            return bad("nuisance_scale must be at least signal_scale (or zero)".into());
        }
        if self.samples_per_domain < 4 {
            return bad("samples_per_domain must be at least 4".into());
        }
        Ok(())
    }

    /// Columns per domain pattern.
    pub fn signal_rank(&self) -> usize {
        self.signal_dims / (self.num_train_forgery + 2)
    }

    /// Columns per nuisance cluster basis.
    pub fn nuisance_rank(&self) -> usize {
        self.nuisance_dims / self.nuisance_clusters
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One labelled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: u8,
    pub t: usize,
    pub rho_true: usize,
}

/// Generated splits together with the bases that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: GenSpec,
    pub train: Vec<Sample>,
    pub test_in: Vec<Sample>,
    pub test_heldout: Vec<Sample>,
    /// `signal_bases[t]` holds the columns of `W_t`, `t = 0..=N+1`.
    pub signal_bases: Vec<Vec<Vec<f64>>>,
    /// `nuisance_bases[rho]` holds the columns of `U_rho`.
    pub nuisance_bases: Vec<Vec<Vec<f64>>>,
}

impl SyntheticDataset {
    pub fn num_train_forgery(&self) -> usize {
        self.spec.num_train_forgery
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Largest absolute inner product between a held-out pattern column and
    /// any training pattern column.
    pub fn heldout_overlap(&self) -> f64 {
        let n = self.spec.num_train_forgery;
        let held = &self.signal_bases[n + 1];
        self.signal_bases[..=n]
            .iter()
            .flatten()
            .flat_map(|a| held.iter().map(move |b| crate::vecops::dot(a, b).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy)]
enum SplitKind {
    Train = 1,
    TestIn = 2,
    Heldout = 3,
}

fn column_blocks(frame: &DMatrix<f64>, start: usize, count: usize, width: usize) -> Vec<Vec<Vec<f64>>> {
    (0..count)
        .map(|b| {
            (0..width)
                .map(|c| frame.column(start + b * width + c).iter().copied().collect())
                .collect()
        })
        .collect()
}

struct Generator<'a> {
    spec: &'a GenSpec,
    signal: Vec<Vec<Vec<f64>>>,
    nuisance: Vec<Vec<Vec<f64>>>,
}

impl Generator<'_> {
    fn sample(&self, split: SplitKind, t: usize, index: usize) -> Sample {
        let spec = self.spec;
        let stream = (split as u64) << 32 | t as u64;
        let mut rng = seeded(derive_seed(spec.seed, stream, index as u64));
        let rho = index % spec.nuisance_clusters;
        let mut x: Vec<f64> = (0..spec.input_dim).map(|_| spec.noise_scale * gaussian(&mut rng)).collect();
        for col in &self.signal[t] {
            let s = spec.signal_scale * gaussian(&mut rng).abs();
            crate::vecops::axpy(s, col, &mut x);
        }
        for col in &self.nuisance[rho] {
            let z = spec.nuisance_scale * gaussian(&mut rng).abs();
            crate::vecops::axpy(z, col, &mut x);
        }
        Sample { x, y: u8::from(t > 0), t, rho_true: rho }
    }
}

/// Generates the three splits. Each sample draws from its own derived
/// seed, so the output does not depend on evaluation order.
///
/// * train: `samples_per_domain` samples of each domain `0..=N`;
/// * in-domain test: `samples_per_domain / 4` samples of each domain `0..=N`;
/// * held-out test: `samples_per_domain / 4` samples of domain `N + 1` and
///   as many fresh real samples.
pub fn generate(spec: &GenSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let m = spec.input_dim;
    let n = spec.num_train_forgery;
    let mut frame_rng = seeded(derive_seed(spec.seed, 0, 0));
    let gaussian_matrix = DMatrix::from_fn(m, m, |_, _| gaussian(&mut frame_rng));
    let frame = gaussian_matrix.qr().q();

    let nuisance = column_blocks(&frame, 0, spec.nuisance_clusters, spec.nuisance_rank());
    let signal = column_blocks(&frame, spec.nuisance_dims, n + 2, spec.signal_rank());
    let g = Generator { spec, signal, nuisance };

    let per_test = spec.samples_per_domain / 4;
    let mut train = Vec::with_capacity((n + 1) * spec.samples_per_domain);
    let mut test_in = Vec::with_capacity((n + 1) * per_test);
    for t in 0..=n {
        train.extend((0..spec.samples_per_domain).map(|i| g.sample(SplitKind::Train, t, i)));
        test_in.extend((0..per_test).map(|i| g.sample(SplitKind::TestIn, t, i)));
    }
    let mut test_heldout: Vec<Sample> = (0..per_test).map(|i| g.sample(SplitKind::Heldout, 0, i)).collect();
    test_heldout.extend((0..per_test).map(|i| g.sample(SplitKind::Heldout, n + 1, i)));

    let ds = SyntheticDataset {
        spec: spec.clone(),
        train,
        test_in,
        test_heldout,
        signal_bases: g.signal,
        nuisance_bases: g.nuisance,
    };
    let nmi = nuisance_correlation_audit(&ds);
    if nmi >= NMI_THRESHOLD {
        return Err(Error::InvalidArgument(format!("nuisance audit failed: NMI {nmi:.4}")));
    }
    Ok(ds)
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// `I(a; b) / sqrt(H(a) H(b))` from the empirical joint histogram; zero
/// when either label is constant.
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "label sequences differ in length");
    if a.is_empty() {
        return 0.0;
    }
    let ka = a.iter().max().map_or(0, |&v| v + 1);
    let kb = b.iter().max().map_or(0, |&v| v + 1);
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let total = a.len() as f64;
    let ha = entropy(ca.into_iter(), total);
    let hb = entropy(cb.into_iter(), total);
    if ha <= 0.0 || hb <= 0.0 {
        return 0.0;
    }
    let mi = ha + hb - entropy(joint.into_iter(), total);
    (mi / (ha * hb).sqrt()).max(0.0)
}

/// Normalised mutual information between domain and nuisance cluster over
/// the training split.
pub fn nuisance_correlation_audit(ds: &SyntheticDataset) -> f64 {
    let t: Vec<usize> = ds.train.iter().map(|s| s.t).collect();
    let rho: Vec<usize> = ds.train.iter().map(|s| s.rho_true).collect();
    normalized_mutual_information(&t, &rho)
}

/// Writes a split as CSV with header `x_0..x_{m-1},y,t,rho_true`.
pub fn write_split_csv<W: Write>(out: W, samples: &[Sample], input_dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..input_dim).map(|i| format!("x_{i}")).collect();
    header.extend(["y", "t", "rho_true"].map(String::from));
    w.write_record(&header)?;
    for s in samples {
        let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        row.extend([s.y.to_string(), s.t.to_string(), s.rho_true.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a split written by [`write_split_csv`].
pub fn read_split_csv<R: std::io::Read>(input: R) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let m = header.iter().take_while(|h| h.starts_with("x_")).count();
    let expected: Vec<String> = (0..m)
        .map(|i| format!("x_{i}"))
        .chain(["y", "t", "rho_true"].map(String::from))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Config("unexpected CSV header for a dataset split".into()));
    }
    let parse_err = |line: usize, what: &str| Error::Config(format!("row {line}: bad {what}"));
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let x = (0..m)
            .map(|i| rec[i].parse::<f64>().map_err(|_| parse_err(line + 2, "feature")))
            .collect::<Result<Vec<f64>>>()?;
        let y: u8 = rec[m].parse().map_err(|_| parse_err(line + 2, "y"))?;
        let t: usize = rec[m + 1].parse().map_err(|_| parse_err(line + 2, "t"))?;
        let rho_true: usize = rec[m + 2].parse().map_err(|_| parse_err(line + 2, "rho_true"))?;
        if y > 1 || (y == 0) != (t == 0) {
            return Err(parse_err(line + 2, "label pair"));
        }
        out.push(Sample { x, y, t, rho_true });
    }
    Ok(out)
}

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_IN_FILE: &str = "test_in.csv";
pub const TEST_HELDOUT_FILE: &str = "test_heldout.csv";
pub const SPEC_FILE: &str = "genspec.json";

/// Writes the three splits and the generating spec into `dir`.
pub fn write_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let m = ds.input_dim();
    write_split_csv(File::create(dir.join(TRAIN_FILE))?, &ds.train, m)?;
    write_split_csv(File::create(dir.join(TEST_IN_FILE))?, &ds.test_in, m)?;
    write_split_csv(File::create(dir.join(TEST_HELDOUT_FILE))?, &ds.test_heldout, m)?;
    std::fs::write(dir.join(SPEC_FILE), ds.spec.to_json()?)?;
    Ok(())
}

/// Reloads a dataset directory. The bases are regenerated from the spec.
pub fn read_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let spec = GenSpec::from_json(&std::fs::read_to_string(dir.join(SPEC_FILE))?)?;
    let mut ds = generate(&spec)?;
    ds.train = read_split_csv(File::open(dir.join(TRAIN_FILE))?)?;
    ds.test_in = read_split_csv(File::open(dir.join(TEST_IN_FILE))?)?;
    ds.test_heldout = read_split_csv(File::open(dir.join(TEST_HELDOUT_FILE))?)?;
    for s in ds.train.iter().chain(&ds.test_in).chain(&ds.test_heldout) {
        if s.x.len() != spec.input_dim {
            return Err(Error::ShapeMismatch("CSV width does not match genspec input_dim".into()));
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenSpec {
        GenSpec { samples_per_domain: 200, ..GenSpec::default() }
    }

    #[test]
    fn default_spec_is_valid() {
        GenSpec::default().validate().unwrap();
        assert_eq!(GenSpec::default().signal_rank(), 1);
        assert_eq!(GenSpec::default().nuisance_rank(), 2);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let cases = [
            GenSpec { signal_dims: 20, nuisance_dims: 16, ..small() },
            GenSpec { nuisance_scale: 0.5, ..small() },
            GenSpec { signal_dims: 5, ..small() },
            GenSpec { nuisance_clusters: 0, ..small() },
            GenSpec { noise_scale: -1.0, ..small() },
        ];
        for spec in cases {
            assert!(generate(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn split_shapes() {
        let ds = generate(&small()).unwrap();
        assert_eq!(ds.train.len(), 5 * 200);
        assert_eq!(ds.test_in.len(), 5 * 50);
        assert_eq!(ds.test_heldout.len(), 100);
        assert!(ds.test_heldout.iter().all(|s| s.t == 0 || s.t == 5));
        assert_eq!(ds.test_heldout.iter().filter(|s| s.t == 5).count(), 50);
        assert!(ds.train.iter().all(|s| s.t <= 4 && s.x.len() == 32));
    }

    #[test]
    fn heldout_basis_is_orthogonal() {
        let ds = generate(&small()).unwrap();
        assert!(ds.heldout_overlap() < 1e-8);
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = generate(&GenSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(generate(&small()).unwrap().train, other.train);
    }

    #[test]
    fn nmi_examples() {
        let ds = generate(&GenSpec::default()).unwrap();
        assert!(nuisance_correlation_audit(&ds) < NMI_THRESHOLD);
        let t: Vec<usize> = (0..500).map(|i| i % 5).collect();
        assert!((normalized_mutual_information(&t, &t) - 1.0).abs() < 1e-12);
        let rho: Vec<usize> = (0..500).map(|i| (i / 5) % 4).collect();
        assert!(normalized_mutual_information(&t, &rho) < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate(&GenSpec { samples_per_domain: 8, ..GenSpec::default() }).unwrap();
        let mut buf = Vec::new();
        write_split_csv(&mut buf, &ds.test_in, 32).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_0,x_1,"));
        assert!(text.lines().next().unwrap().ends_with("x_31,y,t,rho_true"));
        assert_eq!(read_split_csv(buf.as_slice()).unwrap(), ds.test_in);
    }
}
