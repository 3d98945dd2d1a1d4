//! Synthetic labelled datasets, the plain-text dataset format and the
//! zero-shot class split.
//!
//! File format: a header line `dim=<d> classes=<L> count=<N>` (optionally
//! followed by `name=<name> seed=<seed>`), then one line per sample holding
//! the integer label and `d` space-separated reals with 17 significant digits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ProfsError, Result};
use crate::numcore::{distance_unchecked, dot, norm, Matrix};

/// Labelled samples. Labels are positive integers; every listed class is non-empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    seed: Option<u64>,
    features: Matrix,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Vec<usize>, seed: Option<u64>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) || name.contains('=') {
            return Err(ProfsError::Validation(format!("dataset name `{name}` must be a non-empty token")));
        }
        if features.rows() != labels.len() {
            return Err(ProfsError::Validation(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() || features.cols() == 0 {
            return Err(ProfsError::Validation("dataset must have samples of dim >= 1".into()));
        }
        if labels.contains(&0) {
            return Err(ProfsError::Validation("labels must be >= 1".into()));
        }
        if let Some(pos) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(ProfsError::Validation(format!(
                "non-finite feature in sample {}",
                pos / features.cols()
            )));
        }
        Ok(Self {
            name,
            seed,
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<usize> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes().len()
    }

    pub fn subset(&self, name: &str, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            name,
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.seed,
        )
    }

    /// Serializes to the text format. Byte-stable for a given dataset.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.input_dim() * 25 + 4));
        write!(
            out,
            "dim={} classes={} count={} name={}",
            self.input_dim(),
            self.num_classes(),
            self.len(),
            self.name
        )
        .unwrap();
        if let Some(seed) = self.seed {
            write!(out, " seed={seed}").unwrap();
        }
        out.push('\n');
        for (row, label) in self.features.iter_rows().zip(&self.labels) {
            write!(out, "{label}").unwrap();
            for v in row {
                write!(out, " {v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(ProfsError::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let mut dim = None;
        let mut classes = None;
        let mut count = None;
        let mut name = String::from("dataset");
        let mut seed = None;
        for tok in header.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| ProfsError::Parse {
                line: 1,
                message: format!("expected key=value, got `{tok}`"),
            })?;
            let num = |v: &str| {
                v.parse::<u64>().map_err(|_| ProfsError::Parse {
                    line: 1,
                    message: format!("`{k}` must be a non-negative integer"),
                })
            };
            match k {
                "dim" => dim = Some(num(v)? as usize),
                "classes" => classes = Some(num(v)? as usize),
                "count" => count = Some(num(v)? as usize),
                "name" => name = v.to_string(),
                "seed" => seed = Some(num(v)?),
                _ => {
                    return Err(ProfsError::Parse {
                        line: 1,
                        message: format!("unknown header key `{k}`"),
                    })
                }
            }
        }
        let missing = |k: &str| ProfsError::Parse {
            line: 1,
            message: format!("header is missing `{k}`"),
        };
        let dim = dim.ok_or_else(|| missing("dim"))?;
        let classes = classes.ok_or_else(|| missing("classes"))?;
        let count = count.ok_or_else(|| missing("count"))?;

        let mut data = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        let mut last_line = 1;
        for (idx, line) in lines {
            let lineno = idx + 1;
            last_line = lineno;
            if line.trim().is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let label = toks
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| ProfsError::Parse {
                    line: lineno,
                    message: "expected an integer label".into(),
                })?;
            let start = data.len();
            for t in toks {
                let v = t.parse::<f64>().map_err(|_| ProfsError::Parse {
                    line: lineno,
                    message: format!("`{t}` is not a real number"),
                })?;
                data.push(v);
            }
            let width = data.len() - start;
            if width != dim {
                return Err(ProfsError::Validation(format!(
                    "row {} (line {lineno}) has {width} values, expected {dim}",
                    labels.len() + 1
                )));
            }
            labels.push(label);
        }
        if labels.len() != count {
            return Err(ProfsError::Parse {
                line: last_line,
                message: format!("expected {count} samples, found {}", labels.len()),
            });
        }
        let ds = Dataset::new(name, Matrix::from_vec(count, dim, data)?, labels, seed)?;
        if ds.num_classes() != classes {
            return Err(ProfsError::Validation(format!(
                "header declares {classes} classes, data has {}",
                ds.num_classes()
            )));
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warp {
    None,
    /// `x ↦ tanh(Q x)` with a seed-fixed random rotation `Q`.
    RandomRotationPlusTanh,
}

impl std::str::FromStr for Warp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(Warp::None),
            "random_rotation_plus_tanh" => Ok(Warp::RandomRotationPlusTanh),
            other => Err(format!("unknown warp `{other}`")),
        }
    }
}

impl std::fmt::Display for Warp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Warp::None => "none",
            Warp::RandomRotationPlusTanh => "random_rotation_plus_tanh",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    pub separation: f64,
    pub warp: Warp,
    /// Leading coordinates along which class means differ (before the warp);
    /// the remaining ones carry only within-class noise. `None` means all.
    #[serde(default)]
    pub informative_dims: Option<usize>,
    pub seed: u64,
}

const MAX_MEAN_TRIES: usize = 100_000;

/// Gaussian class clusters whose means are at least `separation` apart.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.per_class < 2 {
        return Err(ProfsError::Validation("synthetic data needs >= 2 classes and >= 2 samples per class".into()));
    }
    if !(spec.separation > 0.0) || !(spec.cluster_spread >= 0.0) || spec.input_dim == 0 {
        return Err(ProfsError::Validation(
            "synthetic data needs separation > 0, spread >= 0 and input_dim >= 1".into(),
        ));
    }
    let informative = spec.informative_dims.unwrap_or(spec.input_dim);
    if informative == 0 || informative > spec.input_dim {
        return Err(ProfsError::Validation(format!(
            "informative_dims must lie in 1..={}, got {informative}",
            spec.input_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.input_dim;
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    let mut tries = 0;
    while means.len() < spec.classes {
        tries += 1;
        if tries > MAX_MEAN_TRIES {
            return Err(ProfsError::Validation(format!(
                "could not place {} class means {} apart in {} dimensions",
                spec.classes, spec.separation, d
            )));
        }
        let cand: Vec<f64> = (0..d)
            .map(|i| if i < informative { spec.separation * gauss(&mut rng) } else { 0.0 })
            .collect();
        if means.iter().all(|m| distance_unchecked(m, &cand) >= spec.separation) {
            means.push(cand);
        }
    }

    let rotation = match spec.warp {
        Warp::None => None,
        Warp::RandomRotationPlusTanh => Some(random_rotation(d, &mut rng)),
    };

    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            let x: Vec<f64> = mean
                .iter()
                .map(|m| m + spec.cluster_spread * gauss(&mut rng))
                .collect();
            match &rotation {
                None => data.extend_from_slice(&x),
                Some(q) => data.extend(q.iter_rows().map(|row| dot(row, &x).tanh())),
            }
            labels.push(c + 1);
        }
    }
    Dataset::new("synthetic", Matrix::from_vec(n, d, data)?, labels, Some(spec.seed))
}

/// Orthonormal matrix from Gram-Schmidt on a Gaussian matrix.
fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let p = dot(r, &v);
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|a| *a /= nv);
            rows.push(v);
        }
    }
    Matrix::from_rows(&rows).expect("square")
}

/// Splits by class: the first `⌈fraction·L⌉` labels (ascending) train, the rest test.
pub fn zero_shot_split(d: &Dataset, fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ProfsError::Validation(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let classes = d.classes();
    if classes.len() < 2 {
        return Err(ProfsError::Validation("zero-shot split needs >= 2 classes".into()));
    }
    let n_train = (fraction * classes.len() as f64).ceil() as usize;
    if n_train >= classes.len() {
        return Err(ProfsError::Validation(format!(
            "split fraction {fraction} leaves no test classes out of {}",
            classes.len()
        )));
    }
    let train_set: BTreeSet<usize> = classes[..n_train].iter().copied().collect();
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) =
        (0..d.len()).partition(|&i| train_set.contains(&d.labels()[i]));
    Ok((
        d.subset(&format!("{}-train", d.name()), &train_idx)?,
        d.subset(&format!("{}-test", d.name()), &test_idx)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, per_class: usize, spread: f64, warp: Warp) -> SyntheticSpec {
        SyntheticSpec {
            classes,
            per_class,
            input_dim: 4,
            cluster_spread: spread,
            separation: 1.0,
            warp,
            informative_dims: None,
            seed: 7,
        }
    }

    #[test]
    fn counting_and_labels() {
        let d = gen_synthetic(&spec(2, 3, 0.1, Warp::RandomRotationPlusTanh)).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d.labels(), &[1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn zero_spread_collapses_classes() {
        let d = gen_synthetic(&spec(3, 4, 0.0, Warp::RandomRotationPlusTanh)).unwrap();
        for c in 0..3 {
            let first = d.features().row(c * 4);
            for k in 1..4 {
                assert_eq!(d.features().row(c * 4 + k), first);
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let s = spec(5, 3, 0.3, Warp::RandomRotationPlusTanh);
        assert_eq!(gen_synthetic(&s).unwrap().to_text(), gen_synthetic(&s).unwrap().to_text());
    }

    #[test]
    fn mean_separation_holds_without_warp() {
        let s = SyntheticSpec {
            input_dim: 8,
            separation: 2.0,
            ..spec(10, 20, 0.2, Warp::None)
        };
        let d = gen_synthetic(&s).unwrap();
        let dim = d.input_dim();
        let means: Vec<Vec<f64>> = (0..s.classes)
            .map(|c| {
                let mut m = vec![0.0; dim];
                for k in 0..s.per_class {
                    for (a, b) in m.iter_mut().zip(d.features().row(c * s.per_class + k)) {
                        *a += b / s.per_class as f64;
                    }
                }
                m
            })
            .collect();
        for i in 0..means.len() {
            assert_eq!(d.labels().iter().filter(|&&l| l == i + 1).count(), s.per_class);
            for j in (i + 1)..means.len() {
                assert!(distance_unchecked(&means[i], &means[j]) >= s.separation - 3.0 * s.cluster_spread);
            }
        }
    }

    #[test]
    fn nuisance_coordinates_share_one_distribution() {
        let s = SyntheticSpec {
            input_dim: 6,
            informative_dims: Some(2),
            ..spec(5, 40, 0.3, Warp::None)
        };
        let d = gen_synthetic(&s).unwrap();
        // class means differ only in the first two coordinates
        for c in 0..s.classes {
            for col in 2..6 {
                let m: f64 = (0..s.per_class).map(|k| d.features().get(c * s.per_class + k, col)).sum::<f64>()
                    / s.per_class as f64;
                assert!(m.abs() < 4.0 * s.cluster_spread / (s.per_class as f64).sqrt());
            }
        }
        let bad = SyntheticSpec {
            informative_dims: Some(7),
            ..s
        };
        assert!(gen_synthetic(&bad).is_err());
    }

    #[test]
    fn impossible_separation_fails() {
        let s = SyntheticSpec {
            input_dim: 1,
            separation: 1.0,
            ..spec(1000, 2, 0.1, Warp::None)
        };
        assert!(matches!(gen_synthetic(&s), Err(ProfsError::Validation(_))));
    }

    #[test]
    fn split_examples() {
        let d = gen_synthetic(&SyntheticSpec {
            input_dim: 3,
            ..spec(200, 2, 0.1, Warp::None)
        })
        .unwrap();
        let (tr, te) = zero_shot_split(&d, 0.5).unwrap();
        assert_eq!(tr.classes(), (1..=100).collect::<Vec<_>>());
        assert_eq!(te.classes(), (101..=200).collect::<Vec<_>>());
        assert_eq!(tr.len() + te.len(), d.len());

        let d3 = gen_synthetic(&spec(3, 2, 0.1, Warp::None)).unwrap();
        let (tr, te) = zero_shot_split(&d3, 0.5).unwrap();
        assert_eq!(tr.num_classes(), 2);
        assert_eq!(te.num_classes(), 1);
        assert!(tr.classes().iter().all(|c| !te.classes().contains(c)));
        assert!(zero_shot_split(&d3, 1.0).is_err());
        assert!(zero_shot_split(&d3, 0.0).is_err());
    }

    #[test]
    fn text_round_trip_and_errors() {
        let d = gen_synthetic(&spec(3, 2, 0.5, Warp::RandomRotationPlusTanh)).unwrap();
        let text = d.to_text();
        assert!(text.starts_with("dim=4 classes=3 count=6"));
        let back = Dataset::from_text(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_text(), text);

        let truncated: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Dataset::from_text(&truncated), Err(ProfsError::Parse { .. })));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3].push_str(" 1.0");
        let bad = lines.join("\n");
        match Dataset::from_text(&bad) {
            Err(ProfsError::Validation(msg)) => assert!(msg.contains("row 3"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }

        let garbage = "dim=2 classes=1 count=1\n1 0.5 abc\n";
        match Dataset::from_text(garbage) {
            Err(ProfsError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let d = gen_synthetic(&spec(2, 2, 0.5, Warp::None)).unwrap();
        d.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), d);
    }
}
