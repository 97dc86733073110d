//! Latent embedding datasets: the text file format, validation, and
//! synthetic generators.
//!
//! File grammar (UTF-8, one record per line):
//!
//! ```text
//! file    := section+
//! section := header row*
//! header  := "K=" uint " n=" uint " split=" ("train" | "test")
//! row     := label (" " float){K}
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Binary files use
//! labels `-1`/`1`; multiclass files use any integer class id. Floats are
//! written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Label;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedDataset {
    pub name: String,
    pub dim: usize,
    pub train: Vec<(Vec<f64>, Label)>,
    pub test: Vec<(Vec<f64>, Label)>,
}

impl EmbeddedDataset {
    pub fn new(
        name: impl Into<String>,
        train: Vec<(Vec<f64>, Label)>,
        test: Vec<(Vec<f64>, Label)>,
    ) -> Result<Self> {
        let dim = train
            .first()
            .or(test.first())
            .map(|(z, _)| z.len())
            .ok_or_else(|| Error::InvalidData("dataset is empty".into()))?;
        let ds = Self {
            name: name.into(),
            dim,
            train,
            test,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidData("dimension must be at least 1".into()));
        }
        for (split, rows) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            for (i, (z, _)) in rows.iter().enumerate() {
                if z.len() != self.dim {
                    return Err(Error::InvalidData(format!(
                        "{} row {i}: dimension {} != {}",
                        split.as_str(),
                        z.len(),
                        self.dim
                    )));
                }
                if !z.iter().all(|x| x.is_finite()) {
                    return Err(Error::InvalidData(format!("{} row {i}: non-finite value", split.as_str())));
                }
            }
            let has = |l: Label| rows.iter().any(|(_, y)| *y == l);
            if !has(Label::Positive) || !has(Label::Negative) {
                return Err(Error::InvalidData(format!(
                    "{} split must contain both classes (single-class data)",
                    split.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn train_points(&self) -> Vec<&[f64]> {
        self.train.iter().map(|(z, _)| z.as_slice()).collect()
    }

    /// Canonical text form: the train section followed by the test section.
    pub fn to_embedding_string(&self) -> String {
        let mut out = String::new();
        write_section(&mut out, self.dim, Split::Train, self.train.iter().map(|(z, y)| (i64::from(*y), z)));
        write_section(&mut out, self.dim, Split::Test, self.test.iter().map(|(z, y)| (i64::from(*y), z)));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_embedding_string())?;
        Ok(())
    }
}

fn write_section<'a>(out: &mut String, dim: usize, split: Split, rows: impl ExactSizeIterator<Item = (i64, &'a Vec<f64>)>) {
    let _ = writeln!(out, "K={dim} n={} split={}", rows.len(), split.as_str());
    for (label, z) in rows {
        let _ = write!(out, "{label}");
        for x in z {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
}

struct Section {
    split: Split,
    rows: Vec<(Vec<f64>, i64)>,
}

fn parse_sections(path: &Path, text: &str) -> Result<(usize, Vec<Section>)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut dim = None;
    let mut sections: Vec<Section> = Vec::new();
    let mut expected = 0usize;
    let mut header_line = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("K=") {
            if let Some(s) = sections.last() {
                if s.rows.len() != expected {
                    return Err(err(header_line, format!("header declares n={expected} but section has {} rows", s.rows.len())));
                }
            }
            let (k, n, split) = parse_header(line).map_err(|m| err(lineno, m))?;
            if *dim.get_or_insert(k) != k {
                return Err(err(lineno, format!("K={k} differs from earlier K={}", dim.unwrap_or(k))));
            }
            if sections.iter().any(|s| s.split == split) {
                return Err(err(lineno, format!("duplicate split={}", split.as_str())));
            }
            expected = n;
            header_line = lineno;
            // n comes from the file; rows are counted as they arrive.
            sections.push(Section { split, rows: Vec::with_capacity(n.min(1 << 16)) });
            continue;
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| err(lineno, "row before header".into()))?;
        let k = dim.unwrap_or(0);
        let mut fields = line.split_ascii_whitespace();
        let label_field = fields.next().ok_or_else(|| err(lineno, "empty row".into()))?;
        let label: i64 = label_field
            .strip_prefix('+')
            .unwrap_or(label_field)
            .parse()
            .map_err(|_| err(lineno, format!("bad label {label_field:?}")))?;
        let mut z = Vec::with_capacity(k);
        for f in fields {
            let x: f64 = f.parse().map_err(|_| err(lineno, format!("bad float {f:?}")))?;
            if !x.is_finite() {
                return Err(err(lineno, format!("non-finite value {f:?}")));
            }
            z.push(x);
        }
        if z.len() != k {
            return Err(err(lineno, format!("expected {k} coordinates, found {}", z.len())));
        }
        if section.rows.len() == expected {
            return Err(err(lineno, format!("more rows than declared n={expected}")));
        }
        section.rows.push((z, label));
    }
    if let Some(s) = sections.last() {
        if s.rows.len() != expected {
            return Err(err(header_line, format!("header declares n={expected} but section has {} rows", s.rows.len())));
        }
    }
    let dim = dim.ok_or_else(|| err(1, "missing header".into()))?;
    Ok((dim, sections))
}

fn parse_header(line: &str) -> std::result::Result<(usize, usize, Split), String> {
    let mut k = None;
    let mut n = None;
    let mut split = None;
    for field in line.split_ascii_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| format!("malformed header field {field:?}"))?;
        match key {
            "K" => k = Some(value.parse::<usize>().map_err(|_| format!("bad K {value:?}"))?),
            "n" => n = Some(value.parse::<usize>().map_err(|_| format!("bad n {value:?}"))?),
            "split" => {
                split = Some(match value {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    _ => return Err(format!("bad split {value:?}")),
                })
            }
            _ => return Err(format!("unknown header field {key:?}")),
        }
    }
    match (k, n, split) {
        (Some(k), Some(n), Some(s)) if k > 0 => Ok((k, n, s)),
        (Some(0), _, _) => Err("K must be positive".into()),
        _ => Err("header must contain K=, n= and split=".into()),
    }
}

fn binary_rows(path: &Path, rows: Vec<(Vec<f64>, i64)>) -> Result<Vec<(Vec<f64>, Label)>> {
    rows.into_iter()
        .map(|(z, y)| {
            Label::try_from(y)
                .map(|l| (z, l))
                .map_err(|_| Error::InvalidData(format!("{}: label {y} outside {{-1, +1}}", path.display())))
        })
        .collect()
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads a file holding both a train and a test section.
pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddedDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (_, sections) = parse_sections(path, &text)?;
    let mut train = None;
    let mut test = None;
    for s in sections {
        let rows = binary_rows(path, s.rows)?;
        match s.split {
            Split::Train => train = Some(rows),
            Split::Test => test = Some(rows),
        }
    }
    match (train, test) {
        (Some(train), Some(test)) => EmbeddedDataset::new(dataset_name(path), train, test),
        _ => Err(Error::InvalidData(format!("{}: needs both split=train and split=test sections", path.display()))),
    }
}

/// Loads a dataset split across two single-section files.
pub fn load_embedding_pair(train_path: impl AsRef<Path>, test_path: impl AsRef<Path>) -> Result<EmbeddedDataset> {
    let mut parts = Vec::new();
    for (path, want) in [(train_path.as_ref(), Split::Train), (test_path.as_ref(), Split::Test)] {
        let text = fs::read_to_string(path)?;
        let (_, sections) = parse_sections(path, &text)?;
        match sections.as_slice() {
            [s] if s.split == want => {}
            _ => {
                return Err(Error::InvalidData(format!(
                    "{}: expected exactly one split={} section",
                    path.display(),
                    want.as_str()
                )))
            }
        }
        let section = sections.into_iter().next().expect("one section");
        parts.push(binary_rows(path, section.rows)?);
    }
    let test = parts.pop().expect("two parts");
    let train = parts.pop().expect("two parts");
    EmbeddedDataset::new(dataset_name(train_path.as_ref()), train, test)
}

/// Classes drawn from `N(±(separation/2)·e₁, I)`, balanced, shuffled.
pub fn synth_two_gaussians(
    dim: usize,
    n_train: usize,
    n_test: usize,
    separation: f64,
    seed: u64,
) -> Result<EmbeddedDataset> {
    if dim == 0 || n_train < 2 || n_test < 2 || !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "synth_two_gaussians needs dim ≥ 1, ≥ 2 samples per split and finite separation ≥ 0 (got dim={dim}, n_train={n_train}, n_test={n_test}, separation={separation})"
        )));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut draw = |n: usize| {
        let mut rows: Vec<(Vec<f64>, Label)> = (0..n)
            .map(|i| {
                let y = if i % 2 == 0 { Label::Positive } else { Label::Negative };
                let mut z: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                z[0] += y.value() * separation / 2.0;
                (z, y)
            })
            .collect();
        rng.shuffle(&mut rows);
        rows
    };
    let train = draw(n_train);
    let test = draw(n_test);
    EmbeddedDataset::new(format!("gauss-k{dim}-sep{separation}-seed{seed}"), train, test)
}

/// Dataset with arbitrary integer class ids, for one-vs-one pair tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassDataset {
    pub name: String,
    pub dim: usize,
    pub train: Vec<(Vec<f64>, i64)>,
    pub test: Vec<(Vec<f64>, i64)>,
}

impl MulticlassDataset {
    pub fn classes(&self) -> Vec<i64> {
        let mut c: Vec<i64> = self.train.iter().map(|(_, y)| *y).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// All unordered class pairs `(a, b)` with `a < b`.
    pub fn class_pairs(&self) -> Vec<(i64, i64)> {
        let c = self.classes();
        let mut pairs = Vec::new();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                pairs.push((c[i], c[j]));
            }
        }
        pairs
    }

    /// Binary task `negative` (−1) vs `positive` (+1).
    pub fn binary_pair(&self, negative: i64, positive: i64) -> Result<EmbeddedDataset> {
        let pick = |rows: &[(Vec<f64>, i64)]| -> Vec<(Vec<f64>, Label)> {
            rows.iter()
                .filter_map(|(z, y)| {
                    if *y == negative {
                        Some((z.clone(), Label::Negative))
                    } else if *y == positive {
                        Some((z.clone(), Label::Positive))
                    } else {
                        None
                    }
                })
                .collect()
        };
        EmbeddedDataset::new(
            format!("{}-{negative}v{positive}", self.name),
            pick(&self.train),
            pick(&self.test),
        )
    }

    pub fn to_embedding_string(&self) -> String {
        let mut out = String::new();
        write_section(&mut out, self.dim, Split::Train, self.train.iter().map(|(z, y)| (*y, z)));
        write_section(&mut out, self.dim, Split::Test, self.test.iter().map(|(z, y)| (*y, z)));
        out
    }
}

pub fn load_multiclass_file(path: impl AsRef<Path>) -> Result<MulticlassDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (dim, sections) = parse_sections(path, &text)?;
    let mut train = None;
    let mut test = None;
    for s in sections {
        match s.split {
            Split::Train => train = Some(s.rows),
            Split::Test => test = Some(s.rows),
        }
    }
    match (train, test) {
        (Some(train), Some(test)) => Ok(MulticlassDataset {
            name: dataset_name(path),
            dim,
            train,
            test,
        }),
        _ => Err(Error::InvalidData(format!("{}: needs both split=train and split=test sections", path.display()))),
    }
}

/// `n_classes` isotropic Gaussians with means `(separation/√2)·e_c`, so
/// every pair of class means is `separation` apart. Requires
/// `dim ≥ n_classes`.
pub fn synth_gaussian_classes(
    dim: usize,
    n_classes: usize,
    n_train_per_class: usize,
    n_test_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<MulticlassDataset> {
    if n_classes < 2 || dim < n_classes || n_train_per_class == 0 || n_test_per_class == 0 {
        return Err(Error::InvalidArgument(format!(
            "synth_gaussian_classes needs 2 ≤ n_classes ≤ dim and nonempty splits (dim={dim}, n_classes={n_classes})"
        )));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let offset = separation / std::f64::consts::SQRT_2;
    let mut draw = |per_class: usize| {
        let mut rows = Vec::with_capacity(per_class * n_classes);
        for i in 0..per_class * n_classes {
            let c = i % n_classes;
            let mut z: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            z[c] += offset;
            rows.push((z, c as i64));
        }
        rng.shuffle(&mut rows);
        rows
    };
    let train = draw(n_train_per_class);
    let test = draw(n_test_per_class);
    Ok(MulticlassDataset {
        name: format!("gauss{n_classes}-k{dim}-sep{separation}-seed{seed}"),
        dim,
        train,
        test,
    })
}
