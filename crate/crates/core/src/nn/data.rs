//! Labeled image datasets in a small CSV container.
//!
//! ```text
//! # xbar-dataset v1
//! # split=train count=1000 shape=1x8x8 classes=10
//! label,x0,x1,...
//! 3,0.0,0.25,...
//! ```

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::Architecture;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    /// Unsplit pool.
    Full,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
            SplitTag::Full => "full",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "validation" => Ok(SplitTag::Validation),
            "test" => Ok(SplitTag::Test),
            "full" => Ok(SplitTag::Full),
            other => Err(Error::format("dataset", format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub split: SplitTag,
    /// Channels, height, width.
    pub shape: [usize; 3],
    pub classes: usize,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

const MAGIC: &str = "# xbar-dataset v1";
static DIGITS: &str = include_str!("../../data/digits.csv");

impl LabeledDataset {
    pub fn new(split: SplitTag, shape: [usize; 3], classes: usize, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let d = Self {
            split,
            shape,
            classes,
            inputs,
            labels,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::Contract(format!(
                "{} inputs but {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        let len = self.input_len();
        for (i, (x, &y)) in self.inputs.iter().zip(&self.labels).enumerate() {
            if x.len() != len {
                return Err(Error::Contract(format!("sample {i} has {} values, shape needs {len}", x.len())));
            }
            if y >= self.classes {
                return Err(Error::Contract(format!("sample {i} has label {y} outside {} classes", self.classes)));
            }
            if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("sample {i} has value {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// The bundled 8×8 handwritten digits (1797 samples, 10 classes, pixel values in [0, 1]).
    pub fn digits() -> Self {
        Self::read(DIGITS.as_bytes()).expect("bundled digits dataset is well formed")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn check_compatible(&self, arch: &Architecture) -> Result<()> {
        if self.input_len() != arch.input_len() || self.classes != arch.classes() {
            return Err(Error::Contract(format!(
                "dataset has {} inputs and {} classes, network expects {} and {}",
                self.input_len(),
                self.classes,
                arch.input_len(),
                arch.classes()
            )));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize], split: SplitTag) -> Self {
        Self {
            split,
            shape: self.shape,
            classes: self.classes,
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Shuffle with the `"split"` stream of `seed`, then cut into train,
    /// validation and test (the remainder).
    pub fn split(&self, seed: u64, train: usize, validation: usize) -> Result<(Self, Self, Self)> {
        if train == 0 || validation == 0 || train + validation >= self.len() {
            return Err(Error::Config(format!(
                "cannot cut {train} train and {validation} validation samples from {} and keep a test split",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, "split", &[]));
        Ok((
            self.subset(&order[..train], SplitTag::Train),
            self.subset(&order[train..train + validation], SplitTag::Validation),
            self.subset(&order[train + validation..], SplitTag::Test),
        ))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let [c, h, w] = self.shape;
        writeln!(out, "{MAGIC}")?;
        writeln!(
            out,
            "# split={} count={} shape={c}x{h}x{w} classes={}",
            self.split,
            self.len(),
            self.classes
        )?;
        let mut wr = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.input_len()).map(|i| format!("x{i}")));
        wr.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.labels) {
            let mut rec = vec![y.to_string()];
            rec.extend(x.iter().map(f64::to_string));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let bad = |d: String| Error::format("dataset", d);
        let mut line = String::new();
        input.read_line(&mut line)?;
        if line.trim() != MAGIC {
            return Err(bad(format!("expected {MAGIC:?} on the first line")));
        }
        line.clear();
        input.read_line(&mut line)?;
        let meta = line
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| bad("missing metadata line".into()))?;
        let (mut split, mut count, mut shape, mut classes) = (None, None, None, None);
        for field in meta.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("metadata field {field:?} is not key=value")))?;
            match k {
                "split" => split = Some(v.parse::<SplitTag>()?),
                "count" => count = Some(v.parse::<usize>().map_err(|e| bad(format!("count: {e}")))?),
                "classes" => classes = Some(v.parse::<usize>().map_err(|e| bad(format!("classes: {e}")))?),
                "shape" => {
                    let dims: Vec<usize> = v
                        .split('x')
                        .map(|d| d.parse().map_err(|e| bad(format!("shape: {e}"))))
                        .collect::<Result<_>>()?;
                    let dims: [usize; 3] = dims
                        .try_into()
                        .map_err(|_| bad(format!("shape {v:?} is not CxHxW")))?;
                    shape = Some(dims);
                }
                other => return Err(bad(format!("unknown metadata key {other:?}"))),
            }
        }
        let missing = |k: &str| bad(format!("metadata lacks {k}"));
        let (split, count, shape, classes) = (
            split.ok_or_else(|| missing("split"))?,
            count.ok_or_else(|| missing("count"))?,
            shape.ok_or_else(|| missing("shape"))?,
            classes.ok_or_else(|| missing("classes"))?,
        );
        let width = shape.iter().product::<usize>() + 1;
        let mut rd = csv::Reader::from_reader(input);
        if rd.headers()?.len() != width {
            return Err(bad(format!("header has {} columns, shape needs {width}", rd.headers()?.len())));
        }
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != width {
                return Err(bad(format!("row {} has {} columns, expected {width}", labels.len(), rec.len())));
            }
            labels.push(rec[0].parse().map_err(|e| bad(format!("label: {e}")))?);
            inputs.push(
                rec.iter()
                    .skip(1)
                    .map(|v| v.parse::<f64>().map_err(|e| bad(format!("value {v:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if labels.len() != count {
            return Err(bad(format!("header promises {count} rows, found {}", labels.len())));
        }
        Self::new(split, shape, classes, inputs, labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}
