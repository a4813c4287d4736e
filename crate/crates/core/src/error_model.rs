//! Characterization campaign and the per-column linear error model
//! `Î_j = m_j I + c_j + N(0, σ_j)`.
//!
//! A campaign draws random drive vectors `V` and device resistance vectors
//! `R`, maps `R` onto one column with every other device at `R_OFF`, and
//! records ideal and solved currents. The same draws are probed on every
//! column so that column-to-column differences in the fit come from
//! position alone.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::circuit::{ColumnProbe, ConductanceGrid, CrossbarSolver, DriveVector};
use crate::error::{Error, Result};
use crate::rng;
use crate::tech::{CrossbarGeometry, Fingerprint, TechnologyProfile};

/// One random `(V, R)` pair shared by every column of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignDraw {
    pub drives: Vec<f64>,
    pub resistances: Vec<f64>,
    /// `Σ_i V_i / R_i`.
    pub ideal: f64,
}

/// Draw `draw` mapped onto column `column`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignSample {
    pub draw: usize,
    pub column: usize,
    pub ideal: f64,
    pub nonideal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub fingerprint: Fingerprint,
    pub seed: u64,
    pub draws: Vec<CampaignDraw>,
    /// Ordered by draw, then column.
    pub samples: Vec<CampaignSample>,
}

impl Campaign {
    pub fn provenance(&self) -> ModelProvenance {
        ModelProvenance {
            fingerprint: self.fingerprint.clone(),
            seed: self.seed,
            n_samples: self.draws.len(),
        }
    }

    pub fn fit(&self) -> Result<ColumnErrorModel> {
        fit_columns(&self.samples, self.provenance())
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = &CampaignSample> {
        self.samples.iter().filter(move |s| s.column == col)
    }

    /// `draw,column,ideal,nonideal` rows, the axes of an `Î` vs `I` scatter.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["draw", "column", "ideal", "nonideal"])?;
        for s in &self.samples {
            w.write_record([
                s.draw.to_string(),
                s.column.to_string(),
                s.ideal.to_string(),
                s.nonideal.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn draw_vectors(tech: &TechnologyProfile, geom: &CrossbarGeometry, seed: u64, index: usize) -> CampaignDraw {
    let mut r = rng::stream(seed, "campaign", &[index as u64]);
    let drives: Vec<f64> = (0..geom.rows).map(|_| r.random_range(0.0..=geom.v_max)).collect();
    let resistances: Vec<f64> = (0..geom.rows).map(|_| r.random_range(tech.r_on..=tech.r_off)).collect();
    let ideal = drives.iter().zip(&resistances).map(|(v, r)| v / r).sum();
    CampaignDraw {
        drives,
        resistances,
        ideal,
    }
}

/// Run the characterization campaign: `n_samples` draws, each probed on
/// every column against an all-`R_OFF` background.
pub fn run_campaign(tech: &TechnologyProfile, geom: &CrossbarGeometry, n_samples: usize, seed: u64) -> Result<Campaign> {
    let all: Vec<usize> = (0..geom.cols).collect();
    run_campaign_columns(tech, geom, n_samples, seed, &all)
}

/// [`run_campaign`] restricted to `columns`. Draws are identical to the full
/// campaign with the same seed.
pub fn run_campaign_columns(
    tech: &TechnologyProfile,
    geom: &CrossbarGeometry,
    n_samples: usize,
    seed: u64,
    columns: &[usize],
) -> Result<Campaign> {
    tech.validate()?;
    geom.validate()?;
    if n_samples == 0 {
        return Err(Error::Contract("campaign needs at least one sample".into()));
    }
    if let Some(&c) = columns.iter().find(|&&c| c >= geom.cols) {
        return Err(Error::Contract(format!("campaign column {c} outside {} columns", geom.cols)));
    }
    let probe = ColumnProbe::uniform(tech.g_off(), geom)?;
    let mut draws = Vec::with_capacity(n_samples);
    let mut samples = Vec::with_capacity(n_samples * columns.len());
    for index in 0..n_samples {
        let draw = draw_vectors(tech, geom, seed, index);
        let cells: Vec<f64> = draw.resistances.iter().map(|r| 1.0 / r).collect();
        for &column in columns {
            let nonideal = probe.column_current(column, &cells, &draw.drives)?;
            samples.push(CampaignSample {
                draw: index,
                column,
                ideal: draw.ideal,
                nonideal,
            });
        }
        draws.push(draw);
    }
    Ok(Campaign {
        fingerprint: Fingerprint::new(tech, geom),
        seed,
        draws,
        samples,
    })
}

/// Per-snippet outcome of [`verify_background_assumption_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundCheck {
    pub snippet: usize,
    /// Column with the largest deviation.
    pub worst_column: usize,
    pub max_deviation: f64,
}

/// Largest `|Î_full − Î_background| / Î_full` over snippets and columns,
/// where `Î_background` keeps only the probed column and sets every other
/// device to `R_OFF`.
pub fn verify_background_assumption(
    tech: &TechnologyProfile,
    geom: &CrossbarGeometry,
    snippets: &[ConductanceGrid],
    seed: u64,
) -> Result<f64> {
    let all: Vec<usize> = (0..geom.cols).collect();
    let checks = verify_background_assumption_detailed(tech, geom, snippets, &all, seed)?;
    Ok(checks.iter().map(|c| c.max_deviation).fold(0.0, f64::max))
}

pub fn verify_background_assumption_detailed(
    tech: &TechnologyProfile,
    geom: &CrossbarGeometry,
    snippets: &[ConductanceGrid],
    columns: &[usize],
    seed: u64,
) -> Result<Vec<BackgroundCheck>> {
    if snippets.is_empty() {
        return Err(Error::Contract("background check needs at least one snippet".into()));
    }
    if let Some(&c) = columns.iter().find(|&&c| c >= geom.cols) {
        return Err(Error::Contract(format!("probe column {c} outside {} columns", geom.cols)));
    }
    let probe = ColumnProbe::uniform(tech.g_off(), geom)?;
    let mut out = Vec::with_capacity(snippets.len());
    for (index, grid) in snippets.iter().enumerate() {
        if grid.rows() != geom.rows || grid.cols() != geom.cols {
            return Err(Error::Contract(format!(
                "snippet {index} is {}x{}, crossbar is {}x{}",
                grid.rows(),
                grid.cols(),
                geom.rows,
                geom.cols
            )));
        }
        let mut r = rng::stream(seed, "background", &[index as u64]);
        let v: Vec<f64> = (0..geom.rows).map(|_| r.random_range(0.0..=geom.v_max)).collect();
        let full = CrossbarSolver::new(grid, geom)?.solve(&DriveVector::new(v.clone())?)?;
        let mut worst = BackgroundCheck {
            snippet: index,
            worst_column: columns.first().copied().unwrap_or(0),
            max_deviation: 0.0,
        };
        for &col in columns {
            let cells: Vec<f64> = (0..geom.rows).map(|i| grid.get(i, col)).collect();
            let bg = probe.column_current(col, &cells, &v)?;
            let f = full.column_currents[col];
            let dev = if f > 0.0 { (f - bg).abs() / f } else { 0.0 };
            if dev > worst.max_deviation {
                worst.max_deviation = dev;
                worst.worst_column = col;
            }
        }
        out.push(worst);
    }
    Ok(out)
}

/// Ordinary least squares line with residual spread and standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Population standard deviation of the residuals.
    pub sigma: f64,
    pub se_slope: f64,
    pub se_intercept: f64,
    pub n: usize,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sxx > (scale * 1e-12).powi(2) * nf) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let sigma = (ssr / nf).sqrt();
    let s2 = if n > 2 { ssr / (nf - 2.0) } else { 0.0 };
    Some(LinearFit {
        slope,
        intercept,
        sigma,
        se_slope: (s2 / sxx).sqrt(),
        se_intercept: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        n,
    })
}

/// Where a model's parameters came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProvenance {
    pub fingerprint: Fingerprint,
    pub seed: u64,
    pub n_samples: usize,
}

/// Fitted `(m, c, σ)` per physical column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnErrorModel {
    pub provenance: ModelProvenance,
    pub m: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Fit each column independently by least squares of `Î` on `I`.
pub fn fit_columns(samples: &[CampaignSample], provenance: ModelProvenance) -> Result<ColumnErrorModel> {
    let cols = provenance.fingerprint.geometry.cols;
    let mut xs = vec![Vec::new(); cols];
    let mut ys = vec![Vec::new(); cols];
    for s in samples {
        if s.column >= cols {
            return Err(Error::Contract(format!("sample for column {} outside {cols} columns", s.column)));
        }
        xs[s.column].push(s.ideal);
        ys[s.column].push(s.nonideal);
    }
    let mut model = ColumnErrorModel {
        provenance,
        m: Vec::with_capacity(cols),
        c: Vec::with_capacity(cols),
        sigma: Vec::with_capacity(cols),
    };
    for col in 0..cols {
        let fit = fit_line(&xs[col], &ys[col]).ok_or_else(|| {
            Error::Numeric(format!(
                "column {col}: {} samples do not span distinct ideal currents, slope is undetermined",
                xs[col].len()
            ))
        })?;
        model.m.push(fit.slope);
        model.c.push(fit.intercept);
        model.sigma.push(fit.sigma);
    }
    Ok(model)
}

const MODEL_MAGIC: &str = "# xbar column error model v1";

impl ColumnErrorModel {
    /// `m = 1, c = 0, σ = 0` on every column.
    pub fn identity(fingerprint: Fingerprint) -> Self {
        let cols = fingerprint.geometry.cols;
        Self {
            provenance: ModelProvenance {
                fingerprint,
                seed: 0,
                n_samples: 0,
            },
            m: vec![1.0; cols],
            c: vec![0.0; cols],
            sigma: vec![0.0; cols],
        }
    }

    pub fn cols(&self) -> usize {
        self.m.len()
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.provenance.fingerprint
    }

    /// `m I + c + N(0, σ)` without clamping. Always consumes one normal draw.
    #[inline]
    pub fn sample_raw<R: Rng + ?Sized>(&self, i_ideal: f64, col: usize, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.m[col] * i_ideal + self.c[col] + self.sigma[col] * z
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let f = &self.provenance.fingerprint;
        writeln!(out, "{MODEL_MAGIC}")?;
        writeln!(out, "technology = {}", f.technology.name)?;
        writeln!(out, "r_on = {}", f.technology.r_on)?;
        writeln!(out, "r_off = {}", f.technology.r_off)?;
        writeln!(out, "rows = {}", f.geometry.rows)?;
        writeln!(out, "cols = {}", f.geometry.cols)?;
        writeln!(out, "r_line = {}", f.geometry.r_line)?;
        writeln!(out, "r_access = {}", f.geometry.r_access)?;
        writeln!(out, "v_max = {}", f.geometry.v_max)?;
        writeln!(out, "seed = {}", self.provenance.seed)?;
        writeln!(out, "n_samples = {}", self.provenance.n_samples)?;
        writeln!(out, "index,m,c,sigma")?;
        for i in 0..self.cols() {
            writeln!(out, "{i},{},{},{}", self.m[i], self.c[i], self.sigma[i])?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let bad = |d: String| Error::format("error model", d);
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(l)) if l.trim() == MODEL_MAGIC => {}
            _ => return Err(bad("missing header line".into())),
        }
        let mut keys = std::collections::HashMap::new();
        loop {
            let line = lines.next().ok_or_else(|| bad("missing column table".into()))??;
            let line = line.trim().to_string();
            if line == "index,m,c,sigma" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
            keys.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| keys.get(k).cloned().ok_or_else(|| bad(format!("missing key {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
        let technology = TechnologyProfile::new(get("technology")?, num("r_on")?, num("r_off")?)?;
        let geometry = CrossbarGeometry::new(
            int("rows")? as usize,
            int("cols")? as usize,
            num("r_line")?,
            num("r_access")?,
            num("v_max")?,
        )?;
        let cols = geometry.cols;
        let provenance = ModelProvenance {
            fingerprint: Fingerprint { technology, geometry },
            seed: int("seed")?,
            n_samples: int("n_samples")? as usize,
        };
        let mut model = ColumnErrorModel {
            provenance,
            m: Vec::with_capacity(cols),
            c: Vec::with_capacity(cols),
            sigma: Vec::with_capacity(cols),
        };
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {line:?}")));
            }
            let idx: usize = fields[0].parse().map_err(|e| bad(format!("index: {e}")))?;
            if idx != model.m.len() {
                return Err(bad(format!("column index {idx} out of order")));
            }
            let p = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            let sigma = p(fields[3])?;
            if !(sigma >= 0.0) {
                return Err(bad(format!("negative sigma on column {idx}")));
            }
            model.m.push(p(fields[1])?);
            model.c.push(p(fields[2])?);
            model.sigma.push(sigma);
        }
        if model.cols() != cols {
            return Err(bad(format!("{} column rows for a {cols}-column geometry", model.cols())));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

/// Apply the column model to an ideal current: `max(0, m I + c + N(0, σ))`.
/// Negative draws from the Gaussian tail are clamped to zero.
pub fn apply_error<R: Rng + ?Sized>(
    i_ideal: f64,
    col: usize,
    model: &ColumnErrorModel,
    active: &Fingerprint,
    rng: &mut R,
) -> Result<f64> {
    model.fingerprint().ensure_matches(active)?;
    if col >= model.cols() {
        return Err(Error::Contract(format!("column {col} outside {} modeled columns", model.cols())));
    }
    Ok(model.sample_raw(i_ideal, col, rng).max(0.0))
}
