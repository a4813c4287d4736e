use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use xbar_core::error_model::{run_campaign, ColumnErrorModel};
use xbar_core::inference::{EvalReport, InferenceEngine, InferenceMode, MappedNetwork};
use xbar_core::mapping::{map_network, ColumnPermutation, TileSet};
use xbar_core::nn::{self, clean_accuracy, Architecture, LabeledDataset, NetworkParams, SplitTag};
use xbar_core::remap::{drs, srs, RankAssignment, Strategy};
use xbar_core::rng::derive_seed;
use xbar_core::tech::{ExperimentConfig, TechnologyProfile};
use xbar_core::{Error, Result};

use crate::manifest::RunManifest;
use crate::ModeArg;

pub const MODEL: &str = "model.txt";
pub const CAMPAIGN: &str = "campaign.csv";
pub const PARAMS: &str = "params.bin";
pub const LOSS: &str = "loss.csv";
pub const TILES: &str = "tiles.json";
pub const DRS_TRACE: &str = "drs_trace.csv";
pub const REPORT: &str = "report.csv";
pub const REPORT_RUNS: &str = "report_runs.csv";

pub fn split_file(tag: SplitTag) -> String {
    format!("split_{tag}.csv")
}

pub fn ranks_file(s: Strategy) -> String {
    format!("ranks_{s}.txt")
}

pub fn eval_file(s: Strategy, mode: &str) -> String {
    format!("eval_{s}_{mode}.csv")
}

fn mode_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Ideal => "ideal",
        ModeArg::Statistical => "statistical",
        ModeArg::FullCircuit => "full-circuit",
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub struct Context {
    config: ExperimentConfig,
    out: PathBuf,
    manifest: RunManifest,
    record: Option<(String, Vec<String>, Vec<String>)>,
}

impl Context {
    pub fn open(config: Option<&Path>, seed: Option<u64>, technology: Option<&str>, out: &Path) -> Result<Self> {
        let mut cfg = match config {
            Some(p) if !p.exists() => return Err(Error::Config(format!("config file {} not found", p.display()))),
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(name) = technology {
            cfg.technology = TechnologyProfile::by_name(name).ok_or_else(|| {
                Error::Config(format!("unknown technology {name:?}; expected TaOx, PCM or Ag/Si"))
            })?;
        }
        std::fs::create_dir_all(out)?;
        let manifest = RunManifest::load_or_new(out, &cfg)?;
        Ok(Self {
            config: cfg,
            out: out.to_path_buf(),
            manifest,
            record: None,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some((cmd, inputs, outputs)) = self.record.take() {
            self.manifest.record(&cmd, inputs, outputs);
        }
        self.manifest.save(&self.out)
    }

    fn done(&mut self, cmd: &str, inputs: &[&str], outputs: Vec<String>) {
        self.record = Some((
            cmd.to_string(),
            inputs.iter().map(|s| s.to_string()).collect(),
            outputs,
        ));
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, step: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                path: p,
                step: step.to_string(),
            })
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn split(&self, tag: SplitTag) -> Result<LabeledDataset> {
        LabeledDataset::load(&self.require(&split_file(tag), "xbar train")?)
    }

    fn params(&self) -> Result<NetworkParams> {
        nn::io::load(&self.require(PARAMS, "xbar train")?)
    }

    fn model(&self) -> Result<ColumnErrorModel> {
        ColumnErrorModel::load(&self.require(MODEL, "xbar fit")?)
    }

    fn mapped(&self) -> Result<MappedNetwork> {
        let params = self.params()?;
        let file = File::open(self.require(TILES, "xbar map")?)?;
        let tiles: Vec<TileSet> = serde_json::from_reader(std::io::BufReader::new(file))?;
        MappedNetwork::new(params, tiles)
    }

    pub fn fit(&mut self) -> Result<()> {
        let cfg = &self.config;
        log::info!(
            "campaign: {} on {}x{}, {} samples",
            cfg.technology.name,
            cfg.geometry.rows,
            cfg.geometry.cols,
            cfg.campaign.samples
        );
        let campaign = run_campaign(&cfg.technology, &cfg.geometry, cfg.campaign.samples, cfg.seed)?;
        let model = campaign.fit()?;
        model.save(&self.path(MODEL))?;
        campaign.write_csv(self.create(CAMPAIGN)?)?;
        log::info!(
            "fitted m {:.4} (first column) .. {:.4} (last column)",
            model.m[0],
            model.m[model.cols() - 1]
        );
        self.done("fit", &[], vec![MODEL.into(), CAMPAIGN.into()]);
        Ok(())
    }

    pub fn train(&mut self) -> Result<()> {
        let cfg = &self.config;
        let data = LabeledDataset::digits();
        let (train, val, test) = data.split(cfg.seed, cfg.training.train_samples, cfg.training.validation_samples)?;
        log::info!(
            "training on {} samples ({} validation, {} test), {} epochs",
            train.len(),
            val.len(),
            test.len(),
            cfg.training.epochs
        );
        let init = NetworkParams::init(Architecture::desk_cnn(data.classes), cfg.seed);
        let (params, report) = nn::train(init, &train, &cfg.training, cfg.seed)?;
        nn::io::save(&params, &self.path(PARAMS))?;
        let mut w = csv::Writer::from_writer(self.create(LOSS)?);
        w.write_record(["epoch", "mean_loss", "train_accuracy"])?;
        for e in &report.epochs {
            w.write_record([e.epoch.to_string(), e.mean_loss.to_string(), e.train_accuracy.to_string()])?;
        }
        w.flush()?;
        let mut outputs = vec![PARAMS.to_string(), LOSS.to_string()];
        for d in [&train, &val, &test] {
            let name = split_file(d.split);
            d.save(&self.path(&name))?;
            outputs.push(name);
        }
        log::info!(
            "train accuracy {:.4}, clean test accuracy {:.4}",
            report.final_train_accuracy,
            clean_accuracy(&params, &test)?
        );
        self.done("train", &[], outputs);
        Ok(())
    }

    pub fn map(&mut self) -> Result<()> {
        let params = self.params()?;
        let tiles = map_network(&params, &self.config.geometry, &self.config.technology)?;
        for t in &tiles {
            let (nr, nc) = t.grid();
            log::info!("layer {}: {}x{} logical, {nr}x{nc} tiles", t.layer, t.logical_rows(), t.logical_cols());
        }
        serde_json::to_writer(self.create(TILES)?, &tiles)?;
        self.done("map", &[PARAMS], vec![TILES.into()]);
        Ok(())
    }

    pub fn remap(&mut self, strategy: Strategy) -> Result<()> {
        let net = self.mapped()?;
        let mut inputs = vec![PARAMS, TILES];
        let mut outputs = vec![ranks_file(strategy)];
        let train_name = split_file(SplitTag::Train);
        let val_name = split_file(SplitTag::Validation);
        let rank = match strategy {
            Strategy::Naive => RankAssignment::naive(&net.params),
            Strategy::Srs => {
                inputs.push(&train_name);
                srs(&net.params, &self.split(SplitTag::Train)?)?
            }
            Strategy::Drs => {
                inputs.extend([MODEL, &train_name, &val_name]);
                let model = self.model()?;
                let outcome = drs(
                    &net,
                    &self.split(SplitTag::Train)?,
                    &self.split(SplitTag::Validation)?,
                    self.config.training.drs_batch_size,
                    &model,
                    derive_seed(self.config.seed, "drs-validation", &[]),
                )?;
                outcome.write_trace_csv(self.create(DRS_TRACE)?)?;
                outputs.push(DRS_TRACE.into());
                log::info!(
                    "drs: {} iterations, kept iteration {:?} (validation accuracy {:.4}), {} column writes",
                    outcome.trace.len(),
                    outcome.best.iteration,
                    outcome.best.validation_accuracy.unwrap_or(f64::NAN),
                    outcome.total_writes()
                );
                outcome.best
            }
        };
        rank.save(&self.path(&ranks_file(strategy)))?;
        let moved: usize = rank
            .layers
            .iter()
            .map(|p| p.moved_columns(&ColumnPermutation::identity(p.len())))
            .sum();
        log::info!("{strategy}: {moved} columns moved from their naive position");
        let cmd = format!("remap-{strategy}");
        self.done(&cmd, &inputs, outputs);
        Ok(())
    }

    pub fn eval(&mut self, mode: ModeArg, strategy: Strategy, noise_seeds: usize) -> Result<()> {
        let net = self.mapped()?;
        let test = self.split(SplitTag::Test)?;
        let test_name = split_file(SplitTag::Test);
        let ranks = ranks_file(strategy);
        let mut inputs = vec![PARAMS, TILES, test_name.as_str()];
        let rank = if strategy == Strategy::Naive && !self.path(&ranks).exists() {
            RankAssignment::naive(&net.params)
        } else {
            inputs.push(&ranks);
            RankAssignment::load(&self.require(&ranks, &format!("xbar remap --strategy {strategy}"))?)?
        };
        let net = net.with_permutations(&rank.layers)?;
        let name = mode_name(mode);
        let report = |mode: InferenceMode, seed: u64| -> Result<EvalReport> {
            let (accuracy, layer_stats) = InferenceEngine::new(&net, mode)?.evaluate(&test)?;
            log::info!("{strategy} {name} seed {seed}: accuracy {accuracy:.4}");
            Ok(EvalReport {
                strategy: strategy.to_string(),
                mode: name.to_string(),
                technology: self.config.technology.name.clone(),
                seed,
                accuracy,
                layer_stats,
            })
        };
        let reports = match mode {
            ModeArg::Ideal => vec![report(InferenceMode::Ideal, self.config.seed)?],
            ModeArg::FullCircuit => vec![report(InferenceMode::FullCircuit, self.config.seed)?],
            ModeArg::Statistical => {
                if noise_seeds == 0 {
                    return Err(Error::Config("--noise-seeds must be >= 1".into()));
                }
                inputs.push(MODEL);
                let model = self.model()?;
                (0..noise_seeds as u64)
                    .map(|k| {
                        let seed = derive_seed(self.config.seed, "eval-noise", &[k]);
                        report(
                            InferenceMode::Statistical {
                                model: &model,
                                noise_seed: seed,
                            },
                            seed,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
        log::info!("{strategy} {name}: median accuracy {:.4} over {} runs", median(&acc), acc.len());
        let file = eval_file(strategy, name);
        EvalReport::write_csv(&reports, self.create(&file)?)?;
        let cmd = format!("eval-{strategy}-{name}");
        self.done(&cmd, &inputs, vec![file]);
        Ok(())
    }

    fn read_eval(&self, strategy: Strategy) -> Result<Vec<(u64, f64)>> {
        let name = eval_file(strategy, "statistical");
        let path = self.require(&name, &format!("xbar eval --strategy {strategy} --mode statistical"))?;
        let mut r = csv::Reader::from_path(&path)?;
        let headers = r.headers()?.clone();
        let col = |key: &str| {
            headers.iter().position(|h| h == key).ok_or_else(|| Error::Format {
                what: "eval report",
                detail: format!("{}: no {key} column", path.display()),
            })
        };
        let (seed_col, acc_col) = (col("seed")?, col("accuracy")?);
        let parse_err = |e: std::num::ParseFloatError| Error::Format {
            what: "eval report",
            detail: format!("{}: {e}", path.display()),
        };
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let seed = rec[seed_col].parse::<u64>().map_err(|e| Error::Format {
                what: "eval report",
                detail: format!("{}: {e}", path.display()),
            })?;
            out.push((seed, rec[acc_col].parse::<f64>().map_err(parse_err)?));
        }
        if out.is_empty() {
            return Err(Error::Format {
                what: "eval report",
                detail: format!("{} has no runs", path.display()),
            });
        }
        Ok(out)
    }

    pub fn report(&mut self) -> Result<()> {
        let params = self.params()?;
        let test = self.split(SplitTag::Test)?;
        let clean = clean_accuracy(&params, &test)?;
        let mut rows: Vec<(&str, Vec<(u64, f64)>)> = vec![("baseline-clean", vec![(self.config.seed, clean)])];
        let mut inputs = vec![PARAMS.to_string(), split_file(SplitTag::Test)];
        for (variant, s) in [("naive-noisy", Strategy::Naive), ("srs", Strategy::Srs), ("drs", Strategy::Drs)] {
            rows.push((variant, self.read_eval(s)?));
            inputs.push(eval_file(s, "statistical"));
        }
        let mut w = csv::Writer::from_writer(self.create(REPORT)?);
        w.write_record(["variant", "runs", "median_accuracy", "min_accuracy", "max_accuracy"])?;
        let mut runs = csv::Writer::from_writer(self.create(REPORT_RUNS)?);
        runs.write_record(["variant", "seed", "accuracy"])?;
        for (variant, values) in &rows {
            let acc: Vec<f64> = values.iter().map(|v| v.1).collect();
            let med = median(&acc);
            let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
            let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            w.write_record([
                variant.to_string(),
                acc.len().to_string(),
                med.to_string(),
                min.to_string(),
                max.to_string(),
            ])?;
            for (seed, a) in values {
                runs.write_record([variant.to_string(), seed.to_string(), a.to_string()])?;
            }
            log::info!("{variant:>15}: median {med:.4} over {} runs", acc.len());
        }
        w.flush()?;
        runs.flush()?;
        let inputs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        self.done("report", &inputs, vec![REPORT.into(), REPORT_RUNS.into()]);
        Ok(())
    }

    pub fn dump(&mut self, layer: usize) -> Result<()> {
        let net = self.mapped()?;
        let Some(t) = net.tiles.get(layer) else {
            return Err(Error::Config(format!(
                "--layer {layer} out of range; the network has {} layers",
                net.tiles.len()
            )));
        };
        let name = format!("tiles_layer{layer}.csv");
        t.write_csv(self.create(&name)?)?;
        log::info!("wrote {}", self.path(&name).display());
        self.done(&format!("dump-{layer}"), &[PARAMS, TILES], vec![name]);
        Ok(())
    }
}
