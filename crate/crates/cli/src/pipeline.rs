//! Pipeline stages over a run directory.
//!
//! Layout: `data/` (synthetic scenes, unless `data_dir` points elsewhere),
//! `tiles/`, `labels/`, `graphs/`, `features/`, `model/`, `preds/`,
//! `eval/`, and `manifest.csv`. A stage is skipped when the hash of its
//! inputs and of its recorded outputs both match the manifest, so editing
//! any upstream file reruns everything that depends on it.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sgdcn_core::deepergcn::{self, Adjacency, Checkpoint, GcnModel, GraphSample};
use sgdcn_core::feature_selection::{f1_curve, rfe_rank, write_f1_csv, write_ranking_csv};
use sgdcn_core::features::{assemble_matrix, read_column_list, write_column_list, FeatureMatrix, FeatureWarnings, Normalizer};
use sgdcn_core::metrics::{confusion, otsu_baseline, Evaluation, MetricsReport, OilCounts};
use sgdcn_core::raster_io::{lee_filter, load_grid, read_mask, sidecar_mask_path, tile_grid, write_f32raw, write_mask, RasterFormat, RasterGrid};
use sgdcn_core::region_graph::{build_graph, label_nodes, rasterize_prediction, write_edge_list, write_node_csv, NodeLabeling};
use sgdcn_core::superpixel::{segment, LabelMap};
use sgdcn_core::synth::{make_dataset, read_manifest, write_dataset, Split};

use crate::cache::{hash_files, RunManifest, StageRecord};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const STAGES: [&str; 8] = ["synth", "preprocess", "segment", "features", "select", "train", "predict", "eval"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Cached,
}

/// One tile of the preprocessed dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileInfo {
    pub name: String,
    pub scene: String,
    pub split: Split,
    pub has_oil: bool,
    pub origin: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub gcn: Evaluation,
    pub otsu: Evaluation,
}

impl EvalSummary {
    pub fn gcn_report(&self) -> MetricsReport {
        self.gcn.overall()
    }

    pub fn otsu_report(&self) -> MetricsReport {
        self.otsu.overall()
    }
}

pub struct Run {
    pub config: PipelineConfig,
    pub dir: PathBuf,
    pool: rayon::ThreadPool,
    manifest: RunManifest,
    verbose: bool,
}

fn rel(parts: &[&str]) -> PathBuf {
    parts.iter().collect()
}

impl Run {
    /// Opens or creates a run directory. A directory created under a
    /// different configuration is refused.
    pub fn open(mut config: PipelineConfig, dir: &Path) -> CliResult<Run> {
        config.validate()?;
        if let Some(d) = &config.data_dir {
            config.data_dir = Some(std::path::absolute(d)?);
        }
        fs::create_dir_all(dir)?;
        let mut manifest = RunManifest::read(dir)?;
        let hash = config.hash();
        match &manifest.config_hash {
            Some(found) if *found != hash => {
                return Err(CliError::ConfigMismatch {
                    run_dir: dir.display().to_string(),
                    expected: hash,
                    found: found.clone(),
                })
            }
            Some(_) => {}
            None => {
                manifest.config_hash = Some(hash);
                manifest.write(dir)?;
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?;
        Ok(Run {
            config,
            dir: dir.to_path_buf(),
            pool,
            manifest,
            verbose: true,
        })
    }

    pub fn quiet(mut self) -> Self {
        self.verbose = false;
        self
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        match &self.config.data_dir {
            Some(d) => d.clone(),
            None => self.dir.join("data"),
        }
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }

    /// Run-relative form of a path under the run directory; others stay
    /// absolute.
    fn record(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.dir).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
    }

    fn outputs_of(&self, stage: &str) -> CliResult<Vec<PathBuf>> {
        self.manifest
            .stages
            .get(stage)
            .map(|r| r.outputs.clone())
            .ok_or_else(|| CliError::MissingInput(format!("stage '{stage}' has not been run in {}", self.dir.display())))
    }

    /// Runs `body` unless the manifest shows identical inputs and intact
    /// outputs. `body` returns the files it wrote.
    fn stage(&mut self, name: &str, inputs: &[PathBuf], body: impl FnOnce(&Run) -> CliResult<Vec<PathBuf>> + Send) -> CliResult<StageStatus> {
        let input_hash = hash_files(&self.dir, inputs)?;
        let config_hash = self.config.hash();
        if let Some(rec) = self.manifest.stages.get(name) {
            if rec.input_hash == input_hash && rec.config_hash == config_hash {
                if let Ok(h) = hash_files(&self.dir, &rec.outputs) {
                    if h == rec.output_hash {
                        self.log(format!("{name}: up to date"));
                        return Ok(StageStatus::Cached);
                    }
                }
            }
        }
        let mut outputs = self.pool.install(|| body(self))?;
        outputs.sort();
        let output_hash = hash_files(&self.dir, &outputs)?;
        self.manifest.stages.insert(
            name.to_string(),
            StageRecord {
                config_hash,
                input_hash,
                output_hash,
                outputs,
            },
        );
        self.manifest.write(&self.dir)?;
        Ok(StageStatus::Ran)
    }

    fn tiles(&self) -> CliResult<Vec<TileInfo>> {
        read_tile_index(&self.path(&rel(&["tiles", "index.csv"])))
    }

    pub fn synth(&mut self) -> CliResult<StageStatus> {
        let data_dir = self.data_dir();
        self.stage("synth", &[], |run| {
            let cfg = &run.config;
            let entries = make_dataset(cfg.synth_scenes, &cfg.scene_distribution(), cfg.seed)?;
            let rows = write_dataset(&entries, &data_dir)?;
            let mut out = vec![run.record(&data_dir.join("manifest.csv"))];
            for r in rows {
                out.push(run.record(&data_dir.join(r.path)));
                out.push(run.record(&data_dir.join(r.mask_path)));
            }
            run.log(format!("synth: wrote {} scenes to {}", entries.len(), data_dir.display()));
            Ok(out)
        })
    }

    fn dataset_files(&self) -> CliResult<Vec<PathBuf>> {
        let data_dir = self.data_dir();
        let manifest = data_dir.join("manifest.csv");
        if !manifest.exists() {
            return Err(CliError::MissingInput(format!("{} (run `synth` or set data_dir)", manifest.display())));
        }
        let mut files = vec![self.record(&manifest)];
        for r in read_manifest(&manifest)? {
            let p = data_dir.join(&r.path);
            let side = sidecar_mask_path(&p);
            files.push(self.record(&p));
            if side.exists() {
                files.push(self.record(&side));
            }
            files.push(self.record(&data_dir.join(&r.mask_path)));
        }
        Ok(files)
    }

    pub fn preprocess(&mut self) -> CliResult<StageStatus> {
        let inputs = self.dataset_files()?;
        self.stage("preprocess", &inputs, |run| {
            let cfg = &run.config;
            let data_dir = run.data_dir();
            let rows = read_manifest(&data_dir.join("manifest.csv"))?;
            fs::create_dir_all(run.path(Path::new("tiles")))?;
            let per_scene: Vec<CliResult<(Vec<TileInfo>, Vec<PathBuf>)>> = rows
                .par_iter()
                .map(|r| {
                    let src = data_dir.join(&r.path);
                    let scene = src.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
                    let grid = load_grid(&src, RasterFormat::from_path(&src))?;
                    let truth = read_mask(&data_dir.join(&r.mask_path))?;
                    if truth.width() != grid.width() || truth.height() != grid.height() {
                        return Err(CliError::MissingInput(format!("truth mask of {scene} does not match its raster")));
                    }
                    let filtered = lee_filter(&grid, cfg.lee_window, cfg.lee_cu)?;
                    let mut infos = Vec::new();
                    let mut files = Vec::new();
                    for tile in tile_grid(&filtered, cfg.tile_size)? {
                        let name = format!("{scene}_r{:05}_c{:05}", tile.origin.0, tile.origin.1);
                        let raster = rel(&["tiles", &format!("{name}.f32")]);
                        write_f32raw(&tile.grid, &run.path(&raster))?;
                        let side = sidecar_mask_path(&raster);
                        if run.path(&side).exists() {
                            files.push(side);
                        }
                        files.push(raster);
                        let tpath = rel(&["tiles", &format!("{name}_truth.pgm")]);
                        write_mask(&truth.crop(tile.origin, cfg.tile_size), &run.path(&tpath))?;
                        files.push(tpath);
                        infos.push(TileInfo {
                            name,
                            scene: scene.clone(),
                            split: r.split,
                            has_oil: r.has_oil,
                            origin: tile.origin,
                        });
                    }
                    Ok((infos, files))
                })
                .collect();
            let mut infos = Vec::new();
            let mut files = Vec::new();
            for s in per_scene {
                let (i, f) = s?;
                infos.extend(i);
                files.extend(f);
            }
            let index = rel(&["tiles", "index.csv"]);
            write_tile_index(&infos, &run.path(&index))?;
            files.push(index);
            run.log(format!("preprocess: {} scenes -> {} tiles", rows.len(), infos.len()));
            Ok(files)
        })
    }

    fn load_tile(&self, t: &TileInfo) -> CliResult<RasterGrid> {
        let p = self.path(&rel(&["tiles", &format!("{}.f32", t.name)]));
        Ok(load_grid(&p, RasterFormat::F32Raw)?)
    }

    fn load_truth(&self, t: &TileInfo) -> CliResult<sgdcn_core::raster_io::Mask> {
        Ok(read_mask(&self.path(&rel(&["tiles", &format!("{}_truth.pgm", t.name)])))?)
    }

    fn load_labels(&self, t: &TileInfo) -> CliResult<LabelMap> {
        Ok(LabelMap::read(&self.path(&rel(&["labels", &format!("{}.lbl", t.name)])))?)
    }

    pub fn segment(&mut self) -> CliResult<StageStatus> {
        let inputs = self.outputs_of("preprocess")?;
        self.stage("segment", &inputs, |run| {
            let tiles = run.tiles()?;
            fs::create_dir_all(run.path(Path::new("labels")))?;
            fs::create_dir_all(run.path(Path::new("graphs")))?;
            let params = run.config.superpixel_params();
            let per_tile: Vec<CliResult<(Vec<PathBuf>, usize)>> = tiles
                .par_iter()
                .map(|t| {
                    let grid = run.load_tile(t)?;
                    let labels = segment(&grid, &params)?;
                    let lp = rel(&["labels", &format!("{}.lbl", t.name)]);
                    labels.write(&run.path(&lp))?;
                    let graph = build_graph(&labels);
                    let classes = label_nodes(&graph, &run.load_truth(t)?, run.config.label_threshold)?;
                    let ep = rel(&["graphs", &format!("{}.edges", t.name)]);
                    let np = rel(&["graphs", &format!("{}_nodes.csv", t.name)]);
                    write_edge_list(&graph, &run.path(&ep))?;
                    write_node_csv(&graph, Some(&classes), &run.path(&np))?;
                    Ok((vec![lp, ep, np], graph.n_nodes()))
                })
                .collect();
            let mut files = Vec::new();
            let mut nodes = 0;
            for r in per_tile {
                let (f, n) = r?;
                files.extend(f);
                nodes += n;
            }
            run.log(format!("segment: {} tiles, {} superpixels", tiles.len(), nodes));
            Ok(files)
        })
    }

    pub fn features(&mut self) -> CliResult<StageStatus> {
        let mut inputs = self.outputs_of("preprocess")?;
        inputs.extend(self.outputs_of("segment")?);
        self.stage("features", &inputs, |run| {
            let tiles = run.tiles()?;
            fs::create_dir_all(run.path(Path::new("features")))?;
            let fc = run.config.feature_config();
            let per_tile: Vec<CliResult<(FeatureMatrix, FeatureWarnings, PathBuf)>> = tiles
                .par_iter()
                .map(|t| {
                    let grid = run.load_tile(t)?;
                    let graph = build_graph(&run.load_labels(t)?);
                    let (m, w) = assemble_matrix(&graph, &grid, &fc)?;
                    let p = rel(&["features", &format!("{}.csv", t.name)]);
                    m.write_csv(&run.path(&p))?;
                    Ok((m, w, p))
                })
                .collect();
            let mut files = Vec::new();
            let mut warnings = FeatureWarnings::default();
            let mut train_parts = Vec::new();
            for (t, r) in tiles.iter().zip(per_tile) {
                let (m, w, p) = r?;
                warnings += w;
                files.push(p);
                if t.split == Split::Train {
                    train_parts.push(m);
                }
            }
            if train_parts.is_empty() {
                return Err(CliError::MissingInput("no training tiles".into()));
            }
            let norm = Normalizer::fit(&FeatureMatrix::vstack(&train_parts)?)?;
            let np = rel(&["features", "normalizer.csv"]);
            norm.write_csv(&run.path(&np))?;
            files.push(np);
            run.log(format!(
                "features: {} columns; {} zero-denominator ratios, {} isolated nodes, {} regions too small for texture",
                norm.columns.len(),
                warnings.zero_mean,
                warnings.isolated,
                warnings.small_texture
            ));
            Ok(files)
        })
    }

    /// Normalized feature matrix, node labels and node areas of a tile.
    fn tile_nodes(&self, t: &TileInfo, norm: &Normalizer) -> CliResult<(FeatureMatrix, Vec<u8>, Vec<u64>)> {
        let raw = FeatureMatrix::read_csv(&self.path(&rel(&["features", &format!("{}.csv", t.name)])))?;
        let (labels, areas) = read_node_csv(&self.path(&rel(&["graphs", &format!("{}_nodes.csv", t.name)])))?;
        if labels.len() != raw.n_rows {
            return Err(CliError::MissingInput(format!("{}: feature rows and graph nodes disagree", t.name)));
        }
        Ok((norm.apply(&raw)?, labels, areas))
    }

    fn split_rows(&self, tiles: &[TileInfo], split: Split, norm: &Normalizer, salt: u64) -> CliResult<(FeatureMatrix, Vec<u8>)> {
        let parts: Vec<CliResult<(FeatureMatrix, Vec<u8>, Vec<u64>)>> =
            tiles.par_iter().filter(|t| t.split == split).map(|t| self.tile_nodes(t, norm)).collect();
        let mut mats = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            let (m, l, _) = p?;
            mats.push(m);
            labels.extend(l);
        }
        if mats.is_empty() {
            return Err(CliError::MissingInput(format!("no {} tiles", split.as_str())));
        }
        let all = FeatureMatrix::vstack(&mats)?;
        let cap = self.config.select_max_samples;
        if all.n_rows <= cap {
            return Ok((all, labels));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ salt);
        let mut rows: Vec<usize> = (0..all.n_rows).collect();
        rows.shuffle(&mut rng);
        rows.truncate(cap);
        rows.sort_unstable();
        let y = rows.iter().map(|&r| labels[r]).collect();
        Ok((all.select_rows(&rows), y))
    }

    pub fn select(&mut self) -> CliResult<StageStatus> {
        let mut inputs = self.outputs_of("features")?;
        inputs.extend(self.outputs_of("segment")?);
        self.stage("select", &inputs, |run| {
            let tiles = run.tiles()?;
            let norm = Normalizer::read_csv(&run.path(&rel(&["features", "normalizer.csv"])))?;
            let (x, y) = run.split_rows(&tiles, Split::Train, &norm, 0x5e1ec7)?;
            let (xv, yv) = run.split_rows(&tiles, Split::Val, &norm, 0x7a11d)?;
            let params = run.config.svm_params();
            let ranking = rfe_rank(&x, &y, &params)?;
            let curve = f1_curve(&ranking, &x, &y, &xv, &yv, &params, run.config.f1_tolerance)?;
            let k = match run.config.n_features {
                0 => curve.selected_k,
                n => n.min(x.n_cols()),
            };
            let names: Vec<String> = ranking.order[..k].iter().map(|&c| x.columns[c].clone()).collect();
            let rp = rel(&["features", "ranking.csv"]);
            let fp = rel(&["features", "f1_curve.csv"]);
            let sp = rel(&["features", "selected.txt"]);
            write_ranking_csv(&ranking, &x.columns, &run.path(&rp))?;
            write_f1_csv(&curve, &run.path(&fp))?;
            write_column_list(&names, &run.path(&sp))?;
            run.log(format!(
                "select: ranked {} columns on {} rows; F1 curve peaks at {:.4}, keeping {k}",
                x.n_cols(),
                x.n_rows,
                curve.f1.iter().copied().fold(0.0, f64::max)
            ));
            Ok(vec![rp, fp, sp])
        })
    }

    fn samples(&self, tiles: &[TileInfo], split: Split, norm: &Normalizer, selected: &[usize]) -> CliResult<Vec<GraphSample>> {
        tiles
            .par_iter()
            .filter(|t| t.split == split)
            .map(|t| self.sample(t, norm, selected))
            .collect()
    }

    fn sample(&self, t: &TileInfo, norm: &Normalizer, selected: &[usize]) -> CliResult<GraphSample> {
        let (m, labels, areas) = self.tile_nodes(t, norm)?;
        let adjacency = read_adjacency(&self.path(&rel(&["graphs", &format!("{}.edges", t.name)])), labels.len())?;
        Ok(GraphSample {
            adjacency,
            features: m.select_columns(selected).data,
            labels,
            areas,
        })
    }

    fn selected_columns(&self, norm: &Normalizer) -> CliResult<Vec<usize>> {
        let names = read_column_list(&self.path(&rel(&["features", "selected.txt"])))?;
        names
            .iter()
            .map(|n| {
                norm.columns
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| CliError::MissingInput(format!("selected column '{n}' is not a feature column")))
            })
            .collect()
    }

    pub fn train(&mut self) -> CliResult<StageStatus> {
        let mut inputs = self.outputs_of("features")?;
        inputs.extend(self.outputs_of("select")?);
        inputs.extend(self.outputs_of("segment")?);
        self.stage("train", &inputs, |run| {
            let tiles = run.tiles()?;
            let norm = Normalizer::read_csv(&run.path(&rel(&["features", "normalizer.csv"])))?;
            let selected = run.selected_columns(&norm)?;
            let train_set = run.samples(&tiles, Split::Train, &norm, &selected)?;
            let val_set = run.samples(&tiles, Split::Val, &norm, &selected)?;
            let model = GcnModel::new(run.config.model_config(selected.len()), run.config.seed)?;
            run.log(format!(
                "train: {} train / {} val graphs, {} parameters, {} epochs",
                train_set.len(),
                val_set.len(),
                model.n_params(),
                run.config.epochs
            ));
            let out = deepergcn::train(Checkpoint::fresh(model), &train_set, &val_set, &run.config.train_config())?;
            fs::create_dir_all(run.path(Path::new("model")))?;
            let best = rel(&["model", "best.ckpt"]);
            let last = rel(&["model", "last.ckpt"]);
            let hist = rel(&["model", "history.csv"]);
            let best_ckpt = Checkpoint {
                model: out.best,
                optimizer: None,
                epoch: out.best_epoch,
            };
            deepergcn::write_checkpoint(&best_ckpt, &run.path(&best))?;
            deepergcn::write_checkpoint(&out.last, &run.path(&last))?;
            deepergcn::write_history_csv(&out.history, &run.path(&hist))?;
            if let Some(h) = out.history.last() {
                run.log(format!(
                    "train: final loss {:.4}, best validation F1 at epoch {}",
                    h.train_loss, out.best_epoch
                ));
            }
            Ok(vec![best, last, hist])
        })
    }

    pub fn predict(&mut self) -> CliResult<StageStatus> {
        let mut inputs = self.outputs_of("train")?;
        inputs.extend(self.outputs_of("features")?);
        inputs.extend(self.outputs_of("select")?);
        inputs.extend(self.outputs_of("segment")?);
        inputs.extend(self.outputs_of("preprocess")?);
        self.stage("predict", &inputs, |run| {
            let tiles = run.tiles()?;
            let norm = Normalizer::read_csv(&run.path(&rel(&["features", "normalizer.csv"])))?;
            let selected = run.selected_columns(&norm)?;
            let model = deepergcn::read_checkpoint(&run.path(&rel(&["model", "best.ckpt"])))?.model;
            if model.config.in_dim != selected.len() {
                return Err(CliError::MissingInput("checkpoint input width does not match the selected features".into()));
            }
            fs::create_dir_all(run.path(Path::new("preds")))?;
            let per_tile: Vec<CliResult<Vec<PathBuf>>> = tiles
                .par_iter()
                .map(|t| {
                    let s = run.sample(t, &norm, &selected)?;
                    let classes = deepergcn::predict(&model, &s.adjacency, &s.features)?;
                    let labels = run.load_labels(t)?;
                    let graph = build_graph(&labels);
                    let mask = rasterize_prediction(&graph, &NodeLabeling { classes }, &labels)?;
                    let gp = rel(&["preds", &format!("{}.pgm", t.name)]);
                    write_mask(&mask, &run.path(&gp))?;
                    let (otsu, _) = otsu_baseline(&run.load_tile(t)?);
                    let op = rel(&["preds", &format!("{}_otsu.pgm", t.name)]);
                    write_mask(&otsu, &run.path(&op))?;
                    Ok(vec![gp, op])
                })
                .collect();
            let mut files = Vec::new();
            for f in per_tile {
                files.extend(f?);
            }
            run.log(format!("predict: {} tiles", tiles.len()));
            Ok(files)
        })
    }

    /// Pixel metrics of the model and the Otsu baseline on the test split.
    pub fn evaluate(&self) -> CliResult<EvalSummary> {
        let tiles = self.tiles()?;
        let mut gcn = Evaluation::default();
        let mut otsu = Evaluation::default();
        for t in tiles.iter().filter(|t| t.split == Split::Test) {
            let valid = self.load_tile(t)?.valid().to_vec();
            let truth = self.load_truth(t)?;
            for (suffix, eval) in [("", &mut gcn), ("_otsu", &mut otsu)] {
                let pred = read_mask(&self.path(&rel(&["preds", &format!("{}{suffix}.pgm", t.name)])))?;
                let c = confusion(&pred, &truth, &valid)?;
                let oil = t.has_oil.then_some(OilCounts {
                    missed: c.fn_,
                    all: c.tp + c.fn_,
                });
                eval.push(t.name.clone(), c, oil);
            }
        }
        if gcn.tiles.is_empty() {
            return Err(CliError::MissingInput("no test tiles".into()));
        }
        Ok(EvalSummary { gcn, otsu })
    }

    pub fn eval(&mut self) -> CliResult<EvalSummary> {
        let mut inputs = self.outputs_of("predict")?;
        inputs.extend(self.outputs_of("preprocess")?);
        self.stage("eval", &inputs, |run| {
            let s = run.evaluate()?;
            fs::create_dir_all(run.path(Path::new("eval")))?;
            let mp = rel(&["eval", "metrics.csv"]);
            let op = rel(&["eval", "otsu_metrics.csv"]);
            s.gcn.write_csv(&run.path(&mp))?;
            s.otsu.write_csv(&run.path(&op))?;
            Ok(vec![mp, op])
        })?;
        self.evaluate()
    }

    /// Every stage in order; `synth` only when no external dataset is set.
    pub fn run_all(&mut self) -> CliResult<EvalSummary> {
        if self.config.data_dir.is_none() {
            self.synth()?;
        }
        self.preprocess()?;
        self.segment()?;
        self.features()?;
        self.select()?;
        self.train()?;
        self.predict()?;
        self.eval()
    }
}

/// Metrics tables for the model and the baseline, side by side.
pub fn format_summary(s: &EvalSummary) -> String {
    let (g, o) = (s.gcn_report(), s.otsu_report());
    let mut out = String::new();
    out.push_str("+--------+-----------+-----------+\n");
    out.push_str("| metric |  DeeperGCN|      Otsu |\n");
    out.push_str("+--------+-----------+-----------+\n");
    for (name, a, b) in [("P_d", g.p_d, o.p_d), ("P_f", g.p_f, o.p_f), ("P_acc", g.p_acc, o.p_acc), ("P_m", g.p_m, o.p_m)] {
        out.push_str(&format!("| {name:<6} | {:>9} | {:>9} |\n", a.to_string(), b.to_string()));
    }
    out.push_str("+--------+-----------+-----------+\n");
    out
}

fn write_tile_index(tiles: &[TileInfo], path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tile", "scene", "split", "has_oil", "row", "col"])?;
    for t in tiles {
        w.write_record([
            t.name.as_str(),
            &t.scene,
            t.split.as_str(),
            if t.has_oil { "1" } else { "0" },
            &t.origin.0.to_string(),
            &t.origin.1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tile_index(path: &Path) -> CliResult<Vec<TileInfo>> {
    if !path.exists() {
        return Err(CliError::MissingInput(format!("{} (run `preprocess` first)", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || CliError::MissingInput(format!("malformed tile index {}", path.display()));
        if rec.len() != 6 {
            return Err(bad());
        }
        out.push(TileInfo {
            name: rec[0].to_string(),
            scene: rec[1].to_string(),
            split: rec[2].parse()?,
            has_oil: &rec[3] == "1",
            origin: (rec[4].parse().map_err(|_| bad())?, rec[5].parse().map_err(|_| bad())?),
        });
    }
    Ok(out)
}

fn read_node_csv(path: &Path) -> CliResult<(Vec<u8>, Vec<u64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    let mut areas = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || CliError::MissingInput(format!("{}: malformed row {}", path.display(), i + 1));
        if rec.len() != 3 || rec[0].parse::<usize>().ok() != Some(i) {
            return Err(bad());
        }
        areas.push(rec[1].parse().map_err(|_| bad())?);
        labels.push(if rec[2].is_empty() { deepergcn::UNLABELED } else { rec[2].parse().map_err(|_| bad())? });
    }
    Ok((labels, areas))
}

fn read_adjacency(path: &Path, n_nodes: usize) -> CliResult<Adjacency> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next()) {
            (Some(Ok(u)), Some(Ok(v))) => edges.push((u, v)),
            _ => return Err(CliError::MissingInput(format!("{}: malformed line {}", path.display(), i + 1))),
        }
    }
    Ok(Adjacency::from_edges(n_nodes, &edges)?)
}
