//! `sparseanno`: batch pipelines for training-label engineering on sparsely
//! annotated detection datasets. Every subcommand writes a run manifest next
//! to its outputs; re-running with the recorded parameters reproduces the
//! outputs bit for bit.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sparseanno_core::assign::{
    base_assign, matrix_from_json_value, matrix_to_json_value, oracle_ignore, oracle_positive,
    part_aware_ignore, pseudo_ignore, soft_weights, ProposalSet,
};
use sparseanno_core::dataset::{load_dataset, load_detections, save_dataset, Dataset};
use sparseanno_core::defaults;
use sparseanno_core::evaluator::{
    calibrate, load_threshold_table, match_detections, mmap_subset, split_dataset, sweep_tsv,
    threshold_sweep, threshold_table_to_json,
};
use sparseanno_core::geometry::BBox;
use sparseanno_core::partstats::{load_part_map, report_tsv, stats_report};
use sparseanno_core::scenesim::{run_regime, Regime, SceneConfig, ToyTrainConfig};
use sparseanno_core::signal::{classification_loss, ScoreMatrix};
use sparseanno_core::sparsify::{deletion_record_to_json, load_deletion_record, sparsify};

mod manifest;

use manifest::{manifest_path_for_file, write_atomic, RunManifest};

#[derive(Parser)]
#[command(name = "sparseanno", version, about = "Label-assignment pipelines for sparsely annotated detection datasets")]
struct Cli {
    /// Seed for all randomness; falls back to $SPARSEANNO_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for data-parallel sections (0 = all cores). Outputs do
    /// not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArgs {
    /// COCO-format annotation JSON.
    #[arg(long)]
    annotations: PathBuf,

    /// Verification sidecar JSON; when absent, each image's positive set
    /// defaults to its annotated categories.
    #[arg(long)]
    verifications: Option<PathBuf>,
}

impl DatasetArgs {
    fn load(&self) -> Result<Dataset> {
        let loaded = load_dataset(&self.annotations, self.verifications.as_deref())?;
        for w in &loaded.warnings {
            eprintln!("warning: {w}");
        }
        Ok(loaded.dataset)
    }

    fn record(&self, manifest: &mut RunManifest) -> Result<()> {
        manifest.input(&self.annotations)?;
        manifest.param("annotations", self.annotations.display().to_string());
        if let Some(v) = &self.verifications {
            manifest.input(v)?;
            manifest.param("verifications", v.display().to_string());
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Inclusion and co-occurrence statistics for the pairs of a part map.
    Stats {
        #[command(flatten)]
        dataset: DatasetArgs,

        /// Part-map JSON (subjects with their part categories).
        #[arg(long)]
        part_map: PathBuf,

        /// Containment threshold on aiou.
        #[arg(long, default_value_t = defaults::TAU)]
        tau: f64,

        /// Output TSV path.
        #[arg(long)]
        out: PathBuf,
    },

    /// Randomly delete per-(category, image) annotations.
    Sparsify {
        /// COCO-format annotation JSON.
        #[arg(long = "in")]
        input: PathBuf,

        /// Verification sidecar JSON.
        #[arg(long)]
        verifications: Option<PathBuf>,

        /// Deletion probability per (category, image) pair.
        #[arg(long)]
        alpha: f64,

        /// Output directory for the sparse dataset and deletion record.
        #[arg(long)]
        out: PathBuf,
    },

    /// Build tri-state assignment matrices for RoI proposals.
    Assign {
        #[command(flatten)]
        dataset: DatasetArgs,

        /// Proposal file: {"proposals": [{"image_id", "boxes": [[x1,y1,x2,y2],..]}]}.
        #[arg(long)]
        proposals: PathBuf,

        /// baseline | part-aware | pseudo | oracle-ignore | oracle-positive | soft
        #[arg(long)]
        mode: String,

        /// Part-map JSON (part-aware mode).
        #[arg(long)]
        part_map: Option<PathBuf>,

        /// COCO results JSON (pseudo mode).
        #[arg(long)]
        detections: Option<PathBuf>,

        /// Threshold table JSON from `calibrate` (pseudo mode).
        #[arg(long)]
        thresholds: Option<PathBuf>,

        /// Deletion record JSON from `sparsify` (oracle modes).
        #[arg(long)]
        deletions: Option<PathBuf>,

        /// Containment threshold on aiou (part-aware mode).
        #[arg(long, default_value_t = defaults::TAU)]
        tau: f64,

        /// Foreground IoU threshold for positive assignment.
        #[arg(long, default_value_t = defaults::FG_IOU)]
        fg_iou: f64,

        /// Pseudo labels overlapping ground truth above this IoU are dropped.
        #[arg(long, default_value_t = defaults::GT_IOU)]
        gt_iou: f64,

        /// Proposal-to-pseudo-label IoU above which the category is ignored.
        #[arg(long, default_value_t = defaults::ROI_IOU)]
        roi_iou: f64,

        /// IoU above which oracle-ignore suppresses entries.
        #[arg(long, default_value_t = defaults::ORACLE_IOU)]
        oracle_iou: f64,

        /// Weight floor for soft weighting.
        #[arg(long, default_value_t = defaults::SOFT_W_MIN)]
        w_min: f64,

        /// Output JSON path (array of per-image matrices).
        #[arg(long)]
        out: PathBuf,
    },

    /// Pick per-category score thresholds achieving a minimum precision.
    Calibrate {
        #[command(flatten)]
        dataset: DatasetArgs,

        /// COCO results JSON from the pretrained model.
        #[arg(long)]
        detections: PathBuf,

        /// Minimum per-category precision the threshold must achieve.
        #[arg(long, default_value_t = defaults::MIN_PRECISION)]
        min_precision: f64,

        /// IoU threshold for counting a detection as a true positive.
        #[arg(long, default_value_t = defaults::FG_IOU)]
        iou: f64,

        /// When positive, calibrate only on this withheld fraction of the
        /// images (selected by seeded hash).
        #[arg(long, default_value_t = 0.0)]
        withheld_fraction: f64,

        /// Output threshold table JSON.
        #[arg(long)]
        out: PathBuf,
    },

    /// Evaluate detections: mmAP, or a score-threshold sweep.
    Eval {
        #[command(flatten)]
        dataset: DatasetArgs,

        /// COCO results JSON.
        #[arg(long)]
        detections: PathBuf,

        /// Metric to compute.
        #[arg(long, default_value = "mmap")]
        metric: String,

        /// Comma-separated ascending score thresholds; produces a TSV sweep
        /// instead of a single number.
        #[arg(long)]
        sweep: Option<String>,

        /// Comma-separated category ids to restrict the mean to.
        #[arg(long)]
        categories: Option<String>,

        /// Output path (JSON, or TSV for sweeps).
        #[arg(long)]
        out: PathBuf,
    },

    /// Generate synthetic scenes and compare sampling regimes end to end.
    Simulate {
        /// Scene config JSON; its seed field is the base seed unless --seed
        /// is given.
        #[arg(long)]
        config: PathBuf,

        /// Comma-separated regimes: baseline, part-aware, pseudo.
        #[arg(long, default_value = "baseline,part-aware")]
        regimes: String,

        /// Number of consecutive seeds to run.
        #[arg(long, default_value_t = 1)]
        seeds: u64,

        /// Gradient-descent iterations for the toy scorer.
        #[arg(long, default_value_t = 300)]
        iterations: usize,

        /// Learning rate for the toy scorer.
        #[arg(long, default_value_t = 2.0)]
        learning_rate: f64,

        /// Output directory (report.json, report.tsv, manifest.json).
        #[arg(long)]
        out: PathBuf,
    },

    /// Evaluate the tri-state classification loss on exported matrices.
    EvalLoss {
        /// Logits JSON: {"logits": [[...]]}, rows = proposals.
        #[arg(long)]
        logits: PathBuf,

        /// Assignment matrices JSON produced by `assign`.
        #[arg(long)]
        assignment: PathBuf,

        /// Image id to select when the assignment file has several.
        #[arg(long)]
        image_id: Option<u64>,

        /// Output LossResult JSON.
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_seed(cli_seed: Option<u64>) -> u64 {
    cli_seed
        .or_else(|| {
            std::env::var("SPARSEANNO_SEED")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(0)
}

#[derive(Deserialize)]
struct ProposalFile {
    proposals: Vec<ProposalEntry>,
}

#[derive(Deserialize)]
struct ProposalEntry {
    image_id: u64,
    boxes: Vec<[f64; 4]>,
}

fn load_proposals(path: &Path) -> Result<Vec<ProposalSet>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ProposalFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut sets = Vec::with_capacity(file.proposals.len());
    for entry in file.proposals {
        let proposals = entry
            .boxes
            .iter()
            .map(|&[x0, y0, x1, y1]| Ok(BBox::new(x0, y0, x1, y1)?))
            .collect::<Result<Vec<_>>>()?;
        sets.push(ProposalSet {
            image_id: entry.image_id,
            proposals,
        });
    }
    sets.sort_by_key(|p| p.image_id);
    Ok(sets)
}

fn parse_id_list(s: &str) -> Result<BTreeSet<u64>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.trim().parse::<u64>().map_err(|e| anyhow!("bad id '{p}': {e}")))
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("bad threshold '{p}': {e}")))
        .collect()
}

fn cmd_stats(
    dataset_args: &DatasetArgs,
    part_map_path: &Path,
    tau: f64,
    out: &Path,
) -> Result<()> {
    let dataset = dataset_args.load()?;
    let map = load_part_map(part_map_path, &dataset)?;
    let stats = stats_report(&dataset, &map, tau)?;
    write_atomic(out, report_tsv(&stats).as_bytes())?;

    let mut m = RunManifest::new("stats", None);
    dataset_args.record(&mut m)?;
    m.input(part_map_path)?;
    m.param("part_map", part_map_path.display().to_string());
    m.param("tau", tau);
    m.param("out", out.display().to_string());
    m.output(out);
    m.write(&manifest_path_for_file(out))?;
    Ok(())
}

fn cmd_sparsify(
    input: &Path,
    verifications: Option<&Path>,
    alpha: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let loaded = load_dataset(input, verifications)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let (sparse, record) = sparsify(&loaded.dataset, alpha, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_dataset(&sparse, out)?;
    let deletions_path = out.join("deletions.json");
    write_atomic(&deletions_path, deletion_record_to_json(&record).as_bytes())?;

    let mut m = RunManifest::new("sparsify", Some(seed));
    m.input(input)?;
    m.param("in", input.display().to_string());
    if let Some(v) = verifications {
        m.input(v)?;
        m.param("verifications", v.display().to_string());
    }
    m.param("alpha", alpha);
    m.param("out", out.display().to_string());
    m.output(&out.join("annotations.json"));
    m.output(&out.join("verifications.json"));
    m.output(&deletions_path);
    m.write(&out.join("manifest.json"))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_assign(
    dataset_args: &DatasetArgs,
    proposals_path: &Path,
    mode: &str,
    part_map: Option<&Path>,
    detections: Option<&Path>,
    thresholds: Option<&Path>,
    deletions: Option<&Path>,
    tau: f64,
    fg_iou: f64,
    gt_iou: f64,
    roi_iou: f64,
    oracle_iou: f64,
    w_min: f64,
    out: &Path,
) -> Result<()> {
    let dataset = dataset_args.load()?;
    let proposal_sets = load_proposals(proposals_path)?;

    enum Mode {
        Baseline,
        PartAware(sparseanno_core::partstats::PartSubjectMap),
        Pseudo {
            detections: sparseanno_core::dataset::DetectionSet,
            thresholds: std::collections::BTreeMap<u64, f64>,
        },
        OracleIgnore(sparseanno_core::sparsify::DeletionRecord),
        OraclePositive(sparseanno_core::sparsify::DeletionRecord),
        Soft,
    }

    let need = |opt: Option<&Path>, flag: &str| -> Result<PathBuf> {
        opt.map(Path::to_path_buf)
            .ok_or_else(|| anyhow!("mode '{mode}' requires {flag}"))
    };

    let mode_impl = match mode {
        "baseline" => Mode::Baseline,
        "part-aware" => {
            let path = need(part_map, "--part-map")?;
            Mode::PartAware(load_part_map(&path, &dataset)?)
        }
        "pseudo" => {
            let det_path = need(detections, "--detections")?;
            let thr_path = need(thresholds, "--thresholds")?;
            Mode::Pseudo {
                detections: load_detections(&det_path, &dataset)?,
                thresholds: load_threshold_table(&thr_path)?.thresholds,
            }
        }
        "oracle-ignore" => Mode::OracleIgnore(load_deletion_record(&need(deletions, "--deletions")?)?),
        "oracle-positive" => {
            Mode::OraclePositive(load_deletion_record(&need(deletions, "--deletions")?)?)
        }
        "soft" => Mode::Soft,
        other => bail!("unknown mode '{other}'"),
    };

    let mut values = Vec::with_capacity(proposal_sets.len());
    for p in &proposal_sets {
        let base = base_assign(p, &dataset, fg_iou)?;
        let matrix = match &mode_impl {
            Mode::Baseline => base,
            Mode::PartAware(map) => part_aware_ignore(&base, p, &dataset, map, tau)?,
            Mode::Pseudo {
                detections,
                thresholds,
            } => pseudo_ignore(&base, p, &dataset, detections, thresholds, gt_iou, roi_iou)?,
            Mode::OracleIgnore(record) => oracle_ignore(&base, p, record, oracle_iou)?,
            Mode::OraclePositive(record) => oracle_positive(&base, p, record, fg_iou)?,
            Mode::Soft => soft_weights(&base, p, &dataset, w_min, fg_iou)?,
        };
        values.push(matrix_to_json_value(&matrix, p));
    }
    let mut text = serde_json::to_string_pretty(&values)?;
    text.push('\n');
    write_atomic(out, text.as_bytes())?;

    let mut m = RunManifest::new("assign", None);
    dataset_args.record(&mut m)?;
    m.input(proposals_path)?;
    m.param("proposals", proposals_path.display().to_string());
    m.param("mode", mode);
    m.param("tau", tau);
    m.param("fg_iou", fg_iou);
    m.param("gt_iou", gt_iou);
    m.param("roi_iou", roi_iou);
    m.param("oracle_iou", oracle_iou);
    m.param("w_min", w_min);
    for (flag, path) in [
        ("part_map", part_map),
        ("detections", detections),
        ("thresholds", thresholds),
        ("deletions", deletions),
    ] {
        if let Some(p) = path {
            m.input(p)?;
            m.param(flag, p.display().to_string());
        }
    }
    m.param("out", out.display().to_string());
    m.output(out);
    m.write(&manifest_path_for_file(out))?;
    Ok(())
}

fn cmd_calibrate(
    dataset_args: &DatasetArgs,
    detections_path: &Path,
    min_precision: f64,
    iou: f64,
    withheld_fraction: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let dataset = dataset_args.load()?;
    let detections = load_detections(detections_path, &dataset)?;

    let table = if withheld_fraction > 0.0 {
        let (_, withheld) = split_dataset(&dataset, 1.0 - withheld_fraction, seed)?;
        let withheld_dets = sparseanno_core::dataset::DetectionSet {
            detections: detections
                .detections
                .iter()
                .filter(|d| withheld.image(d.image_id).is_some())
                .cloned()
                .collect(),
        };
        calibrate(&match_detections(&withheld_dets, &withheld, iou)?, min_precision)?
    } else {
        calibrate(&match_detections(&detections, &dataset, iou)?, min_precision)?
    };
    write_atomic(out, threshold_table_to_json(&table).as_bytes())?;

    let mut m = RunManifest::new("calibrate", Some(seed));
    dataset_args.record(&mut m)?;
    m.input(detections_path)?;
    m.param("detections", detections_path.display().to_string());
    m.param("min_precision", min_precision);
    m.param("iou", iou);
    m.param("withheld_fraction", withheld_fraction);
    m.param("out", out.display().to_string());
    m.output(out);
    m.write(&manifest_path_for_file(out))?;
    Ok(())
}

fn cmd_eval(
    dataset_args: &DatasetArgs,
    detections_path: &Path,
    metric: &str,
    sweep: Option<&str>,
    categories: Option<&str>,
    out: &Path,
) -> Result<()> {
    if metric != "mmap" {
        bail!("unknown metric '{metric}' (only mmap is supported)");
    }
    let dataset = dataset_args.load()?;
    let detections = load_detections(detections_path, &dataset)?;
    let subset = categories.map(parse_id_list).transpose()?;

    match sweep {
        Some(list) => {
            let thresholds = parse_f64_list(list)?;
            let rows = threshold_sweep(&detections, &dataset, &thresholds, subset.as_ref())?;
            write_atomic(out, sweep_tsv(&rows).as_bytes())?;
        }
        None => {
            let value = mmap_subset(&detections, &dataset, subset.as_ref())?;
            let mut text =
                serde_json::to_string_pretty(&serde_json::json!({ "mmap": value }))?;
            text.push('\n');
            write_atomic(out, text.as_bytes())?;
        }
    }

    let mut m = RunManifest::new("eval", None);
    dataset_args.record(&mut m)?;
    m.input(detections_path)?;
    m.param("detections", detections_path.display().to_string());
    m.param("metric", metric);
    if let Some(s) = sweep {
        m.param("sweep", s);
    }
    if let Some(c) = categories {
        m.param("categories", c);
    }
    m.param("out", out.display().to_string());
    m.output(out);
    m.write(&manifest_path_for_file(out))?;
    Ok(())
}

fn cmd_simulate(
    config_path: &Path,
    regimes: &str,
    seeds: u64,
    iterations: usize,
    learning_rate: f64,
    base_seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let text =
        fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let base_cfg: SceneConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", config_path.display()))?;
    let regime_list: Vec<Regime> = regimes
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| Ok(Regime::parse(s.trim())?))
        .collect::<Result<_>>()?;
    if regime_list.is_empty() {
        bail!("--regimes must name at least one regime");
    }
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let train_cfg = ToyTrainConfig {
        learning_rate,
        iterations,
        ..ToyTrainConfig::default()
    };
    let start = base_seed.unwrap_or(base_cfg.seed);

    let mut reports = Vec::new();
    for k in 0..seeds {
        let cfg = SceneConfig {
            seed: start + k,
            ..base_cfg.clone()
        };
        for &regime in &regime_list {
            reports.push(run_regime(&cfg, &train_cfg, regime)?);
        }
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let json_path = out.join("report.json");
    let mut text = serde_json::to_string_pretty(&reports)?;
    text.push('\n');
    write_atomic(&json_path, text.as_bytes())?;

    let mut tsv = String::from(
        "regime\tseed\tmean_prob_parts\tmean_prob_unannotated_parts\tmean_prob_background\tfalse_negative_rate\tn_unannotated_part_regions\tn_background_regions\n",
    );
    for r in &reports {
        tsv.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
            r.regime,
            r.seed,
            r.mean_prob_parts,
            r.mean_prob_unannotated_parts,
            r.mean_prob_background,
            r.false_negative_rate,
            r.n_unannotated_part_regions,
            r.n_background_regions
        ));
    }
    let tsv_path = out.join("report.tsv");
    write_atomic(&tsv_path, tsv.as_bytes())?;

    let mut m = RunManifest::new("simulate", Some(start));
    m.input(config_path)?;
    m.param("config", config_path.display().to_string());
    m.param("regimes", regimes);
    m.param("seeds", seeds);
    m.param("iterations", iterations);
    m.param("learning_rate", learning_rate);
    m.param("out", out.display().to_string());
    m.output(&json_path);
    m.output(&tsv_path);
    m.write(&out.join("manifest.json"))?;
    Ok(())
}

#[derive(Deserialize)]
struct LogitsFile {
    logits: Vec<Vec<f64>>,
}

fn cmd_eval_loss(
    logits_path: &Path,
    assignment_path: &Path,
    image_id: Option<u64>,
    out: &Path,
) -> Result<()> {
    let logits_text =
        fs::read_to_string(logits_path).with_context(|| format!("reading {}", logits_path.display()))?;
    let logits_file: LogitsFile = serde_json::from_str(&logits_text)
        .with_context(|| format!("parsing {}", logits_path.display()))?;

    let matrices_text = fs::read_to_string(assignment_path)
        .with_context(|| format!("reading {}", assignment_path.display()))?;
    let values: Vec<serde_json::Value> = serde_json::from_str(&matrices_text)
        .with_context(|| format!("parsing {}", assignment_path.display()))?;

    let value = match image_id {
        Some(id) => values
            .iter()
            .find(|v| v["image_id"] == id)
            .ok_or_else(|| anyhow!("image {id} not found in {}", assignment_path.display()))?,
        None => {
            if values.len() != 1 {
                bail!(
                    "{} holds {} matrices; pass --image-id",
                    assignment_path.display(),
                    values.len()
                );
            }
            &values[0]
        }
    };
    let (matrix, _) = matrix_from_json_value(value)?;

    let n = matrix.n_proposals();
    let c = matrix.categories().len();
    if logits_file.logits.len() != n || logits_file.logits.iter().any(|r| r.len() != c) {
        bail!("logits shape does not match the {n}x{c} assignment matrix");
    }
    let scores = ScoreMatrix::new(n, c, logits_file.logits.into_iter().flatten().collect())?;
    let result = classification_loss(&scores, &matrix)?;

    let rows = |flat: &[f64]| -> Vec<Vec<f64>> {
        if c == 0 {
            vec![Vec::new(); n]
        } else {
            flat.chunks(c).map(|r| r.to_vec()).collect()
        }
    };
    let mut text = serde_json::to_string_pretty(&serde_json::json!({
        "total": result.total,
        "per_entry": rows(&result.per_entry),
        "gradient": rows(&result.gradient),
    }))?;
    text.push('\n');
    write_atomic(out, text.as_bytes())?;

    let mut m = RunManifest::new("eval-loss", None);
    m.input(logits_path)?;
    m.param("logits", logits_path.display().to_string());
    m.input(assignment_path)?;
    m.param("assignment", assignment_path.display().to_string());
    if let Some(id) = image_id {
        m.param("image_id", id);
    }
    m.param("out", out.display().to_string());
    m.output(out);
    m.write(&manifest_path_for_file(out))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .ok();
    }
    let seed = resolve_seed(cli.seed);

    match &cli.command {
        Command::Stats {
            dataset,
            part_map,
            tau,
            out,
        } => cmd_stats(dataset, part_map, *tau, out),
        Command::Sparsify {
            input,
            verifications,
            alpha,
            out,
        } => cmd_sparsify(input, verifications.as_deref(), *alpha, seed, out),
        Command::Assign {
            dataset,
            proposals,
            mode,
            part_map,
            detections,
            thresholds,
            deletions,
            tau,
            fg_iou,
            gt_iou,
            roi_iou,
            oracle_iou,
            w_min,
            out,
        } => cmd_assign(
            dataset,
            proposals,
            mode,
            part_map.as_deref(),
            detections.as_deref(),
            thresholds.as_deref(),
            deletions.as_deref(),
            *tau,
            *fg_iou,
            *gt_iou,
            *roi_iou,
            *oracle_iou,
            *w_min,
            out,
        ),
        Command::Calibrate {
            dataset,
            detections,
            min_precision,
            iou,
            withheld_fraction,
            out,
        } => cmd_calibrate(
            dataset,
            detections,
            *min_precision,
            *iou,
            *withheld_fraction,
            seed,
            out,
        ),
        Command::Eval {
            dataset,
            detections,
            metric,
            sweep,
            categories,
            out,
        } => cmd_eval(
            dataset,
            detections,
            metric,
            sweep.as_deref(),
            categories.as_deref(),
            out,
        ),
        Command::Simulate {
            config,
            regimes,
            seeds,
            iterations,
            learning_rate,
            out,
        } => cmd_simulate(
            config,
            regimes,
            *seeds,
            *iterations,
            *learning_rate,
            cli.seed,
            out,
        ),
        Command::EvalLoss {
            logits,
            assignment,
            image_id,
            out,
        } => cmd_eval_loss(logits, assignment, *image_id, out),
    }
}

/// Exit codes: 0 success, 1 parse/integrity/io failures, 2 bad arguments
/// (clap handles its own usage errors with exit 2 as well).
fn classify_exit(err: &anyhow::Error) -> u8 {
    if let Some(core_err) = err.downcast_ref::<sparseanno_core::Error>() {
        return match core_err {
            sparseanno_core::Error::InvalidArgument(_) => 2,
            _ => 1,
        };
    }
    let text = err.to_string();
    if text.contains("requires --") || text.starts_with("unknown") || text.contains("must ") {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_exit(&err))
        }
    }
}
