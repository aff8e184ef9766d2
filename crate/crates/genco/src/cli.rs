//! Subcommand implementations behind the `genco` binary: train, eval,
//! sweep, data gen, reject and plot. Exit codes are stable: 0 success,
//! 2 usage or config problems, 3 runtime aborts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{self, ResolvedConfig};
use crate::data;
use crate::io;
use crate::metrics::{HIST_BINS, HIST_HI, HIST_LO};
use crate::spectral::{build_filter_bank, reject_and_reconstruct, sample_rejection_mask, Image};
use crate::svg::{HistogramChart, LineChart};
use crate::trainer::{self, TrainConfig, TrainerError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Failures split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

fn trainer_error(e: TrainerError) -> CliError {
    match e {
        TrainerError::InvalidConfig(_) => usage(e.to_string()),
        other => runtime(other.to_string()),
    }
}

/// Reads, parses and resolves a config file with overrides and GENCO_SEED.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ResolvedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let parsed_overrides: Vec<(String, String)> = overrides
        .iter()
        .map(|o| config::parse_override(o).map_err(|e| usage(e.to_string())))
        .collect::<Result<_>>()?;
    let env_seed = match std::env::var("GENCO_SEED") {
        Ok(v) => Some(
            v.parse::<u64>()
                .map_err(|_| usage(format!("GENCO_SEED must be an unsigned integer, got `{v}`")))?,
        ),
        Err(_) => None,
    };
    config::parse_config(&text, &parsed_overrides, env_seed).map_err(|e| usage(e.to_string()))
}

fn resolve_out_dir(flag: Option<PathBuf>, cfg: &ResolvedConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| usage("no output directory: pass --out or set out_dir in the config"))
}

// ── train ───────────────────────────────────────────────────────────────

pub fn cmd_train(config_path: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config_path, overrides)?;
    let out_dir = resolve_out_dir(out, &cfg)?;
    let artifacts = trainer::run_experiment(cfg.train, &out_dir).map_err(trainer_error)?;
    println!(
        "done: step metrics in {}, final proxy-FID {}",
        artifacts.metrics_csv.display(),
        artifacts.final_proxy_fid
    );
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────

pub fn cmd_eval(ckpt: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut state = trainer::load_checkpoint(ckpt).map_err(|e| usage(e.to_string()))?;
    let record = trainer::evaluate(&mut state, None).map_err(trainer_error)?;
    let report = serde_json::json!({
        "checkpoint": ckpt,
        "step": record.step,
        "proxy_fid": record.proxy_fid,
        "score_real": record.score_real,
        "score_fake": record.score_fake,
        "score_holdout": record.score_holdout,
        "gap_train_holdout": record.gap.train_holdout,
        "gap_train_fake": record.gap.train_fake,
    });
    let text = serde_json::to_string_pretty(&report).unwrap();
    if let Some(path) = out {
        io::atomic_write(&path, text.as_bytes())
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    println!("{text}");
    Ok(())
}

// ── sweep ───────────────────────────────────────────────────────────────

struct CellOutcome {
    name: String,
    config: TrainConfig,
    result: std::result::Result<(f64, f64), String>, // (proxy_fid, gap)
}

/// Cartesian product of the sweep axes; cells run in parallel up to
/// `jobs`, failures are recorded and the sweep keeps going.
pub fn cmd_sweep(
    config_path: &Path,
    overrides: &[String],
    jobs: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config_path, overrides)?;
    let out_dir = resolve_out_dir(out, &cfg)?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| runtime(format!("{}: {e}", out_dir.display())))?;
    let cells = config::sweep_cells(&cfg.train, &cfg.sweep);

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<CellOutcome>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let workers = jobs.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= cells.len() {
                    break;
                }
                let (name, cell_cfg) = &cells[idx];
                let cell_dir = out_dir.join(name);
                let result = trainer::run_experiment(cell_cfg.clone(), &cell_dir)
                    .map(|a| (a.final_proxy_fid, a.final_gap.train_holdout))
                    .map_err(|e| e.to_string());
                outcomes.lock().unwrap()[idx] = Some(CellOutcome {
                    name: name.clone(),
                    config: cell_cfg.clone(),
                    result,
                });
            });
        }
    });
    let outcomes: Vec<CellOutcome> = outcomes
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every cell visited"))
        .collect();

    // aggregate over seeds: group by every axis except the seed
    let mut groups: BTreeMap<String, Vec<&CellOutcome>> = BTreeMap::new();
    for outcome in &outcomes {
        let c = &outcome.config;
        let key = format!(
            "{},{},{},{},{},{}",
            c.p, c.lambda, c.k_discriminators, c.weco_on, c.daco_on, c.r_as_augmentation_only
        );
        groups.entry(key).or_default().push(outcome);
    }
    let mut csv = String::from(
        "p,lambda,k,weco_on,daco_on,r_as_augmentation_only,n_seeds,n_failed,\
proxy_fid_mean,proxy_fid_std,gap_train_holdout_mean,gap_train_holdout_std\n",
    );
    for (key, members) in &groups {
        let ok: Vec<&(f64, f64)> = members.iter().filter_map(|m| m.result.as_ref().ok()).collect();
        let failed = members.len() - ok.len();
        let stats = |pick: &dyn Fn(&(f64, f64)) -> f64| -> (f64, f64) {
            if ok.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            let vals: Vec<f64> = ok.iter().map(|v| pick(v)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            (mean, std)
        };
        let (fid_mean, fid_std) = stats(&|v| v.0);
        let (gap_mean, gap_std) = stats(&|v| v.1);
        csv.push_str(&format!(
            "{key},{},{failed},{fid_mean},{fid_std},{gap_mean},{gap_std}\n",
            members.len()
        ));
    }
    let aggregate = out_dir.join("aggregate.csv");
    io::atomic_write(&aggregate, csv.as_bytes())
        .map_err(|e| runtime(format!("{}: {e}", aggregate.display())))?;
    println!("sweep: {} cells, aggregate in {}", cells.len(), aggregate.display());

    let failures: Vec<&CellOutcome> = outcomes.iter().filter(|o| o.result.is_err()).collect();
    if !failures.is_empty() {
        let detail: Vec<String> = failures
            .iter()
            .map(|f| format!("{}: {}", f.name, f.result.as_ref().unwrap_err()))
            .collect();
        return Err(runtime(format!(
            "{} of {} cells failed:\n{}",
            failures.len(),
            cells.len(),
            detail.join("\n")
        )));
    }
    Ok(())
}

// ── data gen ────────────────────────────────────────────────────────────

pub fn cmd_data_gen(config_path: &Path, overrides: &[String], out: &Path) -> Result<()> {
    let cfg = load_config(config_path, overrides)?;
    let dataset = trainer::build_dataset(&cfg.train).map_err(trainer_error)?;
    data::save(&dataset, out).map_err(|e| runtime(e.to_string()))?;
    println!(
        "wrote {} ({} train / {} holdout samples)",
        out.display(),
        dataset.train.len(),
        dataset.holdout.len()
    );
    Ok(())
}

// ── reject ──────────────────────────────────────────────────────────────

fn read_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    // P5 header: magic, width, height, maxval as whitespace-separated
    // tokens with # comments, then one whitespace byte and raw pixels
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if pos > start {
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "bad header")?);
        }
    }
    if tokens.len() != 4 || tokens[0] != "P5" {
        return Err("not a binary 8-bit PGM (P5) file".into());
    }
    let w: usize = tokens[1].parse().map_err(|_| "bad width")?;
    let h: usize = tokens[2].parse().map_err(|_| "bad height")?;
    if tokens[3] != "255" {
        return Err(format!("unsupported maxval {} (need 255)", tokens[3]));
    }
    pos += 1; // single whitespace after maxval
    let pixels = bytes
        .get(pos..pos + w * h)
        .ok_or("truncated pixel data")?
        .to_vec();
    Ok((h, w, pixels))
}

fn write_pgm(h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn pixel_to_signed(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

fn signed_to_pixel(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Applies the frequency-rejection operator to an image file (8-bit
/// grayscale PGM) or to every sample of a dataset file.
pub fn cmd_reject(input: &Path, output: &Path, p: f64, n_bands: usize, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(usage(format!("--p must lie in [0, 1], got {p}")));
    }
    if n_bands == 0 {
        return Err(usage("--n-bands must be positive"));
    }
    let bytes = std::fs::read(input).map_err(|e| usage(format!("{}: {e}", input.display())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if bytes.starts_with(b"P5") {
        let (h, w, pixels) = read_pgm(&bytes).map_err(|e| usage(format!("{}: {e}", input.display())))?;
        let img = Image::new(h, w, 1, pixels.iter().map(|&px| pixel_to_signed(px)).collect())
            .map_err(|e| usage(e.to_string()))?;
        let bank = build_filter_bank(h, w, n_bands);
        let mask = sample_rejection_mask(n_bands, p, &mut rng);
        let rejected = reject_and_reconstruct(&img, &bank, &mask)
            .map_err(|e| runtime(e.to_string()))?;
        let quantized: Vec<u8> = rejected.data.iter().map(|&v| signed_to_pixel(v)).collect();
        io::atomic_write(output, &write_pgm(h, w, &quantized))
            .map_err(|e| runtime(format!("{}: {e}", output.display())))?;
    } else if bytes.starts_with(b"{") {
        let mut dataset = data::load(input).map_err(|e| usage(e.to_string()))?;
        let (h, w, c) = dataset.image_dims();
        let bank = build_filter_bank(h, w, n_bands);
        let mut apply = |rows: &mut Vec<Vec<f64>>| -> Result<()> {
            for row in rows {
                let img = Image::new(h, w, c, row.clone()).map_err(|e| runtime(e.to_string()))?;
                let mask = sample_rejection_mask(n_bands, p, &mut rng);
                *row = reject_and_reconstruct(&img, &bank, &mask)
                    .map_err(|e| runtime(e.to_string()))?
                    .data;
            }
            Ok(())
        };
        apply(&mut dataset.train)?;
        apply(&mut dataset.holdout)?;
        data::save(&dataset, output).map_err(|e| runtime(e.to_string()))?;
    } else {
        return Err(usage(format!(
            "{}: unrecognized input (expected a P5 PGM or a dataset file)",
            input.display()
        )));
    }
    println!("wrote {}", output.display());
    Ok(())
}

// ── plot ────────────────────────────────────────────────────────────────

struct MetricsTable {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    fn column(&self, name: &str) -> Vec<f64> {
        let idx = self.columns.iter().position(|c| c == name).unwrap();
        self.rows.iter().map(|r| r[idx]).collect()
    }
}

fn read_metrics_csv(path: &Path) -> Result<MetricsTable> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| usage(format!("{}: empty file", path.display())))?;
    let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    let required = trainer::METRICS_HEADER.split(',');
    let missing: Vec<&str> = required
        .filter(|r| !columns.iter().any(|c| c == r))
        .collect();
    if !missing.is_empty() {
        return Err(usage(format!(
            "{}: metrics schema mismatch, missing columns: {}",
            path.display(),
            missing.join(", ")
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        if row.len() != columns.len() {
            return Err(usage(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                i + 2,
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(usage(format!("{}: no data rows", path.display())));
    }
    Ok(MetricsTable { columns, rows })
}

/// Final-step histogram series parsed from the sibling histograms.csv.
fn read_histograms_csv(path: &Path) -> Option<Vec<(String, Vec<u64>)>> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut last: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut last_step: i64 = -1;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + HIST_BINS + 1 {
            continue;
        }
        let step: i64 = fields[0].parse().ok()?;
        let population = fields[1].to_string();
        let bins: Vec<u64> = fields[3..3 + HIST_BINS]
            .iter()
            .map(|v| v.parse().unwrap_or(0))
            .collect();
        if step > last_step {
            last_step = step;
            last.clear();
        }
        if step == last_step {
            last.insert(population, bins);
        }
    }
    if last.is_empty() {
        return None;
    }
    let mut series = Vec::new();
    for name in ["real", "fake", "holdout"] {
        if let Some(bins) = last.get(name) {
            series.push((name.to_string(), bins.clone()));
        }
    }
    Some(series)
}

/// Renders loss curves, the score-gap curve, the proxy-FID curve and (when
/// the sibling histograms.csv exists) the final score histograms.
pub fn cmd_plot(metrics_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let table = read_metrics_csv(metrics_path)?;
    let out_dir = out.unwrap_or_else(|| {
        metrics_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| runtime(format!("{}: {e}", out_dir.display())))?;
    let steps = table.column("step");
    let with_steps = |values: Vec<f64>| -> Vec<(f64, f64)> {
        steps.iter().copied().zip(values).collect()
    };

    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        io::atomic_write(&path, body.as_bytes())
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };

    emit(
        "losses.svg",
        LineChart {
            title: "training losses".into(),
            x_label: "step".into(),
            y_label: "loss".into(),
            series: vec![
                ("loss_d1".into(), with_steps(table.column("loss_d1"))),
                ("loss_d2".into(), with_steps(table.column("loss_d2"))),
                ("loss_d3".into(), with_steps(table.column("loss_d3"))),
                ("loss_wd".into(), with_steps(table.column("loss_wd"))),
                ("loss_g_total".into(), with_steps(table.column("loss_g_total"))),
            ],
        }
        .render(),
    )?;

    let real = table.column("score_real");
    let holdout = table.column("score_holdout");
    let fake = table.column("score_fake");
    let gap_holdout: Vec<f64> = real.iter().zip(&holdout).map(|(r, h)| r - h).collect();
    let gap_fake: Vec<f64> = real.iter().zip(&fake).map(|(r, f)| r - f).collect();
    emit(
        "score_gap.svg",
        LineChart {
            title: "discriminator score gaps".into(),
            x_label: "step".into(),
            y_label: "mean score difference".into(),
            series: vec![
                ("train - holdout".into(), with_steps(gap_holdout)),
                ("train - fake".into(), with_steps(gap_fake)),
            ],
        }
        .render(),
    )?;

    emit(
        "proxy_fid.svg",
        LineChart {
            title: "proxy Frechet distance (EMA generator vs holdout)".into(),
            x_label: "step".into(),
            y_label: "proxy-FID".into(),
            series: vec![("proxy_fid".into(), with_steps(table.column("proxy_fid")))],
        }
        .render(),
    )?;

    let hist_path = metrics_path
        .parent()
        .unwrap_or(Path::new("."))
        .join("histograms.csv");
    match read_histograms_csv(&hist_path) {
        Some(series) => emit(
            "histograms.svg",
            HistogramChart {
                title: "discriminator score histogram (final step)".into(),
                x_label: "score".into(),
                series,
                lo: HIST_LO,
                hi: HIST_HI,
            }
            .render(),
        )?,
        None => eprintln!(
            "note: {} not found, skipping the histogram figure",
            hist_path.display()
        ),
    }

    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
