use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgw_vp::calculus::{check_wavelet_jacobian, random_check_eta, GradCheckReport};
use rgw_vp::cwt::{admissibility_check, scale_axis, scalogram, SpectrumGrid};
use rgw_vp::data::{
    load_heartbeats, parse_heartbeats, synthesize_dataset, synthesize_heartbeat, Dataset, Label, SplitTag,
};
use rgw_vp::fit::{reconstruct, FitConfig};
use rgw_vp::net::{self, Example, ModelState, NetGradCheck, NetworkConfig};
use rgw_vp::rgw::build_wavelet_matrix;
use rgw_vp::vp::{central_difference, error_bound, SmoothBump};
use rgw_vp::{EtaVector, Mother, MotherKind, MotherShape, PolePair, SampleGrid, Wavelet};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{Cli, CliError, Command};

type CmdResult = Result<(), CliError>;

/// Fixed output file names.
pub mod files {
    pub const WAVELET: &str = "wavelet.csv";
    pub const ADMISSIBILITY: &str = "admissibility.json";
    pub const RECONSTRUCTION_CSV: &str = "reconstruction.csv";
    pub const RECONSTRUCTION_JSON: &str = "reconstruction.json";
    pub const SCALOGRAM: &str = "scalogram.csv";
    pub const GRADCHECK: &str = "gradcheck.json";
    pub const BOUNDCHECK: &str = "boundcheck.csv";
    pub const MODEL: &str = "model.json";
    pub const HISTORY: &str = "history.csv";
    pub const METRICS: &str = "metrics.json";
}

struct Context {
    config: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>, CliError> {
        let path = self.path(name);
        fs::File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CmdResult {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::usage(e.to_string()))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| io_error(&self.path(name), e))
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("input file {} does not exist", path.display())))
    }
}

fn require_positive(name: &str, v: usize) -> CmdResult {
    if v == 0 {
        Err(CliError::usage(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

pub fn run(cli: Cli) -> CmdResult {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(config.network.seed);
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context { config, seed, out };

    match cli.command {
        Command::Render(a) => render(ctx, a),
        Command::Reconstruct(a) => reconstruct_cmd(ctx, a),
        Command::Scalogram(a) => scalogram_cmd(ctx, a),
        Command::Gradcheck(a) => gradcheck(ctx, a),
        Command::Boundcheck(a) => boundcheck(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a),
    }
}

fn prepare_out(ctx: &Context) -> CmdResult {
    fs::create_dir_all(&ctx.out)
        .map_err(|e| CliError::usage(format!("cannot create output directory {}: {e}", ctx.out.display())))
}

fn print_summary(value: serde_json::Value) {
    println!("{value}");
}

fn random_mother(rng: &mut ChaCha8Rng, kind: MotherKind, p: usize, n: usize) -> Mother {
    match kind {
        MotherKind::Rational => Mother::Rational(MotherShape::random(rng, p, n)),
        MotherKind::Ricker => Mother::Ricker,
    }
}

/// Reads a heartbeat CSV row, or else a plain list of numbers separated by commas or
/// whitespace.
fn load_signal(path: &Path, record: usize) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    if let Ok(ds) = parse_heartbeats(&text, &path.display().to_string(), SplitTag::Test) {
        return ds
            .records
            .get(record)
            .map(|r| r.samples.clone())
            .ok_or_else(|| CliError::usage(format!("record {record} out of range ({} records)", ds.len())));
    }
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for (c, tok) in line.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|t| !t.is_empty()).enumerate() {
            let v: f64 = tok
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::from(rgw_vp::Error::Parse {
                    line: i + 1,
                    column: c + 1,
                    message: format!("not a finite number: `{tok}`"),
                }))?;
            values.push(v);
        }
    }
    if values.len() < 2 {
        return Err(CliError::usage(format!("{} holds fewer than 2 samples", path.display())));
    }
    Ok(values)
}

fn signal_or_synthetic(ctx: &Context, path: Option<&Path>, record: usize, noise: f64) -> Result<Vec<f64>, CliError> {
    match path {
        Some(p) => load_signal(p, record),
        None => Ok(synthesize_heartbeat(ctx.seed, Label::Veb, noise)?.samples),
    }
}

fn render(ctx: Context, a: crate::RenderArgs) -> CmdResult {
    let cfg = &ctx.config.render;
    let kind = a.mother.unwrap_or(cfg.mother);
    let p = a.p.unwrap_or(cfg.p);
    let n = a.n.unwrap_or(cfg.n);
    let points = a.points.unwrap_or(cfg.points);
    if points < 2 {
        return Err(CliError::usage("points must be at least 2"));
    }
    let mother = match kind {
        MotherKind::Ricker => Mother::Ricker,
        MotherKind::Rational => {
            let mut rng = ctx.rng(0);
            let random = MotherShape::random(&mut rng, p, n);
            let zeros: Vec<f64> = match &cfg.zeros {
                Some(z) => z.clone(),
                None => random.zeros.iter().map(|z| z.value()).collect(),
            };
            let poles: Vec<PolePair> = match &cfg.poles {
                Some(list) => list.iter().map(|[a, b]| PolePair::new(*a, *b)).collect(),
                None => random.poles.clone(),
            };
            Mother::Rational(MotherShape::new(&zeros, &poles))
        }
    };
    let wavelet = Wavelet::new(mother.clone())?;
    let grid = SampleGrid::symmetric(cfg.half_width, points)?;
    prepare_out(&ctx)?;

    let mut w = ctx.create(files::WAVELET)?;
    let mut integral = 0.0;
    let write = |w: &mut BufWriter<fs::File>, integral: &mut f64| -> std::io::Result<()> {
        writeln!(w, "t,psi")?;
        for t in grid.points() {
            let v = wavelet.value(t);
            *integral += v * grid.step();
            writeln!(w, "{t},{v}")?;
        }
        w.flush()
    };
    write(&mut w, &mut integral).map_err(|e| io_error(&ctx.path(files::WAVELET), e))?;

    let report = admissibility_check(
        &wavelet,
        &SpectrumGrid {
            half_width: cfg.half_width,
            points,
            padding: 4,
        },
    )?;
    ctx.write_json(
        files::ADMISSIBILITY,
        &json!({ "mother": mother, "norm_constant": wavelet.norm(), "report": report }),
    )?;
    print_summary(json!({
        "command": "render",
        "rows": points,
        "riemann_integral": integral,
        "psi_hat_at_zero": report.psi_hat_at_zero,
        "admissibility_integral": report.admissibility_integral,
    }));
    Ok(())
}

fn reconstruct_cmd(ctx: Context, a: crate::ReconstructArgs) -> CmdResult {
    let cfg = &ctx.config.reconstruct;
    let m = a.m.unwrap_or(cfg.m);
    require_positive("m", m)?;
    let signal_path = a.signal.clone().or_else(|| cfg.signal.clone());
    if let Some(p) = &signal_path {
        require_file(p)?;
    }
    let kind = a.mother.unwrap_or(cfg.mother);
    let fit = FitConfig {
        method: a.method.unwrap_or(cfg.method),
        steps: a.steps.unwrap_or(cfg.steps),
        learning_rate: a.learning_rate.unwrap_or(cfg.learning_rate),
        ..FitConfig::default()
    };
    let compare = cfg.compare_ricker && !a.no_compare && kind == MotherKind::Rational;

    let f = signal_or_synthetic(&ctx, signal_path.as_deref(), a.record.unwrap_or(cfg.record), cfg.noise_level)?;
    if f.len() < m {
        return Err(CliError::usage(format!("signal has {} samples, fewer than m = {m}", f.len())));
    }
    let grid = SampleGrid::signal_domain(f.len())?;
    let init = EtaVector::random(&mut ctx.rng(1), m, kind, cfg.p, cfg.n);
    prepare_out(&ctx)?;

    let result = reconstruct(&f, &init, &grid, &fit)?;
    let ricker = if compare {
        let eta = EtaVector::new(init.scales().to_vec(), init.translations().to_vec(), Mother::Ricker)?;
        Some(reconstruct(&f, &eta, &grid, &fit)?)
    } else {
        None
    };

    let mut w = ctx.create(files::RECONSTRUCTION_CSV)?;
    let mut body = || -> std::io::Result<()> {
        write!(w, "t,f,f_hat")?;
        if ricker.is_some() {
            write!(w, ",f_hat_ricker")?;
        }
        writeln!(w)?;
        for (j, t) in grid.points().enumerate() {
            write!(w, "{t},{},{}", f[j], result.reconstruction[j])?;
            if let Some(r) = &ricker {
                write!(w, ",{}", r.reconstruction[j])?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    body().map_err(|e| io_error(&ctx.path(files::RECONSTRUCTION_CSV), e))?;

    let summary = json!({
        "relative_error": result.relative_error,
        "initial_relative_error": result.initial_relative_error,
        "steps_taken": result.steps_taken,
        "method": fit.method,
        "eta": result.eta,
        "coefficients": result.coefficients,
        "ricker": ricker.as_ref().map(|r| json!({
            "relative_error": r.relative_error,
            "initial_relative_error": r.initial_relative_error,
            "steps_taken": r.steps_taken,
            "eta": r.eta,
        })),
    });
    ctx.write_json(files::RECONSTRUCTION_JSON, &summary)?;
    print_summary(json!({
        "command": "reconstruct",
        "relative_error": result.relative_error,
        "ricker_relative_error": ricker.as_ref().map(|r| r.relative_error),
        "steps_taken": result.steps_taken,
    }));
    Ok(())
}

fn scalogram_cmd(ctx: Context, a: crate::ScalogramArgs) -> CmdResult {
    let cfg = &ctx.config.scalogram;
    let signal_path = a.signal.clone().or_else(|| cfg.signal.clone());
    if let Some(p) = &signal_path {
        require_file(p)?;
    }
    let count = a.scales.unwrap_or(cfg.scales);
    require_positive("scales", count)?;
    if !(cfg.scale_min > 0.0 && cfg.scale_max > 0.0) {
        return Err(CliError::usage("scale_min and scale_max must be positive"));
    }
    let f = signal_or_synthetic(&ctx, signal_path.as_deref(), a.record.unwrap_or(cfg.record), 0.0)?;
    let grid = SampleGrid::signal_domain(f.len())?;
    let mother = random_mother(&mut ctx.rng(2), a.mother.unwrap_or(cfg.mother), cfg.p, cfg.n);
    let wavelet = Wavelet::new(mother)?;
    let scales = scale_axis(cfg.scale_min, cfg.scale_max, count, a.spacing.unwrap_or(cfg.spacing));
    prepare_out(&ctx)?;

    let s = scalogram(&f, &wavelet, &scales, &grid.to_vec(), &grid)?;
    let mut w = ctx.create(files::SCALOGRAM)?;
    s.write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_error(&ctx.path(files::SCALOGRAM), e))?;
    let (r, k) = s.argmax();
    print_summary(json!({
        "command": "scalogram",
        "scales": s.scales.len(),
        "translations": s.translations.len(),
        "peak_scale": s.scales[r],
        "peak_translation": s.translations[k],
        "peak_magnitude": s.get(r, k),
    }));
    Ok(())
}

#[derive(Serialize)]
struct GradcheckDraw {
    draw: usize,
    wavelet: GradCheckReport,
    network: Option<NetGradCheck>,
}

fn gradcheck(ctx: Context, a: crate::GradcheckArgs) -> CmdResult {
    let cfg = &ctx.config.gradcheck;
    let draws = a.draws.unwrap_or(cfg.draws);
    let m = a.m.unwrap_or(cfg.m);
    require_positive("draws", draws)?;
    require_positive("m", m)?;
    let grid = SampleGrid::signal_domain(cfg.signal_len)?;
    prepare_out(&ctx)?;

    let mut worst = GradCheckReport::default();
    let mut worst_net = 0.0f64;
    let mut rows = Vec::with_capacity(draws);
    for draw in 0..draws {
        let mut rng = ctx.rng(100 + draw as u64);
        let eta = random_check_eta(&mut rng, m, cfg.p, cfg.n)?;
        let wavelet = check_wavelet_jacobian(&eta, &grid, cfg.step)?;
        worst.merge(&wavelet);
        let network = if cfg.network {
            let net_cfg = NetworkConfig {
                m,
                p: cfg.p,
                n: cfg.n,
                hidden_units: 5,
                seed: ctx.seed.wrapping_add(draw as u64),
                ..NetworkConfig::default()
            };
            let mut model = ModelState::init(&net_cfg)?;
            model.hidden_bias.fill(0.1);
            let batch_seed = ctx.seed.wrapping_mul(31).wrapping_add(draw as u64);
            let ds = synthesize_dataset(batch_seed, 4, 0.5, 0.05, SplitTag::Train)?;
            let inputs: Vec<Vec<f64>> = ds.records.iter().map(|r| model.prepare(&r.samples)).collect();
            let batch: Vec<Example<'_>> = inputs
                .iter()
                .zip(&ds.records)
                .map(|(s, r)| Example {
                    samples: s,
                    target: r.label.target(),
                })
                .collect();
            let rep = net::check_gradients(&model, &batch, cfg.step)?;
            worst_net = worst_net.max(rep.eta.max()).max(rep.dense_max());
            Some(rep)
        } else {
            None
        };
        rows.push(GradcheckDraw { draw, wavelet, network });
    }

    let pass = worst.max() < cfg.tolerance && worst_net < cfg.network_tolerance;
    let blocks: Vec<_> = worst
        .entries()
        .iter()
        .map(|(name, v)| json!({ "block": name, "max_relative_error": v, "pass": *v < cfg.tolerance }))
        .collect();
    ctx.write_json(
        files::GRADCHECK,
        &json!({
            "tolerance": cfg.tolerance,
            "network_tolerance": cfg.network_tolerance,
            "blocks": blocks,
            "network_max_relative_error": cfg.network.then_some(worst_net),
            "draws": rows,
            "pass": pass,
        }),
    )?;
    println!("{:<12} {:>14} result", "block", "max rel err");
    for (name, v) in worst.entries() {
        println!("{name:<12} {v:>14.3e} {}", if v < cfg.tolerance { "PASS" } else { "FAIL" });
    }
    if cfg.network {
        println!(
            "{:<12} {worst_net:>14.3e} {}",
            "network",
            if worst_net < cfg.network_tolerance { "PASS" } else { "FAIL" }
        );
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::numerical("analytic derivatives disagree with finite differences"))
    }
}

fn boundcheck(ctx: Context, a: crate::BoundcheckArgs) -> CmdResult {
    let cfg = &ctx.config.boundcheck;
    let signals = a.signals.unwrap_or(cfg.signals);
    let m = a.m.unwrap_or(cfg.m);
    let len = a.signal_len.unwrap_or(cfg.signal_len);
    require_positive("signals", signals)?;
    require_positive("m", m)?;
    let grid = SampleGrid::signal_domain(len)?;
    prepare_out(&ctx)?;

    let mut w = ctx.create(files::BOUNDCHECK)?;
    let path = ctx.path(files::BOUNDCHECK);
    writeln!(w, "signal,k,observed,rhs,quadrature_term,projection_term,condition,step,pass")
        .map_err(|e| io_error(&path, e))?;
    let mut all = true;
    let mut worst_ratio = 0.0f64;
    for i in 0..signals {
        let mut rng = ctx.rng(200 + i as u64);
        let bump = SmoothBump::random(&mut rng);
        let eta = EtaVector::random(&mut rng, m, MotherKind::Rational, cfg.p, cfg.n);
        let f = bump.sample(&grid);
        let d = central_difference(&f, grid.step());
        let psi = build_wavelet_matrix(&eta, &grid)?;
        let rep = error_bound(psi.matrix(), &f, &grid, &d)?;
        for (k, obs) in rep.observed.iter().enumerate() {
            let ok = *obs <= rep.rhs;
            all &= ok;
            worst_ratio = worst_ratio.max(obs / rep.rhs);
            writeln!(
                w,
                "{i},{k},{obs},{},{},{},{},{},{}",
                rep.rhs,
                rep.quadrature_term,
                rep.projection_term,
                rep.condition,
                rep.step,
                if ok { "PASS" } else { "FAIL" }
            )
            .map_err(|e| io_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_error(&path, e))?;
    print_summary(json!({
        "command": "boundcheck",
        "signals": signals,
        "max_observed_over_rhs": worst_ratio,
        "result": if all { "PASS" } else { "FAIL" },
    }));
    if all {
        Ok(())
    } else {
        Err(CliError::numerical("observed coefficient error exceeds the bound"))
    }
}

fn load_or_synthesize(ctx: &Context, path: Option<&Path>, split: SplitTag) -> Result<Dataset, CliError> {
    let data = &ctx.config.data;
    match path {
        Some(p) => Ok(load_heartbeats(p, split)?),
        None => {
            let (stream, count) = match split {
                SplitTag::Train => (0x74_7261_696e, data.synthetic_train),
                SplitTag::Test => (0x7465_7374, data.synthetic_test),
            };
            require_positive("synthetic dataset size", count)?;
            Ok(synthesize_dataset(
                ctx.seed ^ stream,
                count,
                data.veb_fraction,
                data.noise_level,
                split,
            )?)
        }
    }
}

fn train(ctx: Context, a: crate::TrainArgs) -> CmdResult {
    let train_path = a.train_data.clone().or_else(|| ctx.config.data.train.clone());
    if let Some(p) = &train_path {
        require_file(p)?;
    }
    let mut cfg = ctx.config.network.clone();
    cfg.seed = ctx.seed;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.mother {
        cfg.mother = v;
    }
    cfg.validate()?;
    prepare_out(&ctx)?;

    let full = load_or_synthesize(&ctx, train_path.as_deref(), SplitTag::Train)?;
    let (train_set, validation) = full.split_off(ctx.config.data.validation_fraction)?;
    let model = net::train(&cfg, &train_set, &validation)?;
    model.save(&ctx.path(files::MODEL))?;
    let mut w = ctx.create(files::HISTORY)?;
    model
        .write_history_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_error(&ctx.path(files::HISTORY), e))?;
    let last = model.history.last();
    print_summary(json!({
        "command": "train",
        "epochs_run": model.history.len(),
        "train_records": train_set.len(),
        "validation_records": validation.len(),
        "final_val_accuracy": last.map(|h| h.val_accuracy),
    }));
    Ok(())
}

fn evaluate(ctx: Context, a: crate::EvaluateArgs) -> CmdResult {
    let model_path = a
        .model
        .clone()
        .or_else(|| ctx.config.evaluate.model.clone())
        .unwrap_or_else(|| ctx.path(files::MODEL));
    require_file(&model_path)?;
    let test_path = a.test_data.clone().or_else(|| ctx.config.data.test.clone());
    if let Some(p) = &test_path {
        require_file(p)?;
    }
    let model = ModelState::load(&model_path)?;
    prepare_out(&ctx)?;
    let test = load_or_synthesize(&ctx, test_path.as_deref(), SplitTag::Test)?;
    let metrics = net::evaluate(&model, &test)?;
    ctx.write_json(files::METRICS, &metrics)?;
    print_summary(json!({ "command": "evaluate", "records": test.len(), "metrics": metrics }));
    Ok(())
}
