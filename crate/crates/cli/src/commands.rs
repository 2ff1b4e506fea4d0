use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use detkit_core::attention::{gom_forward, GomParams};
use detkit_core::eval::{evaluate_files, parse_thresholds};
use detkit_core::experiments::{
    compare_convergence, curve_csv, gen_tasks, summary_csv, tasks_csv, Regime, RegressionTask, TrainConfig,
};
use detkit_core::formats::{fmt_sig, read_numbered, write_records, DetectionFileRecord};
use detkit_core::geometry::loss;
use detkit_core::gradcheck;
use detkit_core::smoothing::{Detection, Smoother, SmoothingConfig};
use detkit_core::{BBox, LossVariant, Tensor};

use crate::Command;

#[derive(Debug, Args)]
pub struct RunArgs {
    /// overlap, disjoint, aspect-skew or scale-skew
    #[arg(long, default_value = "overlap")]
    regime: Regime,
    #[arg(long, default_value_t = 100)]
    tasks: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.9)]
    success_iou: f64,
    /// Halve the step until the loss does not increase.
    #[arg(long)]
    backtracking: bool,
    /// Explicit start box for a single task (requires --gt).
    #[arg(long, allow_hyphen_values = true, requires = "gt")]
    init: Option<BBox>,
    /// Explicit target box for a single task (requires --init).
    #[arg(long, allow_hyphen_values = true, requires = "init")]
    gt: Option<BBox>,
    /// Output directory for curves.csv, summary.csv and tasks.csv.
    #[arg(long)]
    out: PathBuf,
}

pub fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Loss {
            variant,
            pred,
            gt,
            json,
        } => cmd_loss(variant, &pred, &gt, json),
        Command::Gradcheck {
            samples,
            seed,
            variant,
            tol,
        } => cmd_gradcheck(samples, seed, variant, tol),
        Command::Eval {
            gt,
            pred,
            thresholds,
            out,
        } => cmd_eval(&gt, &pred, &thresholds, out.as_deref()),
        Command::Smooth {
            input,
            decay,
            gate,
            max_age,
            out,
        } => {
            let cfg = SmoothingConfig {
                decay,
                iou_gate: gate,
                max_age,
            };
            cmd_smooth(&input, cfg, out.as_deref())
        }
        Command::Train { variant, run } => cmd_run(&[variant], &run),
        Command::Compare { losses, run } => cmd_run(&losses, &run),
        Command::Attn {
            shape,
            seed,
            reduction,
            kernel,
            stats,
        } => cmd_attn(&shape, seed, reduction, kernel, stats),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_loss(variant: LossVariant, pred: &BBox, gt: &BBox, json: bool) -> Result<ExitCode> {
    let r = loss(variant, pred, gt)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(ExitCode::SUCCESS);
    }
    let grad: Vec<String> = r.grad.iter().map(|&g| fmt_sig(g)).collect();
    println!("variant {}", r.variant);
    println!("value   {}", fmt_sig(r.value));
    println!("iou     {}", fmt_sig(r.iou));
    println!("overlap {}", fmt_sig(r.terms.overlap));
    println!("center  {}", fmt_sig(r.terms.center));
    println!("aspect  {}", fmt_sig(r.terms.aspect));
    println!("width   {}", fmt_sig(r.terms.width));
    println!("height  {}", fmt_sig(r.terms.height));
    println!("alpha   {}", fmt_sig(r.alpha));
    println!("v       {}", fmt_sig(r.v));
    println!("grad    {}", grad.join(","));
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(samples: usize, seed: u64, variant: LossVariant, tol: f64) -> Result<ExitCode> {
    let s = gradcheck::run(variant, samples, seed, tol)?;
    println!("variant      {}", s.variant);
    println!("samples      {}", s.samples);
    println!("checked      {}", s.checked);
    println!("skipped_kink {}", s.skipped_kink);
    println!("failures     {}", s.failures);
    println!("max_rel_err  {}", fmt_sig(s.max_rel_err));
    println!("tolerance    {}", fmt_sig(s.tolerance));
    println!("result       {}", if s.passed() { "PASS" } else { "FAIL" });
    Ok(if s.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_eval(gt: &Path, pred: &Path, thresholds: &str, out: Option<&Path>) -> Result<ExitCode> {
    let thresholds = parse_thresholds(thresholds)?;
    let report = evaluate_files(gt, pred, &thresholds)?;
    write_output(out, &report.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_smooth(input: &Path, cfg: SmoothingConfig, out: Option<&Path>) -> Result<ExitCode> {
    let records = read_numbered(input)?;
    let mut smoother = Smoother::new(cfg)?;
    let mut output: Vec<DetectionFileRecord> = Vec::with_capacity(records.len());

    let mut i = 0;
    while i < records.len() {
        let (line, first) = &records[i];
        let Some(frame) = first.frame_id else {
            bail!("{}:{line}: record has no frame_id", input.display());
        };
        let mut j = i;
        let mut dets = Vec::new();
        while j < records.len() && records[j].1.frame_id == Some(frame) {
            let (line, r) = &records[j];
            let Some(score) = r.score else {
                bail!("{}:{line}: record has no score", input.display());
            };
            dets.push(Detection::new(frame, r.class_id, r.bbox()?, score)?);
            j += 1;
        }
        let smoothed = smoother
            .step(frame, &dets)
            .with_context(|| format!("{}:{line}: frames must be in increasing order", input.display()))?;
        for ((_, r), s) in records[i..j].iter().zip(smoothed) {
            output.push(DetectionFileRecord {
                bbox: s.bbox.to_array(),
                score: Some(s.score),
                track_id: Some(s.track_id),
                ..r.clone()
            });
        }
        i = j;
    }

    let mut buf = Vec::new();
    write_records(&mut buf, &output)?;
    write_output(out, std::str::from_utf8(&buf)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(variants: &[LossVariant], run: &RunArgs) -> Result<ExitCode> {
    if variants.is_empty() {
        bail!("no loss variants given");
    }
    let tasks: Vec<RegressionTask> = match (run.init, run.gt) {
        (Some(init), Some(gt)) => vec![RegressionTask {
            id: 0,
            gt,
            init,
            seed: run.seed,
        }],
        _ => gen_tasks(run.tasks, run.seed, run.regime)?,
    };
    let cfg = TrainConfig {
        variant: variants[0],
        learning_rate: run.lr,
        steps: run.steps,
        seed: run.seed,
        success_iou: run.success_iou,
        backtracking: run.backtracking,
    };
    let report = compare_convergence(&tasks, variants, &cfg)?;

    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = run.out.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    write("curves.csv", curve_csv(&report.records)?)?;
    write("summary.csv", summary_csv(&report.summaries))?;
    write("tasks.csv", tasks_csv(&report.records))?;

    for s in &report.summaries {
        println!(
            "{:<5} success_rate {} median_steps {} final_iou_median {}",
            s.variant.name(),
            fmt_sig(s.success_rate),
            s.median_steps.map_or("inf".into(), fmt_sig),
            fmt_sig(s.final_iou_median)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_shape(s: &str) -> Result<[usize; 3]> {
    let dims = s
        .split(',')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .with_context(|| format!("bad dimension {d:?} in {s:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    match dims.as_slice() {
        &[c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => bail!("expected three positive dimensions C,H,W, got {s:?}"),
    }
}

fn cmd_attn(shape: &str, seed: u64, reduction: usize, kernel: usize, stats: bool) -> Result<ExitCode> {
    let [c, h, w] = parse_shape(shape)?;
    let params = GomParams::seeded(c, reduction, kernel, seed)?;
    let input = Tensor::seeded_uniform(vec![c, h, w], -1.0, 1.0, seed.wrapping_add(1))?;
    let output = gom_forward(&input, &params)?;

    let shape_str = |t: &Tensor| t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    println!("input_shape  {}", shape_str(&input));
    println!("output_shape {}", shape_str(&output));
    println!("reduction    {reduction}");
    println!("kernel       {kernel}");

    let max_abs = |t: &Tensor| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if stats {
        let d = output.data();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        println!("min          {}", fmt_sig(min));
        println!("max          {}", fmt_sig(max));
        println!("mean         {}", fmt_sig(mean));
        println!("max_abs_in   {}", fmt_sig(max_abs(&input)));
        println!("max_abs_out  {}", fmt_sig(max_abs(&output)));
    }

    let shape_ok = output.shape() == input.shape();
    let bound_ok = output.data().iter().zip(input.data()).all(|(o, i)| o.abs() <= i.abs());
    println!("checks       {}", if shape_ok && bound_ok { "PASS" } else { "FAIL" });
    Ok(if shape_ok && bound_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
