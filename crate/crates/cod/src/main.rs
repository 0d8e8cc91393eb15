//! Batch CLI around the prediction pipeline.
//!
//! Exit codes: 0 success, 2 input/parse/parameter/domain error, 3 fit
//! failure, 4 empty predictable subset, 1 other failures.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cod::data::{
    build_eval_matrix, ComputeBudget, Clusterer, FormulaVariant, PipelineConfig,
};
use cod::error::{Error, Result};
use cod::io;
use cod::pipeline::{
    ablation_table, predictable_task_ids, render_report, run_ablation, run_pipeline,
    TruthInputs,
};
use cod::predict::AnchorPoint;
use cod::synth;
use cod::theory::{am_gm_gap, theorem_decomposition, LossSample};

#[derive(Parser)]
#[command(name = "cod", version, about = "Benchmark accuracy prediction from small-model ladders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulaArg {
    Cod,
    F1,
    F2,
    F3,
}

impl From<FormulaArg> for FormulaVariant {
    fn from(arg: FormulaArg) -> Self {
        match arg {
            FormulaArg::Cod => FormulaVariant::Cod,
            FormulaArg::F1 => FormulaVariant::F1,
            FormulaArg::F2 => FormulaVariant::F2,
            FormulaArg::F3 => FormulaVariant::F3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClustererArg {
    ImprovedMeanshift,
    Meanshift,
    Dbscan,
    Kmeans,
    ImprovedKmeans,
    None,
}

impl From<ClustererArg> for Clusterer {
    fn from(arg: ClustererArg) -> Self {
        match arg {
            ClustererArg::ImprovedMeanshift => Clusterer::ImprovedMeanshift,
            ClustererArg::Meanshift => Clusterer::Meanshift,
            ClustererArg::Dbscan => Clusterer::Dbscan,
            ClustererArg::Kmeans => Clusterer::Kmeans,
            ClustererArg::ImprovedKmeans => Clusterer::ImprovedKmeans,
            ClustererArg::None => Clusterer::None,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Clustering radius R.
    #[arg(long, default_value_t = 0.3)]
    radius: f64,
    /// Minimum cluster size K.
    #[arg(long, default_value_t = 10)]
    min_cluster_size: usize,
    /// Extrapolatability threshold on a.
    #[arg(long, default_value_t = 1.0)]
    a_min: f64,
    /// Extrapolatability threshold on b.
    #[arg(long, default_value_t = 0.1)]
    b_min: f64,
    /// Extrapolatability upper bound on c.
    #[arg(long, default_value_t = 1.0)]
    c_max: f64,
    /// Mapping polynomial degree.
    #[arg(long, default_value_t = 4)]
    poly_degree: usize,
    /// Scaling-curve family.
    #[arg(long, value_enum, default_value_t = FormulaArg::Cod)]
    formula: FormulaArg,
    /// Clustering method.
    #[arg(long, value_enum, default_value_t = ClustererArg::ImprovedMeanshift)]
    clusterer: ClustererArg,
    /// Random seed for seed-dependent clusterers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ConfigArgs {
    fn build(&self, target_compute: f64) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::with_target(ComputeBudget::new(target_compute)?);
        config.radius = self.radius;
        config.min_cluster_size = self.min_cluster_size;
        config.a_min = self.a_min;
        config.b_min = self.b_min;
        config.c_max = self.c_max;
        config.poly_degree = self.poly_degree;
        config.formula_variant = self.formula.into();
        config.clusterer = self.clusterer.into();
        config.seed = self.seed;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Predict target-model accuracy from a ladder evaluation file.
    Predict {
        /// Per-task evaluation records, one JSON object per line.
        #[arg(long)]
        eval: PathBuf,
        /// Ladder manifest: JSON array of {model_id, compute_flops, trials}.
        #[arg(long)]
        ladder: PathBuf,
        /// Target model training compute in FLOPs.
        #[arg(long)]
        target_compute: f64,
        /// Anchor evaluation file (single model point per task).
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Anchor weight in the mapping fit.
        #[arg(long, default_value_t = 1.0)]
        anchor_weight: f64,
        /// Ground-truth records for the error columns.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write fitted-curve plot tables.
        #[arg(long)]
        emit_plots: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Grid over formula variants and clusterers with error columns.
    Ablate {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        ladder: PathBuf,
        #[arg(long)]
        target_compute: f64,
        /// Truth sidecar produced by the synth subcommand.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic benchmark with an analytic truth sidecar.
    Synth {
        /// Generator spec, JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for eval.jsonl, ladder.json, truth.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in mean-gap and decomposition checks.
    VerifyTheory {
        /// Optional JSON file with extra samples: a list of positive-real lists.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

fn cmd_predict(
    eval: &PathBuf,
    ladder: &PathBuf,
    target_compute: f64,
    anchors: Option<&PathBuf>,
    anchor_weight: f64,
    ground_truth: Option<&PathBuf>,
    out: &PathBuf,
    emit_plots: bool,
    config_args: &ConfigArgs,
) -> Result<()> {
    let config = config_args.build(target_compute)?;
    let records = io::read_task_records(eval)?;
    let ladder = io::read_ladder_manifest(ladder)?;
    let matrix = build_eval_matrix(&records, &ladder, config.zero_epsilon)?;

    let mut truth = TruthInputs::default();
    if let Some(path) = ground_truth {
        let rows = io::read_ground_truth(path)?;
        if let Some(row) = rows.iter().find(|r| r.benchmark == matrix.benchmark_id) {
            truth.full_truth = Some(row.full_set_accuracy);
        }
    }

    // anchors need the main run's subset membership; run once without
    // them to learn it, then rerun the mapping with anchors included
    let anchor_points: Vec<AnchorPoint> = match anchors {
        Some(path) => {
            let anchor_records = io::read_task_records(path)?;
            let preliminary = run_pipeline(&matrix, &config, &[], &truth)?;
            let subset_ids =
                predictable_task_ids(&matrix, &preliminary.assignment, &preliminary.fits);
            vec![io::anchor_from_records(
                &anchor_records,
                &anchor_records[0].benchmark,
                &matrix,
                &subset_ids,
                anchor_weight,
            )?]
        }
        None => Vec::new(),
    };

    let outcome = run_pipeline(&matrix, &config, &anchor_points, &truth)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), render_report(&outcome.report))?;
    fs::write(
        out.join("assignments.tsv"),
        io::assignment_table(&matrix, &outcome.assignment),
    )?;
    fs::write(out.join("fits.tsv"), io::fit_table(&outcome.fits))?;
    if emit_plots {
        fs::write(
            out.join("curves.tsv"),
            io::plot_table(
                &outcome.fits,
                matrix.ladder[0].compute,
                config.target_compute,
            ),
        )?;
    }
    println!(
        "{}: subset {:.4}, full {:.4} (TR {:.3})",
        outcome.report.benchmark_id,
        outcome.report.subset_prediction,
        outcome.report.full_prediction,
        outcome.report.task_ratio
    );
    if let Some(fe) = outcome.report.final_error {
        println!("final error: {fe:.4}");
    }
    Ok(())
}

fn cmd_ablate(
    eval: &PathBuf,
    ladder: &PathBuf,
    target_compute: f64,
    truth_path: &PathBuf,
    out: &PathBuf,
    config_args: &ConfigArgs,
) -> Result<()> {
    let config = config_args.build(target_compute)?;
    let records = io::read_task_records(eval)?;
    let ladder = io::read_ladder_manifest(ladder)?;
    let matrix = build_eval_matrix(&records, &ladder, config.zero_epsilon)?;
    let sidecar = io::read_truth_sidecar(truth_path)?;
    let truth = TruthInputs {
        subset_truth: Some(sidecar.subset_truth),
        full_truth: Some(sidecar.full_truth),
    };
    let cells = run_ablation(&matrix, &config, &truth);
    fs::create_dir_all(out)?;
    let table = ablation_table(&cells);
    fs::write(out.join("ablation.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_synth(spec_path: &PathBuf, out: &PathBuf) -> Result<()> {
    let spec = io::read_synth_spec(spec_path)?;
    let (matrix, truth) = synth::generate(&spec)?;
    fs::create_dir_all(out)?;
    io::write_task_records(&out.join("eval.jsonl"), &io::matrix_to_records(&matrix))?;
    io::write_ladder_manifest(&out.join("ladder.json"), &matrix.ladder)?;
    io::write_truth_sidecar(&out.join("truth.json"), &truth)?;
    println!(
        "wrote {} tasks ({} forced zero), full truth {:.4}",
        matrix.full_task_count,
        matrix.zero_set.len(),
        truth.full_truth
    );
    Ok(())
}

fn cmd_verify_theory(samples: Option<&PathBuf>) -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "ok  " } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    let gap = am_gm_gap(&[1.0, 2.0, 3.0])?;
    println!(
        "sample [1, 2, 3]: delta = {:.9}, estimate = {:.9}",
        gap.delta, gap.estimate
    );
    check(
        "gap(1,2,3) delta = 2 - 6^(1/3)",
        (gap.delta - (2.0 - 6.0f64.powf(1.0 / 3.0))).abs() < 1e-9,
    );
    check("gap(1,2,3) estimate = 1/6", (gap.estimate - 1.0 / 6.0).abs() < 1e-9);

    let sample = LossSample::new(vec![0.1, 0.2, 0.3], 0.0)?;
    let decomp = theorem_decomposition(&sample);
    println!(
        "losses [0.1, 0.2, 0.3]: exact = {:.6}, passrate-moment = {:.6}, loss-moment = {:.6}",
        decomp.exact_acc, decomp.estimate_passrate_moments, decomp.estimate_loss_moments
    );
    check(
        "decomposition exact vs passrate moments <= 1e-6",
        (decomp.exact_acc - decomp.estimate_passrate_moments).abs() <= 1e-6,
    );
    check(
        "loss-moment deviation near 0.0139",
        ((decomp.estimate_loss_moments - decomp.exact_acc).abs() - 0.0139).abs() < 1e-3,
    );

    if let Some(path) = samples {
        let text = fs::read_to_string(path)?;
        let user: Vec<Vec<f64>> = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        for (i, xs) in user.iter().enumerate() {
            let report = am_gm_gap(xs)?;
            println!(
                "user sample {i}: delta = {:.9}, estimate = {:.9}, relative residual = {}",
                report.delta,
                report.estimate,
                report
                    .relative_residual
                    .map_or("NA".into(), |r| format!("{r:.6}")),
            );
        }
    }

    if failures > 0 {
        Err(Error::Domain(format!("{failures} theory checks failed")))
    } else {
        Ok(())
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Predict {
            eval,
            ladder,
            target_compute,
            anchors,
            anchor_weight,
            ground_truth,
            out,
            emit_plots,
            config,
        } => cmd_predict(
            eval,
            ladder,
            *target_compute,
            anchors.as_ref(),
            *anchor_weight,
            ground_truth.as_ref(),
            out,
            *emit_plots,
            config,
        ),
        Command::Ablate {
            eval,
            ladder,
            target_compute,
            truth,
            out,
            config,
        } => cmd_ablate(eval, ladder, *target_compute, truth, out, config),
        Command::Synth { spec, out } => cmd_synth(spec, out),
        Command::VerifyTheory { samples } => cmd_verify_theory(samples.as_ref()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
