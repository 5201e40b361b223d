use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args};
use rayon::prelude::*;
use rnaforge_core::dataset::{self, PairRecord};
use rnaforge_core::decode::{best_of_n, decade_grid, DesignSampler, Metric, PolicySampler, TargetInitSampler};
use rnaforge_core::harness;
use rnaforge_core::policy::{load_checkpoint, save_checkpoint, PolicyCheckpoint, PolicyConfig};
use rnaforge_core::train::{self, TrainConfig};
use rnaforge_core::{fold, EnergyParams, Error, Result, Sequence, Structure, StructureSet};

pub struct Ctx {
    pub params: EnergyParams,
    pub seed: u64,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(params: Option<&Path>, seed: u64, out: PathBuf) -> Result<Self> {
        let params = match params {
            Some(p) => EnergyParams::load(p)?,
            None => EnergyParams::default(),
        };
        Ok(Ctx { params, seed, out })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn structures(&self, path: &Path) -> Result<StructureSet> {
        let set = StructureSet::read(path, self.params.min_hairpin)?;
        if set.is_empty() {
            return Err(Error::Usage(format!("{}: no structures", path.display())));
        }
        Ok(set)
    }
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric {s:?} (expected prob, ned, mfe or umfe)"))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Policy from `--checkpoint`, or the heuristic baseline with `--baseline`.
#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long, conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Sample from the heuristic initialization instead of a policy.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Mask the policy to the target's design space.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    constrained: bool,
}

enum Sampler {
    Policy(Box<PolicyCheckpoint>),
    Baseline,
}

impl SamplerArgs {
    fn load(&self) -> Result<Sampler> {
        match (&self.checkpoint, self.baseline) {
            (Some(path), _) => Ok(Sampler::Policy(Box::new(load_checkpoint(path)?))),
            (None, true) => Ok(Sampler::Baseline),
            (None, false) => Err(Error::Usage("either --checkpoint or --baseline is required".into())),
        }
    }

    fn with<T>(&self, sampler: &Sampler, f: impl FnOnce(&dyn DesignSampler, &str) -> Result<T>) -> Result<T> {
        match sampler {
            Sampler::Policy(ckpt) => {
                let s = PolicySampler {
                    ckpt,
                    constrained: self.constrained,
                    temperature: self.temperature,
                    greedy: false,
                };
                f(&s, if self.constrained { "policy-constrained" } else { "policy-unconstrained" })
            }
            Sampler::Baseline => f(&TargetInitSampler, "baseline"),
        }
    }
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    /// Sequence to fold (repeatable).
    #[arg(long = "sequence")]
    sequences: Vec<String>,
    /// File with one sequence per line.
    #[arg(long)]
    input: Option<PathBuf>,
}

pub fn fold(ctx: &Ctx, args: FoldArgs) -> Result<()> {
    let mut texts = args.sequences;
    if let Some(path) = &args.input {
        texts.extend(
            read_text(path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned),
        );
    }
    if texts.is_empty() {
        return Err(Error::Usage("nothing to fold: pass --sequence or --input".into()));
    }
    let seqs = texts.iter().map(|t| Sequence::parse(t)).collect::<Result<Vec<_>>>()?;
    let rows: Vec<Result<String>> = seqs
        .par_iter()
        .map(|x| {
            let s = fold::summarize(x, &ctx.params)?;
            let ensemble = -ctx.params.rt * s.ln_q + 0.0;
            Ok(format!(
                "{x}\t{}\t{:.1}\t{}\t{ensemble:.4}",
                s.mfe_structure,
                s.mfe_value as f64 / 10.0,
                s.mfe_count
            ))
        })
        .collect();
    let mut out = String::from("sequence\tmfe_structure\tmfe_energy\tmfe_count\tensemble_energy\n");
    for r in rows {
        out.push_str(&r?);
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// TSV of `structure<TAB>sequence` lines.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, requires = "sequence")]
    structure: Option<String>,
    #[arg(long, requires = "structure")]
    sequence: Option<String>,
}

pub fn eval(ctx: &Ctx, args: EvalArgs) -> Result<()> {
    let mut pairs = Vec::new();
    if let Some(path) = &args.pairs {
        for (lineno, line) in read_text(path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let (s, x) = line
                .split_once('\t')
                .ok_or_else(|| err("expected structure<TAB>sequence".into()))?;
            pairs.push((
                Structure::parse(s.trim(), ctx.params.min_hairpin).map_err(|e| err(e.to_string()))?,
                Sequence::parse(x.trim()).map_err(|e| err(e.to_string()))?,
            ));
        }
    }
    if let (Some(s), Some(x)) = (&args.structure, &args.sequence) {
        pairs.push((Structure::parse(s, ctx.params.min_hairpin)?, Sequence::parse(x)?));
    }
    if pairs.is_empty() {
        return Err(Error::Usage("nothing to evaluate: pass --pairs or --structure/--sequence".into()));
    }
    print!("{}", harness::evaluate_designs(&pairs, &ctx.params)?.to_tsv());
    Ok(())
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    structures: PathBuf,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = "prob", value_parser = parse_metric)]
    metric: Metric,
    #[command(flatten)]
    sampler: SamplerArgs,
}

pub fn design(ctx: &Ctx, args: DesignArgs) -> Result<()> {
    let set = ctx.structures(&args.structures)?;
    let sampler = args.sampler.load()?;
    let grid = decade_grid(args.n.max(1));
    let results = args.sampler.with(&sampler, |s, _| {
        set.items
            .par_iter()
            .map(|y| best_of_n(s, y, args.n, args.metric, &ctx.params, ctx.seed, &grid))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = String::from("structure\tsequence\tp\tned\tis_mfe\tis_umfe\n");
    let mut curves = format!("structure_id,n,{}\n", args.metric);
    for (id, (y, r)) in set.iter().zip(&results).enumerate() {
        match r.best.as_ref().map(|x| (x, fold::fold_summary(x, y, &ctx.params))) {
            Some((x, Ok(ev))) => {
                let _ = writeln!(
                    table,
                    "{y}\t{x}\t{}\t{}\t{}\t{}",
                    ev.probability,
                    ev.ned,
                    u8::from(ev.is_mfe),
                    u8::from(ev.is_umfe)
                );
            }
            _ => {
                let _ = writeln!(table, "{y}\t-\t0\t1\t0\t0");
            }
        }
        for (n, v) in &r.curve {
            let _ = writeln!(curves, "{id},{n},{v}");
        }
    }
    ctx.write("design.tsv", &table)?;
    ctx.write("curves.csv", &curves)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Random sequences to fold.
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 10)]
    len_min: usize,
    #[arg(long, default_value_t = 80)]
    len_max: usize,
    /// Keep at most this many distinct structures.
    #[arg(long)]
    max_structures: Option<usize>,
    #[arg(long, default_value_t = dataset::DEFAULT_DESIGNS_PER_STRUCTURE)]
    designs_per_structure: usize,
    /// Teacher hill-climbing iterations per design.
    #[arg(long, default_value_t = dataset::DEFAULT_TEACHER_BUDGET)]
    budget: usize,
}

pub fn gen_data(ctx: &Ctx, args: GenDataArgs) -> Result<()> {
    let seqs = dataset::gen_random_sequences(args.count, args.len_min, args.len_max, ctx.seed)?;
    let mut corpus = dataset::build_structure_corpus(&seqs, &ctx.params);
    if let Some(m) = args.max_structures {
        corpus.items.truncate(m);
    }
    let records = dataset::build_sl_dataset(&corpus, args.designs_per_structure, args.budget, ctx.seed, &ctx.params)?;
    ctx.write("structures.txt", &corpus.to_list_string())?;
    ctx.write("sl_corpus.tsv", &dataset::pairs_to_tsv(&records))?;
    let mean = records.iter().map(|r| r.teacher_score).sum::<f64>() / records.len().max(1) as f64;
    println!("structures\t{}\nrecords\t{}\nmean_teacher_p\t{mean}", corpus.len(), records.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    testset: PathBuf,
    /// Keep candidates whose normalized edit distance exceeds this.
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
}

pub fn filter_data(ctx: &Ctx, args: FilterArgs) -> Result<()> {
    let cands = StructureSet::read(&args.candidates, ctx.params.min_hairpin)?;
    let test = StructureSet::read(&args.testset, ctx.params.min_hairpin)?;
    let kept = dataset::filter_by_distance(&cands, &test, args.threshold)?;
    ctx.write("filtered.txt", &kept.to_list_string())?;
    println!("candidates\t{}\nkept\t{}", cands.len(), kept.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SelectRlArgs {
    #[arg(long)]
    structures: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Samples per structure for the selection statistics.
    #[arg(long, default_value_t = dataset::DEFAULT_SELECTION_K)]
    k: usize,
}

pub fn select_rl(ctx: &Ctx, args: SelectRlArgs) -> Result<()> {
    let cands = ctx.structures(&args.structures)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (stats, kept) = dataset::select_rl_subset(&cands, &ckpt, args.k, &ctx.params, ctx.seed)?;
    ctx.write("rl_stats.tsv", &dataset::rl_stats_to_tsv(&stats))?;
    ctx.write("rl_set.txt", &kept.to_list_string())?;
    println!("candidates\t{}\nkept\t{}", cands.len(), kept.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = PolicyConfig::default().n_layers)]
    layers: usize,
    #[arg(long, default_value_t = PolicyConfig::default().n_heads)]
    heads: usize,
    #[arg(long, default_value_t = PolicyConfig::default().d_model)]
    d_model: usize,
    #[arg(long, default_value_t = PolicyConfig::default().d_ff)]
    d_ff: usize,
    #[arg(long, default_value_t = PolicyConfig::default().max_context)]
    max_context: usize,
}

impl ModelArgs {
    fn config(&self) -> PolicyConfig {
        PolicyConfig {
            n_layers: self.layers,
            n_heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            max_context: self.max_context,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainSlArgs {
    /// TSV of `structure<TAB>sequence` training pairs.
    #[arg(long)]
    corpus: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    checkpoint_in: Option<PathBuf>,
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::sl().lr)]
    lr: f64,
    #[command(flatten)]
    model: ModelArgs,
}

fn save_with(ctx: &Ctx, ckpt: &PolicyCheckpoint, explicit: Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let path = explicit.unwrap_or_else(|| ctx.out.join(default));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_checkpoint(ckpt, &path)?;
    Ok(path)
}

pub fn train_sl(ctx: &Ctx, args: TrainSlArgs) -> Result<()> {
    let records: Vec<PairRecord> = dataset::read_pairs(&args.corpus, &ctx.params)?;
    let mut ckpt = match &args.checkpoint_in {
        Some(p) => load_checkpoint(p)?,
        None => PolicyCheckpoint::init(args.model.config(), ctx.seed)?,
    };
    let cfg = TrainConfig {
        lr: args.lr,
        steps: args.steps,
        batch_size: args.batch,
        seed: ctx.seed,
        ..TrainConfig::sl()
    };
    let mut trace = Vec::new();
    let outcome = train::train_sl(&mut ckpt, &records, &cfg, &mut trace);
    // the last good parameters are kept even when training diverges
    let path = save_with(ctx, &ckpt, args.checkpoint_out, "sl.ckpt")?;
    ctx.write("sl_trace.csv", &train::sl_trace_csv(&trace))?;
    outcome?;
    println!("checkpoint\t{}\nsteps\t{}", path.display(), trace.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainRlArgs {
    #[arg(long)]
    structures: PathBuf,
    #[arg(long)]
    checkpoint_in: PathBuf,
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::rl().steps)]
    steps: usize,
    #[arg(long, default_value_t = TrainConfig::rl().group_k)]
    group_k: usize,
    #[arg(long, default_value_t = TrainConfig::rl().lr)]
    lr: f64,
    /// Keep the final parameters rather than the best evaluated ones.
    #[arg(long)]
    keep_last: bool,
}

pub fn train_rl(ctx: &Ctx, args: TrainRlArgs) -> Result<()> {
    let set = ctx.structures(&args.structures)?;
    let mut ckpt = load_checkpoint(&args.checkpoint_in)?;
    let cfg = TrainConfig {
        lr: args.lr,
        steps: args.steps,
        group_k: args.group_k,
        seed: ctx.seed,
        keep_best: !args.keep_last,
        ..TrainConfig::rl()
    };
    let mut trace = Vec::new();
    let outcome = train::train_rl(&mut ckpt, &set, &cfg, &ctx.params, &mut trace);
    let path = save_with(ctx, &ckpt, args.checkpoint_out, "rl.ckpt")?;
    ctx.write("rl_trace.csv", &train::rl_trace_csv(&trace))?;
    outcome?;
    println!("checkpoint\t{}\nsteps\t{}", path.display(), trace.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    structures: PathBuf,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = "prob", value_parser = parse_metric)]
    metric: Metric,
    #[command(flatten)]
    sampler: SamplerArgs,
}

pub fn bench(ctx: &Ctx, args: BenchArgs) -> Result<()> {
    let set = ctx.structures(&args.structures)?;
    let sampler = args.sampler.load()?;
    let (out, name) = args.sampler.with(&sampler, |s, name| {
        Ok((harness::benchmark(s, &set, args.n, args.metric, ctx.seed, &ctx.params)?, name.to_owned()))
    })?;
    ctx.write("bench.tsv", &out.report.to_tsv())?;
    ctx.write("curves.csv", &out.curves_csv())?;
    ctx.write("summary.json", &out.summary(&name).to_json())?;
    let timing = harness::timing_report(out.timings());
    ctx.write("timing.csv", &timing.to_csv())?;
    ctx.write("timing_slopes.csv", &timing.slopes_csv())?;
    let a = &out.report.aggregate;
    println!(
        "structures\t{}\nmean_p\t{}\nmean_ned\t{}\nmfe\t{}\numfe\t{}",
        a.structures, a.mean_p, a.mean_ned, a.mfe_count, a.umfe_count
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    structures: PathBuf,
    /// Policy checkpoint; a uniform policy is used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

pub fn validity_sweep(ctx: &Ctx, args: SweepArgs) -> Result<()> {
    let set = ctx.structures(&args.structures)?;
    let ckpt = match &args.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let longest = set.iter().map(Structure::len).max().unwrap_or(1);
            PolicyCheckpoint::zeros(PolicyConfig {
                max_context: (2 * longest + 4).max(PolicyConfig::default().max_context),
                ..PolicyConfig::default()
            })?
        }
    };
    let sweep = harness::validity_sweep(&ckpt, &set, args.samples, ctx.seed)?;
    ctx.write("validity.tsv", &sweep.to_tsv())?;
    print!("{}", sweep.to_tsv());
    Ok(())
}
