//! Subcommand implementations. Each command reads or writes artifacts under
//! `out/<dataset>/<arch>/<seed>/` and embeds the config hash in every file.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use graft_core::audit::{noise_sweep, run_bias_audit, BiasReport};
use graft_core::data::{BiasSpec, Dataset};
use graft_core::evaluation::{
    consensus, fidelity, jaccard, render_summary, stability, transfer, FidelityReport, SummaryRow,
};
use graft_core::exemplars::ExemplarMode;
use graft_core::nn::{load_checkpoint, save_checkpoint, train, Arch, TrainedModel};
use graft_core::pipeline::{explain_all, profile_json, top_k_sets, ExplainSettings, RunMeta};
use graft_core::profiles::{frequency_scores, random_feature_set, top_k_indices, ProfileJson};
use graft_core::rules::{generate_rules, RuleRequest};
use graft_core::util::mean;

use crate::config::{config_hash, resolve_dataset, RunConfig};

/// Validation failures exit 1, everything that breaks mid-run exits 2.
pub enum CmdError {
    Validation(String),
    Runtime(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Validation(_) => 1,
            CmdError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Validation(m) | CmdError::Runtime(m) => m,
        }
    }
}

fn runtime(msg: impl Into<String>) -> CmdError {
    CmdError::Runtime(msg.into())
}

type CmdResult = Result<(), CmdError>;

/// Shared context for one invocation.
pub struct Ctx {
    pub config: RunConfig,
    pub hash: String,
    pub dataset: Dataset,
    pub settings: ExplainSettings,
}

impl Ctx {
    pub fn new(config: RunConfig) -> Result<Self, CmdError> {
        let hash = config_hash(&config);
        let settings = config.explain.settings().map_err(CmdError::Validation)?;
        let dataset = resolve_dataset(&config).map_err(CmdError::Runtime)?;
        Ok(Ctx {
            config,
            hash,
            dataset,
            settings,
        })
    }

    fn archs(&self) -> Vec<Arch> {
        self.config
            .architectures
            .iter()
            .map(|a| Arch::parse(a).expect("validated architecture"))
            .collect()
    }

    fn run_dir(&self, arch: Arch, seed: u64) -> PathBuf {
        self.config
            .out
            .join(&self.dataset.name)
            .join(arch.tag())
            .join(seed.to_string())
    }

    fn checkpoint_path(&self, arch: Arch, seed: u64) -> PathBuf {
        self.run_dir(arch, seed).join("checkpoint.bin")
    }

    fn profile_path(&self, arch: Arch, seed: u64, class: usize) -> PathBuf {
        self.run_dir(arch, seed).join(format!("profile_class_{class}.json"))
    }

    fn load_model(&self, arch: Arch, seed: u64) -> Result<TrainedModel, CmdError> {
        let path = self.checkpoint_path(arch, seed);
        if !path.exists() {
            return Err(runtime(format!(
                "checkpoint {} not found; run `graft train` first",
                path.display()
            )));
        }
        let (model, _) = load_checkpoint(&path, &self.dataset)
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        Ok(model)
    }

    fn load_profiles(&self, arch: Arch, seed: u64) -> Result<Vec<ProfileJson>, CmdError> {
        (0..self.dataset.class_count)
            .map(|c| {
                let path = self.profile_path(arch, seed, c);
                if !path.exists() {
                    return Err(runtime(format!(
                        "profile {} not found; run `graft explain` first",
                        path.display()
                    )));
                }
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| runtime(format!("{}: {e}", path.display())))
            })
            .collect()
    }

    fn meta(&self, arch: Arch, seed: u64) -> RunMeta {
        RunMeta {
            dataset: self.dataset.name.clone(),
            arch: arch.tag().to_string(),
            seed,
            config_hash: self.hash.clone(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Runs one closure per (arch, seed) job on a bounded worker pool. The
/// first failure (in job order) is reported.
fn for_each_run(
    ctx: &Ctx,
    f: impl Fn(Arch, u64) -> CmdResult + Sync,
) -> CmdResult {
    let jobs: Vec<(Arch, u64)> = ctx
        .archs()
        .into_iter()
        .flat_map(|a| ctx.config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let workers = ctx.config.workers.min(jobs.len()).max(1);
    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<(usize, CmdError)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(arch, seed)) = jobs.get(i) else { break };
                if let Err(e) = f(arch, seed) {
                    failures.lock().expect("failure list").push((i, e));
                }
            });
        }
    });

    let mut failures = failures.into_inner().expect("failure list");
    failures.sort_by_key(|(i, _)| *i);
    match failures.into_iter().next() {
        None => Ok(()),
        Some((_, e)) => Err(e),
    }
}

#[derive(Serialize)]
struct ModelSummary<'a> {
    config_hash: &'a str,
    dataset: &'a str,
    arch: &'a str,
    seed: u64,
    hidden_dim: usize,
    epochs: usize,
    initial_train_accuracy: f64,
    train_accuracy: f64,
    val_accuracy: f64,
    test_accuracy: f64,
}

pub fn cmd_train(ctx: &Ctx) -> CmdResult {
    for_each_run(ctx, |arch, seed| {
        let hp = ctx.config.train.hyperparams(seed);
        let model = train(&ctx.dataset, arch, &hp)
            .map_err(|e| runtime(format!("training {}/{seed}: {e}", arch.tag())))?;
        let dir = ctx.run_dir(arch, seed);
        save_checkpoint(&model, &ctx.hash, &dir.join("checkpoint.bin"))
            .map_err(|e| runtime(e.to_string()))?;
        write_json(
            &dir.join("model.json"),
            &ModelSummary {
                config_hash: &ctx.hash,
                dataset: &ctx.dataset.name,
                arch: arch.tag(),
                seed,
                hidden_dim: hp.hidden_dim,
                epochs: hp.epochs,
                initial_train_accuracy: model.initial_train_accuracy,
                train_accuracy: model.train_accuracy,
                val_accuracy: model.val_accuracy,
                test_accuracy: model.test_accuracy,
            },
        )
    })
}

pub fn cmd_explain(ctx: &Ctx) -> CmdResult {
    for_each_run(ctx, |arch, seed| {
        let model = ctx.load_model(arch, seed)?;
        let profiles = explain_all(&model, &ctx.dataset, &ctx.settings)
            .map_err(|e| runtime(e.to_string()))?;
        let meta = ctx.meta(arch, seed);
        for profile in &profiles {
            let json = profile_json(profile, &ctx.dataset, &meta, &ctx.settings);
            write_json(&ctx.profile_path(arch, seed, profile.class_id), &json)?;
        }
        Ok(())
    })
}

fn profile_sets(profiles: &[ProfileJson]) -> Vec<Vec<usize>> {
    profiles
        .iter()
        .map(|p| p.top_k.iter().map(|f| f.index).collect())
        .collect()
}

#[derive(Serialize)]
struct FidelityOutput<'a> {
    config_hash: &'a str,
    k: usize,
    profile: FidelityReport,
    /// Same masking with size-matched random feature sets.
    random: FidelityReport,
}

pub fn cmd_fidelity(ctx: &Ctx) -> CmdResult {
    for_each_run(ctx, |arch, seed| {
        let model = ctx.load_model(arch, seed)?;
        let profiles = ctx.load_profiles(arch, seed)?;
        let sets = profile_sets(&profiles);
        let k = ctx.settings.top_k;
        let random_sets: Vec<Vec<usize>> = sets
            .iter()
            .enumerate()
            .map(|(c, s)| {
                random_feature_set(
                    ctx.dataset.feature_dim,
                    s.len(),
                    seed.wrapping_mul(1000).wrapping_add(c as u64),
                )
            })
            .collect();
        let profile_rep =
            fidelity(&model, &ctx.dataset, &sets, k).map_err(|e| runtime(e.to_string()))?;
        let random_rep = fidelity(&model, &ctx.dataset, &random_sets, k)
            .map_err(|e| runtime(e.to_string()))?;
        write_json(
            &ctx.run_dir(arch, seed).join("fidelity.json"),
            &FidelityOutput {
                config_hash: &ctx.hash,
                k,
                profile: profile_rep,
                random: random_rep,
            },
        )
    })
}

#[derive(Serialize)]
struct StabilityOutput<'a> {
    config_hash: &'a str,
    report: graft_core::evaluation::StabilityReport,
}

pub fn cmd_stability(ctx: &Ctx) -> CmdResult {
    if ctx.config.seeds.len() < 2 {
        return Err(CmdError::Validation(
            "stability needs at least two seeds".into(),
        ));
    }
    for arch in ctx.archs() {
        let mut per_seed = Vec::new();
        for &seed in &ctx.config.seeds {
            per_seed.push(profile_sets(&ctx.load_profiles(arch, seed)?));
        }
        let report = stability(&per_seed, &ctx.config.seeds, ctx.settings.top_k)
            .map_err(|e| runtime(e.to_string()))?;
        let path = ctx
            .config
            .out
            .join(&ctx.dataset.name)
            .join(arch.tag())
            .join("stability.json");
        write_json(
            &path,
            &StabilityOutput {
                config_hash: &ctx.hash,
                report,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ConsensusOutput<'a> {
    config_hash: &'a str,
    seed: u64,
    report: graft_core::evaluation::ConsensusReport,
}

pub fn cmd_consensus(ctx: &Ctx) -> CmdResult {
    let tau = ctx.config.metrics.tau;
    if ctx.config.architectures.len() < tau {
        return Err(CmdError::Validation(format!(
            "consensus at tau {tau} needs at least {tau} architectures, got {}",
            ctx.config.architectures.len()
        )));
    }
    for &seed in &ctx.config.seeds {
        let mut per_arch = Vec::new();
        for arch in ctx.archs() {
            per_arch.push(profile_sets(&ctx.load_profiles(arch, seed)?));
        }
        let names: Vec<String> = ctx.config.architectures.clone();
        let report = consensus(&per_arch, &names, tau, ctx.settings.top_k)
            .map_err(|e| runtime(e.to_string()))?;
        let path = ctx
            .config
            .out
            .join(&ctx.dataset.name)
            .join(format!("consensus_{seed}.json"));
        write_json(
            &path,
            &ConsensusOutput {
                config_hash: &ctx.hash,
                seed,
                report,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TransferOutput<'a> {
    config_hash: &'a str,
    report: graft_core::evaluation::TransferReport,
}

fn frequency_sets(dataset: &Dataset, k: usize) -> Vec<Vec<usize>> {
    (0..dataset.class_count)
        .map(|c| {
            top_k_indices(&frequency_scores(dataset, c), k)
                .into_iter()
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

pub fn cmd_transfer(ctx: &Ctx) -> CmdResult {
    for_each_run(ctx, |arch, seed| {
        let model = ctx.load_model(arch, seed)?;
        let profiles = ctx.load_profiles(arch, seed)?;
        let graft_sets = profile_sets(&profiles);
        let freq_sets = frequency_sets(&ctx.dataset, ctx.settings.top_k);
        let report = transfer(
            &ctx.dataset,
            &graft_sets,
            &freq_sets,
            ctx.settings.top_k,
            seed,
            model.test_accuracy,
        )
        .map_err(|e| runtime(e.to_string()))?;
        write_json(
            &ctx.run_dir(arch, seed).join("transfer.json"),
            &TransferOutput {
                config_hash: &ctx.hash,
                report,
            },
        )
    })
}

#[derive(Serialize)]
struct AuditOutput {
    report: BiasReport,
    profiles: Vec<ProfileJson>,
}

pub fn cmd_audit(ctx: &Ctx) -> CmdResult {
    for_each_run(ctx, |arch, seed| {
        let bias = BiasSpec {
            sigma: ctx.config.audit.sigma,
            target_class: ctx.config.audit.target_class,
            seed,
        };
        let mut hp = ctx.config.train.hyperparams(seed);
        hp.epochs = ctx.config.audit.epochs;
        let (report, profiles) =
            run_bias_audit(&ctx.dataset, arch, &bias, &hp, &ctx.settings, &ctx.hash)
                .map_err(|e| runtime(e.to_string()))?;
        let dir = ctx.run_dir(arch, seed);
        write_json(&dir.join("audit.json"), &AuditOutput { report, profiles })?;

        if !ctx.config.audit.sigmas.is_empty() {
            let reports = noise_sweep(
                &ctx.dataset,
                arch,
                &ctx.config.audit.sigmas,
                ctx.config.audit.target_class,
                seed,
                &hp,
                &ctx.settings,
                &ctx.hash,
            )
            .map_err(|e| runtime(e.to_string()))?;
            write_json(&dir.join("noise_sweep.json"), &reports)?;
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct RulesOutput<'a> {
    config_hash: &'a str,
    rules: Vec<graft_core::rules::Rule>,
}

pub fn cmd_rules(ctx: &Ctx) -> CmdResult {
    let endpoint = ctx.config.rules.endpoint().map_err(CmdError::Validation)?;
    for_each_run(ctx, |arch, seed| {
        let profiles = ctx.load_profiles(arch, seed)?;
        let requests: Vec<RuleRequest> = profiles
            .iter()
            .map(|p| {
                RuleRequest::from_profile(
                    p,
                    ctx.config.rules.class_name(p.class_id),
                    &ctx.config.rules.dataset_context,
                )
                .map_err(|e| runtime(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let dir = ctx.run_dir(arch, seed).join("rules");
        let rules = generate_rules(&endpoint, &requests, &dir, ctx.config.rules.concurrency)
            .map_err(|e| runtime(e.to_string()))?;
        write_json(
            &dir.join("rules.json"),
            &RulesOutput {
                config_hash: &ctx.hash,
                rules,
            },
        )
    })
}

/// Writes `summary.tsv` for the grid from whatever per-run artifacts exist;
/// missing metrics render as NA.
pub fn cmd_summary(ctx: &Ctx) -> CmdResult {
    let mut rows = Vec::new();
    for arch in ctx.archs() {
        for &seed in &ctx.config.seeds {
            let dir = ctx.run_dir(arch, seed);
            let fid: Option<serde_json::Value> = read_json_opt(&dir.join("fidelity.json"))?;
            let tra: Option<serde_json::Value> = read_json_opt(&dir.join("transfer.json"))?;
            let stab: Option<serde_json::Value> = read_json_opt(
                &ctx.config
                    .out
                    .join(&ctx.dataset.name)
                    .join(arch.tag())
                    .join("stability.json"),
            )?;
            let cons: Option<serde_json::Value> = read_json_opt(
                &ctx.config
                    .out
                    .join(&ctx.dataset.name)
                    .join(format!("consensus_{seed}.json")),
            )?;
            rows.push(SummaryRow {
                dataset: ctx.dataset.name.clone(),
                arch: arch.tag().to_string(),
                seed,
                fid_minus: fid
                    .as_ref()
                    .and_then(|v| v["profile"]["fid_minus"].as_f64()),
                fid_plus: fid.as_ref().and_then(|v| v["profile"]["fid_plus"].as_f64()),
                jaccard: stab.as_ref().and_then(|v| v["report"]["mean"].as_f64()),
                consensus: cons.as_ref().and_then(|v| v["report"]["mean"].as_f64()),
                transfer_graft: tra
                    .as_ref()
                    .and_then(|v| v["report"]["graft_lr_accuracy"].as_f64()),
                transfer_freq: tra
                    .as_ref()
                    .and_then(|v| v["report"]["freq_lr_accuracy"].as_f64()),
                transfer_full: tra
                    .as_ref()
                    .and_then(|v| v["report"]["full_lr_accuracy"].as_f64()),
                compression: tra
                    .as_ref()
                    .and_then(|v| v["report"]["compression"].as_f64()),
            });
        }
    }
    let text = render_summary(&rows, &ctx.hash);
    write_text(
        &ctx.config.out.join(&ctx.dataset.name).join("summary.tsv"),
        &text,
    )
}

fn read_json_opt(path: &Path) -> Result<Option<serde_json::Value>, CmdError> {
    if !path.exists() {
        return Ok(None);
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Ablation grids: profile size K, attribution method, aggregation mode,
/// and exemplar selection strategy. Each grid becomes one TSV per run.
pub fn cmd_ablate(ctx: &Ctx) -> CmdResult {
    for_each_run(ctx, |arch, seed| {
        let model = ctx.load_model(arch, seed)?;
        let dir = ctx.run_dir(arch, seed);

        // Profile-size grid: one profile, three masks.
        let base = explain_all(&model, &ctx.dataset, &ctx.settings)
            .map_err(|e| runtime(e.to_string()))?;
        let mut k_table = format!("# config: {}\nk\tfid_minus\tfid_plus\n", ctx.hash);
        for k in [5usize, 10, 20] {
            let sets = top_k_sets(&base, k);
            let rep =
                fidelity(&model, &ctx.dataset, &sets, k).map_err(|e| runtime(e.to_string()))?;
            k_table.push_str(&format!("{k}\t{:.6}\t{:.6}\n", rep.fid_minus, rep.fid_plus));
        }
        write_text(&dir.join("ablation_k.tsv"), &k_table)?;

        // Attribution method grid.
        let mut m_table = format!("# config: {}\nmethod\tfid_minus\tfid_plus\n", ctx.hash);
        for method in [
            graft_core::attribution::AttributionMethod::IntegratedGradients,
            graft_core::attribution::AttributionMethod::GradTimesInput,
        ] {
            let settings = ExplainSettings {
                method,
                ..ctx.settings.clone()
            };
            let profiles = explain_all(&model, &ctx.dataset, &settings)
                .map_err(|e| runtime(e.to_string()))?;
            let sets = top_k_sets(&profiles, settings.top_k);
            let rep = fidelity(&model, &ctx.dataset, &sets, settings.top_k)
                .map_err(|e| runtime(e.to_string()))?;
            m_table.push_str(&format!(
                "{}\t{:.6}\t{:.6}\n",
                method.tag(),
                rep.fid_minus,
                rep.fid_plus
            ));
        }
        write_text(&dir.join("ablation_method.tsv"), &m_table)?;

        // Aggregation grid.
        let mut a_table = format!("# config: {}\naggregation\tfid_minus\tfid_plus\n", ctx.hash);
        for aggregation in [
            graft_core::profiles::Aggregation::Mean,
            graft_core::profiles::Aggregation::Median,
            graft_core::profiles::Aggregation::Max,
        ] {
            let settings = ExplainSettings {
                aggregation,
                ..ctx.settings.clone()
            };
            let profiles = explain_all(&model, &ctx.dataset, &settings)
                .map_err(|e| runtime(e.to_string()))?;
            let sets = top_k_sets(&profiles, settings.top_k);
            let rep = fidelity(&model, &ctx.dataset, &sets, settings.top_k)
                .map_err(|e| runtime(e.to_string()))?;
            a_table.push_str(&format!(
                "{}\t{:.6}\t{:.6}\n",
                aggregation.tag(),
                rep.fid_minus,
                rep.fid_plus
            ));
        }
        write_text(&dir.join("ablation_aggregation.tsv"), &a_table)?;

        // Exemplar strategy grid: deterministic FPS against five random
        // draws, comparing both stability and fidelity.
        let mut e_table = format!(
            "# config: {}\nmode\truns\tmean_jaccard\tmean_fid_minus\n",
            ctx.hash
        );
        let fps_sets = top_k_sets(&base, ctx.settings.top_k);
        let fps_rep = fidelity(&model, &ctx.dataset, &fps_sets, ctx.settings.top_k)
            .map_err(|e| runtime(e.to_string()))?;
        let fps_again = explain_all(&model, &ctx.dataset, &ctx.settings)
            .map_err(|e| runtime(e.to_string()))?;
        let fps_jaccard = mean(
            &fps_sets
                .iter()
                .zip(top_k_sets(&fps_again, ctx.settings.top_k).iter())
                .map(|(a, b)| jaccard(a, b))
                .collect::<Vec<f64>>(),
        );
        e_table.push_str(&format!(
            "{}\t2\t{:.6}\t{:.6}\n",
            ExemplarMode::Fps.tag(),
            fps_jaccard,
            fps_rep.fid_minus
        ));

        let mut random_sets = Vec::new();
        let mut random_fids = Vec::new();
        for draw in 0..5u64 {
            let settings = ExplainSettings {
                exemplar_mode: ExemplarMode::Random,
                selection_seed: seed.wrapping_mul(5).wrapping_add(draw),
                ..ctx.settings.clone()
            };
            let profiles = explain_all(&model, &ctx.dataset, &settings)
                .map_err(|e| runtime(e.to_string()))?;
            let sets = top_k_sets(&profiles, settings.top_k);
            let rep = fidelity(&model, &ctx.dataset, &sets, settings.top_k)
                .map_err(|e| runtime(e.to_string()))?;
            random_fids.push(rep.fid_minus);
            random_sets.push(sets);
        }
        let mut pair_scores = Vec::new();
        for i in 0..random_sets.len() {
            for j in (i + 1)..random_sets.len() {
                for c in 0..ctx.dataset.class_count {
                    pair_scores.push(jaccard(&random_sets[i][c], &random_sets[j][c]));
                }
            }
        }
        e_table.push_str(&format!(
            "{}\t5\t{:.6}\t{:.6}\n",
            ExemplarMode::Random.tag(),
            mean(&pair_scores),
            mean(&random_fids)
        ));
        write_text(&dir.join("ablation_exemplars.tsv"), &e_table)?;
        Ok(())
    })
}

/// `graft run`: train, explain, fidelity, transfer, then summary. The
/// cross-run metrics (stability, consensus) are added when the grid is
/// large enough for them.
pub fn cmd_run(ctx: &Ctx) -> CmdResult {
    cmd_train(ctx)?;
    cmd_explain(ctx)?;
    cmd_fidelity(ctx)?;
    cmd_transfer(ctx)?;
    if ctx.config.seeds.len() >= 2 {
        cmd_stability(ctx)?;
    }
    if ctx.config.architectures.len() >= ctx.config.metrics.tau {
        cmd_consensus(ctx)?;
    }
    cmd_summary(ctx)
}
