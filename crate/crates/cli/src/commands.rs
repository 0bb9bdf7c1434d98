use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use unlearn_core::experiments::{default_spec, run_experiment, Experiment};
use unlearn_core::registry::{default_workers, JobState, ListQuery, ModelRecord, Registry, RegistryOptions, WorkspaceInfo};
use unlearn_core::{json, AttackDirection, HyperGrid, Method, Statistic};

use crate::config::FileConfig;
use crate::format::{sig6, Align, Table};
use crate::{Cli, Command, Failure, WorkspaceArgs};

pub const DATA_DIR_ENV: &str = "UNLEARN_DATA_DIR";
const DEFAULT_DATA_DIR: &str = "unlearn-data";
const DEFAULT_PORT: u16 = 8080;

struct Context {
    file: FileConfig,
    data_dir: PathBuf,
    workers: usize,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, Failure> {
        let file = match &cli.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let data_dir = std::env::var_os(DATA_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| cli.data_dir.clone())
            .or_else(|| file.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
        let workers = cli.workers.or(file.workers).unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(Failure::usage("--workers must be at least 1"));
        }
        Ok(Self { file, data_dir, workers })
    }

    fn registry(&self) -> Result<Registry, Failure> {
        let registry = Registry::new(RegistryOptions {
            data_dir: Some(self.data_dir.clone()),
            max_workers: self.workers,
        })?;
        registry.load_all()?;
        Ok(registry)
    }

    /// The named workspace, or the configured (default) one, created on
    /// first use.
    fn workspace(&self, registry: &Registry, args: &WorkspaceArgs) -> Result<WorkspaceInfo, Failure> {
        if let Some(id) = &args.workspace {
            return Ok(registry.workspace_info(id)?);
        }
        let mut spec = self.file.workspace.clone().unwrap_or_else(|| default_spec(7));
        if let Some(fc) = args.forget_class {
            spec.dataset.forget_class = fc;
        }
        if registry.workspace_info(&spec.id()?).is_err() {
            eprintln!("training reference models for workspace {}", spec.id()?);
        }
        Ok(registry.create_workspace(&spec)?)
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = Context::new(&cli)?;
    match cli.command {
        Command::Build {
            ws,
            method,
            epochs,
            lr,
            batch,
            seed,
            base,
            params,
        } => {
            let registry = ctx.registry()?;
            let info = ctx.workspace(&registry, &ws)?;
            let grid = build_grid(&ctx.file, &registry, method, epochs, lr, batch, seed, base, params)?;
            build(&registry, &info.id, &grid)
        }
        Command::Screen { ws, sort, filter, json } => {
            let registry = ctx.registry()?;
            let info = ctx.workspace(&registry, &ws)?;
            let query = ListQuery::parse(sort.as_deref(), filter.as_deref())?;
            let records = registry.list_models(&info.id, &query)?;
            if json {
                emit(&json::to_string(&records)?, None)
            } else {
                emit(&screen_table(&records).render(), None)
            }
        }
        Command::Contrast { ws, a, b, out } => {
            let registry = ctx.registry()?;
            let info = ctx.workspace(&registry, &ws)?;
            let report = registry.compare(&info.id, &a, &b)?;
            emit(&json::to_string(&report)?, out.as_deref())
        }
        Command::Attack { ws, model, stat, dir, csv } => {
            let statistic: Statistic = stat.parse()?;
            let direction: AttackDirection = dir.parse()?;
            let registry = ctx.registry()?;
            let info = ctx.workspace(&registry, &ws)?;
            let detail = registry.attack_detail(&info.id, &model, statistic, direction)?;
            let s = &detail.sweep;
            let mut text = String::from("threshold,FPR,FNR,epsilon,AS,PS\n");
            for k in 0..s.len() {
                let row = [s.thresholds[k], s.fpr[k], s.fnr[k], s.epsilon[k], s.attack_score[k], s.privacy_score[k]];
                text.push_str(&row.map(sig6).join(","));
                text.push('\n');
            }
            emit(&text, csv.as_deref())
        }
        Command::Experiment { name, seed, out_dir } => {
            let experiment: Experiment = name.parse()?;
            let spec = ctx.file.workspace.clone().unwrap_or_else(|| experiment.default_spec(seed));
            let doc = run_experiment(experiment, &spec, seed)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
            let json_path = out_dir.join(format!("{}.json", experiment.name()));
            let csv_path = out_dir.join(format!("{}.csv", experiment.name()));
            write_file(&json_path, &doc.to_json()?)?;
            write_file(&csv_path, &doc.to_csv())?;
            println!("{}\n{}", json_path.display(), csv_path.display());
            Ok(())
        }
        Command::Workspaces => {
            let registry = ctx.registry()?;
            let mut table = Table::new(&[
                ("id", Align::Left),
                ("forget_class", Align::Right),
                ("models", Align::Right),
                ("elbow_layer", Align::Right),
            ]);
            for w in registry.list_workspaces() {
                table.push(vec![
                    w.id.clone(),
                    w.spec.dataset.forget_class.to_string(),
                    w.model_count.to_string(),
                    w.elbow_layer.to_string(),
                ]);
            }
            emit(&table.render(), None)
        }
        Command::Serve { port, host } => {
            let registry = ctx.registry()?;
            let port = port.or(ctx.file.port).unwrap_or(DEFAULT_PORT);
            let host = host.or_else(|| ctx.file.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Failure::usage(format!("bad listen address {host}:{port}: {e}")))?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::runtime(e.to_string()))?;
            eprintln!("listening on http://{addr} (data dir {})", ctx.data_dir.display());
            runtime
                .block_on(unlearn_server::serve(registry, addr))
                .map_err(|e| Failure::runtime(format!("server: {e}")))
        }
    }
}

/// Flags first, then the config file's `[grid]`, then the method's default grid.
#[allow(clippy::too_many_arguments)]
fn build_grid(
    file: &FileConfig,
    registry: &Registry,
    method: Option<String>,
    epochs: Vec<usize>,
    lr: Vec<f64>,
    batch: Vec<usize>,
    seed: Option<u64>,
    base: Option<String>,
    params: Vec<(String, f64)>,
) -> Result<HyperGrid, Failure> {
    let fg = &file.grid;
    let method = method
        .or_else(|| fg.method.clone())
        .ok_or_else(|| Failure::usage("no method given (use --method or [grid].method)"))?;
    let known = registry.methods();
    if !known.contains(&method) {
        return Err(Failure::usage(format!("unknown method `{method}` (available: {})", known.join(", "))));
    }
    let base = base.or_else(|| fg.base_model_id.clone()).unwrap_or_else(|| "original".into());
    let seed = seed.or(fg.seed).unwrap_or(0);
    let mut grid = match Method::from_id(&method) {
        Some(m) => HyperGrid::default_for(m, &base, seed),
        None => HyperGrid {
            base_model_id: base,
            method: method.clone(),
            epochs: Vec::new(),
            lrs: Vec::new(),
            batch_sizes: Vec::new(),
            seed,
            method_params: Default::default(),
        },
    };
    fn pick<T: Clone>(flag: Vec<T>, file: &Option<Vec<T>>, default: Vec<T>) -> Vec<T> {
        if !flag.is_empty() {
            flag
        } else {
            file.clone().unwrap_or(default)
        }
    }
    grid.epochs = pick(epochs, &fg.epochs, grid.epochs);
    grid.lrs = pick(lr, &fg.lrs, grid.lrs);
    grid.batch_sizes = pick(batch, &fg.batch_sizes, grid.batch_sizes);
    grid.method_params.extend(fg.method_params.clone());
    grid.method_params.extend(params);
    Ok(grid)
}

fn build(registry: &Registry, workspace: &str, grid: &HyperGrid) -> Result<(), Failure> {
    let jobs = registry.submit_build(workspace, grid)?;
    eprintln!("workspace {workspace}: {} job(s) queued", jobs.len());
    let done = registry.wait_jobs(&jobs)?;
    let mut table = Table::new(&[
        ("job", Align::Left),
        ("model", Align::Left),
        ("state", Align::Left),
        ("epochs", Align::Right),
        ("lr", Align::Right),
        ("bs", Align::Right),
        ("UA", Align::Right),
        ("RA", Align::Right),
        ("TUA", Align::Right),
        ("TRA", Align::Right),
        ("RT", Align::Right),
        ("WCPS", Align::Right),
        ("error", Align::Left),
    ]);
    let mut failed = 0;
    for status in &done {
        let c = &status.config;
        let record = status.model_ids.first().map(|id| registry.model(workspace, id)).transpose()?;
        let metric = |f: fn(&ModelRecord) -> f64| record.as_ref().map_or_else(|| "-".into(), |r| sig6(f(r)));
        if status.state == JobState::Failed {
            failed += 1;
        }
        table.push(vec![
            status.job_id.clone(),
            status.model_ids.first().cloned().unwrap_or_else(|| "-".into()),
            format!("{:?}", status.state).to_lowercase(),
            c.epochs.to_string(),
            sig6(c.lr),
            c.batch_size.to_string(),
            metric(|r| r.summary.ua),
            metric(|r| r.summary.ra),
            metric(|r| r.summary.tua),
            metric(|r| r.summary.tra),
            metric(|r| r.summary.rt_seconds),
            metric(|r| r.summary.wcps),
            status.error.clone().unwrap_or_default(),
        ]);
    }
    emit(&table.render(), None)?;
    if failed > 0 {
        return Err(Failure::runtime(format!("{failed} of {} job(s) failed", done.len())));
    }
    Ok(())
}

pub const SCREEN_COLUMNS: [&str; 11] = ["id", "method", "epochs", "lr", "bs", "UA", "RA", "TUA", "TRA", "RT", "WCPS"];

fn screen_table(records: &[ModelRecord]) -> Table {
    let aligns = [Align::Left, Align::Left].into_iter().chain(std::iter::repeat(Align::Right));
    let columns: Vec<(&str, Align)> = SCREEN_COLUMNS.iter().copied().zip(aligns).collect();
    let mut table = Table::new(&columns);
    for r in records {
        let (epochs, lr, bs) = match r.config.hyperparameters() {
            Some((e, l, b)) => (e.to_string(), sig6(l), b.to_string()),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let s = &r.summary;
        table.push(vec![
            r.id.clone(),
            r.method_label().to_string(),
            epochs,
            lr,
            bs,
            sig6(s.ua),
            sig6(s.ra),
            sig6(s.tua),
            sig6(s.tra),
            sig6(s.rt_seconds),
            sig6(s.wcps),
        ]);
    }
    table
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Writes to `path`, or standard output without one.
fn emit(text: &str, path: Option<&Path>) -> Result<(), Failure> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::runtime(format!("stdout: {e}")))
        }
    }
}
