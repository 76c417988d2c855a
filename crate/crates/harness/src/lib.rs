//! Verification harness over `orbicore`: reads a TOML configuration, runs
//! the selected suites and writes a JSON report plus CSV tables.

pub mod config;
pub mod suites;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use orbicore::orbifold::{canonical_atlas, strata, ModelSpace};
use orbicore::report::CheckRecord;
use orbicore::riemann::{average_metric, equivariant_partition_of_unity, MetricAveraging};
use orbicore::tangent::{random_orbisection, Orbisection};
use orbicore::linalg::min_eigenvalue;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::SuiteConfig;
use suites::{Context, Table};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration at `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error(transparent)]
    Core(#[from] orbicore::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

#[derive(Clone, Debug, Serialize)]
pub struct Environment {
    pub tool: String,
    pub version: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    fn current() -> Self {
        Environment {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteSection {
    pub name: String,
    pub pass: bool,
    pub records: Vec<CheckRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub checks: usize,
    pub passed: usize,
    pub failed: usize,
}

/// Self-contained outcome of a run: the effective configuration (with
/// tolerances already scaled) reproduces it.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub environment: Environment,
    pub seed: u64,
    pub orbifold: String,
    pub config: SuiteConfig,
    pub suites: Vec<SuiteSection>,
    pub summary: Summary,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &CheckRecord> {
        self.suites.iter().flat_map(|s| s.records.iter())
    }

    pub fn record(&self, name: &str) -> Option<&CheckRecord> {
        self.records().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn context(config: &SuiteConfig) -> Result<Context, HarnessError> {
    config.validate()?;
    let orbifold = config.build_orbifold()?;
    let atlas = canonical_atlas(&orbifold)?;
    Ok(Context { config: config.clone(), orbifold, atlas, tol: config.tolerances.clone() })
}

/// Runs the selected suites concurrently and assembles their records in
/// the declared order. Nothing is written.
pub fn evaluate(config: &SuiteConfig) -> Result<(SuiteReport, Vec<Table>), HarnessError> {
    let ctx = context(config)?;
    let selected: Vec<&str> = config::SUITES.iter().copied().filter(|s| config.suites.iter().any(|c| c == s)).collect();
    let outputs: Vec<suites::SuiteOutput> = std::thread::scope(|scope| {
        let handles: Vec<_> = selected.iter().map(|s| scope.spawn(|| suites::run_one(&ctx, s))).collect();
        handles.into_iter().map(|h| h.join().expect("suite thread panicked")).collect()
    });
    let mut sections = Vec::new();
    let mut tables = Vec::new();
    for (name, out) in selected.iter().zip(outputs) {
        sections.push(SuiteSection { name: name.to_string(), pass: out.records.iter().all(|r| r.pass), records: out.records });
        tables.extend(out.tables);
    }
    let checks = sections.iter().map(|s| s.records.len()).sum();
    let passed = sections.iter().flat_map(|s| &s.records).filter(|r| r.pass).count();
    let report = SuiteReport {
        environment: Environment::current(),
        seed: config.seed,
        orbifold: ctx.orbifold.name.clone(),
        config: config.clone(),
        suites: sections,
        summary: Summary { checks, passed, failed: checks - passed },
    };
    Ok((report, tables))
}

fn write_table(dir: &Path, t: &Table) -> Result<PathBuf, HarnessError> {
    let path = dir.join(&t.file);
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    let csv_err = |e: csv::Error| HarnessError::Io { path: path.display().to_string(), source: e.into() };
    w.write_record(&t.header).map_err(csv_err)?;
    for row in &t.rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// [`evaluate`], then writes `report.json` and the suite tables into
/// `config.out`.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport, HarnessError> {
    let (report, tables) = evaluate(config)?;
    let dir = PathBuf::from(&config.out);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("report.json");
    std::fs::write(&path, report.to_json()).map_err(io_err(&path))?;
    for t in &tables {
        write_table(&dir, t)?;
    }
    Ok(report)
}

/// Human-readable summary: orbifold, strata table, chart list.
pub fn describe(config: &SuiteConfig) -> Result<String, HarnessError> {
    let ctx = context(config)?;
    let o = &ctx.orbifold;
    let s = strata(o, config.grids.strata)?;
    let mut out = String::new();
    let model = match o.model {
        ModelSpace::FlatBall { dim, radius } => format!("flat ball of radius {radius} in R^{dim}"),
        ModelSpace::Sphere { dim } => format!("unit sphere S^{dim}"),
    };
    writeln!(out, "{}: {model} modulo a group of order {}", o.name, o.group.order()).unwrap();
    let isolated: Vec<usize> = s
        .strata
        .iter()
        .filter(|t| t.sample_points.len() == 1 && t.isotropy_order > 1)
        .map(|t| t.isotropy_order)
        .collect();
    let count = if s.len() == 1 { "1 stratum".to_string() } else { format!("{} strata", s.len()) };
    let mut summary = count;
    if let Some(&q) = isolated.iter().max() {
        let label = if o.model.is_flat() { "corner" } else { "poles" };
        write!(summary, "; {label} order {q}").unwrap();
    }
    writeln!(out, "{summary}").unwrap();
    writeln!(out, "strata:").unwrap();
    for (k, t) in s.strata.iter().enumerate() {
        let rep = &t.sample_points[0].representative;
        writeln!(
            out,
            "  {k}: isotropy order {}, {} sample points, e.g. {:?}",
            t.isotropy_order,
            t.sample_points.len(),
            rep.iter().map(|c| (c * 1e6).round() / 1e6).collect::<Vec<_>>()
        )
        .unwrap();
    }
    writeln!(out, "charts:").unwrap();
    for (i, c) in ctx.atlas.charts.iter().enumerate() {
        writeln!(
            out,
            "  {i}: center {:?}, radius {:.6}, isotropy order {}",
            c.center.iter().map(|x| (x * 1e6).round() / 1e6).collect::<Vec<_>>(),
            c.radius,
            c.isotropy.order()
        )
        .unwrap();
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FieldKind {
    Orbisection,
    Metric,
    Partition,
}

impl FieldKind {
    fn file(self) -> &'static str {
        match self {
            FieldKind::Orbisection => "orbisection.csv",
            FieldKind::Metric => "metric.csv",
            FieldKind::Partition => "partition.csv",
        }
    }
}

/// Writes one field sampled on the model grid of resolution `grid` to
/// `config.out`. Coordinates are ambient model coordinates; `chart` is the
/// chart index used for the lift and `element` the group label moving the
/// point into it.
pub fn dump_fields(config: &SuiteConfig, which: FieldKind, grid: usize) -> Result<PathBuf, HarnessError> {
    let ctx = context(config)?;
    let o = &ctx.orbifold;
    let n = o.ambient_dim();
    let points = o.model.grid(grid)?.points;
    let xs: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let fmt = |v: f64| format!("{v}");
    let mut header = Vec::new();
    let mut rows = Vec::new();
    match which {
        FieldKind::Orbisection => {
            let sigma = if config.dump.orbisection == "zero" {
                Orbisection::zero(o.clone(), &ctx.atlas)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                random_orbisection(o.clone(), &ctx.atlas, &mut rng, config.riemann.c1_norm, config.atlas.chart_samples)
            };
            header.extend(["chart".to_string(), "element".to_string()]);
            header.extend(xs.iter().cloned());
            header.extend((0..n).map(|i| format!("v{i}")));
            for y in &points {
                let Some((i, g)) = ctx.atlas.locate(o, y, 1.0) else { continue };
                // move the lifted vector back to y
                let v = o.group.matrix(g).transpose() * sigma.eval(i, &o.group.act(g, y));
                let mut row = vec![i.to_string(), g.to_string()];
                row.extend(y.iter().map(|c| fmt(*c)));
                row.extend(v.iter().map(|c| fmt(*c)));
                rows.push(row);
            }
        }
        FieldKind::Metric => {
            let raw = suites::raw_metric(n);
            let fields = ctx
                .atlas
                .charts
                .iter()
                .map(|c| average_metric(&o.model, c, raw.clone(), MetricAveraging::Diagonal, config.atlas.chart_samples))
                .collect::<orbicore::Result<Vec<_>>>()?;
            header.extend(["chart".to_string(), "element".to_string()]);
            header.extend(xs.iter().cloned());
            for a in 0..n {
                for b in 0..n {
                    header.push(format!("g{a}{b}"));
                }
            }
            header.push("min_eigenvalue".into());
            for y in &points {
                let Some((i, g)) = ctx.atlas.locate(o, y, 1.0) else { continue };
                let m = (fields[i])(&o.group.act(g, y));
                let mut row = vec![i.to_string(), g.to_string()];
                row.extend(y.iter().map(|c| fmt(*c)));
                for a in 0..n {
                    for b in 0..n {
                        row.push(fmt(m[(a, b)]));
                    }
                }
                row.push(fmt(min_eigenvalue(&m)));
                rows.push(row);
            }
        }
        FieldKind::Partition => {
            let pu = equivariant_partition_of_unity(o.clone(), &ctx.atlas, &points)?;
            header.extend(xs.iter().cloned());
            header.extend((0..ctx.atlas.len()).map(|i| format!("w_chart{i}")));
            header.push("sum".into());
            for y in &points {
                let w = pu.weights(y)?;
                let mut row: Vec<String> = y.iter().map(|c| fmt(*c)).collect();
                row.extend(w.iter().map(|c| fmt(*c)));
                row.push(fmt(w.iter().sum()));
                rows.push(row);
            }
        }
    }
    let dir = PathBuf::from(&config.out);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_table(&dir, &Table { file: which.file().into(), header, rows })
}
