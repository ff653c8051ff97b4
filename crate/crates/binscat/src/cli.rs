//! Command-line front end with three workflows: `fit` (binned scatter
//! plot with optional line, intervals, band, polynomial overlay and
//! chained tests), `test` (specification and shape tests), and `select`
//! (data-driven choice of the number of bins).
//!
//! Exit codes: 0 success (warnings allowed), 2 configuration error,
//! 3 data error, 4 everything gated by the degrees-of-freedom checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::rc::Rc;

use clap::{Args, Parser, Subcommand};

use crate::basis::{build_basis, BasisSpec, ConstrainedBasis};
use crate::binselect::{select, BinSelectResult, SelectConfig, SelectionMethod};
use crate::dataset::{
    analyze_mass_points, df_check_nonparametric, effective_sample, ColumnSpec, Dataset,
    EffectiveSample,
};
use crate::error::{Error, Result};
use crate::estimator::{fit as fit_ls, mu_hat, FitResult, Vce};
use crate::inference::{
    build_grid, confidence_band_with_draws, confidence_intervals, fit_global_poly,
    spec_test_file, spec_test_poly, shape_test, sup_process_draws, EvalGrid, SimDraws, TestSide,
};
use crate::output::{
    assemble, write_savedata, write_savegrid, write_svg, GroupData, PlotRow, StyleOptions, Symbol,
};
use crate::partition::{
    even_partition, manual_partition, quantile_partition, unique_value_partition, Partition,
    Placement,
};

pub const REPORT_VERSION: &str = "v1";

#[derive(Parser, Debug)]
#[command(
    name = "binscat",
    version,
    about = "Binned scatter plot estimation and inference",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit and plot a binned scatter regression
    Fit(Box<FitArgs>),
    /// Parametric specification and shape restriction tests
    Test(Box<TestArgs>),
    /// Data-driven selection of the number of bins
    Select(Box<SelectArgs>),
}

fn parse_pair_usize(s: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated integers, got {s:?}"));
    }
    let a = parts[0].trim().parse().map_err(|_| format!("bad integer {:?}", parts[0]))?;
    let b = parts[1].trim().parse().map_err(|_| format!("bad integer {:?}", parts[1]))?;
    Ok((a, b))
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Input CSV file (UTF-8, header row; NA or empty cells are missing)
    pub input: PathBuf,
    /// Outcome column
    #[arg(long)]
    pub y: String,
    /// Running-variable column
    #[arg(long)]
    pub x: String,
    /// Covariate columns, comma separated
    #[arg(long, value_delimiter = ',')]
    pub covars: Vec<String>,
    /// Cluster-label column (requires --vce cluster)
    #[arg(long)]
    pub cluster: Option<String>,
    /// Frequency-weight column (positive integers)
    #[arg(long)]
    pub fweight: Option<String>,
    /// Group column: estimation and inference run per subgroup
    #[arg(long)]
    pub by: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct BinningArgs {
    /// Fixed number of bins (otherwise selected in a data-driven way)
    #[arg(long)]
    pub nbins: Option<usize>,
    /// Knot placement: qs (quantile), es (even), or comma-separated inner knots
    #[arg(long, default_value = "qs", allow_hyphen_values = true)]
    pub binspos: String,
    /// Bin-count selection method: dpi or rot
    #[arg(long, default_value = "dpi")]
    pub binsmethod: String,
    /// Initial bin count used by the plug-in selector
    #[arg(long)]
    pub nbinsrot: Option<usize>,
    /// Degrees-of-freedom cutoffs "a,b": a gates the selector and global
    /// polynomials, b gates each nonparametric procedure
    #[arg(long, default_value = "20,30", value_parser = parse_pair_usize)]
    pub dfcheck: (usize, usize),
    /// Skip the mass-point adjustment (treat the distinct count as n)
    #[arg(long)]
    pub nomassadj: bool,
    /// Variance estimator: robust or cluster
    #[arg(long, default_value = "robust")]
    pub vce: String,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    /// Simulation draws for bands and tests
    #[arg(long, default_value_t = 500)]
    pub nsims: usize,
    /// Evaluation points per bin for the sup/inf approximation
    #[arg(long, default_value_t = 20)]
    pub simsngrid: usize,
    /// Simulation seed
    #[arg(long = "seed", default_value_t = 0)]
    pub simsseed: u64,
    /// Confidence level in percent
    #[arg(long, default_value_t = 95.0)]
    pub level: f64,
}

#[derive(Args, Debug, Clone)]
pub struct TestSpecArgs {
    /// Degree and smoothness for specification testing, "p,s"
    #[arg(long, default_value = "3,3", value_parser = parse_pair_usize)]
    pub testmodel: (usize, usize),
    /// Degree of a global polynomial null model
    #[arg(long)]
    pub testmodelpoly: Option<usize>,
    /// CSV with the evaluation grid and binsreg_fit* columns to test against
    #[arg(long)]
    pub testmodelparfit: Option<PathBuf>,
    /// Degree and smoothness for shape testing, "p,s"
    #[arg(long, default_value = "3,3", value_parser = parse_pair_usize)]
    pub testshape: (usize, usize),
    /// Boundaries a for H0: sup mu^(v) <= a (comma separated)
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub testshapel: Vec<f64>,
    /// Boundaries a for H0: inf mu^(v) >= a
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub testshaper: Vec<f64>,
    /// Boundaries a for H0: mu^(v) == a
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub testshape2: Vec<f64>,
}

impl TestSpecArgs {
    fn any_requested(&self) -> bool {
        self.testmodelpoly.is_some()
            || self.testmodelparfit.is_some()
            || !self.testshapel.is_empty()
            || !self.testshaper.is_empty()
            || !self.testshape2.is_empty()
    }

    fn spec_requested(&self) -> bool {
        self.testmodelpoly.is_some() || self.testmodelparfit.is_some()
    }

    fn shape_requested(&self) -> bool {
        !self.testshapel.is_empty() || !self.testshaper.is_empty() || !self.testshape2.is_empty()
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Derivative order of the estimand
    #[arg(long, default_value_t = 0)]
    pub deriv: usize,
    /// Degree and smoothness of the dots, "p,s"
    #[arg(long, default_value = "0,0", value_parser = parse_pair_usize)]
    pub dots: (usize, usize),
    /// Dots per bin, evaluated on an even within-bin grid
    #[arg(long, default_value_t = 1)]
    pub dotsngrid: usize,
    /// Degree and smoothness of the line, "p,s" (off unless given)
    #[arg(long, value_parser = parse_pair_usize)]
    pub line: Option<(usize, usize)>,
    #[arg(long, default_value_t = 20)]
    pub linengrid: usize,
    /// Degree and smoothness of the confidence intervals, "p,s"
    #[arg(long, value_parser = parse_pair_usize)]
    pub ci: Option<(usize, usize)>,
    #[arg(long, default_value_t = 1)]
    pub cingrid: usize,
    /// Degree and smoothness of the confidence band, "p,s"
    #[arg(long, value_parser = parse_pair_usize)]
    pub cb: Option<(usize, usize)>,
    #[arg(long, default_value_t = 20)]
    pub cbngrid: usize,
    /// Degree of a global polynomial overlay
    #[arg(long)]
    pub polyreg: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub polyregngrid: usize,
    /// Interval points per bin for the overlay (0 = no intervals)
    #[arg(long, default_value_t = 0)]
    pub polyregcingrid: usize,
    #[command(flatten)]
    pub tests: TestSpecArgs,
    #[command(flatten)]
    pub binning: BinningArgs,
    /// Use one binning structure, selected on the full sample, for all subgroups
    #[arg(long)]
    pub samebinsby: bool,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Write every plotted series to this CSV
    #[arg(long)]
    pub savedata: Option<PathBuf>,
    /// Overwrite existing output files
    #[arg(long)]
    pub replace: bool,
    /// Skip the SVG plot
    #[arg(long)]
    pub noplot: bool,
    /// SVG output path
    #[arg(long, default_value = "binscat.svg")]
    pub svg: PathBuf,
    #[arg(long, default_value_t = 720)]
    pub width: u32,
    #[arg(long, default_value_t = 480)]
    pub height: u32,
    /// Per-group color cycle
    #[arg(long, value_delimiter = ',')]
    pub bycolors: Vec<String>,
    /// Per-group symbol cycle (circle,square,triangle,diamond,cross)
    #[arg(long, value_delimiter = ',')]
    pub bysymbols: Vec<String>,
    /// Per-group dash-pattern cycle (SVG dash arrays; "solid" for none)
    #[arg(long, value_delimiter = ',')]
    pub bylpatterns: Vec<String>,
    #[arg(long, default_value = "")]
    pub title: String,
    #[arg(long)]
    pub xlabel: Option<String>,
    #[arg(long)]
    pub ylabel: Option<String>,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Derivative order of the estimand
    #[arg(long, default_value_t = 0)]
    pub deriv: usize,
    /// Degree and smoothness used for bin selection, "p,s"
    #[arg(long, default_value = "0,0", value_parser = parse_pair_usize)]
    pub bins: (usize, usize),
    #[command(flatten)]
    pub tests: TestSpecArgs,
    #[command(flatten)]
    pub binning: BinningArgs,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Derivative order of the estimand
    #[arg(long, default_value_t = 0)]
    pub deriv: usize,
    /// Degree and smoothness the selection targets, "p,s"
    #[arg(long, default_value = "0,0", value_parser = parse_pair_usize)]
    pub bins: (usize, usize),
    #[command(flatten)]
    pub binning: BinningArgs,
    /// Evaluation points per bin in the saved grid
    #[arg(long, default_value_t = 20)]
    pub simsngrid: usize,
    /// Write the evaluation grid to this CSV
    #[arg(long)]
    pub savegrid: Option<PathBuf>,
    /// Overwrite existing output files
    #[arg(long)]
    pub replace: bool,
}

/// Parse arguments from the process command line and run.
pub fn run() -> i32 {
    let cli = Cli::parse();
    dispatch(cli)
}

pub fn dispatch(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Fit(a) => run_fit(&a),
        Command::Test(a) => run_test(&a),
        Command::Select(a) => run_select(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

fn classify(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::SmoothnessExceedsDegree { .. }
        | Error::DerivExceedsDegree { .. }
        | Error::MissingClusterColumn
        | Error::ZeroBins
        | Error::KnotOutOfRange { .. }
        | Error::DuplicateKnot(_)
        | Error::FileExists(_) => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone)]
enum Binspos {
    Quantile,
    Even,
    Manual(Vec<f64>),
}

struct Prepared {
    ds: Dataset,
    vce: Vce,
    binspos: Binspos,
    method: SelectionMethod,
    /// Nonparametric cutoff (second dfcheck value).
    n1: usize,
    /// Selector / global polynomial cutoff (first dfcheck value).
    n2: usize,
    nomassadj: bool,
    nbinsrot: Option<usize>,
}

fn prepare(data: &DataArgs, binning: &BinningArgs) -> Result<Prepared> {
    let vce = match binning.vce.as_str() {
        "robust" => Vce::Robust,
        "cluster" => Vce::Cluster,
        other => {
            return Err(Error::Config(format!(
                "--vce must be robust or cluster, got {other:?}"
            )))
        }
    };
    if vce == Vce::Cluster && data.cluster.is_none() {
        return Err(Error::MissingClusterColumn);
    }
    if vce == Vce::Robust && data.cluster.is_some() {
        return Err(Error::Config(
            "--cluster was given; pass --vce cluster to use it".into(),
        ));
    }
    let binspos = match binning.binspos.as_str() {
        "qs" => Binspos::Quantile,
        "es" => Binspos::Even,
        list => {
            let knots: std::result::Result<Vec<f64>, _> =
                list.split(',').map(|t| t.trim().parse::<f64>()).collect();
            match knots {
                Ok(k) if !k.is_empty() => Binspos::Manual(k),
                _ => {
                    return Err(Error::Config(format!(
                        "--binspos must be qs, es, or a comma-separated knot list, got {list:?}"
                    )))
                }
            }
        }
    };
    if matches!(binspos, Binspos::Manual(_)) && binning.nbins.is_some() {
        return Err(Error::Config(
            "--nbins conflicts with a manual --binspos knot list".into(),
        ));
    }
    let method = match binning.binsmethod.as_str() {
        "dpi" => SelectionMethod::Dpi,
        "rot" => SelectionMethod::Rot,
        other => {
            return Err(Error::Config(format!(
                "--binsmethod must be dpi or rot, got {other:?}"
            )))
        }
    };
    let spec = ColumnSpec {
        y: data.y.clone(),
        x: data.x.clone(),
        covariates: data.covars.clone(),
        cluster: data.cluster.clone(),
        fweight: data.fweight.clone(),
        by: data.by.clone(),
    };
    let ds = Dataset::load_csv(&data.input, &spec)?.expand_fweights();
    Ok(Prepared {
        ds,
        vce,
        binspos,
        method,
        n1: binning.dfcheck.1,
        n2: binning.dfcheck.0,
        nomassadj: binning.nomassadj,
        nbinsrot: binning.nbinsrot,
    })
}

fn placement_of(binspos: &Binspos) -> Placement {
    match binspos {
        Binspos::Quantile => Placement::Quantile,
        Binspos::Even => Placement::Even,
        Binspos::Manual(_) => Placement::Manual,
    }
}

/// How the binning for one sample was decided.
struct BinningDecision {
    partition: Partition,
    selection: Option<BinSelectResult>,
    /// Unique-values fallback: every nonparametric large-sample procedure
    /// is disabled.
    gated: bool,
    source: String,
    warnings: Vec<String>,
}

fn decide_binning(
    ds: &Dataset,
    p: usize,
    s: usize,
    v: usize,
    prep: &Prepared,
    nbins: Option<usize>,
) -> Result<BinningDecision> {
    let mut warnings = Vec::new();
    match &prep.binspos {
        Binspos::Manual(inner) => {
            let partition = manual_partition(&ds.x, inner)?;
            Ok(BinningDecision {
                partition,
                selection: None,
                gated: false,
                source: "manual knots".to_string(),
                warnings,
            })
        }
        _ => {
            let placement = placement_of(&prep.binspos);
            if let Some(j) = nbins {
                let partition = make_partition(&ds.x, j, placement)?;
                if partition.num_bins() < j {
                    warnings.push(format!(
                        "duplicate quantile knots collapsed: J reduced from {} to {}",
                        j,
                        partition.num_bins()
                    ));
                }
                Ok(BinningDecision {
                    partition,
                    selection: None,
                    gated: false,
                    source: format!("user nbins={j}"),
                    warnings,
                })
            } else {
                let cfg = SelectConfig {
                    method: prep.method,
                    nbinsrot: prep.nbinsrot,
                    n1: prep.n1,
                    n2: prep.n2,
                    nomassadj: prep.nomassadj,
                    vce: prep.vce,
                };
                let sel = select(ds, p, s, v, placement, &cfg)?;
                warnings.extend(sel.warnings.iter().cloned());
                if let Some(n_unique) = sel.fallback_unique_values {
                    let mass = analyze_mass_points(&ds.x);
                    let partition = unique_value_partition(&mass);
                    warnings.push(
                        "nonparametric estimation and inference disabled: too little variation in x"
                            .to_string(),
                    );
                    Ok(BinningDecision {
                        partition,
                        selection: Some(sel),
                        gated: true,
                        source: format!("unique-values fallback (J=N={n_unique})"),
                        warnings,
                    })
                } else {
                    let j = sel.selected_j();
                    let partition = make_partition(&ds.x, j, placement)?;
                    if partition.num_bins() < j {
                        warnings.push(format!(
                            "duplicate quantile knots collapsed: J reduced from {} to {}",
                            j,
                            partition.num_bins()
                        ));
                    }
                    let source = format!("selected ({} at p={p},s={s},v={v})", sel.method);
                    Ok(BinningDecision {
                        partition,
                        selection: Some(sel),
                        gated: false,
                        source,
                        warnings,
                    })
                }
            }
        }
    }
}

fn make_partition(x: &[f64], j: usize, placement: Placement) -> Result<Partition> {
    match placement {
        Placement::Quantile => quantile_partition(x, j),
        Placement::Even => even_partition(x, j),
        _ => unreachable!("manual handled separately"),
    }
}

/// Cache of fits keyed by (degree, smoothness) on one partition.
struct FitCache<'a> {
    ds: &'a Dataset,
    partition: &'a Partition,
    vce: Vce,
    map: BTreeMap<(usize, usize), Rc<(ConstrainedBasis, FitResult)>>,
}

impl<'a> FitCache<'a> {
    fn new(ds: &'a Dataset, partition: &'a Partition, vce: Vce) -> Self {
        FitCache {
            ds,
            partition,
            vce,
            map: BTreeMap::new(),
        }
    }

    fn get(&mut self, p: usize, s: usize) -> Result<Rc<(ConstrainedBasis, FitResult)>> {
        if let Some(hit) = self.map.get(&(p, s)) {
            return Ok(hit.clone());
        }
        let basis = build_basis(self.partition, p, s)?;
        let fit = fit_ls(self.ds, &basis, self.vce)?;
        let entry = Rc::new((basis, fit));
        self.map.insert((p, s), entry.clone());
        Ok(entry)
    }
}

fn fmt_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else {
        format!("{v:.3}")
    }
}

fn sample_line(es: &EffectiveSample, dropped: usize) -> String {
    format!(
        "sample: n={} N={} G={} n_eff={} dropped_rows={}",
        es.n, es.n_distinct, es.n_clusters, es.n_eff, dropped
    )
}

fn selection_line(sel: &BinSelectResult) -> String {
    format!(
        "selection: rot_poly={} rot_regul={} rot_uknot={} dpi={} dpi_uknot={} (method={})",
        sel.j_rot_poly, sel.j_rot_regul, sel.j_rot_uknot, sel.j_dpi, sel.j_dpi_uknot, sel.method
    )
}

struct TestRun {
    lines: Vec<String>,
    warnings: Vec<String>,
    any_ran: bool,
}

/// Run every requested test on one sample with a shared draw set per
/// (p, s) combination.
#[allow(clippy::too_many_arguments)]
fn run_tests_for(
    ds: &Dataset,
    es: &EffectiveSample,
    cache: &mut FitCache,
    tests: &TestSpecArgs,
    v: usize,
    n1: usize,
    sim: &SimArgs,
    x_name: &str,
) -> Result<TestRun> {
    let mut out = TestRun {
        lines: Vec::new(),
        warnings: Vec::new(),
        any_ran: false,
    };
    let j = cache.partition.num_bins();
    let mut draws_cache: BTreeMap<(usize, usize), Rc<(EvalGrid, SimDraws)>> = BTreeMap::new();
    let mut draws_for = |cache: &mut FitCache,
                         p: usize,
                         s: usize|
     -> Result<Rc<(EvalGrid, SimDraws)>> {
        if let Some(hit) = draws_cache.get(&(p, s)) {
            return Ok(hit.clone());
        }
        let pair = cache.get(p, s)?;
        let grid = build_grid(cache.partition, sim.simsngrid, true);
        let draws = sup_process_draws(&pair.1, &pair.0, &grid, v, sim.nsims, sim.simsseed)?;
        let entry = Rc::new((grid, draws));
        draws_cache.insert((p, s), entry.clone());
        Ok(entry)
    };

    if tests.spec_requested() {
        let (p, s) = tests.testmodel;
        BasisSpec::new(p, s, v)?;
        if !df_check_nonparametric(es.n_eff, p, s, j, n1) {
            out.warnings.push(format!(
                "specification tests skipped: degrees-of-freedom check failed at testmodel p={p},s={s}, J={j}"
            ));
        } else {
            let pair = cache.get(p, s)?;
            if let Some(p_null) = tests.testmodelpoly {
                let shared = draws_for(cache, p, s)?;
                let r = spec_test_poly(
                    ds,
                    es.n_distinct,
                    &pair.1,
                    &pair.0,
                    &shared.0,
                    v,
                    p_null,
                    &shared.1,
                )?;
                out.lines.push(format!(
                    "spec test (poly degree {p_null}, testmodel p={p},s={s}): sup|t|={} p_value={}",
                    fmt_float(r.statistic),
                    fmt_float(r.p_value)
                ));
                out.any_ran = true;
            }
            if let Some(path) = &tests.testmodelparfit {
                let results =
                    spec_test_file(&pair.1, &pair.0, v, path, x_name, sim.nsims, sim.simsseed)?;
                for (name, r) in results {
                    out.lines.push(format!(
                        "spec test (file column {name}, testmodel p={p},s={s}): sup|t|={} p_value={}",
                        fmt_float(r.statistic),
                        fmt_float(r.p_value)
                    ));
                    out.any_ran = true;
                }
            }
        }
    }

    if tests.shape_requested() {
        let (p, s) = tests.testshape;
        BasisSpec::new(p, s, v)?;
        if !df_check_nonparametric(es.n_eff, p, s, j, n1) {
            out.warnings.push(format!(
                "shape tests skipped: degrees-of-freedom check failed at testshape p={p},s={s}, J={j}"
            ));
        } else {
            let pair = cache.get(p, s)?;
            let shared = draws_for(cache, p, s)?;
            let mut run_side = |a: f64, side: TestSide| -> Result<()> {
                let r = shape_test(&pair.1, &pair.0, &shared.0, v, a, side, &shared.1)?;
                let (name, stat_name) = match side {
                    TestSide::Left => ("testshapel", "sup t"),
                    TestSide::Right => ("testshaper", "inf t"),
                    TestSide::Two => ("testshape2", "sup|t|"),
                };
                out.lines.push(format!(
                    "shape test ({name} a={a}, testshape p={p},s={s}): {stat_name}={} p_value={}",
                    fmt_float(r.statistic),
                    fmt_float(r.p_value)
                ));
                out.any_ran = true;
                Ok(())
            };
            for &a in &tests.testshapel {
                run_side(a, TestSide::Left)?;
            }
            for &a in &tests.testshaper {
                run_side(a, TestSide::Right)?;
            }
            for &a in &tests.testshape2 {
                run_side(a, TestSide::Two)?;
            }
        }
    }
    Ok(out)
}

fn split_groups(ds: &Dataset) -> Vec<(String, Dataset)> {
    match &ds.by {
        None => vec![(String::new(), ds.clone())],
        Some(by) => ds
            .group_labels()
            .into_iter()
            .map(|label| {
                let idx: Vec<usize> = by
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| **l == label)
                    .map(|(i, _)| i)
                    .collect();
                (label, ds.subset(&idx))
            })
            .collect(),
    }
}

fn alpha_of(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 100.0) {
        return Err(Error::Config(format!(
            "--level must be strictly between 0 and 100, got {level}"
        )));
    }
    Ok(1.0 - level / 100.0)
}

fn grid_rows(grid: &EvalGrid, ys: &[f64]) -> Vec<PlotRow> {
    grid.points
        .iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (&x, &y))| PlotRow::point(x, y, grid.bin_of[i], grid.is_knot[i]))
        .collect()
}

pub fn run_fit(args: &FitArgs) -> Result<i32> {
    let v = args.deriv;
    BasisSpec::new(args.dots.0, args.dots.1, v)?;
    for pair in [args.line, args.ci, args.cb].into_iter().flatten() {
        BasisSpec::new(pair.0, pair.1, v)?;
    }
    let alpha = alpha_of(args.sim.level)?;
    let prep = prepare(&args.data, &args.binning)?;
    let (p_dots, s_dots) = args.dots;

    let mut report = String::new();
    let _ = writeln!(report, "binscat fit report {REPORT_VERSION}");
    let _ = writeln!(
        report,
        "input: {} y={} x={} covariates=[{}] vce={}",
        args.data.input.display(),
        prep.ds.y_name,
        prep.ds.x_name,
        prep.ds.w_names.join(","),
        prep.vce
    );

    let pooled = if args.samebinsby && args.data.by.is_some() {
        Some(decide_binning(
            &prep.ds,
            p_dots,
            s_dots,
            v,
            &prep,
            args.binning.nbins,
        )?)
    } else {
        None
    };

    let groups = split_groups(&prep.ds);
    let mut group_datas: Vec<GroupData> = Vec::new();
    for (label, gds) in &groups {
        let es = effective_sample(gds, prep.nomassadj);
        if !label.is_empty() {
            let _ = writeln!(report, "group: {label}");
        }
        let _ = writeln!(report, "{}", sample_line(&es, prep.ds.dropped_rows));

        let decision = match &pooled {
            Some(d) => BinningDecision {
                partition: d.partition.clone(),
                selection: d.selection.clone(),
                gated: d.gated,
                source: format!("{} (samebinsby, full sample)", d.source),
                warnings: if label == &groups[0].0 {
                    d.warnings.clone()
                } else {
                    Vec::new()
                },
            },
            None => decide_binning(gds, p_dots, s_dots, v, &prep, args.binning.nbins)?,
        };
        let mut warnings = decision.warnings.clone();
        let partition = &decision.partition;
        let j = partition.num_bins();
        let _ = writeln!(
            report,
            "binning: placement={} J={} source={}",
            partition.placement(),
            j,
            decision.source
        );
        if let Some(sel) = &decision.selection {
            if sel.fallback_unique_values.is_none() {
                let _ = writeln!(report, "{}", selection_line(sel));
            }
        }

        let mut cache = FitCache::new(gds, partition, prep.vce);
        let mut data = GroupData {
            label: label.clone(),
            ..Default::default()
        };
        let mut proc_lines: Vec<String> = Vec::new();

        // a failed check at the dots spec turns off every large-sample
        // procedure, same as the unique-values fallback; canonical dots
        // and degree-zero intervals stay available in that regime
        let gated =
            decision.gated || !df_check_nonparametric(es.n_eff, p_dots, s_dots, j, prep.n1);
        if gated && !decision.gated {
            warnings.push(format!(
                "nonparametric estimation and inference disabled: effective sample {} too small for dots p={p_dots},s={s_dots} at J={j}",
                es.n_eff
            ));
        }
        let (dp, dsm) = if gated { (0, 0) } else { (p_dots, s_dots) };
        if gated && (p_dots, s_dots) != (0, 0) {
            warnings.push(format!(
                "dots p={p_dots},s={s_dots} not available here; using canonical dots 0,0"
            ));
        }
        {
            let pair = cache.get(dp, dsm)?;
            let grid = build_grid(partition, args.dotsngrid, false);
            let mut ys = Vec::with_capacity(grid.len());
            for &x0 in &grid.points {
                ys.push(mu_hat(&pair.1, &pair.0, x0, v)?);
            }
            data.dots = grid_rows(&grid, &ys);
            proc_lines.push(format!("dots: p={dp} s={dsm} K={} df=ok", pair.0.dim()));
        }

        if let Some((p, s)) = args.line {
            if gated {
                warnings.push("line skipped: nonparametric estimation disabled".to_string());
            } else if df_check_nonparametric(es.n_eff, p, s, j, prep.n1) {
                let pair = cache.get(p, s)?;
                let grid = build_grid(partition, args.linengrid, true);
                let mut ys = Vec::with_capacity(grid.len());
                for &x0 in &grid.points {
                    ys.push(mu_hat(&pair.1, &pair.0, x0, v)?);
                }
                data.line = Some(grid_rows(&grid, &ys));
                proc_lines.push(format!("line: p={p} s={s} K={} df=ok", pair.0.dim()));
            } else {
                proc_lines.push(format!("line: p={p} s={s} df=failed (skipped)"));
                warnings.push("line skipped: degrees-of-freedom check failed".to_string());
            }
        }

        if let Some((p, s)) = args.ci {
            let allowed = if gated {
                (p, s) == (0, 0)
            } else {
                df_check_nonparametric(es.n_eff, p, s, j, prep.n1)
            };
            if allowed {
                let pair = cache.get(p, s)?;
                let grid = build_grid(partition, args.cingrid, false);
                let intervals = confidence_intervals(&pair.1, &pair.0, &grid, v, alpha)?;
                data.ci = Some(
                    intervals
                        .iter()
                        .enumerate()
                        .map(|(i, ci)| PlotRow {
                            x: ci.x,
                            y: ci.center,
                            lower: Some(ci.lower),
                            upper: Some(ci.upper),
                            bin: grid.bin_of[i],
                            is_knot: grid.is_knot[i],
                        })
                        .collect(),
                );
                proc_lines.push(format!("ci: p={p} s={s} K={} df=ok", pair.0.dim()));
            } else if gated {
                warnings.push(format!(
                    "ci p={p},s={s} not available here; only ci 0,0 is allowed"
                ));
            } else {
                proc_lines.push(format!("ci: p={p} s={s} df=failed (skipped)"));
                warnings.push("ci skipped: degrees-of-freedom check failed".to_string());
            }
        }

        if let Some((p, s)) = args.cb {
            if gated {
                warnings.push("cb skipped: nonparametric inference disabled".to_string());
            } else if df_check_nonparametric(es.n_eff, p, s, j, prep.n1) {
                let pair = cache.get(p, s)?;
                let grid = build_grid(partition, args.cbngrid, true);
                let draws =
                    sup_process_draws(&pair.1, &pair.0, &grid, v, args.sim.nsims, args.sim.simsseed)?;
                let band = confidence_band_with_draws(&pair.1, &pair.0, &grid, v, alpha, &draws)?;
                data.cb = Some(
                    (0..grid.len())
                        .map(|i| PlotRow {
                            x: grid.points[i],
                            y: band.center[i],
                            lower: Some(band.lower[i]),
                            upper: Some(band.upper[i]),
                            bin: grid.bin_of[i],
                            is_knot: grid.is_knot[i],
                        })
                        .collect(),
                );
                proc_lines.push(format!(
                    "cb: p={p} s={s} K={} critical_value={} df=ok",
                    pair.0.dim(),
                    fmt_float(band.crit)
                ));
            } else {
                proc_lines.push(format!("cb: p={p} s={s} df=failed (skipped)"));
                warnings.push("cb skipped: degrees-of-freedom check failed".to_string());
            }
        }

        if let Some(p_poly) = args.polyreg {
            if p_poly + 1 < es.n_distinct {
                let poly = fit_global_poly(gds, p_poly, es.n_distinct)?;
                let grid = build_grid(partition, args.polyregngrid, false);
                let mut rows = grid_rows(
                    &grid,
                    &grid
                        .points
                        .iter()
                        .map(|&x| poly.value(x, v))
                        .collect::<Vec<_>>(),
                );
                if args.polyregcingrid > 0 && v == 0 {
                    let ci_grid = build_grid(partition, args.polyregcingrid, false);
                    let z = crate::inference::normal_two_sided_multiplier(alpha);
                    for (i, &x) in ci_grid.points.iter().enumerate() {
                        let m = poly.value(x, 0);
                        let se = poly.std_err(x);
                        rows.push(PlotRow {
                            x,
                            y: m,
                            lower: Some(m - z * se),
                            upper: Some(m + z * se),
                            bin: ci_grid.bin_of[i],
                            is_knot: false,
                        });
                    }
                    rows.sort_by(|a, b| a.x.total_cmp(&b.x));
                }
                data.polyreg = Some(rows);
                proc_lines.push(format!("polyreg: degree={p_poly} df=ok"));
            } else {
                proc_lines.push(format!("polyreg: degree={p_poly} df=failed (skipped)"));
                warnings.push(format!(
                    "polyreg skipped: degree {p_poly} needs more distinct x values than {}",
                    es.n_distinct
                ));
            }
        }

        for line in &proc_lines {
            let _ = writeln!(report, "  {line}");
        }

        if args.tests.any_requested() {
            if gated {
                warnings.push("tests skipped: nonparametric inference disabled".to_string());
            } else {
                let tr = run_tests_for(
                    gds,
                    &es,
                    &mut cache,
                    &args.tests,
                    v,
                    prep.n1,
                    &args.sim,
                    &prep.ds.x_name,
                )?;
                for line in &tr.lines {
                    let _ = writeln!(report, "  {line}");
                }
                warnings.extend(tr.warnings);
            }
        }

        for w in &warnings {
            let _ = writeln!(report, "warning: {w}");
        }
        group_datas.push(data);
    }

    let style = StyleOptions {
        colors: args.bycolors.clone(),
        symbols: args
            .bysymbols
            .iter()
            .map(|s| Symbol::parse(s))
            .collect::<Result<_>>()?,
        patterns: args
            .bylpatterns
            .iter()
            .map(|p| if p == "solid" { String::new() } else { p.clone() })
            .collect(),
    };
    let bundle = assemble(
        group_datas,
        &style,
        &args.title,
        args.xlabel.as_deref().unwrap_or(&prep.ds.x_name),
        args.ylabel.as_deref().unwrap_or(&prep.ds.y_name),
    );

    let mut artifacts = Vec::new();
    if let Some(path) = &args.savedata {
        write_savedata(&bundle, path, args.replace)?;
        artifacts.push(format!("savedata={}", path.display()));
    }
    if !args.noplot {
        write_svg(&bundle, &args.svg, args.width, args.height)?;
        artifacts.push(format!("svg={}", args.svg.display()));
    }
    if !artifacts.is_empty() {
        let _ = writeln!(report, "artifacts: {}", artifacts.join(" "));
    }
    print!("{report}");
    Ok(0)
}

pub fn run_test(args: &TestArgs) -> Result<i32> {
    if !args.tests.any_requested() {
        return Err(Error::Config(
            "no test requested: pass --testmodelpoly, --testmodelparfit, --testshapel, --testshaper or --testshape2"
                .into(),
        ));
    }
    let v = args.deriv;
    let alpha = alpha_of(args.sim.level)?;
    let _ = alpha;
    let prep = prepare(&args.data, &args.binning)?;
    let (p_bins, s_bins) = args.bins;
    if args.binning.nbins.is_none() && !matches!(prep.binspos, Binspos::Manual(_)) {
        BasisSpec::new(p_bins, s_bins, v)?;
    }

    let mut report = String::new();
    let _ = writeln!(report, "binscat test report {REPORT_VERSION}");
    let _ = writeln!(
        report,
        "input: {} y={} x={} covariates=[{}] vce={}",
        args.data.input.display(),
        prep.ds.y_name,
        prep.ds.x_name,
        prep.ds.w_names.join(","),
        prep.vce
    );
    let es = effective_sample(&prep.ds, prep.nomassadj);
    let _ = writeln!(report, "{}", sample_line(&es, prep.ds.dropped_rows));

    let decision = decide_binning(&prep.ds, p_bins, s_bins, v, &prep, args.binning.nbins)?;
    let _ = writeln!(
        report,
        "binning: placement={} J={} source={}",
        decision.partition.placement(),
        decision.partition.num_bins(),
        decision.source
    );
    if let Some(sel) = &decision.selection {
        if sel.fallback_unique_values.is_none() {
            let _ = writeln!(report, "{}", selection_line(sel));
        }
    }
    for w in &decision.warnings {
        let _ = writeln!(report, "warning: {w}");
    }

    if decision.gated {
        let _ = writeln!(
            report,
            "warning: no test results: too little variation in x for nonparametric inference"
        );
        print!("{report}");
        return Ok(4);
    }

    let mut cache = FitCache::new(&prep.ds, &decision.partition, prep.vce);
    let tr = run_tests_for(
        &prep.ds,
        &es,
        &mut cache,
        &args.tests,
        v,
        prep.n1,
        &args.sim,
        &prep.ds.x_name,
    )?;
    let _ = writeln!(
        report,
        "simulation: nsims={} simsngrid={} seed={}",
        args.sim.nsims, args.sim.simsngrid, args.sim.simsseed
    );
    for line in &tr.lines {
        let _ = writeln!(report, "  {line}");
    }
    for w in &tr.warnings {
        let _ = writeln!(report, "warning: {w}");
    }
    if !tr.any_ran {
        let _ = writeln!(
            report,
            "warning: no test results: every requested test was gated by the degrees-of-freedom checks"
        );
        print!("{report}");
        return Ok(4);
    }
    print!("{report}");
    Ok(0)
}

pub fn run_select(args: &SelectArgs) -> Result<i32> {
    let v = args.deriv;
    let (p, s) = args.bins;
    BasisSpec::new(p, s, v)?;
    if args.binning.nbins.is_some() {
        return Err(Error::Config(
            "select chooses the number of bins; --nbins is not accepted here".into(),
        ));
    }
    let prep = prepare(&args.data, &args.binning)?;
    let placement = match &prep.binspos {
        Binspos::Manual(_) => {
            return Err(Error::Config(
                "bin selection requires --binspos qs or es".into(),
            ))
        }
        other => placement_of(other),
    };

    let mut report = String::new();
    let _ = writeln!(report, "binscat select report {REPORT_VERSION}");
    let _ = writeln!(
        report,
        "input: {} y={} x={} covariates=[{}] vce={}",
        args.data.input.display(),
        prep.ds.y_name,
        prep.ds.x_name,
        prep.ds.w_names.join(","),
        prep.vce
    );
    let es = effective_sample(&prep.ds, prep.nomassadj);
    let _ = writeln!(report, "{}", sample_line(&es, prep.ds.dropped_rows));
    let _ = writeln!(
        report,
        "target: p={p} s={s} v={v} placement={placement} method={}",
        prep.method
    );

    let cfg = SelectConfig {
        method: prep.method,
        nbinsrot: prep.nbinsrot,
        n1: prep.n1,
        n2: prep.n2,
        nomassadj: prep.nomassadj,
        vce: prep.vce,
    };
    let sel = select(&prep.ds, p, s, v, placement, &cfg)?;

    let _ = writeln!(report, "  ROT-POLY   {}", sel.j_rot_poly);
    let _ = writeln!(report, "  ROT-REGUL  {}", sel.j_rot_regul);
    let _ = writeln!(report, "  ROT-UKNOT  {}", sel.j_rot_uknot);
    let _ = writeln!(report, "  DPI        {}", sel.j_dpi);
    let _ = writeln!(report, "  DPI-UKNOT  {}", sel.j_dpi_uknot);
    if let Some(c) = &sel.imse {
        let _ = writeln!(
            report,
            "imse constants: bias={:.6e} variance={:.6e}",
            c.bias, c.variance
        );
    }
    if let Some(n_unique) = sel.fallback_unique_values {
        let _ = writeln!(
            report,
            "fallback: unique values of x used as bins (J=N={n_unique})"
        );
    }
    for w in &sel.warnings {
        let _ = writeln!(report, "warning: {w}");
    }

    if let Some(path) = &args.savegrid {
        let partition = if sel.fallback_unique_values.is_some() {
            unique_value_partition(&analyze_mass_points(&prep.ds.x))
        } else {
            make_partition(&prep.ds.x, sel.selected_j(), placement)?
        };
        let grid = build_grid(&partition, args.simsngrid, true);
        write_savegrid(&grid, &prep.ds.w_names, &prep.ds.x_name, path, args.replace)?;
        let _ = writeln!(report, "artifacts: savegrid={}", path.display());
    }
    print!("{report}");
    Ok(0)
}
