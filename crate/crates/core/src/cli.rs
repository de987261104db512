//! Campaign configuration and the drivers behind the `nll` binary.
//!
//! A campaign reads one TOML file, runs one kind of experiment and writes
//! CSV/JSON artifacts into the output directory. CSVs reproducing a figure
//! of the reference study carry the figure's label in their name.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::continuation::{escaped_continuation, ContinuationConfig};
use crate::energy::{energy, rho0_sweep, rho1_sweep, SweepGeometry, SweepPoint};
use crate::error::{Error, Result};
use crate::gamma::{classify_regime, ratios};
use crate::geodesics::{cost_sweep, transition_costs, GeodesicConfig, PathPolyline, TransitionCosts};
use crate::grid::{build_grid, AnnulusGrid, ScalarField};
use crate::ldg::{biaxiality, MaterialParams, QTensor, DEFAULT_B, DEFAULT_C, DEFAULT_LAMBDA_BAR_SQ};
use crate::solvers::{
    campaign_starts, deflation_campaign, gradient_flow_snapshots, ic_bd, ic_esc, ic_escaped, ic_random, ic_wors,
    newton_solve, perturb, refine_records, CampaignOptions, NewtonOptions, SolutionRecord, SolverConfig,
};
use crate::stability::{stability_report, CoeffFields, StabilityConfig, Subspace, Verdict};
use crate::state::{State, System};
use crate::symmetry::{dedup, group_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSection {
    #[serde(rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// `27AC/B²`; mutually exclusive with `A`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_reduced: Option<f64>,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda_bar_sq: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        Self { a: None, t_reduced: None, b: DEFAULT_B, c: DEFAULT_C, lambda_bar_sq: DEFAULT_LAMBDA_BAR_SQ }
    }
}

impl MaterialSection {
    /// Without `A` or `t_reduced`, `A = −B²/(3C)`.
    pub fn params(&self) -> Result<MaterialParams> {
        match (self.a, self.t_reduced) {
            (Some(_), Some(_)) => Err(Error::Config("material: give A or t_reduced, not both".into())),
            (Some(a), None) => MaterialParams::new(a, self.b, self.c, self.lambda_bar_sq),
            (None, Some(t)) => MaterialParams::from_reduced_temperature(t, self.b, self.c, self.lambda_bar_sq),
            (None, None) => MaterialParams::new(-self.b * self.b / (3.0 * self.c), self.b, self.c, self.lambda_bar_sq),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub n: usize,
    pub rho: f64,
    pub eps_corner: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self { n: 129, rho: 0.2, eps_corner: 4.0 }
    }
}

impl GeometrySection {
    pub fn grid(&self) -> Result<Arc<AnnulusGrid>> {
        build_grid(self.n, self.rho, self.eps_corner)
    }

    pub fn sweep(&self) -> SweepGeometry {
        SweepGeometry { n: self.n, eps_corner: self.eps_corner }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CampaignKind {
    Solve,
    Flow,
    Deflate,
    Stability,
    Geodesics,
    Gamma,
    SweepRho0,
    SweepRho1,
    EscapedContinuation,
}

impl CampaignKind {
    pub const ALL: [CampaignKind; 9] = [
        CampaignKind::Solve,
        CampaignKind::Flow,
        CampaignKind::Deflate,
        CampaignKind::Stability,
        CampaignKind::Geodesics,
        CampaignKind::Gamma,
        CampaignKind::SweepRho0,
        CampaignKind::SweepRho1,
        CampaignKind::EscapedContinuation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CampaignKind::Solve => "solve",
            CampaignKind::Flow => "flow",
            CampaignKind::Deflate => "deflate",
            CampaignKind::Stability => "stability",
            CampaignKind::Geodesics => "geodesics",
            CampaignKind::Gamma => "gamma",
            CampaignKind::SweepRho0 => "sweep-rho0",
            CampaignKind::SweepRho1 => "sweep-rho1",
            CampaignKind::EscapedContinuation => "escaped-continuation",
        }
    }
}

impl fmt::Display for CampaignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialCondition {
    Wors,
    Bd,
    Esc,
    Escaped,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Aspect ratios for the crossing sweep; empty means every snapped
    /// value from `rho_lo` to `rho_hi`.
    pub rho_grid: Vec<f64>,
    pub rho_lo: f64,
    pub rho_hi: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { rho_grid: Vec::new(), rho_lo: 0.05, rho_hi: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSection {
    /// Costs to use instead of computing them: `[c1, c2, c3, c4]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub costs: Option<[f64; 4]>,
    /// Number of equispaced aspect ratios in `(0, 1)`.
    pub n_rho: usize,
    pub n_eta: usize,
}

impl Default for GammaSection {
    fn default() -> Self {
        Self { costs: None, n_rho: 200, n_eta: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub kind: CampaignKind,
    pub seed: u64,
    pub system: System,
    pub ic: InitialCondition,
    /// BD orientation (±1).
    pub orientation: i8,
    /// Escaped ring width for `ic = "esc"`; default `0.96 − ρ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub winding: i8,
    /// Constrain Newton to the symmetry group (WORS solves).
    pub symmetrize: bool,
    /// Flow initial noise amplitude as a fraction of `s₊`.
    pub perturbation: f64,
    /// Flow snapshot times; empty means the figure times for the start.
    pub snapshots: Vec<f64>,
    /// Random starts added to the deflation start list.
    pub n_random: usize,
    /// Run the deflation search at this coarser resolution, then refine
    /// every solution to `geometry.n`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse_n: Option<usize>,
    pub deflation: CampaignOptions,
    pub stability: StabilityConfig,
    pub geodesics: GeodesicConfig,
    /// Reduced temperatures for the cost table.
    pub t_values: Vec<f64>,
    pub gamma: GammaSection,
    pub sweep: SweepSection,
    pub continuation: ContinuationConfig,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            kind: CampaignKind::Solve,
            seed: 1,
            system: System::Reduced,
            ic: InitialCondition::Wors,
            orientation: 1,
            eta: None,
            winding: 1,
            symmetrize: true,
            perturbation: 1e-3,
            snapshots: Vec::new(),
            n_random: 0,
            coarse_n: None,
            deflation: CampaignOptions::default(),
            stability: StabilityConfig::default(),
            geodesics: GeodesicConfig::default(),
            t_values: vec![-12.0, -9.0, -6.0, -3.0, -1.0],
            gamma: GammaSection::default(),
            sweep: SweepSection::default(),
            continuation: ContinuationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: PathBuf::from("nll-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub material: MaterialSection,
    pub geometry: GeometrySection,
    pub solver: SolverConfig,
    pub campaign: CampaignSection,
    pub output: OutputSection,
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.material.params()?;
        self.solver.validate()?;
        if self.campaign.orientation.abs() != 1 || self.campaign.winding.abs() != 1 {
            return Err(Error::Config("orientation and winding must be +1 or -1".into()));
        }
        if !(self.campaign.perturbation >= 0.0) {
            return Err(Error::Config("perturbation must be non-negative".into()));
        }
        let c = &self.campaign.continuation;
        if !(c.step > 0.0 && c.step.is_finite()) {
            return Err(Error::Config(format!("continuation step must be positive, got {}", c.step)));
        }
        if self.campaign.geodesics.n_path < 2 {
            return Err(Error::Config("geodesics.n_path must be at least 2".into()));
        }
        Ok(())
    }
}

/// What `run` reports back besides the files it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub kind: CampaignKind,
    pub directory: PathBuf,
    pub seconds: f64,
    pub summary: Value,
}

fn params_json(p: &MaterialParams) -> Value {
    json!({
        "A": p.a(), "B": p.b(), "C": p.c(), "lambda_bar_sq": p.lambda_bar_sq(),
        "s_plus": p.s_plus(), "t_reduced": p.t_reduced(),
    })
}

fn grid_json(g: &AnnulusGrid) -> Value {
    let s = g.spec();
    json!({ "n": s.n, "h": s.h, "rho": s.rho_requested, "rho_snapped": s.rho_snapped, "eps_corner": s.eps() })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn biaxiality_field(state: &State) -> ScalarField {
    let g = state.grid().clone();
    let v = (0..g.len()).map(|i| biaxiality(&QTensor::new(state.node_q(i)))).collect();
    ScalarField::from_values(&g, v).expect("grid-sized")
}

/// `0.2 → "0_2"`, `0.02 → "0_02"`.
fn rho_tag(rho: f64) -> String {
    let s = format!("{rho}");
    s.replace('.', "_")
}

struct Ctx {
    cfg: CampaignConfig,
    params: MaterialParams,
    out: PathBuf,
}

impl Ctx {
    fn record_json(&self, rec: &SolutionRecord, class: Option<usize>) -> Value {
        json!({
            "schema": 1,
            "start": rec.start,
            "label": rec.label,
            "energy": rec.energy,
            "residual": rec.residual,
            "iterations": rec.iterations,
            "symmetry_class": class.or(rec.symmetry_class),
            "system": rec.state.system(),
            "classification": rec.info,
            "params": params_json(&self.params),
            "grid": grid_json(rec.state.grid()),
            "config": self.cfg.solver,
            "seed": self.cfg.campaign.seed,
        })
    }

    fn write_record(&self, dir: &Path, rec: &SolutionRecord, class: Option<usize>) -> Result<()> {
        fs::create_dir_all(dir)?;
        rec.state.export(dir, "")?;
        write_json(&dir.join("record.json"), &self.record_json(rec, class))
    }

    fn initial(&self, grid: &Arc<AnnulusGrid>) -> Result<State> {
        let c = &self.cfg.campaign;
        let p = &self.params;
        let s = match c.ic {
            InitialCondition::Wors => ic_wors(grid, p),
            InitialCondition::Bd => ic_bd(grid, p, c.orientation),
            InitialCondition::Esc => ic_esc(grid, p, c.eta.unwrap_or(0.96 - grid.spec().rho_snapped))?,
            InitialCondition::Escaped => return Ok(ic_escaped(grid, p, c.winding)),
            InitialCondition::Random => ic_random(grid, p, c.system, c.seed),
        };
        Ok(if c.system == System::Full { s.to_full() } else { s })
    }

    fn newton_options(&self) -> NewtonOptions {
        let c = &self.cfg.campaign;
        if c.symmetrize && c.ic == InitialCondition::Wors {
            NewtonOptions::symmetric(c.system)
        } else {
            NewtonOptions::default()
        }
    }

    fn solve_initial(&self) -> Result<SolutionRecord> {
        let grid = self.cfg.geometry.grid()?;
        let init = self.initial(&grid)?;
        let rep = newton_solve(&init, &self.params, &self.cfg.solver, &self.newton_options())?;
        let name = format!("{:?}", self.cfg.campaign.ic).to_lowercase();
        Ok(SolutionRecord::from_state(rep.state, &self.params, rep.iterations, &name))
    }
}

/// Execute the configured campaign and write its artifacts.
pub fn run(cfg: &CampaignConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = cfg.output.directory.clone();
    fs::create_dir_all(&out)?;
    let ctx = Ctx { params: cfg.material.params()?, cfg: cfg.clone(), out };
    fs::write(ctx.out.join("config.toml"), cfg.to_toml())?;
    let t0 = Instant::now();
    let summary = match cfg.campaign.kind {
        CampaignKind::Solve => run_solve(&ctx)?,
        CampaignKind::Flow => run_flow(&ctx)?,
        CampaignKind::Deflate => run_deflate(&ctx)?,
        CampaignKind::Stability => run_stability(&ctx)?,
        CampaignKind::Geodesics => run_geodesics(&ctx)?,
        CampaignKind::Gamma => run_gamma(&ctx)?,
        CampaignKind::SweepRho0 => run_sweep_rho0(&ctx)?,
        CampaignKind::SweepRho1 => run_sweep_rho1(&ctx)?,
        CampaignKind::EscapedContinuation => run_escaped_continuation(&ctx)?,
    };
    let seconds = t0.elapsed().as_secs_f64();
    let mut full = json!({ "schema": 1, "kind": cfg.campaign.kind, "seconds": seconds });
    if let (Value::Object(m), Value::Object(s)) = (&mut full, &summary) {
        m.extend(s.clone());
    }
    write_json(&ctx.out.join("summary.json"), &full)?;
    Ok(RunSummary { kind: cfg.campaign.kind, directory: ctx.out, seconds, summary })
}

fn run_solve(ctx: &Ctx) -> Result<Value> {
    let rec = ctx.solve_initial()?;
    ctx.write_record(&ctx.out.join("solution"), &rec, None)?;
    if rec.state.system() == System::Reduced {
        rec.state.q1().write_csv(&ctx.out.join("fig_BD_OR_q1.csv"))?;
        rec.state.q3().write_csv(&ctx.out.join("fig_BD_OR_q3.csv"))?;
        biaxiality_field(&rec.state).write_csv(&ctx.out.join("fig_BD_OR_beta2.csv"))?;
    }
    Ok(json!({
        "label": rec.label, "energy": rec.energy, "residual": rec.residual,
        "iterations": rec.iterations, "classification": rec.info,
    }))
}

fn run_flow(ctx: &Ctx) -> Result<Value> {
    let c = &ctx.cfg.campaign;
    let grid = ctx.cfg.geometry.grid()?;
    let init = perturb(&ctx.initial(&grid)?, c.perturbation * ctx.params.s_plus(), c.seed);
    let (fig, default_times): (&str, &[f64]) = match c.ic {
        InitialCondition::Wors => ("fig_OR", &[0.0, 0.2, 0.5, 2.0]),
        InitialCondition::Bd => ("fig_BD", &[0.0, 0.3, 0.4, 2.0]),
        InitialCondition::Esc => ("fig_ES", &[0.0, 1.0, 2.0, 4.0]),
        _ => ("flow", &[0.0]),
    };
    let times = if c.snapshots.is_empty() { default_times.to_vec() } else { c.snapshots.clone() };
    let (flow, snaps) = gradient_flow_snapshots(&init, &ctx.params, &ctx.cfg.solver, &times)?;
    write_rows(&ctx.out.join(format!("{fig}_energy.csv")), &["t", "energy"], flow.energies.iter())?;
    for (t, s) in &snaps {
        for (k, &a) in s.system().components().iter().enumerate() {
            s.fields()[k].write_csv(&ctx.out.join(format!("{fig}_q{}_t{t}.csv", a + 1)))?;
        }
    }
    let rec = SolutionRecord::from_state(flow.state, &ctx.params, flow.steps, "flow");
    ctx.write_record(&ctx.out.join("final"), &rec, None)?;
    let monotone = flow.energies.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-8 * w[0].1.abs());
    Ok(json!({
        "label": rec.label, "energy": rec.energy, "max_q3": rec.info.max_q3,
        "t_final": flow.t_final, "steps": flow.steps, "stopped_early": flow.stopped_early,
        "last_update": flow.last_update, "energy_monotone": monotone, "residual": rec.residual,
    }))
}

fn run_deflate(ctx: &Ctx) -> Result<Value> {
    let c = &ctx.cfg.campaign;
    let p = &ctx.params;
    let grid = ctx.cfg.geometry.grid()?;
    let search_grid = match c.coarse_n {
        Some(n) => build_grid(n, ctx.cfg.geometry.rho, ctx.cfg.geometry.eps_corner)?,
        None => grid.clone(),
    };
    let starts = campaign_starts(&search_grid, p, c.system, c.n_random, c.seed);
    let mut records = deflation_campaign(&starts, p, &ctx.cfg.solver, &c.deflation)?;
    if c.coarse_n.is_some() {
        records = refine_records(&records, &grid, p, &ctx.cfg.solver, c.deflation.max_iter)?;
    }
    let ops = group_for(c.system);
    let radius = ctx.cfg.solver.deflation_radius(p, &grid);
    let states: Vec<State> = records.iter().map(|r| r.state.clone()).collect();
    let classes = dedup(&states, &ops, radius);
    for (ci, cl) in classes.iter().enumerate() {
        for &m in &cl.members {
            records[m].symmetry_class = Some(ci);
        }
    }
    let fig = if c.system == System::Full {
        "fig_CP_q123".to_string()
    } else {
        format!("fig_CP_rho_{}", rho_tag(ctx.cfg.geometry.rho))
    };
    let mut rows = Vec::new();
    for (k, r) in records.iter().enumerate() {
        ctx.write_record(&ctx.out.join("records").join(format!("{k:03}")), r, r.symmetry_class)?;
        rows.push((
            k,
            r.symmetry_class.unwrap_or(usize::MAX),
            r.label.to_string(),
            r.start.clone(),
            r.energy,
            r.residual,
            r.info.max_q3,
            r.info.max_q45,
            r.state.component(1).map(|f| f.max_abs()).unwrap_or(0.0),
        ));
    }
    write_rows(
        &ctx.out.join(format!("{fig}.csv")),
        &["record", "class", "label", "start", "energy", "residual", "max_q3", "max_q45", "max_abs_q2"],
        rows,
    )?;
    let critical_points: usize = classes.iter().map(|cl| ops.len() / cl.fixing_subgroup_size).sum();
    let class_json: Vec<Value> = classes
        .iter()
        .map(|cl| {
            let r = &records[cl.representative];
            json!({
                "class_id": cl.class_id, "representative": cl.representative,
                "members": cl.members, "member_count": cl.members.len(),
                "fixing_subgroup_size": cl.fixing_subgroup_size,
                "orbit_size": ops.len() / cl.fixing_subgroup_size,
                "label": r.label, "energy": r.energy,
            })
        })
        .collect();
    write_json(&ctx.out.join("classes.json"), &json!({ "schema": 1, "classes": class_json }))?;
    Ok(json!({
        "records": records.len(), "classes": classes.len(), "critical_points": critical_points,
        "labels": classes.iter().map(|cl| records[cl.representative].label).collect::<Vec<_>>(),
        "max_q45": records.iter().map(|r| r.info.max_q45).fold(0.0, f64::max),
    }))
}

fn run_stability(ctx: &Ctx) -> Result<Value> {
    let rec = ctx.solve_initial()?;
    let state = rec.state.to_reduced();
    ctx.write_record(&ctx.out.join("solution"), &rec, None)?;
    let p = &ctx.params;
    let report = stability_report(&state, p, &ctx.cfg.campaign.stability)?;
    let coeffs = CoeffFields::from_state(&state, p)?;
    let bd = rec.label == crate::solvers::Label::Bd;
    let v13 = if bd { "fig_BD_C123_v13" } else { "fig_C123_v13" };
    coeffs.c11.write_csv(&ctx.out.join(format!("{v13}_C11.csv")))?;
    coeffs.c13.write_csv(&ctx.out.join(format!("{v13}_C13.csv")))?;
    coeffs.c33.write_csv(&ctx.out.join(format!("{v13}_C33.csv")))?;
    coeffs.c2.write_csv(&ctx.out.join("fig_Coe_v2_C2.csv"))?;
    coeffs.c4.write_csv(&ctx.out.join("fig_Coe_v45_C4.csv"))?;
    coeffs.c5.write_csv(&ctx.out.join("fig_Coe_v45_C5.csv"))?;
    let mut entries = Vec::new();
    for e in &report.entries {
        let mut files = Vec::new();
        if e.verdict == Verdict::Unstable {
            let names: &[&str] = match e.subspace {
                Subspace::V13 => &["v1", "v3"],
                Subspace::V2 => &["v2"],
                Subspace::V4 => &["v4"],
                Subspace::V5 => &["v5"],
            };
            for (f, nm) in e.witness.iter().zip(names) {
                let file = format!("witness_{}_{nm}.csv", e.subspace.name());
                f.write_csv(&ctx.out.join(&file))?;
                files.push(file);
            }
        }
        entries.push(json!({
            "subspace": e.subspace.name(), "verdict": e.verdict, "estimate": e.estimate,
            "iterations": e.iterations, "converged": e.converged, "witness_files": files,
        }));
    }
    write_json(
        &ctx.out.join("stability.json"),
        &json!({ "schema": 1, "solution_id": "solution", "label": rec.label, "subspaces": entries }),
    )?;
    Ok(json!({ "label": rec.label, "energy": rec.energy, "subspaces": entries }))
}

fn write_path(path: &Path, poly: &PathPolyline) -> Result<()> {
    write_rows(path, &["k", "q1", "q3"], poly.nodes.iter().enumerate().map(|(k, q)| (k, q.q1, q.q3)))
}

fn costs_json(c: &TransitionCosts) -> Value {
    let r = ratios(c);
    json!({ "c1": c.c1, "c2": c.c2, "c3": c.c3, "c4": c.c4, "R1": r.r1, "R2": r.r2, "certified": c.certified })
}

fn run_geodesics(ctx: &Ctx) -> Result<Value> {
    let g = &ctx.cfg.campaign.geodesics;
    let costs = transition_costs(&ctx.params, g)?;
    if let Some(paths) = &costs.paths {
        write_path(&ctx.out.join("fig_F1_o_p3.csv"), &paths.o_p3)?;
        write_path(&ctx.out.join("fig_F1_o_p1.csv"), &paths.o_p1)?;
        write_path(&ctx.out.join("fig_F1_p1_p3.csv"), &paths.p1_p3)?;
        write_path(&ctx.out.join("fig_F1_p1_p2.csv"), &paths.p1_p2)?;
    }
    let table = cost_sweep(&ctx.params, &ctx.cfg.campaign.t_values, g)?;
    write_rows(
        &ctx.out.join("fig_F2.csv"),
        &["t", "c1", "c2", "c3", "c4", "R1", "R2"],
        table.iter().map(|r| (r.t, r.c1, r.c2, r.c3, r.c4, r.r1, r.r2)),
    )?;
    Ok(json!({ "costs": costs_json(&costs), "sweep_rows": table.len() }))
}

fn run_gamma(ctx: &Ctx) -> Result<Value> {
    let gs = &ctx.cfg.campaign.gamma;
    let costs = match gs.costs {
        Some([c1, c2, c3, c4]) => TransitionCosts::from_values(c1, c2, c3, c4),
        None => transition_costs(&ctx.params, &ctx.cfg.campaign.geodesics)?,
    };
    if gs.n_rho == 0 {
        return Err(Error::Config("gamma.n_rho must be positive".into()));
    }
    let rhos: Vec<f64> = (1..=gs.n_rho).map(|i| i as f64 / (gs.n_rho + 1) as f64).collect();
    let table = classify_regime(&costs, &rhos, gs.n_eta)?;
    write_rows(
        &ctx.out.join("regime.csv"),
        &["rho", "Jinf_wors", "Jinf_bd", "Jinf_esc_min_over_eta", "winner"],
        table.iter().map(|g| (g.rho, g.j_wors, g.j_bd, g.j_esc, g.winner.to_string())),
    )?;
    let esc_wins = table.iter().filter(|g| g.winner == crate::gamma::Competitor::Esc).count();
    let first_wors = table.iter().find(|g| g.winner == crate::gamma::Competitor::Wors).map(|g| g.rho);
    Ok(json!({
        "costs": costs_json(&costs), "esc_wins": esc_wins, "first_wors_rho": first_wors,
        "verdicts": table.iter().map(|g| g.verdict.clone()).collect::<std::collections::BTreeSet<_>>(),
    }))
}

fn sweep_rows(points: &[SweepPoint]) -> impl Iterator<Item = (f64, f64, Option<f64>, bool)> + '_ {
    points.iter().map(|p| (p.rho, p.j_wors, p.j_bd, p.exists_bd()))
}

fn run_sweep_rho0(ctx: &Ctx) -> Result<Value> {
    let s = &ctx.cfg.campaign.sweep;
    let geom = ctx.cfg.geometry.sweep();
    let grid = if s.rho_grid.is_empty() {
        let h = 2.0 / (geom.n - 1) as f64;
        let (k0, k1) = ((s.rho_lo / h).round().max(1.0) as usize, (s.rho_hi / h).round() as usize);
        (k0..=k1).map(|k| k as f64 * h).collect()
    } else {
        s.rho_grid.clone()
    };
    let r = rho0_sweep(&ctx.params, geom, &grid, &ctx.cfg.solver)?;
    write_rows(&ctx.out.join("fig_BD_OR-energy.csv"), &["rho", "J_wors", "J_bd", "exists_bd"], sweep_rows(&r.points))?;
    Ok(json!({ "lambda_bar_sq": r.lambda_bar_sq, "rho0": r.rho0, "bracket": r.bracket }))
}

fn run_sweep_rho1(ctx: &Ctx) -> Result<Value> {
    let s = &ctx.cfg.campaign.sweep;
    let r = rho1_sweep(&ctx.params, ctx.cfg.geometry.sweep(), s.rho_lo, s.rho_hi, &ctx.cfg.solver)?;
    write_rows(&ctx.out.join("sweep_rho1.csv"), &["rho", "J_wors", "J_bd", "exists_bd"], sweep_rows(&r.probes))?;
    Ok(json!({
        "lambda_bar_sq": r.lambda_bar_sq, "rho1": r.rho1,
        "half_width": r.half_width, "bracket": r.bracket,
    }))
}

fn run_escaped_continuation(ctx: &Ctx) -> Result<Value> {
    let cc = ctx.cfg.campaign.continuation;
    let b = escaped_continuation(&ctx.params, ctx.cfg.geometry.sweep(), &cc, &ctx.cfg.solver)?;
    let tag = format!("fig_ES_rho_{}", rho_tag(cc.rho_start));
    b.seed.export(&ctx.out, &format!("{tag}_"))?;
    write_rows(
        &ctx.out.join(format!("{tag}_trace.csv")),
        &["rho", "converged", "label", "max_q3", "max_q45", "energy", "iterations"],
        b.steps.iter().map(|s| {
            (
                s.rho,
                s.converged,
                s.label.map(|l| l.to_string()).unwrap_or_default(),
                s.max_q3,
                s.max_q45,
                s.energy,
                s.iterations,
            )
        }),
    )?;
    Ok(json!({
        "threshold": b.threshold, "winding": cc.winding,
        "seed_energy": energy(&b.seed, &ctx.params).total, "steps": b.steps.len(),
    }))
}

/// Short human-readable report of a finished run.
pub fn render_summary(s: &RunSummary) -> String {
    let mut out = format!("nll {}: done in {:.1}s, artifacts in {}\n", s.kind, s.seconds, s.directory.display());
    if let Value::Object(m) = &s.summary {
        for (k, v) in m {
            out.push_str(&format!("  {k}: {v}\n"));
        }
    }
    out
}

/// Machine-readable error report.
pub fn error_json(e: &Error) -> Value {
    let kind = match e {
        Error::Params(_) => "params",
        Error::Geometry(_) => "geometry",
        Error::Boundary(_) => "boundary",
        Error::NoConvergence { .. } => "no-convergence",
        Error::LinearSolve(_) => "linear-solve",
        Error::BlowUp { .. } => "blow-up",
        Error::Domain(_) => "domain",
        Error::Config(_) => "config",
        Error::Campaign(_) => "campaign",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    };
    json!({ "schema": 1, "error": { "kind": kind, "message": e.to_string() } })
}
