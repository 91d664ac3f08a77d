use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use constellation::bench::{compare_missing_gain, run_bench, write_pair_csv, BenchConfig, CorpusSpec, MatcherKind};
use constellation::geom::{centroid, RigidTransform, ScoreParams};
use constellation::missing::{adjusted_feature_vector, detect_missing, MissingParams};
use constellation::second_order::{build_second_order_db, decide, two_pass_vectors, SecondOrderParams};
use constellation::spring::{
    assemble, brute_force_sim, kabsch_align, rotation_sweep, similarity_score, simulate, write_trajectory_csv,
    GridSpec, PhysicsParams,
};
use constellation::synth::{generate, perturb, PerturbSpec, TransformSpec};
use constellation::vicinity::{build_representative_db, compute_feature_vector, hamming, DbConfig, RepresentativeDB};
use constellation::Constellation;

mod mnu;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<constellation::Error> for CliError {
    fn from(e: constellation::Error) -> Self {
        match e {
            constellation::Error::InvalidParams(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Oriented-point constellation matching.
#[derive(Parser)]
#[command(name = "constellation", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random constellation, or perturb an existing one.
    Gen(GenArgs),
    /// Build a representative vicinity database.
    Builddb(BuildDbArgs),
    /// Compute and store a feature vector.
    Enroll(EnrollArgs),
    /// Compare a candidate with a template (1:1).
    Match(MatchArgs),
    /// Relax the spring system between two point sets.
    Simulate(SimulateArgs),
    /// Settled energy as a function of forced rotation.
    Sweep(SweepArgs),
    /// Genuine/impostor score distributions and FAR/FRR.
    Bench(BenchArgs),
    /// Analytic and brute-force alignment, for validation.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 320.0)]
    width: f64,
    #[arg(long, default_value_t = 400.0)]
    height: f64,
    #[arg(long, default_value_t = 10.0)]
    min_sep: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb this file instead of generating a new constellation.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    rotate_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    dx: f64,
    #[arg(long, default_value_t = 0.0)]
    dy: f64,
    /// Random rotation and a shift up to this many pixels (overrides the fixed transform).
    #[arg(long)]
    random_shift: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Radians.
    #[arg(long, default_value_t = 0.0)]
    theta_jitter: f64,
    #[arg(long, default_value_t = 0)]
    occlusions: usize,
    #[arg(long, default_value_t = 0)]
    spurious: usize,
    #[arg(long, default_value_t = 0.0)]
    distortion_amp: f64,
    #[arg(long, default_value_t = 200.0)]
    distortion_scale: f64,
    /// Write the applied transform and removed/added minutiae as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BuildDbArgs {
    /// Constellations to draw vicinities from; a generated pool when empty.
    pool: Vec<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pool_size: usize,
    #[arg(long, default_value_t = 35)]
    minutiae: usize,
    #[arg(long, default_value_t = 320.0)]
    width: f64,
    #[arg(long, default_value_t = 400.0)]
    height: f64,
    #[arg(long, default_value_t = 10.0)]
    min_sep: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 75.0)]
    rho: f64,
    #[arg(long, default_value_t = 3)]
    l_min: usize,
    #[arg(long, default_value_t = 8)]
    l_max: usize,
    /// Defaults to K_NA at the database radius.
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long, default_value_t = 128)]
    n_target: usize,
    /// 2 builds second-order representatives at twice `--rho`.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    order: u8,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EnrollArgs {
    input: PathBuf,
    #[arg(long)]
    db: PathBuf,
    /// Score threshold for a set bit; defaults to ρ²/4 at the database radius.
    #[arg(long)]
    bit_threshold: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    candidate: PathBuf,
    template: PathBuf,
    #[arg(long)]
    db: PathBuf,
    /// Largest accepted first-order Hamming distance.
    #[arg(short = 't', long = "max-hamming", default_value_t = SecondOrderParams::default().t1)]
    max_hamming: usize,
    #[arg(long)]
    bit_threshold: Option<f64>,
    /// Also require the second-order vectors to agree.
    #[arg(long, requires = "db2")]
    second_order: bool,
    #[arg(long)]
    db2: Option<PathBuf>,
    #[arg(long, default_value_t = SecondOrderParams::default().t2)]
    t2: usize,
    /// Forgive penalties explained by inferred missing minutiae.
    #[arg(long)]
    missing: bool,
    #[arg(long, default_value_t = MissingParams::default().eps_miss)]
    eps_miss: f64,
    #[arg(long, default_value_t = MissingParams::default().k_max)]
    k_max: usize,
}

#[derive(Args)]
struct PhysicsArgs {
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    kv: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    eps_kinetic: Option<f64>,
    #[arg(long)]
    settle_window: Option<usize>,
}

impl PhysicsArgs {
    fn resolve(&self, a: &[constellation::Point], b: &[constellation::Point]) -> PhysicsParams {
        let mut p = PhysicsParams::for_points(a, b);
        if let Some(k) = self.k {
            p.k = k;
            if self.kv.is_none() {
                p.k_v = 2.0 * (k * a.len().max(1) as f64).sqrt();
            }
        }
        p.k_v = self.kv.unwrap_or(p.k_v);
        p.dt = self.dt.unwrap_or(p.dt);
        p.max_steps = self.max_steps.unwrap_or(p.max_steps);
        p.eps_kinetic = self.eps_kinetic.unwrap_or(p.eps_kinetic);
        p.settle_window = self.settle_window.unwrap_or(p.settle_window);
        p
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Moving body.
    a: PathBuf,
    /// Anchors, paired with `a` by line order.
    b: PathBuf,
    #[command(flatten)]
    physics: PhysicsArgs,
    #[arg(long)]
    lock_rotation: bool,
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Base `c` of the similarity `c^(-sim)`.
    #[arg(long, default_value_t = 2.0)]
    base: f64,
}

#[derive(Args)]
struct SweepArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    increment_deg: f64,
    /// Rotation center; defaults to the centroid of `a`.
    #[arg(long, requires = "cy")]
    cx: Option<f64>,
    #[arg(long, requires = "cx")]
    cy: Option<f64>,
    #[command(flatten)]
    physics: PhysicsArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatcherArg {
    Vicinity,
    TwoPass,
    Spring,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = MatcherArg::Vicinity)]
    matcher: MatcherArg,
    #[arg(long, default_value_t = 50)]
    subjects: usize,
    #[arg(long, default_value_t = 35)]
    minutiae: usize,
    #[arg(long, default_value_t = 1000)]
    impostors: usize,
    #[arg(long, default_value_t = 1.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0.02)]
    theta_jitter: f64,
    #[arg(long, default_value_t = 0)]
    occlusions: usize,
    #[arg(long, default_value_t = 0)]
    spurious: usize,
    #[arg(long, default_value_t = 40)]
    db_pool: usize,
    #[arg(long, default_value_t = 128)]
    n_target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare FRR with and without missing-minutia forgiveness instead.
    #[arg(long)]
    missing_gain: bool,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.7,0.8,0.9,1.0")]
    levels: Vec<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-pair `pair_id,kind,score` dump.
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = GridSpec::default().angle_steps)]
    angle_steps: usize,
    #[arg(long, default_value_t = GridSpec::default().shift_extent)]
    shift_extent: f64,
    #[arg(long, default_value_t = GridSpec::default().shift_steps)]
    shift_steps: usize,
    #[arg(long, default_value_t = GridSpec::default().tol)]
    tol: f64,
}

/// `# key=value` lines; every default is written out so a run can be repeated.
struct Echo(Vec<(String, String)>);

impl Echo {
    fn new(cmd: &str) -> Self {
        Echo(vec![("command".into(), cmd.into())])
    }

    fn add(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    fn lines(&self) -> Vec<String> {
        self.0.iter().map(|(k, v)| format!("{k}={v}")).collect()
    }

    fn print(&self, out: &mut impl Write) -> std::io::Result<()> {
        for l in self.lines() {
            writeln!(out, "# {l}")?;
        }
        Ok(())
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn write_or_stdout(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn read_db(path: &Path) -> CliResult<RepresentativeDB> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    RepresentativeDB::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn points(c: &Constellation) -> Vec<constellation::Point> {
    c.positions()
}

fn cmd_gen(a: &GenArgs) -> CliResult<()> {
    let mut echo = Echo::new("gen");
    let base = match &a.from {
        Some(p) => {
            echo.add("from", path_str(p));
            mnu::read(p)?
        }
        None => {
            echo.add("n", a.n)
                .add("width", a.width)
                .add("height", a.height)
                .add("min_sep", a.min_sep);
            generate(a.n, a.width, a.height, a.min_sep, a.seed)?
        }
    };
    let transform = match a.random_shift {
        Some(s) => TransformSpec::Random { max_shift: s },
        None => TransformSpec::Fixed(RigidTransform {
            dx: a.dx,
            dy: a.dy,
            theta: a.rotate_deg.to_radians(),
        }),
    };
    let spec = PerturbSpec {
        transform,
        jitter_sigma: a.jitter,
        theta_jitter_sigma: a.theta_jitter,
        occlusions: a.occlusions,
        occlusion_pool: None,
        spurious: a.spurious,
        distortion_amp: a.distortion_amp,
        distortion_scale: a.distortion_scale,
        seed: a.seed,
    };
    echo.add("seed", a.seed);
    match a.random_shift {
        Some(s) => echo.add("random_shift", s),
        None => echo.add("rotate_deg", a.rotate_deg).add("dx", a.dx).add("dy", a.dy),
    };
    echo.add("jitter", a.jitter)
        .add("theta_jitter", a.theta_jitter)
        .add("occlusions", a.occlusions)
        .add("spurious", a.spurious)
        .add("distortion_amp", a.distortion_amp)
        .add("distortion_scale", a.distortion_scale);

    let unperturbed = PerturbSpec {
        seed: a.seed,
        distortion_scale: a.distortion_scale,
        ..Default::default()
    };
    let (out, truth) = if spec == unperturbed {
        (base, None)
    } else {
        let (c, gt) = perturb(&base, &spec)?;
        (c, Some(gt))
    };
    if let (Some(path), Some(gt)) = (&a.truth, &truth) {
        fs::write(path, serde_json::to_string_pretty(gt)?)?;
    }
    write_or_stdout(a.output.as_deref(), &mnu::render(out.minutiae(), &echo.lines()))
}

fn cmd_builddb(a: &BuildDbArgs) -> CliResult<()> {
    let pool: Vec<Constellation> = if a.pool.is_empty() {
        (0..a.pool_size)
            .map(|i| generate(a.minutiae, a.width, a.height, a.min_sep, a.seed.wrapping_add(i as u64)))
            .collect::<Result<_, _>>()?
    } else {
        a.pool.iter().map(|p| mnu::read(p)).collect::<CliResult<_>>()?
    };
    let params = ScoreParams::for_radius(a.rho);
    let cfg = DbConfig {
        rho: a.rho,
        l_min: a.l_min,
        l_max: a.l_max,
        d_min: a.d_min.unwrap_or(params.k_na),
        n_target: a.n_target,
        params,
        seed: a.seed,
    };
    let db = if a.order == 1 {
        build_representative_db(&pool, &cfg)?
    } else {
        let p = SecondOrderParams {
            rho1: a.rho,
            rho2: 2.0 * a.rho,
            l_min: a.l_min,
            l_max: a.l_max,
            ..SecondOrderParams::default()
        };
        build_second_order_db(&pool, &p, &cfg)?
    };
    fs::write(&a.output, db.to_json()?)?;
    let mut echo = Echo::new("builddb");
    echo.add("pool", if a.pool.is_empty() { format!("generated:{}", a.pool_size) } else { format!("files:{}", a.pool.len()) })
        .add("minutiae", a.minutiae)
        .add("seed", a.seed)
        .add("order", a.order)
        .add("rho", db.rho)
        .add("l_min", a.l_min)
        .add("l_max", a.l_max)
        .add("d_min", db.d_min)
        .add("n_target", a.n_target);
    let mut out = std::io::stdout();
    echo.print(&mut out)?;
    writeln!(out, "db_id={}", db.id())?;
    writeln!(out, "reps={}", db.reps.len())?;
    Ok(())
}

fn cmd_enroll(a: &EnrollArgs) -> CliResult<()> {
    let c = mnu::read(&a.input)?;
    let db = read_db(&a.db)?;
    let t = a.bit_threshold.unwrap_or(db.rho * db.rho / 4.0);
    let fv = compute_feature_vector(&c, &db, t);
    let json = serde_json::to_string_pretty(&fv)?;
    match &a.output {
        Some(p) => {
            fs::write(p, json + "\n")?;
            let mut out = std::io::stdout();
            Echo::new("enroll").add("input", path_str(&a.input)).add("db_id", &fv.db_id).add("bit_threshold", t).print(&mut out)?;
            writeln!(out, "bits_set={}", fv.count_ones())?;
            writeln!(out, "hex={}", fv.to_hex())?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

/// `Ok(true)` on a match decision.
fn cmd_match(a: &MatchArgs) -> CliResult<bool> {
    let cand = mnu::read(&a.candidate)?;
    let tmpl = mnu::read(&a.template)?;
    let db = read_db(&a.db)?;
    let bit_t = a.bit_threshold.unwrap_or(db.rho * db.rho / 4.0);
    let mut echo = Echo::new("match");
    echo.add("candidate", path_str(&a.candidate))
        .add("template", path_str(&a.template))
        .add("db_id", db.id())
        .add("bit_threshold", bit_t)
        .add("max_hamming", a.max_hamming)
        .add("missing", a.missing);

    let mut out = std::io::stdout();
    let t_vec = compute_feature_vector(&tmpl, &db, bit_t);
    let c_vec = if a.missing {
        let mp = MissingParams {
            eps_miss: a.eps_miss,
            k_max: a.k_max,
            ..MissingParams::default()
        };
        echo.add("eps_miss", a.eps_miss).add("k_max", a.k_max);
        let report = detect_missing(&cand, &tmpl, db.rho, &db.params, &mp)?;
        let v = adjusted_feature_vector(&cand, &db, bit_t, &report);
        echo.add("hypotheses", report.hypotheses.len()).add("forgiven", report.forgiven_total());
        v
    } else {
        compute_feature_vector(&cand, &db, bit_t)
    };
    let h1 = hamming(&c_vec, &t_vec)?;

    let is_match = if a.second_order {
        let db2 = read_db(a.db2.as_deref().expect("clap requires --db2"))?;
        let p = SecondOrderParams {
            rho1: db.rho,
            rho2: db2.rho,
            t1: a.max_hamming,
            t2: a.t2,
            bit_t1: bit_t,
            bit_t2: db2.rho * db2.rho / 4.0,
            ..SecondOrderParams::default()
        };
        let (_, c2) = two_pass_vectors(&cand, &db, &db2, &p)?;
        let (_, t2) = two_pass_vectors(&tmpl, &db, &db2, &p)?;
        let d = decide(h1, hamming(&c2, &t2)?, &p);
        echo.add("db2_id", db2.id()).add("t2", a.t2).add("bit_threshold2", p.bit_t2);
        echo.print(&mut out)?;
        writeln!(out, "hamming2={}", d.hamming2)?;
        d.is_match
    } else {
        echo.print(&mut out)?;
        h1 <= a.max_hamming
    };
    writeln!(out, "score={h1}")?;
    writeln!(out, "decision={}", if is_match { "match" } else { "no-match" })?;
    Ok(is_match)
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let (ca, cb) = (mnu::read(&a.a)?, mnu::read(&a.b)?);
    let (pa, pb) = (points(&ca), points(&cb));
    let mut p = a.physics.resolve(&pa, &pb);
    p.lock_rotation = a.lock_rotation;
    if a.trajectory.is_some() {
        p.trajectory_stride = Some(a.stride);
    }
    let r = simulate(&assemble(&pa, &pb, p)?);
    if let Some(path) = &a.trajectory {
        let f = fs::File::create(path)?;
        write_trajectory_csv(std::io::BufWriter::new(f), r.trajectory.as_deref().unwrap_or(&[]))?;
    }
    let mut out = std::io::stdout();
    let mut echo = Echo::new("simulate");
    echo.add("a", path_str(&a.a))
        .add("b", path_str(&a.b))
        .add("k", p.k)
        .add("k_v", p.k_v)
        .add("dt", p.dt)
        .add("max_steps", p.max_steps)
        .add("eps_kinetic", p.eps_kinetic)
        .add("settle_window", p.settle_window)
        .add("lock_rotation", p.lock_rotation)
        .add("base", a.base);
    echo.print(&mut out)?;
    writeln!(out, "e_min={}", r.e_min)?;
    writeln!(out, "sim_phi={}", r.sim_phi)?;
    writeln!(out, "similarity={}", similarity_score(r.sim_phi, a.base)?)?;
    writeln!(out, "steps={}", r.steps)?;
    writeln!(out, "converged={}", r.converged)?;
    writeln!(out, "above_optimum={}", r.above_optimum)?;
    writeln!(out, "pose_dx={} pose_dy={} pose_theta_deg={}", r.final_pose.dx, r.final_pose.dy, r.final_pose.theta.to_degrees())?;
    for (i, q) in r.world_points(&pa).iter().enumerate() {
        writeln!(out, "point {i} {:.6} {:.6}", q.x, q.y)?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let (ca, cb) = (mnu::read(&a.a)?, mnu::read(&a.b)?);
    let (pa, pb) = (points(&ca), points(&cb));
    if pa.is_empty() {
        return Err(CliError::Data("empty constellation".into()));
    }
    let center = match (a.cx, a.cy) {
        (Some(x), Some(y)) => constellation::Point::new(x, y),
        _ => centroid(&pa),
    };
    let p = a.physics.resolve(&pa, &pb);
    let r = rotation_sweep(&pa, &pb, center, a.increment_deg.to_radians(), Some(p))?;
    let mut csv = String::from("theta_deg,energy\n");
    for (t, e) in &r.curve {
        csv.push_str(&format!("{},{}\n", t.to_degrees(), e));
    }
    let mut out = std::io::stdout();
    Echo::new("sweep")
        .add("a", path_str(&a.a))
        .add("b", path_str(&a.b))
        .add("increment_deg", a.increment_deg)
        .add("center_x", center.x)
        .add("center_y", center.y)
        .add("k", p.k)
        .add("k_v", p.k_v)
        .add("dt", p.dt)
        .print(&mut out)?;
    writeln!(out, "best_theta_deg={}", r.best_theta.to_degrees())?;
    writeln!(out, "best_energy={}", r.best_energy)?;
    match &a.output {
        Some(path) => fs::write(path, csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let defaults = CorpusSpec::default();
    let corpus = CorpusSpec {
        subjects: a.subjects,
        minutiae: a.minutiae,
        max_impostors: a.impostors,
        genuine: PerturbSpec {
            jitter_sigma: a.jitter,
            theta_jitter_sigma: a.theta_jitter,
            occlusions: a.occlusions,
            spurious: a.spurious,
            ..defaults.genuine.clone()
        },
        occlude_shared_only: a.missing_gain,
        ..defaults
    };
    let mut out = std::io::stdout();
    if a.missing_gain {
        if a.occlusions == 0 {
            eprintln!("note: --occlusions is 0, so no penalties can be forgiven");
        }
        let rho = DbConfig::default().rho;
        let t = rho * rho / 4.0;
        let r = compare_missing_gain(&corpus, rho, t, &a.levels, &MissingParams::default(), a.seed)?;
        Echo::new("bench")
            .add("mode", "missing_gain")
            .add("subjects", a.subjects)
            .add("minutiae", a.minutiae)
            .add("jitter", a.jitter)
            .add("occlusions", a.occlusions)
            .add("vicinity_threshold", t)
            .add("seed", a.seed)
            .print(&mut out)?;
        writeln!(out, "level frr_plain frr_with_missing")?;
        for ((l, p), w) in r.levels.iter().zip(&r.frr_plain).zip(&r.frr_with_missing) {
            writeln!(out, "{l} {p} {w}")?;
        }
        writeln!(out, "hypotheses={}", r.hypotheses)?;
        writeln!(out, "forgiven_total={}", r.forgiven_total)?;
        if let Some(path) = &a.report {
            fs::write(path, serde_json::to_string_pretty(&r)?)?;
        }
        return Ok(());
    }
    let matcher = match a.matcher {
        MatcherArg::Vicinity => MatcherKind::Vicinity,
        MatcherArg::TwoPass => MatcherKind::TwoPass,
        MatcherArg::Spring => MatcherKind::Spring,
    };
    let cfg = BenchConfig {
        matcher,
        corpus,
        db: DbConfig {
            n_target: a.n_target,
            ..DbConfig::default()
        },
        db_pool: a.db_pool,
        seed: a.seed,
        ..BenchConfig::default()
    };
    let (report, pairs) = run_bench(&cfg)?;
    Echo::new("bench")
        .add("matcher", format!("{matcher:?}").to_lowercase())
        .add("subjects", a.subjects)
        .add("minutiae", a.minutiae)
        .add("impostors", a.impostors)
        .add("jitter", a.jitter)
        .add("theta_jitter", a.theta_jitter)
        .add("occlusions", a.occlusions)
        .add("spurious", a.spurious)
        .add("db_pool", a.db_pool)
        .add("n_target", a.n_target)
        .add("seed", a.seed)
        .print(&mut out)?;
    match report.auc {
        Some(v) => writeln!(out, "auc={v}")?,
        None => writeln!(out, "auc=absent")?,
    }
    writeln!(out, "genuine_mean={}", report.genuine_scores.mean)?;
    if let Some(s) = &report.impostor_scores {
        writeln!(out, "impostor_mean={}", s.mean)?;
    }
    writeln!(out, "threshold far frr")?;
    for (k, h) in report.thresholds.iter().enumerate() {
        let far = report.far.as_ref().map_or("absent".to_string(), |f| f[k].to_string());
        writeln!(out, "{h} {far} {}", report.frr[k])?;
    }
    if let Some(path) = &a.report {
        fs::write(path, report.to_json()?)?;
    }
    if let Some(path) = &a.pairs {
        write_pair_csv(std::io::BufWriter::new(fs::File::create(path)?), &pairs)?;
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> CliResult<()> {
    let (ca, cb) = (mnu::read(&a.a)?, mnu::read(&a.b)?);
    let (pa, pb) = (points(&ca), points(&cb));
    let (pose, residual_sq) = kabsch_align(&pa, &pb)?;
    let grid = GridSpec {
        angle_steps: a.angle_steps,
        shift_extent: a.shift_extent,
        shift_steps: a.shift_steps,
        tol: a.tol,
    };
    let (sim, bf_pose) = brute_force_sim(&pa, &pb, &grid)?;
    let mut out = std::io::stdout();
    Echo::new("oracle")
        .add("a", path_str(&a.a))
        .add("b", path_str(&a.b))
        .add("angle_steps", grid.angle_steps)
        .add("shift_extent", grid.shift_extent)
        .add("shift_steps", grid.shift_steps)
        .add("tol", grid.tol)
        .print(&mut out)?;
    writeln!(out, "kabsch_dx={} kabsch_dy={} kabsch_theta_deg={}", pose.dx, pose.dy, pose.theta.to_degrees())?;
    writeln!(out, "kabsch_residual_sq={residual_sq}")?;
    writeln!(out, "spring_optimum={}", 0.5 * residual_sq)?;
    writeln!(out, "brute_force_sim={sim}")?;
    writeln!(out, "brute_force_dx={} brute_force_dy={} brute_force_theta_deg={}", bf_pose.dx, bf_pose.dy, bf_pose.theta.to_degrees())?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult<ExitCode> {
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(a)?,
        Cmd::Builddb(a) => cmd_builddb(a)?,
        Cmd::Enroll(a) => cmd_enroll(a)?,
        Cmd::Match(a) => {
            if !cmd_match(a)? {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Simulate(a) => cmd_simulate(a)?,
        Cmd::Sweep(a) => cmd_sweep(a)?,
        Cmd::Bench(a) => cmd_bench(a)?,
        Cmd::Oracle(a) => cmd_oracle(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
