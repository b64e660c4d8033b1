//! Command line for the ztree library: dataset generation, neighbour
//! search and clustering over point files, and benchmark tables.
//!
//! Binary point files carry the data; all human-readable output is CSV.
//! Every run is deterministic given its flags and `--seed`. Exit codes:
//! 0 success, 2 usage error, 3 data error, 4 capacity or protocol error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

use ztree::bounds::PeriodicDomain;
use ztree::datasets::{generate, Distribution};
use ztree::fof::{
    fof, fof_profiled, linking_length, reduce_catalogue, Catalogue, FofOptions,
    DEFAULT_MIN_GROUP_SIZE,
};
use ztree::knn::{knn, knn_profiled, KnnOptions, KnnResult};
use ztree::oracle::brute_knn;
use ztree::partsim::{Cluster, SimParams};
use ztree::pointfile::{read_file, write_file, FileData};
use ztree::zorder::z_sort;
use ztree::Error;

#[derive(Parser)]
#[command(name = "ztree", version, about = "z-order trees: neighbour search and clustering")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a point file.
    Gen(GenArgs),
    /// k nearest neighbours of every query point, as CSV.
    Knn(KnnArgs),
    /// Friends-of-friends group labels and catalogue, as CSV.
    Fof(FofArgs),
    /// Benchmark table with per-phase wall times, as CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Grid,
    Uniform,
    Gaussian,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrderArg {
    /// Query blocks in input order.
    Input,
    /// Query blocks in global z order.
    Z,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Knn,
    Fof,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    dist: DistArg,
    /// Number of points.
    #[arg(short)]
    n: usize,
    /// Dimension.
    #[arg(short, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Periodic box side length; omitting it writes a non-periodic file.
    #[arg(long)]
    box_len: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct KnnArgs {
    #[arg(long)]
    input: PathBuf,
    /// Separate query file; default is self-query.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(short)]
    k: usize,
    /// Treat the file's box as periodic boundary conditions.
    #[arg(long)]
    periodic: bool,
    /// Simulated ranks; more than one runs the distributed driver.
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    #[arg(long, value_enum, default_value_t = OrderArg::Input)]
    order: OrderArg,
    /// Answer by brute force instead of the tree walk (small inputs).
    #[arg(long)]
    oracle: bool,
    /// Output file; default stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
#[command(group(ArgGroup::new("link").required(true).args(["alpha", "rlink"])))]
struct FofArgs {
    #[arg(long)]
    input: PathBuf,
    /// Linking length as a multiple of the mean point separation
    /// (needs box lengths in the input file).
    #[arg(long)]
    alpha: Option<f64>,
    /// Linking length directly.
    #[arg(long)]
    rlink: Option<f64>,
    /// Treat the file's box as periodic boundary conditions.
    #[arg(long)]
    periodic: bool,
    /// Simulated ranks; more than one runs the distributed driver.
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    /// Smallest group size kept in the catalogue.
    #[arg(long, default_value_t = DEFAULT_MIN_GROUP_SIZE)]
    min_count: usize,
    /// Label CSV output; default stdout when no catalogue is requested.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Catalogue CSV output.
    #[arg(long)]
    catalogue: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    op: OpArg,
    /// Point counts, ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(short, default_value_t = 3)]
    d: usize,
    /// Neighbour count for knn runs.
    #[arg(short, default_value_t = 16)]
    k: usize,
    /// Linking-length multiple for fof runs.
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; default stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Largest input the brute-force oracle path accepts.
const ORACLE_MAX_POINTS: usize = 20_000;

enum Fail {
    Usage(String),
    Data(String),
    Capacity(String),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => 2,
            Fail::Data(_) => 3,
            Fail::Capacity(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Fail::Usage(m) | Fail::Data(m) | Fail::Capacity(m) => m,
        }
    }
}

fn classify(e: Error) -> Fail {
    match e {
        Error::KZero
        | Error::KTooLarge { .. }
        | Error::BadLinkingLength { .. }
        | Error::BadPeriod { .. }
        | Error::DimensionMismatch { .. }
        | Error::ZeroDimension
        | Error::TooFewPoints { .. }
        | Error::BadGridCount { .. } => Fail::Usage(e.to_string()),
        Error::TooManyPoints { .. } | Error::Protocol(_) => Fail::Capacity(e.to_string()),
        _ => Fail::Data(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Err(f) = run(cli) {
        eprintln!("error: {}", f.message());
        return ExitCode::from(f.code());
    }
    ExitCode::SUCCESS
}

fn run(cli: Cli) -> Result<(), Fail> {
    init_threads()?;
    match cli.cmd {
        Cmd::Gen(a) => gen_cmd(a),
        Cmd::Knn(a) => knn_cmd(a),
        Cmd::Fof(a) => fof_cmd(a),
        Cmd::Bench(a) => bench_cmd(a),
    }
}

fn init_threads() -> Result<(), Fail> {
    let Ok(v) = std::env::var("ZTREE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Fail::Usage(format!("ZTREE_THREADS must be a positive integer, got {v:?}")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn read_points(path: &PathBuf) -> Result<FileData, Fail> {
    read_file(path).map_err(|e| match e {
        Error::Io(io) => Fail::Data(format!("{}: {io}", path.display())),
        other => classify(other),
    })
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), Fail> {
    match out {
        Some(p) => {
            std::fs::write(p, content).map_err(|e| Fail::Data(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Boundary conditions for a loaded file: periodic only on request, and
/// only when the file carries box lengths.
fn domain_for(file: &FileData, periodic: bool) -> Result<PeriodicDomain, Fail> {
    if !periodic {
        return Ok(PeriodicDomain::open(file.points.dim()));
    }
    let Some(b) = &file.box_lengths else {
        return Err(Fail::Usage(
            "--periodic needs box lengths in the input file".into(),
        ));
    };
    PeriodicDomain::periodic(b).map_err(classify)
}

fn gen_cmd(a: GenArgs) -> Result<(), Fail> {
    if a.n == 0 {
        return Err(Fail::Usage("-n must be at least 1".into()));
    }
    let dist = match a.dist {
        DistArg::Grid => Distribution::Grid,
        DistArg::Uniform => Distribution::Uniform,
        DistArg::Gaussian => Distribution::Gaussian,
    };
    let points = generate(dist, a.n, a.d, a.seed, a.box_len).map_err(classify)?;
    let box_lengths = a.box_len.map(|l| vec![l; a.d]);
    write_file(&a.out, &points, box_lengths.as_deref()).map_err(|e| match e {
        Error::Io(io) => Fail::Data(format!("{}: {io}", a.out.display())),
        other => classify(other),
    })
}

fn knn_cmd(a: KnnArgs) -> Result<(), Fail> {
    if a.ranks == 0 {
        return Err(Fail::Usage("--ranks must be at least 1".into()));
    }
    let file = read_points(&a.input)?;
    let queries = a.queries.as_ref().map(read_points).transpose()?;
    if queries.is_some() && a.ranks > 1 {
        return Err(Fail::Usage(
            "distributed runs are self-query only; drop --queries or use --ranks 1".into(),
        ));
    }
    let domain = domain_for(&file, a.periodic)?;
    let sources = &file.points;
    let query_set = queries.as_ref().map_or(sources, |f| &f.points);
    if a.k == 0 {
        return Err(Fail::Usage("-k must be at least 1".into()));
    }
    if a.k > sources.len() {
        return Err(Fail::Usage(format!(
            "k = {} exceeds the {} source points",
            a.k,
            sources.len()
        )));
    }

    let result = if a.oracle {
        let biggest = sources.len().max(query_set.len());
        if biggest > ORACLE_MAX_POINTS {
            return Err(Fail::Capacity(format!(
                "--oracle is capped at {ORACLE_MAX_POINTS} points, got {biggest}"
            )));
        }
        if query_set.dim() != domain.dim() {
            return Err(Fail::Usage(format!(
                "query dimension {} does not match source dimension {}",
                query_set.dim(),
                domain.dim()
            )));
        }
        let (indices, distances) = brute_knn(sources, query_set, a.k, &domain);
        KnnResult {
            k: a.k,
            indices,
            distances,
            order: ztree::knn::OutputOrder::Input,
        }
    } else if a.ranks > 1 {
        let mut cluster = Cluster::new(sources, a.ranks, SimParams::default()).map_err(classify)?;
        cluster.knn(a.k, &domain).map_err(classify)?
    } else {
        knn(
            sources,
            queries.as_ref().map(|f| &f.points),
            a.k,
            &domain,
            &KnnOptions::default(),
        )
        .map_err(classify)?
    };

    let emit_order: Vec<u32> = match a.order {
        OrderArg::Input => (0..query_set.len() as u32).collect(),
        OrderArg::Z => z_sort(query_set),
    };
    let mut csv = String::from("query_index,rank,neighbour_index,distance\n");
    for &q in &emit_order {
        let row = q as usize * a.k;
        for j in 0..a.k {
            let _ = writeln!(
                csv,
                "{q},{j},{},{}",
                result.indices[row + j],
                result.distances[row + j]
            );
        }
    }
    emit(&a.out, &csv)
}

fn fof_cmd(a: FofArgs) -> Result<(), Fail> {
    if a.ranks == 0 {
        return Err(Fail::Usage("--ranks must be at least 1".into()));
    }
    let file = read_points(&a.input)?;
    let domain = domain_for(&file, a.periodic)?;
    let points = &file.points;
    let r_link = match (a.alpha, a.rlink) {
        (Some(alpha), None) => {
            let Some(b) = &file.box_lengths else {
                return Err(Fail::Usage(
                    "--alpha needs box lengths in the input file; use --rlink otherwise".into(),
                ));
            };
            let volume: f64 = b.iter().product();
            linking_length(alpha, volume, points.len() as u64)
        }
        (None, Some(r)) => r,
        _ => unreachable!("clap enforces exactly one of --alpha and --rlink"),
    };

    let want_catalogue = a.catalogue.is_some();
    let (labels, catalogue) = if a.ranks > 1 {
        let mut cluster = Cluster::new(points, a.ranks, SimParams::default()).map_err(classify)?;
        if want_catalogue {
            let (labels, cat) = cluster
                .fof_catalogue(r_link, &domain, a.min_count)
                .map_err(classify)?;
            (labels, Some(cat))
        } else {
            (cluster.fof(r_link, &domain).map_err(classify)?, None)
        }
    } else {
        let labels = fof(points, r_link, &domain, &FofOptions::default()).map_err(classify)?;
        let cat = want_catalogue.then(|| reduce_catalogue(points, &labels, &domain, a.min_count));
        (labels, cat)
    };

    let mut label_csv = format!("# r_link={r_link}\npoint_index,group_id\n");
    for (i, &g) in labels.iter().enumerate() {
        let _ = writeln!(label_csv, "{i},{g}");
    }
    if a.labels.is_some() || !want_catalogue {
        emit(&a.labels, &label_csv)?;
    }
    if let Some(cat) = catalogue {
        emit(&a.catalogue, &catalogue_csv(&cat, r_link))?;
    }
    Ok(())
}

fn catalogue_csv(cat: &Catalogue, r_link: f64) -> String {
    let mut csv = format!("# r_link={r_link}\ngroup_id,count,mass");
    for d in 0..cat.dim {
        let _ = write!(csv, ",com_{d}");
    }
    if cat.velocities.is_some() {
        for d in 0..cat.dim {
            let _ = write!(csv, ",vel_{d}");
        }
    }
    csv.push_str(",inertia_radius\n");
    for g in 0..cat.len() {
        let _ = write!(csv, "{},{},{}", cat.roots[g], cat.counts[g], cat.masses[g]);
        for d in 0..cat.dim {
            let _ = write!(csv, ",{}", cat.centers[g * cat.dim + d]);
        }
        if let Some(v) = &cat.velocities {
            for d in 0..cat.dim {
                let _ = write!(csv, ",{}", v[g * cat.dim + d]);
            }
        }
        let _ = writeln!(csv, ",{}", cat.radii[g]);
    }
    csv
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }
}

fn hash_knn(result: &KnnResult) -> u64 {
    let mut h = Fnv::new();
    for &i in &result.indices {
        h.write(&i.to_le_bytes());
    }
    for &d in &result.distances {
        h.write(&d.to_bits().to_le_bytes());
    }
    h.0
}

fn hash_labels(labels: &[u32]) -> u64 {
    let mut h = Fnv::new();
    for &l in labels {
        h.write(&l.to_le_bytes());
    }
    h.0
}

fn bench_cmd(a: BenchArgs) -> Result<(), Fail> {
    if a.ranks == 0 {
        return Err(Fail::Usage("--ranks must be at least 1".into()));
    }
    if a.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Fail::Usage("--sizes must be strictly ascending".into()));
    }
    let mut csv = String::from(
        "operation,n,d,k_or_alpha,n_ranks,seed,t_sort_ms,t_tree_ms,t_walk_ms,t_leaf_ms,t_reorder_ms,t_total_ms,result_hash\n",
    );
    for &n in &a.sizes {
        let points = generate(Distribution::Uniform, n, a.d, a.seed, Some(1.0)).map_err(classify)?;
        let (op, k_or_alpha, times, total_ms, hash) = match a.op {
            OpArg::Knn => {
                let domain = PeriodicDomain::open(a.d);
                let clock = std::time::Instant::now();
                let (times, hash) = if a.ranks > 1 {
                    let mut cluster =
                        Cluster::new(&points, a.ranks, SimParams::default()).map_err(classify)?;
                    let res = cluster.knn(a.k, &domain).map_err(classify)?;
                    (cluster.phase_times(), hash_knn(&res))
                } else {
                    let (res, times) =
                        knn_profiled(&points, a.k, &domain, &KnnOptions::default())
                            .map_err(classify)?;
                    (times, hash_knn(&res))
                };
                let total_ms = clock.elapsed().as_secs_f64() * 1e3;
                ("knn", format!("{}", a.k), times, total_ms, hash)
            }
            OpArg::Fof => {
                let domain = PeriodicDomain::cube(a.d, 1.0).map_err(classify)?;
                let r_link = linking_length(a.alpha, 1.0, n as u64);
                let clock = std::time::Instant::now();
                let (times, hash) = if a.ranks > 1 {
                    let mut cluster =
                        Cluster::new(&points, a.ranks, SimParams::default()).map_err(classify)?;
                    let labels = cluster.fof(r_link, &domain).map_err(classify)?;
                    (cluster.phase_times(), hash_labels(&labels))
                } else {
                    let (labels, times) =
                        fof_profiled(&points, r_link, &domain, &FofOptions::default())
                            .map_err(classify)?;
                    (times, hash_labels(&labels))
                };
                let total_ms = clock.elapsed().as_secs_f64() * 1e3;
                ("fof", format!("{}", a.alpha), times, total_ms, hash)
            }
        };
        let _ = writeln!(
            csv,
            "{op},{n},{},{k_or_alpha},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{hash:016x}",
            a.d,
            a.ranks,
            a.seed,
            times.sort_ms,
            times.tree_ms,
            times.walk_ms,
            times.leaf_ms,
            times.reorder_ms,
            total_ms,
        );
    }
    emit(&a.out, &csv)
}
