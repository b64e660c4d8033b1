//! End-to-end runs of the ztree binary through temp files.

use std::path::PathBuf;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ztree(dir: &TempDir, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ztree"))
        .current_dir(dir.path())
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &TempDir, args: &[&str]) -> String {
    let out = ztree(dir, args);
    assert!(
        out.status.success(),
        "ztree {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn code(dir: &TempDir, args: &[&str]) -> i32 {
    ztree(dir, args).status.code().expect("exit code")
}

fn read(dir: &TempDir, name: &str) -> String {
    std::fs::read_to_string(dir.path().join(name)).expect("output file")
}

fn gen(dir: &TempDir, args: &[&str], out: &str) -> PathBuf {
    let mut full = vec!["gen"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", out]);
    ok(dir, &full);
    dir.path().join(out)
}

#[test]
fn gen_is_seed_deterministic_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    gen(&dir, &["--dist", "uniform", "-n", "200", "-d", "3", "--seed", "5"], "a.jzpt");
    gen(&dir, &["--dist", "uniform", "-n", "200", "-d", "3", "--seed", "5"], "b.jzpt");
    gen(&dir, &["--dist", "uniform", "-n", "200", "-d", "3", "--seed", "6"], "c.jzpt");
    let a = std::fs::read(dir.path().join("a.jzpt")).unwrap();
    let b = std::fs::read(dir.path().join("b.jzpt")).unwrap();
    let c = std::fs::read(dir.path().join("c.jzpt")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn grid_of_eight_is_the_two_cell_lattice() {
    let dir = TempDir::new().unwrap();
    let path = gen(&dir, &["--dist", "grid", "-n", "8", "-d", "3"], "g.jzpt");
    let file = ztree::pointfile::read_file(path).unwrap();
    let mut got: Vec<[u64; 3]> = (0..8)
        .map(|i| {
            let p = file.points.point(i);
            [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]
        })
        .collect();
    got.sort();
    let mut want = Vec::new();
    for x in [0.25f64, 0.75] {
        for y in [0.25f64, 0.75] {
            for z in [0.25f64, 0.75] {
                want.push([x.to_bits(), y.to_bits(), z.to_bits()]);
            }
        }
    }
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn gaussian_sample_mean_is_centred() {
    let dir = TempDir::new().unwrap();
    let n = 4000usize;
    let path = gen(
        &dir,
        &["--dist", "gaussian", "-n", "4000", "-d", "3", "--seed", "11"],
        "n.jzpt",
    );
    let file = ztree::pointfile::read_file(path).unwrap();
    for d in 0..3 {
        let mean: f64 = (0..n).map(|i| file.points.point(i)[d]).sum::<f64>() / n as f64;
        assert!(
            mean.abs() <= 5.0 / (n as f64).sqrt(),
            "dim {d} mean {mean} drifted"
        );
    }
}

#[test]
fn self_query_nearest_neighbour_is_the_point_itself() {
    let dir = TempDir::new().unwrap();
    gen(&dir, &["--dist", "uniform", "-n", "60", "-d", "2", "--seed", "1"], "p.jzpt");
    let csv = ok(&dir, &["knn", "--input", "p.jzpt", "-k", "1"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("query_index,rank,neighbour_index,distance"));
    for (q, line) in lines.enumerate() {
        assert_eq!(line, format!("{q},0,{q},0"));
    }
}

#[test]
fn four_ranks_match_one_rank_in_z_order_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    gen(
        &dir,
        &["--dist", "uniform", "-n", "800", "-d", "3", "--seed", "4", "--box-len", "1.0"],
        "p.jzpt",
    );
    for extra in [&["--periodic"][..], &[][..]] {
        let mut base = vec!["knn", "--input", "p.jzpt", "-k", "6", "--order", "z"];
        base.extend_from_slice(extra);
        let mut one = base.clone();
        one.extend_from_slice(&["--ranks", "1", "--out", "one.csv"]);
        ok(&dir, &one);
        let mut four = base.clone();
        four.extend_from_slice(&["--ranks", "4", "--out", "four.csv"]);
        ok(&dir, &four);
        assert_eq!(read(&dir, "one.csv"), read(&dir, "four.csv"));
    }
}

#[test]
fn oracle_and_tree_paths_write_identical_files() {
    let dir = TempDir::new().unwrap();
    gen(
        &dir,
        &["--dist", "gaussian", "-n", "500", "-d", "3", "--seed", "2", "--box-len", "1.0"],
        "p.jzpt",
    );
    gen(&dir, &["--dist", "uniform", "-n", "90", "-d", "3", "--seed", "3"], "q.jzpt");
    // Self-query under periodic wrap, then a separate query set open.
    ok(&dir, &["knn", "--input", "p.jzpt", "-k", "7", "--periodic", "--out", "t.csv"]);
    ok(&dir, &["knn", "--input", "p.jzpt", "-k", "7", "--periodic", "--oracle", "--out", "o.csv"]);
    assert_eq!(read(&dir, "t.csv"), read(&dir, "o.csv"));
    ok(&dir, &["knn", "--input", "p.jzpt", "--queries", "q.jzpt", "-k", "5", "--out", "tq.csv"]);
    ok(&dir, &[
        "knn", "--input", "p.jzpt", "--queries", "q.jzpt", "-k", "5", "--oracle", "--out",
        "oq.csv",
    ]);
    assert_eq!(read(&dir, "tq.csv"), read(&dir, "oq.csv"));
}

#[test]
fn unit_density_alpha_reports_itself_as_the_linking_length() {
    let dir = TempDir::new().unwrap();
    // 64 points in a box of volume 64: the mean separation is 1.
    gen(
        &dir,
        &["--dist", "uniform", "-n", "64", "-d", "3", "--seed", "8", "--box-len", "4.0"],
        "p.jzpt",
    );
    let csv = ok(&dir, &["fof", "--input", "p.jzpt", "--alpha", "0.2", "--periodic"]);
    assert!(csv.starts_with("# r_link=0.2\n"), "header was {:?}", csv.lines().next());
}

#[test]
fn fof_ranks_agree_and_the_catalogue_lists_real_groups() {
    let dir = TempDir::new().unwrap();
    gen(
        &dir,
        &["--dist", "gaussian", "-n", "1000", "-d", "3", "--seed", "13", "--box-len", "1.0"],
        "p.jzpt",
    );
    let base = [
        "fof", "--input", "p.jzpt", "--alpha", "0.4", "--periodic", "--min-count", "5",
    ];
    let mut one = base.to_vec();
    one.extend_from_slice(&["--ranks", "1", "--labels", "l1.csv", "--catalogue", "c1.csv"]);
    ok(&dir, &one);
    let mut four = base.to_vec();
    four.extend_from_slice(&["--ranks", "4", "--labels", "l4.csv", "--catalogue", "c4.csv"]);
    ok(&dir, &four);
    assert_eq!(read(&dir, "l1.csv"), read(&dir, "l4.csv"));

    let c1 = read(&dir, "c1.csv");
    let mut lines = c1.lines();
    assert!(lines.next().unwrap().starts_with("# r_link="));
    assert_eq!(
        lines.next().unwrap(),
        "group_id,count,mass,com_0,com_1,com_2,inertia_radius"
    );
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty(), "gaussian clump should form groups");
    for row in rows {
        let count: u32 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(count >= 5);
    }
    // Same groups either way; only the reduced floats may move a hair.
    let c4 = read(&dir, "c4.csv");
    let ids = |s: &str| -> Vec<String> {
        s.lines().skip(2).map(|r| r.split(',').take(2).collect::<Vec<_>>().join(",")).collect()
    };
    assert_eq!(ids(&c1), ids(&c4));
}

#[test]
fn sparse_points_leave_the_default_catalogue_empty() {
    let dir = TempDir::new().unwrap();
    gen(&dir, &["--dist", "grid", "-n", "27", "-d", "3", "--seed", "0"], "p.jzpt");
    ok(&dir, &[
        "fof", "--input", "p.jzpt", "--rlink", "0.01", "--catalogue", "cat.csv",
    ]);
    let cat = read(&dir, "cat.csv");
    assert_eq!(cat.lines().count(), 2, "header only, no group rows");
}

#[test]
fn exit_codes_separate_usage_data_and_capacity_errors() {
    let dir = TempDir::new().unwrap();
    gen(&dir, &["--dist", "uniform", "-n", "60", "-d", "2", "--seed", "1"], "p.jzpt");
    // Usage: bad k, conflicting link flags, periodic without a box.
    assert_eq!(code(&dir, &["knn", "--input", "p.jzpt", "-k", "0"]), 2);
    assert_eq!(code(&dir, &["knn", "--input", "p.jzpt", "-k", "61"]), 2);
    assert_eq!(code(&dir, &["knn", "--input", "p.jzpt", "-k", "2", "--periodic"]), 2);
    assert_eq!(code(&dir, &["fof", "--input", "p.jzpt"]), 2);
    assert_eq!(
        code(&dir, &["fof", "--input", "p.jzpt", "--alpha", "0.2", "--rlink", "0.1"]),
        2
    );
    assert_eq!(code(&dir, &["fof", "--input", "p.jzpt", "--alpha", "0.2"]), 2);
    assert_eq!(
        code(&dir, &["knn", "--input", "p.jzpt", "--queries", "p.jzpt", "-k", "2", "--ranks", "2"]),
        2
    );
    assert_eq!(code(&dir, &["bench", "--op", "knn", "--sizes", "100,100"]), 2);
    // Data: a corrupt point file.
    std::fs::write(dir.path().join("bad.jzpt"), b"JZPTgarbage").unwrap();
    assert_eq!(code(&dir, &["knn", "--input", "bad.jzpt", "-k", "1"]), 3);
    assert_eq!(code(&dir, &["knn", "--input", "missing.jzpt", "-k", "1"]), 3);
    // Capacity: the oracle cap.
    gen(&dir, &["--dist", "uniform", "-n", "20001", "-d", "2", "--seed", "1"], "big.jzpt");
    assert_eq!(code(&dir, &["knn", "--input", "big.jzpt", "-k", "1", "--oracle"]), 4);
}

#[test]
fn thread_cap_is_validated_and_obeyed() {
    let dir = TempDir::new().unwrap();
    gen(&dir, &["--dist", "uniform", "-n", "50", "-d", "2", "--seed", "1"], "p.jzpt");
    let bad = Command::new(env!("CARGO_BIN_EXE_ztree"))
        .current_dir(dir.path())
        .env("ZTREE_THREADS", "0")
        .args(["knn", "--input", "p.jzpt", "-k", "1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let good = Command::new(env!("CARGO_BIN_EXE_ztree"))
        .current_dir(dir.path())
        .env("ZTREE_THREADS", "2")
        .args(["knn", "--input", "p.jzpt", "-k", "1"])
        .output()
        .unwrap();
    assert!(good.status.success());
}

fn bench_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn bench_hashes_repeat_and_phases_account_for_the_run() {
    let dir = TempDir::new().unwrap();
    let args = [
        "bench", "--op", "knn", "--sizes", "2000,6000", "-k", "8", "--seed", "17",
    ];
    let first = ok(&dir, &args);
    let second = ok(&dir, &args);
    let (fr, sr) = (bench_rows(&first), bench_rows(&second));
    assert_eq!(fr.len(), 2);
    for (a, b) in fr.iter().zip(&sr) {
        assert_eq!(a[12], b[12], "same seed must hash identically");
    }
    let fof = ok(&dir, &[
        "bench", "--op", "fof", "--sizes", "3000", "--alpha", "0.2", "--ranks", "2", "--seed", "17",
    ]);
    for row in fr.iter().chain(bench_rows(&fof).iter()) {
        let ms: Vec<f64> = row[6..12].iter().map(|v| v.parse().unwrap()).collect();
        let phase_sum: f64 = ms[..5].iter().sum();
        let total = ms[5];
        assert!(
            phase_sum <= total * 1.05,
            "phases {phase_sum}ms overrun total {total}ms"
        );
        assert!(phase_sum >= total * 0.5, "phases {phase_sum}ms miss most of {total}ms");
    }
}

#[test]
fn help_names_every_subcommand() {
    let dir = TempDir::new().unwrap();
    let out = ztree(&dir, &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["gen", "knn", "fof", "bench"] {
        assert!(text.contains(sub), "help misses {sub}");
    }
}
