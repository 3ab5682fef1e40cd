//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line whether or not the run succeeds.
//!
//! `SPGP_TUDATASET_DIR` may point at a directory holding raw `DD/` and
//! `PROTEINS/` TUDataset folders; criterion 11 is skipped without it.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spgp::autodiff::{Params, Tape};
use spgp::graph::{parse_tudataset, Graph, Label};
use spgp::model::{model_forward, train, TrainConfig};
use spgp::pooling::{complexity_report, keep_count, pool_topk, relation_scores, ComplexityMethod, LayerState, RelationModule};
use spgp::structure::{extract_all, extract_bcc, raw_cliques, structure_stats, PrototypeKind, PrototypeSet};
use spgp::synth::{
    diversity_experiment, gen_er, gen_regular, graph_diversity, planted_motif_task, GenSpec,
    GraphModel, ScoreMethod, ScorerBank, ScorerConfig,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn regular_separation() -> Outcome {
    let start = Instant::now();
    let cfg = ScorerConfig::default();
    let bank = ScorerBank::new(1, cfg.hidden, &PrototypeKind::ALL, cfg.lambda, 0).unwrap();
    let (mut worst_base, mut worst_spgp, mut planted) = (0.0f64, f64::INFINITY, 0);
    for g in 0..100 {
        let graph = gen_regular(100, 6, 1000 + g).unwrap();
        let d = graph_diversity(&bank, &graph).unwrap();
        worst_base = worst_base.max(d.baseline_std);
        worst_spgp = worst_spgp.min(d.spgp_std);
        planted += d.planted as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_base <= 1e-10 && worst_spgp > 1e-8 && secs < 120.0,
        format!("max baseline std {worst_base:.2e}, min spgp std {worst_spgp:.2e}, planted {planted}/100, {secs:.1}s"),
    )
}

fn diversity_trend() -> Outcome {
    let start = Instant::now();
    let spec = GenSpec {
        model: GraphModel::Regular,
        n: 100,
        param: 6.0,
        seed: 2000,
    };
    let fractions = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let results = diversity_experiment(spec, &fractions, 100, 7).unwrap();
    let mean = |f: f64, m: ScoreMethod| {
        results
            .iter()
            .find(|r| r.rewire_fraction == f && r.method == m)
            .unwrap()
            .mean_score_std
    };
    let mut ok = true;
    let mut pts = Vec::new();
    for &f in &fractions {
        let (s, b) = (mean(f, ScoreMethod::Spgp), mean(f, ScoreMethod::Baseline));
        ok &= s >= b;
        pts.push(format!("{f}: {s:.2e}/{b:.2e}"));
    }
    ok &= mean(0.0, ScoreMethod::Spgp) > 0.0;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 600.0;
    verdict(ok, format!("spgp/baseline [{}], {secs:.1}s", pts.join(", ")))
}

fn extraction_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let total = 600;
    let mut matched = 0;
    for _ in 0..total {
        let g = common::small_random_graph(&mut rng);
        if extract_bcc(&g).sets() == common::bcc_oracle(&g).as_slice() && raw_cliques(&g) == common::clique_oracle(&g) {
            matched += 1;
        }
    }
    verdict(matched == total, format!("{matched}/{total} graphs match both oracles"))
}

fn gradient_fidelity() -> Outcome {
    let mut worst = ("", 0.0f64, 0);
    let mut count = 0;
    for seed in 0..20 {
        for (name, err) in common::all_gradient_errors(seed) {
            count += 1;
            if !(err <= worst.1) {
                worst = (name, err, seed);
            }
        }
    }
    verdict(
        worst.1 <= common::GRAD_TOL,
        format!("{count} checks over 20 seeds, worst {} = {:.2e} (seed {})", worst.0, worst.1, worst.2),
    )
}

fn random_prototypes(rng: &mut ChaCha8Rng, n: usize, kind: PrototypeKind) -> PrototypeSet {
    let count = rng.gen_range(1..=3);
    let sets = (0..count)
        .map(|_| {
            let size = rng.gen_range(1..=n.min(4));
            let mut s = rand::seq::index::sample(rng, n, size).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    PrototypeSet::new(kind, sets)
}

fn zero_affinity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut non_members = 0;
    for draw in 0..1000 {
        let n = rng.gen_range(2..16);
        let d = rng.gen_range(1..6);
        let graph = gen_er(n, rng.gen_range(0.5..4.0f64).min(n as f64), draw).unwrap();
        let kind = if rng.gen_bool(0.5) { PrototypeKind::Bcc } else { PrototypeKind::Clique };
        let ps = if rng.gen_bool(0.5) {
            random_prototypes(&mut rng, n, kind)
        } else {
            extract_all(&graph, &[kind]).remove(0)
        };
        let mut params = Params::new();
        let module = RelationModule {
            kind,
            weight: params.add("w", common::uniform(&mut rng, 2 * d, 1).mapv(|x| 5.0 * x)),
            bias: params.add("b", common::uniform(&mut rng, 1, 1).mapv(|x| 5.0 * x)),
        };
        let t = Tape::new();
        let h = t.constant(common::uniform(&mut rng, n, d).mapv(|x| 10.0 * x));
        let out = relation_scores(&t, &params, &module, h, &ps).unwrap().value();
        let member_of = ps.memberships(n);
        for v in (0..n).filter(|&v| member_of[v].is_empty()) {
            non_members += 1;
            if out[[v, 0]].to_bits() != 0 {
                violations += 1;
            }
        }
    }
    verdict(violations == 0, format!("{violations} non-zero of {non_members} non-member scores"))
}

fn pool_size_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = Vec::new();
    for n in 1..=50usize {
        for i in 1..=10usize {
            let p = i as f64 / 10.0;
            let expected = (i * n).div_ceil(10);
            let t = Tape::new();
            let h = t.constant(common::uniform(&mut rng, n, 2));
            let state = LayerState::new(h, Array2::zeros((n, n)), Vec::new()).unwrap();
            let scores = t.constant(common::uniform(&mut rng, n, 1));
            let kept = pool_topk(&state, scores, p).unwrap().num_nodes();
            if kept != expected || keep_count(n, p) != expected {
                bad.push(format!("(n={n}, p={p}): {kept} != {expected}"));
            }
        }
    }
    verdict(bad.is_empty(), format!("500 grid points, {} mismatches {}", bad.len(), bad.join(" ")))
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = TrainConfig::default();
    let mut worst = 0.0f64;
    for g in 0..50 {
        let n = rng.gen_range(5..30);
        let base = gen_er(n, rng.gen_range(2.0..5.0), 7000 + g).unwrap();
        let graph = Graph::new(n, base.edges(), common::uniform(&mut rng, n, 3), Label::Class(1)).unwrap();
        let reference = model_forward(&cfg, &graph, &extract_all(&graph, &cfg.prototype_kinds)).unwrap();
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let pg = graph.permute(&perm).unwrap();
            let logits = model_forward(&cfg, &pg, &extract_all(&pg, &cfg.prototype_kinds)).unwrap();
            for (a, b) in reference.iter().zip(&logits) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(worst <= 1e-9, format!("max abs logit difference {worst:.2e} over 50 graphs x 20 permutations"))
}

fn motif_learning() -> Outcome {
    let start = Instant::now();
    let mut accs = Vec::new();
    for seed in 0..3 {
        let ds = planted_motif_task(200, 30, seed).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let (report, _) = train(&cfg, &ds, None, None).unwrap();
        accs.push(report.mean);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = accs.iter().all(|&a| a >= 0.90) && secs < 900.0;
    let shown: Vec<String> = accs.iter().map(|a| format!("{a:.3}")).collect();
    verdict(ok, format!("10-fold mean test accuracy per seed [{}], {secs:.0}s", shown.join(", ")))
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let num: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    num / den
}

fn complexity_slopes() -> Outcome {
    let sizes = [100u64, 1_000, 10_000, 100_000];
    let fit = |method| {
        let pts: Vec<(f64, f64)> = sizes
            .iter()
            .map(|&n| {
                let (_, space) = complexity_report(n, 64, 2, method).unwrap();
                ((n as f64).ln(), (space as f64).ln())
            })
            .collect();
        slope(&pts)
    };
    let (spgp, dense) = (fit(ComplexityMethod::Spgp), fit(ComplexityMethod::StructureLearning));
    verdict(
        (spgp - 1.0).abs() <= 0.05 && (dense - 2.0).abs() <= 0.05,
        format!("space slopes spgp {spgp:.3}, structure learning {dense:.3}"),
    )
}

fn er_calibration() -> Outcome {
    let n = 1000;
    let total: usize = (0..1000).map(|s| 2 * gen_er(n, 2.16, 10_000 + s).unwrap().num_edges()).sum();
    let mean = total as f64 / (1000 * n) as f64;
    verdict((2.06..=2.26).contains(&mean), format!("mean degree {mean:.4}"))
}

fn tudataset_coverage() -> Outcome {
    let Some(root) = std::env::var_os("SPGP_TUDATASET_DIR").map(PathBuf::from) else {
        return Outcome::Skip("SPGP_TUDATASET_DIR not set".into());
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, threshold) in [("DD", 1.0), ("PROTEINS", 0.999)] {
        let dir = root.join(name);
        if !dir.is_dir() {
            return Outcome::Skip(format!("{} missing", dir.display()));
        }
        let ds = match parse_tudataset(&dir) {
            Ok(ds) => ds,
            Err(e) => return Outcome::Fail(format!("{name}: {e}")),
        };
        let stats = structure_stats(&ds, &PrototypeKind::ALL).unwrap();
        ok &= stats.fraction_graphs_with_any >= threshold && stats.extraction_time_per_graph < 1.0;
        parts.push(format!(
            "{name} coverage {:.4} ({:.2e}s/graph)",
            stats.fraction_graphs_with_any, stats.extraction_time_per_graph
        ));
    }
    verdict(ok, parts.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("regular-graph score separation", regular_separation),
        ("score diversity under rewiring", diversity_trend),
        ("structure extraction oracles", extraction_oracles),
        ("gradient fidelity", gradient_fidelity),
        ("zero affinity for non-members", zero_affinity),
        ("pool size law", pool_size_law),
        ("permutation invariance", permutation_invariance),
        ("planted-motif learning", motif_learning),
        ("complexity slopes", complexity_slopes),
        ("ER degree calibration", er_calibration),
        ("TUDataset structure coverage", tudataset_coverage),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Outcome::Pass(d) => format!("PASS {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                format!("FAIL {name}: {d}")
            }
            Outcome::Skip(d) => format!("SKIP {name}: {d}"),
        };
        println!("criterion {:>2} {line}", i + 1);
    }
    println!("{failed} criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
