//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion that can run here fails. A criterion whose data
//! is absent is reported as FAIL with the reason but does not fail the run.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttt_core::attention::{
    attention_mlp_oracle, linear_attention_quadratic, linear_core, softmax_core, ttt_attention, ttt_heads, FeatureMap,
    HeadLayout, TttConfig, TttParams,
};
use ttt_core::inner::{inner_update, InnerKind, InnerModel, InnerTrainConfig, LossKind, LrRule, Partition};
use ttt_core::model::ttt_layer_flops;
use ttt_core::tensor::{matmul, matmul_tn};
use ttt_core::{Eager, Grid, Tensor};
use ttt_harness::ablate::{run_ablation, write_ablation_csv, AblateRow, AblateSpec, ABLATE_COLUMNS};
use ttt_harness::alloc_counter::CountingAlloc;
use ttt_harness::bench::{run_bench, slopes, BenchConfig};
use ttt_harness::config::RunConfig;
use ttt_harness::data::load_data;
use ttt_harness::gradcheck::{gradcheck_matrix, GRADCHECK_TOL};
use ttt_harness::lossreport::loss_report;
use ttt_harness::train::train;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

enum Verdict {
    Pass(String),
    Fail(String),
    /// Could not run in this environment.
    Unavailable(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn ops() -> Eager {
    Eager { check_finite: false, ..Eager::new() }
}

fn c1_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut slowest = Duration::ZERO;
    let (mut e_mlp, mut e_lin, mut e_ttt) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let start = Instant::now();
        let n = rng.random_range(4..40);
        let d = rng.random_range(2..12);
        let (q, k, v) = (random(&[n, d], &mut rng), random(&[n, d], &mut rng), random(&[n, d], &mut rng));
        let a = softmax_core(&mut ops(), &q, &k, &v).unwrap();
        let b = attention_mlp_oracle(&mut ops(), &q, &k, &v).unwrap();
        e_mlp = e_mlp.max(a.max_abs_diff(&b));
        let a = linear_core(&mut ops(), &q, &k, &v, FeatureMap::Elu1).unwrap();
        let b = linear_attention_quadratic(&mut ops(), &q, &k, &v, FeatureMap::Elu1).unwrap();
        e_lin = e_lin.max(a.max_abs_diff(&b));
        slowest = slowest.max(start.elapsed());
    }
    for seed in 0..5 {
        let start = Instant::now();
        let (c, heads, n, eta) = (12, 3, 10, 0.7);
        let cfg = TttConfig {
            inner: InnerTrainConfig {
                loss: LossKind::Mse,
                epochs: 1,
                partition: Partition::FullBatch,
                lr: LrRule::Fixed { eta },
            },
            layout: HeadLayout::Uniform(InnerKind::Fc),
            qk_l2_norm: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut p = TttParams::<Tensor<f64>>::init(c, heads, &cfg, &mut rng).unwrap();
        let d = c / heads;
        for h in &mut p.heads {
            h.inner = InnerModel::zeros(InnerKind::Fc, d).unwrap();
        }
        let x = random(&[n, c], &mut rng);
        let outs = ttt_heads(&mut ops(), &x, &p, &cfg, None).unwrap();
        let scale = eta / (n as f64 * (d as f64).sqrt());
        for (h, out) in p.heads.iter().zip(&outs) {
            let q = matmul(&x, &h.proj.wq).unwrap();
            let k = matmul(&x, &h.proj.wk).unwrap();
            let v = matmul(&x, &h.proj.wv).unwrap();
            let want = matmul(&q, &matmul_tn(&k, &v).unwrap()).unwrap().scale(scale);
            e_ttt = e_ttt.max(out.max_abs_diff(&want));
        }
        slowest = slowest.max(start.elapsed());
    }
    check(
        e_mlp < 1e-8 && e_lin < 1e-8 && e_ttt < 1e-8 && slowest < Duration::from_secs(1),
        format!("softmax vs MLP {e_mlp:.1e}, linear O(N) vs quadratic {e_lin:.1e}, TTT vs scaled QKᵀV {e_ttt:.1e}, slowest {slowest:?}"),
    )
}

fn c2_gradcheck() -> Verdict {
    let start = Instant::now();
    let cells = gradcheck_matrix(None);
    let elapsed = start.elapsed();
    let worst = cells.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> = cells.iter().filter(|c| !c.pass).map(|c| c.name()).collect();
    let kinds = InnerKind::ALL.len();
    check(
        failed.is_empty() && cells.len() >= kinds * 20 && kinds >= 10 && elapsed < Duration::from_secs(300),
        format!("{} cells ({kinds} inner kinds), worst rel err {worst:.1e} < {GRADCHECK_TOL:.0e}, {elapsed:.1?}, failed {failed:?}", cells.len()),
    )
}

fn c3_mixed_derivatives() -> Verdict {
    let mut worst = 0.0f64;
    let mut shape_ok = true;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let rows = loss_report(seed).unwrap();
        let c = 1.0 / (6.0 * 2.0);
        for r in &rows {
            worst = worst.max(r.max_abs_err);
            let ok = match r.loss.as_str() {
                "dot_product" | "mse" => (r.analytic_min + c).abs() < 1e-15 && (r.analytic_max + c).abs() < 1e-15,
                "mae" => r.analytic_min == 0.0 && r.analytic_max == 0.0 && r.numeric_max.abs() < 1e-6,
                "smooth_l1" => (r.analytic_min + c).abs() < 1e-15 && r.analytic_max == 0.0,
                "rmse" => r.analytic_max < 0.0 && r.analytic_min < r.analytic_max,
                _ => false,
            };
            if !ok {
                notes.push(format!("{} seed {seed}", r.loss));
            }
            shape_ok &= ok;
        }
    }
    check(
        worst < 1e-6 && shape_ok,
        format!("5 losses x 5 draws, max |closed form - numeric| {worst:.1e}, shape mismatches {notes:?}"),
    )
}

fn updated(
    kind: InnerKind,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    cfg: &InnerTrainConfig,
    w0: &InnerModel<Tensor<f64>>,
) -> Vec<Tensor<f64>> {
    inner_update(&mut ops(), w0, k, v, cfg, None, None).unwrap_or_else(|e| panic!("{kind:?}: {e}")).weights
}

fn max_diff(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

fn permute(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (_, d) = t.dims2("permute").unwrap();
    Tensor::from_fn(t.shape(), |i| t.data()[perm[i / d] * d + i % d])
}

fn c4_batch_structure() -> Verdict {
    let (n, d) = (12, 4);
    let (mut full, mut within, mut across) = (0.0f64, 0.0f64, f64::INFINITY);
    for seed in 0..5 {
        for kind in [InnerKind::Fc, InnerKind::GatedFc, InnerKind::Mlp { ratio: 2, layers: 2 }] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w0 = InnerModel::init(kind, d, &mut rng).unwrap();
            let (k, v) = (random(&[n, d], &mut rng), random(&[n, d], &mut rng));
            let mut cfg = InnerTrainConfig {
                loss: LossKind::Mse,
                epochs: 2,
                partition: Partition::FullBatch,
                lr: LrRule::Fixed { eta: 0.8 },
            };
            let base = updated(kind, &k, &v, &cfg, &w0);
            let mut shuffle: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                shuffle.swap(i, rng.random_range(0..=i));
            }
            full = full.max(max_diff(&base, &updated(kind, &permute(&k, &shuffle), &permute(&v, &shuffle), &cfg, &w0)));

            cfg.partition = Partition::Sequential(3);
            let base = updated(kind, &k, &v, &cfg, &w0);
            let inside: Vec<usize> = [3, 0, 2, 1, 5, 4, 7, 6, 8, 11, 9, 10].to_vec();
            within =
                within.max(max_diff(&base, &updated(kind, &permute(&k, &inside), &permute(&v, &inside), &cfg, &w0)));
            let mut cross: Vec<usize> = (0..n).collect();
            cross.swap(1, 9);
            across = across.min(max_diff(&base, &updated(kind, &permute(&k, &cross), &permute(&v, &cross), &cfg, &w0)));
        }
    }
    check(
        full < 1e-12 && within < 1e-12 && across > 1e-6,
        format!("full-batch permutation {full:.1e}, within mini-batch {within:.1e}, smallest across-boundary change {across:.1e}"),
    )
}

fn c5_rate_absorption() -> Verdict {
    let (n, d) = (10, 5);
    let mut absorb = 0.0f64;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = InnerModel::init(InnerKind::Fc, d, &mut rng).unwrap();
        let (k, v) = (random(&[n, d], &mut rng), random(&[n, d], &mut rng));
        let eta = rng.random_range(0.05..3.0);
        let cfg = |eta| InnerTrainConfig {
            loss: LossKind::Mse,
            epochs: 1,
            partition: Partition::FullBatch,
            lr: LrRule::Fixed { eta },
        };
        let a = updated(InnerKind::Fc, &k, &v, &cfg(eta), &w0);
        let s = eta.sqrt();
        let b = updated(InnerKind::Fc, &k.scale(s), &v.scale(s), &cfg(1.0), &w0);
        let ua = a[0].sub(&w0.weights[0]).unwrap();
        let ub = b[0].sub(&w0.weights[0]).unwrap();
        absorb = absorb.max(ua.max_abs_diff(&ub));
    }

    let mut exact = true;
    let (c, heads, eta) = (8, 2, 1.3);
    let grid = Grid::new(3, 3);
    for kind in InnerKind::ALL {
        let layout = HeadLayout::Uniform(kind);
        let mut dynamic = TttConfig {
            inner: InnerTrainConfig {
                loss: LossKind::Mse,
                epochs: 2,
                partition: Partition::Sequential(2),
                lr: LrRule::Dynamic { eta },
            },
            layout,
            qk_l2_norm: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = TttParams::<Tensor<f64>>::init(c, heads, &dynamic, &mut rng).unwrap();
        let x = random(&[9, c], &mut rng);
        let out_dyn = ttt_attention(&mut ops(), &x, &p, &dynamic, Some(grid)).unwrap();
        dynamic.inner.lr = LrRule::Fixed { eta: eta / 2.0 };
        let fixed = p.map(Clone::clone);
        let fixed = TttParams {
            heads: fixed.heads.into_iter().map(|h| ttt_core::attention::TttHead { w_eta: None, ..h }).collect(),
            ..fixed
        };
        let out_fixed = ttt_attention(&mut ops(), &x, &fixed, &dynamic, Some(grid)).unwrap();
        exact &= out_dyn == out_fixed;
    }
    check(
        absorb < 1e-10 && exact,
        format!("(K,V,eta) vs (sqrt(eta)K, sqrt(eta)V, 1) update {absorb:.1e}; zero gate == fixed eta/2 bit-exact for all kinds: {exact}"),
    )
}

fn c6_flops_ratio() -> Verdict {
    let cfg = TttConfig {
        inner: InnerTrainConfig {
            loss: LossKind::Mse,
            epochs: 1,
            partition: Partition::FullBatch,
            lr: LrRule::Fixed { eta: 1.0 },
        },
        layout: HeadLayout::Uniform(InnerKind::Fc),
        qk_l2_norm: false,
    };
    let ratios: Vec<f64> = [(64, 64, 4), (196, 192, 3), (1024, 64, 1)]
        .iter()
        .map(|&(n, c, h)| ttt_layer_flops(n, c, h, &cfg).inner_ratio())
        .collect();
    check(ratios.iter().all(|r| (r - 4.0).abs() <= 0.2), format!("inner/forward ratios {ratios:?}"))
}

fn c7_scaling() -> Verdict {
    let start = Instant::now();
    let cfg = BenchConfig::default();
    let rows = match run_bench(&cfg, |r| eprintln!("  bench {:<8} N={:<5} p50 {:.3} ms", r.layer, r.n, r.p50_ms)) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    let slope = |l: &str| slopes(&rows).into_iter().find(|(x, _)| x == l).map(|(_, s)| s).unwrap_or(f64::NAN);
    let (st, ss) = (slope("ttt"), slope("softmax"));
    let nmax = *cfg.seq_lens.iter().max().unwrap();
    let at = |l: &str| rows.iter().find(|r| r.layer == l && r.n == nmax).map(|r| r.p50_ms).unwrap_or(f64::NAN);
    let (tt, ts) = (at("ttt"), at("softmax"));
    let no_square = rows
        .iter()
        .filter(|r| r.layer == "ttt")
        .all(|r| r.max_tensor_elems < r.n * r.n && r.max_tensor_elems <= r.n * cfg.dim);
    let ttt_peak = rows.iter().filter(|r| r.layer == "ttt").map(|r| r.peak_bytes).max().unwrap_or(0);
    check(
        (0.8..=1.3).contains(&st) && (1.7..=2.3).contains(&ss) && tt < ts && no_square && elapsed < Duration::from_secs(600),
        format!(
            "slopes ttt {st:.3} softmax {ss:.3}; N={nmax}: ttt {tt:.1} ms vs softmax {ts:.1} ms; no NxN in ttt path: {no_square} (peak {ttt_peak} B); {elapsed:.0?}"
        ),
    )
}

fn c8_saturation() -> Verdict {
    let (n, d, tau) = (12, 16, 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let raw = random(&[n, d], &mut rng);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut r: Vec<f64> = raw.data()[i * d..(i + 1) * d].to_vec();
        for prev in &rows {
            let dot: f64 = r.iter().zip(prev).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        rows.push(r.into_iter().map(|a| a / norm).collect());
    }
    let k = Tensor::new(vec![n, d], rows.concat()).unwrap();
    let v = random(&[n, d], &mut rng);
    let out = softmax_core(&mut ops(), &k.scale(tau), &k, &v).unwrap();
    let err = out.max_abs_diff(&v);
    check(
        err < 1e-6,
        format!("max_i |softmax(tau K_i Kᵀ)V - V_i|_inf = {err:.1e} for {n} orthonormal keys, tau = {tau}"),
    )
}

fn c9_cifar() -> Verdict {
    let dir = std::env::var_os("TTT_CIFAR10_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cifar-10-batches-bin"));
    if !dir.join("data_batch_1.bin").exists() {
        return Verdict::Unavailable(format!("CIFAR-10 binaries not found in {} (set TTT_CIFAR10_DIR)", dir.display()));
    }
    let run = RunConfig::cifar(dir);
    let (tr, va) = match load_data(&run.data, run.seed) {
        Ok(d) => d,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let start = Instant::now();
    let out = match train(&run, &tr, &va, |r| {
        eprintln!("  cifar epoch {:>2} loss {:.4} val {:.4} {:.0}s", r.epoch, r.train_loss, r.val_acc, r.wall_s);
        Ok(())
    }) {
        Ok(o) => o,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    let best = out.best_val_acc();
    let losses: Vec<f64> = out.records.iter().take(5).map(|r| r.train_loss).collect();
    let decreasing = losses.len() == 5 && losses.windows(2).all(|w| w[1] < w[0]);
    check(
        best > 0.35 && decreasing && out.diverged.is_none() && elapsed < Duration::from_secs(3600),
        format!(
            "best val top-1 {best:.3}, epoch losses {losses:.3?}, {} threads, {elapsed:.0?}",
            rayon::current_num_threads()
        ),
    )
}

fn majority(flags: &[bool]) -> bool {
    2 * flags.iter().filter(|&&f| f).count() > flags.len()
}

fn c10_ablation() -> Verdict {
    let seeds = vec![0, 1, 2];
    let spec = AblateSpec {
        losses: vec![LossKind::DotProduct, LossKind::Mse, LossKind::Mae],
        lrs: vec![LrRule::Fixed { eta: 0.1 }, LrRule::Fixed { eta: 1.0 }],
        seeds: seeds.clone(),
        ..AblateSpec::losses()
    };
    let rows = run_ablation(&spec);
    let mut unstable = AblateSpec::learning_rates();
    unstable.lrs = vec![LrRule::Fixed { eta: 10.0 }];
    unstable.seeds = seeds.clone();
    let unstable_rows = run_ablation(&unstable);

    let metric = |loss: &str, lr: &str, seed: u64| -> f64 {
        rows.iter()
            .find(|r: &&AblateRow| r.loss == loss && r.inner_lr == lr && r.seed == seed)
            .map_or(f64::NAN, |r| r.metric)
    };
    let loss_order: Vec<bool> = seeds
        .iter()
        .map(|&s| {
            metric("mse", "1", s) > metric("mae", "1", s) && metric("dot_product", "1", s) > metric("mae", "1", s)
        })
        .collect();
    let lr_order: Vec<bool> = seeds
        .iter()
        .map(|&s| {
            metric("dot_product", "1", s) >= metric("dot_product", "0.1", s)
                && metric("mse", "1", s) >= metric("mse", "0.1", s)
        })
        .collect();
    let marked = unstable_rows.iter().filter(|r| r.diverged()).count();

    let dir = std::env::temp_dir().join(format!("ttt-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("ablate.csv");
    let mut all = rows.clone();
    all.extend(unstable_rows.iter().cloned());
    write_ablation_csv(&path, &all).unwrap();
    let header = std::fs::read_to_string(&path).unwrap().lines().next().unwrap_or_default().to_string();
    let _ = std::fs::remove_dir_all(&dir);
    let columns_ok =
        ["config", "params", "flops", "throughput_tok_s", "metric", "mark"].iter().all(|c| ABLATE_COLUMNS.contains(c))
            && header == ABLATE_COLUMNS.join(",");
    let filled = rows.iter().all(|r| r.params > 0 && r.flops > 0 && r.throughput_tok_s > 0.0 && !r.failed());

    let show = |loss: &str, lr: &str| {
        seeds.iter().map(|&s| format!("{:.3}", metric(loss, lr, s))).collect::<Vec<_>>().join("/")
    };
    check(
        majority(&loss_order) && majority(&lr_order) && marked >= 1 && columns_ok && filled,
        format!(
            "acc@lr1 dot {} mse {} mae {}; dot@lr0.1 {} mse@lr0.1 {}; loss order {loss_order:?}, lr order {lr_order:?}; '*' at lr 10 on {marked}/3 seeds",
            show("dot_product", "1"),
            show("mse", "1"),
            show("mae", "1"),
            show("dot_product", "0.1"),
            show("mse", "0.1"),
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalences", c1_oracles),
        ("gradient check matrix", c2_gradcheck),
        ("mixed second derivatives", c3_mixed_derivatives),
        ("batch structure", c4_batch_structure),
        ("rate absorption and zero gate", c5_rate_absorption),
        ("inner FLOPs ratio", c6_flops_ratio),
        ("complexity scaling", c7_scaling),
        ("softmax saturation", c8_saturation),
        ("CIFAR-10 desk-scale learning", c9_cifar),
        ("ablation structure and orderings", c10_ablation),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match f() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failures += 1;
                ("FAIL", d)
            }
            Verdict::Unavailable(d) => ("FAIL", format!("not runnable here: {d}")),
        };
        println!("criterion {id:>2} {tag} {name} [{:.1}s]: {detail}", start.elapsed().as_secs_f64());
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
