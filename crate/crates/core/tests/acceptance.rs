//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use bet::backbone::NormalizedAdjacency;
use bet::cli::{cmd_pretrain, cmd_search, RunConfig, FINAL_TABLE_FILE, POPULATION_FILE, PRETRAINED_FILE};
use bet::dataset::{generate_synthetic, Split, SyntheticConfig};
use bet::embedding::{bets_file_len, BETS_HEADER_LEN};
use bet::metrics::{eval_ensemble, fitness_ratio};
use bet::predictor::FitnessPredictor;
use bet::sampler::{ActionSampler, DistributionKind};
use bet::search::{run_search, selective_retrain, train_under_action, SearchConfig};
use bet::seed::{derive_seed, derived_rng, rng_from, STREAM_BASELINE, STREAM_PRETRAIN};
use bet::{Backbone, BprTriple, InteractionDataset, MaskedEmbeddingTable, ScorerKind, SizeAction, SplitRatios, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

const GRAD_REL_TOL: f64 = 1e-4;
const METRIC_TOL: f64 = 1e-12;
const PROPAGATION_TOL: f64 = 1e-10;
const BUDGET_RUNTIME_SECS: f64 = 60.0;
const DESK_RUNTIME_SECS: f64 = 15.0 * 60.0;

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n:>2} [{name}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn zipf_freqs(n: usize, scale: f64, offset: usize) -> Vec<u32> {
    (0..n).map(|i| 1 + (scale / ((i + offset) as f64).sqrt()) as u32).collect()
}

#[test]
fn c01_hard_budget_cap() {
    let start = Instant::now();
    let user_freq = zipf_freqs(1000, 80.0, 1);
    let item_freq = zipf_freqs(2000, 120.0, 3);
    let d_max = 32;
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut families = std::collections::HashSet::new();
    for (ci, c) in [0.8, 0.9, 0.95].into_iter().enumerate() {
        let sampler = ActionSampler::new(&user_freq, &item_freq, d_max, c).unwrap();
        for i in 0..10_000u64 {
            let a = sampler.generate(&mut derived_rng(ci as u64, &[i])).unwrap();
            families.insert(a.dist_u);
            families.insert(a.dist_v);
            let ok = a.total_params() <= sampler.budget()
                && a.sizes().iter().all(|&d| (1..=d_max as u32).contains(&d));
            violations += usize::from(!ok);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let all_families = DistributionKind::SEARCH.iter().all(|k| families.contains(k));
    verdict(
        1,
        "hard budget cap",
        violations == 0 && all_families && secs < BUDGET_RUNTIME_SECS,
        &format!("{checked} actions, {violations} violations, all families {all_families}, {secs:.1}s"),
    );
}

#[test]
fn c02_budget_arithmetic() {
    let b = bet::budget_for(29_858 + 40_981, 128, 0.8).unwrap();
    verdict(2, "budget arithmetic", b == 1_813_478, &format!("B = {b}"));
}

#[test]
fn c03_deepsets_permutation_invariance() {
    let mut mismatches = 0;
    let mut swaps = 0;
    for pair in 0..100u64 {
        let mut rng = rng_from(1000 + pair);
        let nu = rng.random_range(5..30);
        let nv = rng.random_range(5..40);
        let uf: Vec<u32> = (0..nu).map(|_| rng.random_range(1..5)).collect();
        let vf: Vec<u32> = (0..nv).map(|_| rng.random_range(1..5)).collect();
        let d_max = rng.random_range(4..17);
        let sampler = ActionSampler::new(&uf, &vf, d_max, 0.7).unwrap();
        let action = sampler.generate(&mut rng).unwrap();
        let p = FitnessPredictor::new(&uf, &vf, d_max, &mut rng_from(pair)).unwrap();
        let base = p.predict_fitness(&action).unwrap();

        // Swap sizes between two equal-frequency entities of the same field.
        let freq = |n: usize| if n < nu { (0, uf[n]) } else { (1, vf[n - nu]) };
        let mut sizes = action.sizes().to_vec();
        for _ in 0..10 {
            let a = rng.random_range(0..nu + nv);
            let b = rng.random_range(0..nu + nv);
            if a != b && freq(a) == freq(b) && sizes[a] != sizes[b] {
                sizes.swap(a, b);
                swaps += 1;
            }
        }
        let swapped = SizeAction::from_sizes(sizes, nu, d_max as u32, action.budget).unwrap();
        if p.predict_fitness(&swapped).unwrap().to_bits() != base.to_bits() {
            mismatches += 1;
        }

        // Relabel every entity id (within its field), carrying frequency and size along.
        let mut perm_u: Vec<usize> = (0..nu).collect();
        let mut perm_v: Vec<usize> = (0..nv).collect();
        perm_u.shuffle(&mut rng);
        perm_v.shuffle(&mut rng);
        let uf2: Vec<u32> = perm_u.iter().map(|&o| uf[o]).collect();
        let vf2: Vec<u32> = perm_v.iter().map(|&o| vf[o]).collect();
        let sizes2: Vec<u32> = perm_u
            .iter()
            .map(|&o| action.sizes()[o])
            .chain(perm_v.iter().map(|&o| action.sizes()[nu + o]))
            .collect();
        let relabeled = SizeAction::from_sizes(sizes2, nu, d_max as u32, action.budget).unwrap();
        let p2 = FitnessPredictor::new(&uf2, &vf2, d_max, &mut rng_from(pair)).unwrap();
        if p2.predict_fitness(&relabeled).unwrap().to_bits() != base.to_bits() {
            mismatches += 1;
        }

        // Member order inside one set.
        let mut members: Vec<usize> = (0..nu + nv).filter(|&n| action.sizes()[n] == action.sizes()[0]).collect();
        let d = action.sizes()[0] as usize;
        let s1 = p.encode_set(&members, d).unwrap();
        members.shuffle(&mut rng);
        if p.encode_set(&members, d).unwrap() != s1 {
            mismatches += 1;
        }
    }
    verdict(
        3,
        "DeepSets permutation invariance",
        mismatches == 0 && swaps > 0,
        &format!("100 pairs, {swaps} size swaps, {mismatches} non-identical predictions"),
    );
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

#[test]
fn c04_gradient_checks() {
    let h = 1e-5;
    // BPR-MF.
    let ds = InteractionDataset::from_splits(
        3,
        4,
        vec![(0, 0), (0, 2), (1, 1), (2, 3), (2, 0)],
        vec![],
        vec![],
        0,
        SplitRatios::default(),
    )
    .unwrap();
    let d = 4;
    let mut rng = rng_from(4);
    let values: Vec<f64> = (0..7 * d).map(|_| rng.random_range(-0.5..0.5)).collect();
    let triples = vec![
        BprTriple { user: 0, pos: 0, neg: 1 },
        BprTriple { user: 0, pos: 2, neg: 3 },
        BprTriple { user: 1, pos: 1, neg: 2 },
        BprTriple { user: 2, pos: 3, neg: 1 },
    ];
    let model = |v: &[f64]| {
        Backbone::from_table(&ds, ScorerKind::Mf, MaskedEmbeddingTable::from_values(v.to_vec(), d).unwrap()).unwrap()
    };
    let l2 = 1e-2;
    let (_, grad) = model(&values).bpr_gradient(&triples, l2).unwrap();
    let mut bpr_max: f64 = 0.0;
    for i in 0..values.len() {
        let mut plus = values.clone();
        let mut minus = values.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (model(&plus).bpr_loss(&triples, l2).unwrap() - model(&minus).bpr_loss(&triples, l2).unwrap()) / (2.0 * h);
        bpr_max = bpr_max.max(rel_err(fd, grad[i]));
    }

    // Predictor MSE.
    let uf = [4, 1];
    let vf = [2];
    let p = FitnessPredictor::new(&uf, &vf, 4, &mut rng_from(9)).unwrap();
    let action = SizeAction::from_sizes(vec![3, 1, 3], 2, 4, 12).unwrap();
    let target = 0.8;
    let grad = p.loss_and_gradient(&action, target).unwrap().1.flat();
    let base = p.params();
    let hp = 1e-4;
    let mut pred_max: f64 = 0.0;
    for i in 0..base.len() {
        let eval = |delta: f64| {
            let mut q = p.clone();
            let mut params = base.clone();
            params[i] += delta;
            q.set_params(&params).unwrap();
            q.loss_and_gradient(&action, target).unwrap().0
        };
        let fd = (eval(hp) - eval(-hp)) / (2.0 * hp);
        pred_max = pred_max.max(rel_err(fd, grad[i]));
    }
    verdict(
        4,
        "gradient checks",
        bpr_max <= GRAD_REL_TOL && pred_max <= GRAD_REL_TOL,
        &format!("BPR-MF max rel err {bpr_max:.2e}, predictor max rel err {pred_max:.2e} over {} params", base.len()),
    );
}

/// Independent brute-force metrics for one user.
fn brute_metrics(scores: &[f64], train: &[u32], relevant: &[u32], k: usize) -> (f64, f64) {
    let mut cands: Vec<usize> = (0..scores.len()).filter(|v| !train.contains(&(*v as u32))).collect();
    // Selection sort: highest score first, lower index on ties.
    for i in 0..cands.len() {
        let mut best = i;
        for j in i + 1..cands.len() {
            let (a, b) = (cands[j], cands[best]);
            if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                best = j;
            }
        }
        cands.swap(i, best);
    }
    let top = &cands[..k.min(cands.len())];
    let mut hits = 0.0;
    let mut dcg = 0.0;
    for (pos, &v) in top.iter().enumerate() {
        if relevant.contains(&(v as u32)) {
            hits += 1.0;
            dcg += 1.0 / (pos as f64 + 2.0).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(relevant.len()) {
        idcg += 1.0 / (pos as f64 + 2.0).log2();
    }
    (hits / relevant.len() as f64, dcg / idcg)
}

#[test]
fn c05_metric_oracles_and_identity_ratio() {
    let ks = [5, 10, 20];
    let mut max_err: f64 = 0.0;
    for inst in 0..50u64 {
        let mut rng = rng_from(500 + inst);
        let nu = rng.random_range(2..6);
        let nv = rng.random_range(4..21);
        let mut train = Vec::new();
        let mut val = Vec::new();
        for u in 0..nu as u32 {
            for v in 0..nv as u32 {
                match rng.random_range(0..10) {
                    0 | 1 => train.push((u, v)),
                    2 | 3 => val.push((u, v)),
                    _ => {}
                }
            }
        }
        if val.is_empty() {
            val.push((0, 0));
            train.retain(|&p| p != (0, 0));
        }
        let ds = InteractionDataset::from_splits(nu, nv, train.clone(), val.clone(), vec![], 0, SplitRatios::default()).unwrap();
        let d = 3;
        let values: Vec<f64> = (0..(nu + nv) * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = Backbone::from_table(&ds, ScorerKind::Mf, MaskedEmbeddingTable::from_values(values.clone(), d).unwrap()).unwrap();
        let got = eval_ensemble(&model, &ds, Split::Val, &ks).unwrap();

        let mut per_k = vec![(0.0, 0.0); ks.len()];
        let mut ens = 0.0;
        let mut users = 0;
        for u in 0..nu {
            let rel: Vec<u32> = val.iter().filter(|p| p.0 == u as u32).map(|p| p.1).collect();
            if rel.is_empty() {
                continue;
            }
            let tr: Vec<u32> = train.iter().filter(|p| p.0 == u as u32).map(|p| p.1).collect();
            let scores: Vec<f64> = (0..nv)
                .map(|v| (0..d).map(|j| values[u * d + j] * values[(nu + v) * d + j]).sum())
                .collect();
            let mut s = 0.0;
            for (slot, &k) in per_k.iter_mut().zip(&ks) {
                let (r, n) = brute_metrics(&scores, &tr, &rel, k);
                slot.0 += r;
                slot.1 += n;
                s += r + n;
            }
            ens += s / 6.0;
            users += 1;
        }
        max_err = max_err.max((got.ensemble - ens / users as f64).abs());
        for (at, (r, n)) in got.per_k.iter().zip(&per_k) {
            max_err = max_err.max((at.recall - r / users as f64).abs());
            max_err = max_err.max((at.ndcg - n / users as f64).abs());
        }
    }

    let ds = generate_synthetic(&SyntheticConfig { num_users: 100, num_items: 200, interactions: 2000, seed: 3, ..Default::default() }).unwrap();
    let mut pre = Backbone::new(&ds, ScorerKind::Mf, 16, 0.1, 1).unwrap();
    pre.train(&ds, &TrainConfig { batch_size: 256, max_epochs: 5, ..Default::default() }, &mut rng_from(2)).unwrap();
    let mut full = pre.clone();
    full.apply_sizes(&vec![16; ds.num_entities()]).unwrap();
    let ratio = fitness_ratio(&full, &pre, &ds, &ks).unwrap();
    verdict(
        5,
        "metric oracles",
        max_err <= METRIC_TOL && ratio == 1.0,
        &format!("50 instances, max abs err {max_err:.1e}; full-mask fitness ratio {ratio}"),
    );
}

#[test]
fn c06_lightgcn_matches_dense_oracle() {
    let mut max_err: f64 = 0.0;
    let mut graphs = 0;
    for g in 0..40u64 {
        let mut rng = rng_from(600 + g);
        let nu = rng.random_range(1..20);
        let nv = rng.random_range(1..(50 - nu).min(30));
        let mut edges = Vec::new();
        for u in 0..nu as u32 {
            for v in 0..nv as u32 {
                if rng.random_bool(0.25) {
                    edges.push((u, v));
                }
            }
        }
        if edges.is_empty() {
            edges.push((0, 0));
        }
        let ds = InteractionDataset::from_splits(nu, nv, edges.clone(), vec![], vec![], 0, SplitRatios::default()).unwrap();
        let n = nu + nv;
        let d = 5;
        let layers = rng.random_range(1..5);
        let values: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut model = Backbone::from_table(
            &ds,
            ScorerKind::LightGcn { layers },
            MaskedEmbeddingTable::from_values(values, d).unwrap(),
        )
        .unwrap();
        let sizes: Vec<u32> = (0..n).map(|_| rng.random_range(1..=d as u32)).collect();
        model.apply_sizes(&sizes).unwrap();
        let e0 = model.table().masked_dense();

        // Dense Â = D^-1/2 A D^-1/2 built from the edge list.
        let mut a = vec![vec![0.0; n]; n];
        for &(u, v) in &edges {
            a[u as usize][nu + v as usize] = 1.0;
            a[nu + v as usize][u as usize] = 1.0;
        }
        let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                if a[i][j] != 0.0 {
                    a[i][j] /= (deg[i] * deg[j]).sqrt();
                }
            }
        }
        let mut cur = e0.clone();
        let mut sum = e0.clone();
        for _ in 0..layers {
            let mut next = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..n {
                    for c in 0..d {
                        next[i * d + c] += a[i][j] * cur[j * d + c];
                    }
                }
            }
            for (s, x) in sum.iter_mut().zip(&next) {
                *s += x;
            }
            cur = next;
        }
        let oracle: Vec<f64> = sum.iter().map(|x| x / (layers + 1) as f64).collect();
        let got = model.final_embeddings();
        for (x, y) in got.iter().zip(&oracle) {
            max_err = max_err.max((x - y).abs());
        }
        let dense = NormalizedAdjacency::from_dataset(&ds).to_dense();
        for i in 0..n {
            for j in 0..n {
                max_err = max_err.max((dense[i][j] - a[i][j]).abs());
            }
        }
        graphs += 1;
    }
    verdict(
        6,
        "LightGCN propagation oracle",
        max_err <= PROPAGATION_TOL,
        &format!("{graphs} graphs of <= 50 nodes, max abs err {max_err:.1e}"),
    );
}

fn desk_dataset(seed: u64) -> InteractionDataset {
    generate_synthetic(&SyntheticConfig {
        num_users: 1000,
        num_items: 2000,
        interactions: 30_000,
        popularity_exponent: 1.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn desk_pretrain(ds: &InteractionDataset, cfg: &TrainConfig, seed: u64) -> Backbone {
    let mut m = Backbone::new(ds, ScorerKind::Mf, 32, cfg.init_scale, derive_seed(seed, &[STREAM_PRETRAIN])).unwrap();
    m.train(ds, cfg, &mut derived_rng(seed, &[STREAM_PRETRAIN, 1])).unwrap();
    m
}

#[test]
fn c07_end_to_end_desk_search() {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let mut exact_t = true;
    let (mut beat_sr, mut beat_su) = (0, 0);
    for seed in 0..5u64 {
        let ds = desk_dataset(seed);
        let pre = desk_pretrain(&ds, &cfg, seed);
        let search = SearchConfig { iterations: 10, candidates: 20, sparsity: 0.9, d_max: 32, seed, ..Default::default() };
        let out = run_search(&ds, &pre, &cfg, &search, &mut ()).unwrap();
        exact_t &= out.finetunes == 10 && out.population.len() == 10;
        let bet = selective_retrain(&out.population, &ds, ScorerKind::Mf, &cfg, search.retrain_top_k, seed).unwrap();

        let sampler = ActionSampler::new(&ds.user_freq, &ds.item_freq, 32, 0.9).unwrap();
        let su = sampler.su();
        let sr = sampler.sr(&mut derived_rng(seed, &[STREAM_BASELINE, 1])).unwrap();
        let su_val = train_under_action(&ds, ScorerKind::Mf, &su, &cfg, derive_seed(seed, &[STREAM_BASELINE, 2])).unwrap().2.ensemble;
        let sr_val = train_under_action(&ds, ScorerKind::Mf, &sr, &cfg, derive_seed(seed, &[STREAM_BASELINE, 3])).unwrap().2.ensemble;
        beat_sr += usize::from(bet.eval.ensemble >= sr_val);
        beat_su += usize::from(bet.eval.ensemble >= su_val);
        println!(
            "  seed {seed}: BET {:.5} ({} params), SR {sr_val:.5}, SU {su_val:.5}, finetunes {}",
            bet.eval.ensemble,
            bet.action.total_params(),
            out.finetunes
        );
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        7,
        "end-to-end desk search",
        exact_t && beat_sr >= 4 && beat_su >= 3 && secs <= DESK_RUNTIME_SECS,
        &format!("exactly T finetunes {exact_t}; BET >= SR in {beat_sr}/5, >= SU in {beat_su}/5; {secs:.0}s"),
    );
}

#[test]
fn c08_predictor_convergence_trend() {
    let cfg = TrainConfig::default();
    let mut ok = 0;
    for seed in 0..5u64 {
        let ds = desk_dataset(100 + seed);
        let pre = desk_pretrain(&ds, &cfg, seed);
        let search = SearchConfig { iterations: 20, candidates: 20, sparsity: 0.9, d_max: 32, seed, ..Default::default() };
        let out = run_search(&ds, &pre, &cfg, &search, &mut ()).unwrap();
        let mean = |r: std::ops::Range<usize>| out.records[r].iter().map(|x| x.predictor_loss).sum::<f64>() / 5.0;
        let (early, late) = (mean(0..5), mean(15..20));
        ok += usize::from(late <= early);
        println!("  seed {seed}: mean MSE t1-5 {early:.5}, t16-20 {late:.5}");
    }
    verdict(8, "predictor convergence trend", ok >= 4, &format!("late <= early in {ok}/5 seeds"));
}

fn smoke_config() -> RunConfig {
    RunConfig::resolve(
        None,
        &[
            "seed=21".into(),
            "dataset.num_users=300".into(),
            "dataset.num_items=600".into(),
            "dataset.interactions=6000".into(),
            "train.batch_size=512".into(),
            "train.max_epochs=30".into(),
            "search.d_max=16".into(),
            "search.sparsity=0.9".into(),
            "search.iterations=5".into(),
            "search.candidates=10".into(),
            "search.finetune_epochs=3".into(),
            "search.retrain_top_k=2".into(),
        ],
        None,
    )
    .unwrap()
}

#[test]
fn c09_determinism() {
    let cfg = smoke_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        cmd_pretrain(&cfg, d.path()).unwrap();
        cmd_search(&cfg, d.path(), None, false).unwrap();
    }
    let mut identical = true;
    for f in [PRETRAINED_FILE, POPULATION_FILE, FINAL_TABLE_FILE] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        identical &= a == b && !a.is_empty();
    }
    verdict(
        9,
        "determinism",
        identical,
        &format!("{PRETRAINED_FILE}, {POPULATION_FILE}, {FINAL_TABLE_FILE} byte-identical: {identical}"),
    );
}

#[test]
fn c10_format_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    for seed in 0..20u64 {
        let mut rng = rng_from(seed);
        let rows = rng.random_range(1..60);
        let d_max = rng.random_range(1..24);
        let mut table = MaskedEmbeddingTable::init(rows, d_max, 0.3, seed).unwrap();
        let sizes: Vec<u32> = (0..rows).map(|_| rng.random_range(1..=d_max as u32)).collect();
        table.apply_sizes(&sizes).unwrap();
        let path = dir.path().join(format!("t{seed}.bets"));
        table.export_sparse(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = MaskedEmbeddingTable::import_sparse(&path).unwrap();
        back.export_sparse(&path).unwrap();
        let second = std::fs::read(&path).unwrap();
        let retained: u64 = sizes.iter().map(|&s| s as u64).sum();
        ok &= first == second && first.len() as u64 == bets_file_len(rows, retained);

        // The payload holds exactly the active prefixes, in row order.
        let body = &first[BETS_HEADER_LEN + 4 * rows..];
        let floats: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let expected: Vec<f32> = (0..rows)
            .flat_map(|n| table.active_row(n).iter().map(|&x| x as f32).collect::<Vec<_>>())
            .collect();
        ok &= floats == expected;
    }
    verdict(10, "format round trip", ok, "20 random tables: export -> import -> export byte-identical, size formula exact");
}
