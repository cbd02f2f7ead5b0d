//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use corel::embeddings::EmbeddedDoc;
use corel::encoders::lstm::{
    bilstm_backward, bilstm_forward_cached, lstm_backward, lstm_forward_cached,
};
use corel::encoders::{
    cnn_backward, cnn_forward, CnnParams, Encoder, EncoderConfig, EncoderKind, LstmParams,
    Parameters,
};
use corel::ot::{Epsilon, SinkhornConfig};
use corel::training::{triplet_batch, Triplet};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Central differences of `f` over every parameter.
pub fn fd_gradient<P: Parameters + Clone>(p: &P, h: f64, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let flat = p.flatten();
    let mut probe = p.clone();
    (0..flat.len())
        .map(|i| {
            let mut x = flat.clone();
            x[i] = flat[i] + h;
            probe.assign_flat(&x);
            let up = f(&probe);
            x[i] = flat[i] - h;
            probe.assign_flat(&x);
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central differences of `f` over the entries of `x`.
pub fn fd_input(x: &Array2<f64>, h: f64, f: impl Fn(ArrayView2<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = x[[i, j]];
        probe[[i, j]] = orig + h;
        let up = f(probe.view());
        probe[[i, j]] = orig - h;
        let down = f(probe.view());
        probe[[i, j]] = orig;
        out.push((up - down) / (2.0 * h));
    }
    out
}

fn randomize<P: Parameters, R: Rng>(p: &mut P, scale: f64, rng: &mut R) {
    p.visit_mut(&mut |_, d| d.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale)));
}

fn contract(z: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (z * r).sum()
}

/// Worst relative error (parameters, input) for the CNN on one random instance.
pub fn cnn_instance_error(seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let (n, d_w, d_c, l) = (
        rng.gen_range(1..=6),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
        rng.gen_range(0..=2),
    );
    let mut p = CnnParams::zeros(d_w, d_c, l);
    randomize(&mut p, 0.8, &mut rng);
    let x = random_matrix(n, d_w, 1.0, &mut rng);
    let r = random_matrix(n, d_c, 1.0, &mut rng);
    let (g, dx) = cnn_backward(x.view(), &p, r.view()).unwrap();
    let fd = fd_gradient(&p, 1e-6, |q| {
        contract(&cnn_forward(x.view(), q).unwrap(), &r)
    });
    let fdx = fd_input(&x, 1e-6, |xv| contract(&cnn_forward(xv, &p).unwrap(), &r));
    (
        rel_err(&g.flatten(), &fd),
        rel_err(dx.as_slice().unwrap(), &fdx),
    )
}

pub fn lstm_instance_error(seed: u64, squashed_cell: bool) -> (f64, f64) {
    let mut rng = rng(seed);
    let (n, d_w, d_h) = (
        rng.gen_range(1..=5),
        rng.gen_range(1..=3),
        rng.gen_range(1..=3),
    );
    let mut p = LstmParams::zeros(d_w, d_h);
    randomize(&mut p, 0.8, &mut rng);
    let x = random_matrix(n, d_w, 1.0, &mut rng);
    let r = random_matrix(n, d_h, 1.0, &mut rng);
    let cache = lstm_forward_cached(x.view(), &p, squashed_cell).unwrap();
    let (g, dx) = lstm_backward(&cache, &p, r.view()).unwrap();
    let f = |xv: ArrayView2<f64>, q: &LstmParams| {
        contract(
            lstm_forward_cached(xv, q, squashed_cell).unwrap().hidden(),
            &r,
        )
    };
    let fd = fd_gradient(&p, 1e-6, |q| f(x.view(), q));
    let fdx = fd_input(&x, 1e-6, |xv| f(xv, &p));
    (
        rel_err(&g.flatten(), &fd),
        rel_err(dx.as_slice().unwrap(), &fdx),
    )
}

pub fn bilstm_instance_error(seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let (n, d_w, d_h) = (
        rng.gen_range(1..=5),
        rng.gen_range(1..=3),
        rng.gen_range(1..=3),
    );
    let mut fwd = LstmParams::zeros(d_w, d_h);
    let mut bwd = LstmParams::zeros(d_w, d_h);
    randomize(&mut fwd, 0.8, &mut rng);
    randomize(&mut bwd, 0.8, &mut rng);
    let x = random_matrix(n, d_w, 1.0, &mut rng);
    let r = random_matrix(n, 2 * d_h, 1.0, &mut rng);
    let cache = bilstm_forward_cached(x.view(), &fwd, &bwd, false).unwrap();
    let (gf, gb, dx) = bilstm_backward(&cache, &fwd, &bwd, r.view()).unwrap();
    let f = |xv: ArrayView2<f64>, a: &LstmParams, b: &LstmParams| {
        contract(
            &bilstm_forward_cached(xv, a, b, false).unwrap().output(),
            &r,
        )
    };
    let fd_f = fd_gradient(&fwd, 1e-6, |q| f(x.view(), q, &bwd));
    let fd_b = fd_gradient(&bwd, 1e-6, |q| f(x.view(), &fwd, q));
    let fdx = fd_input(&x, 1e-6, |xv| f(xv, &fwd, &bwd));
    let analytic: Vec<f64> = gf.flatten().into_iter().chain(gb.flatten()).collect();
    let numeric: Vec<f64> = fd_f.into_iter().chain(fd_b).collect();
    (
        rel_err(&analytic, &numeric),
        rel_err(dx.as_slice().unwrap(), &fdx),
    )
}

/// Sinkhorn settings close enough to exact OT that the fixed-plan gradient
/// matches differences of the reported cost.
pub fn tight_sinkhorn() -> SinkhornConfig {
    SinkhornConfig {
        epsilon: Epsilon::MaxScaled(1e-4),
        max_iters: 200_000,
        tolerance: 1e-13,
    }
}

/// Relative error of the mini-batch triplet-loss gradient against central
/// differences, on a small random problem with every hinge active.
pub fn end_to_end_instance_error(seed: u64, kind: EncoderKind, batch_norm: bool) -> f64 {
    let mut rng = rng(seed);
    let d_w = 3;
    let cfg = EncoderConfig {
        kind,
        d_w,
        d_h: 3,
        d_c: 3,
        half_window: 1,
        batch_norm,
        squashed_cell: false,
        init_seed: seed,
    };
    let mut enc = Encoder::new(cfg).unwrap();
    if let Some(bn) = &mut enc.params.batch_norm {
        bn.gamma
            .iter_mut()
            .for_each(|g| *g = rng.gen_range(0.5..1.5));
        bn.beta
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let docs: Vec<EmbeddedDoc> = (0..4)
        .map(|i| EmbeddedDoc {
            id: format!("d{i}"),
            matrix: random_matrix(rng.gen_range(2..=3), d_w, 1.0, &mut rng),
            score: 1 + (i / 2) as u8,
        })
        .collect();
    let batch = [
        Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        },
        Triplet {
            anchor: 3,
            positive: 2,
            negative: 1,
        },
        Triplet {
            anchor: 1,
            positive: 0,
            negative: 3,
        },
    ];
    // a large margin keeps every hinge strictly active
    let margin = 100.0;
    let sk = tight_sinkhorn();
    let out = triplet_batch(&enc, &docs, &batch, &sk, margin).unwrap();
    assert_eq!(out.active, batch.len());
    let fd = fd_gradient(&enc.params, 1e-5, |p| {
        let mut e = enc.clone();
        e.params = p.clone();
        triplet_batch(&e, &docs, &batch, &sk, margin).unwrap().loss
    });
    rel_err(&out.grads.flatten(), &fd)
}

/// Exact optimal transport between uniform marginals by enumerating the
/// spanning trees of the bipartite support graph (every basic feasible
/// solution of the transport polytope is supported on one).
pub fn exact_ot(cost: &Array2<f64>) -> f64 {
    let (n1, n2) = cost.dim();
    let edges: Vec<(usize, usize)> = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).collect();
    let need = n1 + n2 - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << edges.len()) {
        if mask.count_ones() as usize != need {
            continue;
        }
        let chosen: Vec<(usize, usize)> = (0..edges.len())
            .filter(|e| mask >> e & 1 == 1)
            .map(|e| edges[e])
            .collect();
        if let Some(cost_value) = tree_solution(&chosen, n1, n2, cost) {
            best = best.min(cost_value);
        }
    }
    best
}

fn tree_solution(
    chosen: &[(usize, usize)],
    n1: usize,
    n2: usize,
    cost: &Array2<f64>,
) -> Option<f64> {
    // nodes 0..n1 are rows, n1..n1+n2 columns
    let mut parent: Vec<usize> = (0..n1 + n2).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &(i, j) in chosen {
        let (a, b) = (find(&mut parent, i), find(&mut parent, n1 + j));
        if a == b {
            return None;
        }
        parent[a] = b;
    }
    let mut supply: Vec<f64> = (0..n1)
        .map(|_| 1.0 / n1 as f64)
        .chain((0..n2).map(|_| 1.0 / n2 as f64))
        .collect();
    let mut remaining: Vec<(usize, usize)> = chosen.to_vec();
    let mut total = 0.0;
    while !remaining.is_empty() {
        let degree = |node: usize| {
            remaining
                .iter()
                .filter(|&&(i, j)| i == node || n1 + j == node)
                .count()
        };
        // peel a leaf: its single edge must carry the leaf's whole remaining mass
        let (pos, leaf, other) = remaining
            .iter()
            .enumerate()
            .find_map(|(k, &(i, j))| {
                if degree(i) == 1 {
                    Some((k, i, n1 + j))
                } else if degree(n1 + j) == 1 {
                    Some((k, n1 + j, i))
                } else {
                    None
                }
            })
            .expect("a tree always has a leaf");
        let (i, j) = remaining.swap_remove(pos);
        let flow = supply[leaf];
        if flow < -1e-12 {
            return None;
        }
        supply[leaf] = 0.0;
        supply[other] -= flow;
        total += flow * cost[[i, j]];
    }
    if supply.iter().any(|s| s.abs() > 1e-12) {
        return None;
    }
    Some(total)
}

/// Random kappa inputs with more than one distinct label on some side.
pub fn random_kappa_inputs(count: usize, seed: u64) -> Vec<(Vec<(u8, u8)>, u8)> {
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m: u8 = rng.gen_range(2..=5);
        let n = rng.gen_range(2..=50);
        let pairs: Vec<(u8, u8)> = (0..n)
            .map(|_| (rng.gen_range(1..=m), rng.gen_range(1..=m)))
            .collect();
        let distinct = |f: fn(&(u8, u8)) -> u8| {
            pairs
                .iter()
                .map(f)
                .collect::<std::collections::BTreeSet<_>>()
                .len()
        };
        if distinct(|p| p.0) >= 2 || distinct(|p| p.1) >= 2 {
            out.push((pairs, m));
        }
    }
    out
}

/// Weighted kappa straight from the definition:
/// `1 - sum_k A(p_k, q_k) / ((1/n) sum_k sum_l A(p_k, q_l))`.
pub fn kappa_oracle(pairs: &[(u8, u8)], m: u8, quadratic: bool) -> f64 {
    let a = |p: u8, q: u8| {
        let d = (p as f64 - q as f64).abs() / (m as f64 - 1.0);
        if quadratic {
            d * d
        } else {
            d
        }
    };
    let n = pairs.len() as f64;
    let observed: f64 = pairs.iter().map(|&(p, q)| a(p, q)).sum();
    let expected: f64 = pairs
        .iter()
        .map(|&(p, _)| pairs.iter().map(|&(_, q)| a(p, q)).sum::<f64>())
        .sum::<f64>()
        / n;
    1.0 - observed / expected
}

/// Pearson chi-square p-value of `observed` counts against `probs`
/// (zero-probability cells must be empty and are dropped).
pub fn chi_square_p(observed: &[usize], probs: &[f64]) -> f64 {
    let n: usize = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&o, &p) in observed.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(o, 0, "mass on a zero-probability class");
            continue;
        }
        let e = p * n as f64;
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}
