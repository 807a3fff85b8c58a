//! Scratch benchmark for RAE training configs. Not part of the library.

use std::time::Instant;

use dsi_core::data::Ensemble;
use dsi_core::pcaht::{apply_ht, fit_ht, fit_pca, pca_decode, pca_encode, PcaTruncation};
use dsi_core::rae::{rae_decode, rae_encode, train_rae, RaeTrainConfig};
use dsi_core::rng::DsiRng;
use dsi_core::synth::{sample_tank_params, tank_ensemble, TankPriorConfig};

fn monotone_rows(names: &[String]) -> Vec<usize> {
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("WIR") || n.starts_with("WPR"))
        .map(|(q, _)| q)
        .collect()
}

/// Fraction of (member, row) series with no step decrease beyond
/// 1e-6 * max(series) at times strictly greater than `t_min[member]`.
fn monotone_fraction(e: &Ensemble<f64>, rows: &[usize], t_min: &[f64]) -> f64 {
    let times = e.schema().times();
    let mut ok = 0usize;
    let mut total = 0usize;
    for (m_idx, m) in e.iter_members().enumerate() {
        for &q in rows {
            let row = m.row(q);
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let tol = 1e-6 * max;
            let violated =
                (1..row.len()).any(|t| times[t] > t_min[m_idx] && row[t] < row[t - 1] - tol);
            total += 1;
            if !violated {
                ok += 1;
            }
        }
    }
    ok as f64 / total as f64
}

fn rel_l2(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn mono_config() -> TankPriorConfig {
    TankPriorConfig {
        n_inj: 1,
        n_prod: 1,
        plateau_log_mean: 500f64.ln(),
        plateau_log_std: 0.18,
        transient_range: (0.1, 0.6),
        transient_time_range: (100.0, 120.0),
        allocation_concentration: 4.0,
        breakthrough_range: (60.0, 140.0),
        slope_range: (10.0, 25.0),
        initial_cut_range: (0.02, 0.05),
        max_cut_range: (0.75, 0.95),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, def: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(def);
    let n_t = get(1, 25.0) as usize;
    let n_train = get(2, 260.0) as usize;
    let n_h = get(3, 16.0) as usize;
    let n_l = get(4, 8.0) as usize;
    let epochs = get(5, 150.0) as usize;
    let lr = get(6, 2e-3);
    let decay = get(7, 1.0);
    let mode = get(8, 0.0) as usize;
    let dt = get(9, if mode == 1 { 30.0 } else { 120.0 });
    let rep = get(10, 0.0) as u64;
    let n_test = 40usize;

    let times: Vec<f64> = (1..=n_t).map(|k| dt * k as f64).collect();
    let cfg = if mode == 1 { mono_config() } else { TankPriorConfig::default_2d() };
    let rng = DsiRng::from_seed(4242 + 1000 * rep);
    let all: Ensemble<f64> = tank_ensemble(&cfg, &times, n_train + n_test, &rng).unwrap();
    let train = Ensemble::new(
        all.schema().clone(),
        (0..n_train).map(|i| all.member_values(i).clone()).collect(),
    )
    .unwrap();
    let test = Ensemble::new(
        all.schema().clone(),
        (n_train..n_train + n_test).map(|i| all.member_values(i).clone()).collect(),
    )
    .unwrap();
    let rows = monotone_rows(all.schema().quantity_names());

    // Per held-out member: window opens at 5 * t0 of that member.
    let t_min: Vec<f64> = (0..n_test)
        .map(|j| {
            let mut r = rng.stream((n_train + j) as u64);
            let p = sample_tank_params::<f64>(&cfg, &mut r).unwrap();
            5.0 * p.transient_time
        })
        .collect();

    println!(
        "== mode {mode} n_t {n_t} dt {dt} n_train {n_train} n_h {n_h} n_l {n_l} epochs {epochs} lr {lr} decay {decay}"
    );
    let tcfg = RaeTrainConfig {
        n_h,
        n_l,
        epochs,
        batch_size: 32,
        learning_rate: lr,
        clip_norm: 5.0,
        lr_decay: decay,
    };
    let t0 = Instant::now();
    let (w, hist) = train_rae(&train, &tcfg, &DsiRng::from_seed(99 + rep)).unwrap();
    let dtr = t0.elapsed().as_secs_f64();
    let stride = (epochs / 8).max(1);
    let curve: Vec<String> = hist
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i + 1 == hist.len())
        .map(|(i, l)| format!("{i}:{l:.5}"))
        .collect();
    println!("trained in {dtr:.1}s ({:.3} s/epoch); loss {}", dtr / epochs as f64, curve.join(" "));

    let recon = |src: &Ensemble<f64>| -> (f64, f64, Ensemble<f64>) {
        let mut worst = 0.0f64;
        let mut mean = 0.0;
        let mut members = Vec::new();
        for i in 0..src.n_members() {
            let d = src.member(i);
            let xi = rae_encode(&w, &d).unwrap();
            let back = rae_decode(&w, &xi).unwrap();
            let r = rel_l2(&back.flat(), &d.flat());
            worst = worst.max(r);
            mean += r;
            members.push(back.values().clone());
        }
        let e = Ensemble::new(src.schema().clone(), members).unwrap();
        (mean / src.n_members() as f64, worst, e)
    };
    let (mean_rl, max_rl, rae_test) = recon(&test);
    let (mean_tr, _, _) = recon(&train);
    println!("rae held-out rel L2: mean {mean_rl:.4} max {max_rl:.4}; train mean {mean_tr:.4}");

    let wpr_rows: Vec<usize> = all
        .schema()
        .quantity_names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("WPR"))
        .map(|(q, _)| q)
        .collect();
    println!(
        "spec monotone frac (per-member 5*t0): rae W* {:.3} WPR {:.3} | truth W* {:.3}",
        monotone_fraction(&rae_test, &rows, &t_min),
        monotone_fraction(&rae_test, &wpr_rows, &t_min),
        monotone_fraction(&test, &rows, &t_min),
    );

    // PCA+HT baseline at the same latent dimension.
    let basis = fit_pca(&train, PcaTruncation::Components(n_l)).unwrap();
    let table = fit_ht(&train, &basis).unwrap();
    let mut members = Vec::new();
    let mut mean_p = 0.0;
    for i in 0..test.n_members() {
        let d = test.member(i);
        let xi = pca_encode(&basis, &d).unwrap();
        let back = apply_ht(&table, &pca_decode(&basis, &xi).unwrap()).unwrap();
        mean_p += rel_l2(&back.flat(), &d.flat());
        members.push(back.values().clone());
    }
    let pca_test = Ensemble::new(test.schema().clone(), members).unwrap();
    println!("pca+ht held-out rel L2 mean {:.4}", mean_p / test.n_members() as f64);
    println!(
        "spec monotone frac (per-member 5*t0): pcaht W* {:.3} WPR {:.3}",
        monotone_fraction(&pca_test, &rows, &t_min),
        monotone_fraction(&pca_test, &wpr_rows, &t_min),
    );
}
