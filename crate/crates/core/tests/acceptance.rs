//! End-to-end acceptance criteria, run sequentially. Each prints one
//! `PASS`/`FAIL` line with the measured quantities and its runtime; the
//! process fails if any criterion does.

use std::time::{Duration, Instant};

use mcr2_precoding::baselines::{iterative_water_filling, lmmse_detect, lmmse_mse, lmmse_precoder};
use mcr2_precoding::bca::{random_init, solve_bca, WhitenedQcqp};
use mcr2_precoding::channel::transmit_with;
use mcr2_precoding::checks::{grad_check, lemma1_check, lemma2_check};
use mcr2_precoding::harness::{
    mean_stderr, median, monotonicity_study, prepare_features, run_scenario, scenario_channel, spearman, sphere_experiment, sweep, write_run,
    write_sphere, write_sweep, Scheme, ScenarioConfig, SphereConfig, SweepAxis,
};
use mcr2_precoding::instance::{random_feasible, random_instance, random_instance_with};
use mcr2_precoding::linalg::{c, gaussian_matrix, hermitize, psd_sqrt, CMat, CVec, Field};
use mcr2_precoding::objective::{delta_r, Mcr2Params};
use mcr2_precoding::pga::solve_pga;
use mcr2_precoding::seeds;
use mcr2_precoding::solver::{relative_change, SolverOptions};
use nalgebra::DVector;

fn report(name: &str, pass: bool, detail: &str, elapsed: Duration, limit: Option<Duration>) -> bool {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let ok = pass && in_time;
    let limit = limit.map_or(String::new(), |l| format!(" / limit {:.0}s", l.as_secs_f64()));
    println!(
        "{} {name}: {detail} [{:.1}s{limit}]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn lemma_identities() -> bool {
    let t = Instant::now();
    let mut rng = seeds::rng(seeds::derive_named(0, "lemmas"));
    let (mut r1, mut r2, mut gain) = (0f64, 0f64, f64::NEG_INFINITY);
    for i in 0..50 {
        let a = lemma1_check(1 + i % 8, 4, &mut rng).unwrap();
        let b = lemma2_check(1 + i % 6, 1 + (i / 6) % 5, 4, &mut rng).unwrap();
        r1 = r1.max(a.residual);
        r2 = r2.max(b.residual);
        gain = gain.max(a.max_gain).max(b.max_gain);
    }
    report(
        "lemma identities",
        r1 < 1e-9 && r2 < 1e-9 && gain <= 0.0,
        &format!("max residual {r1:.2e} / {r2:.2e}, max perturbation gain {gain:.2e}"),
        t.elapsed(),
        Some(Duration::from_secs(5)),
    )
}

fn gradient_correctness() -> bool {
    let t = Instant::now();
    let mut worst = 0f64;
    for i in 0..20u64 {
        let field = if i % 2 == 0 { Field::Complex } else { Field::Real };
        let inst = random_instance(field, 1 + (i % 3) as usize, 2 + (i % 2) as usize, 3, 1 + (i / 10) as usize, 500 + i);
        let mut rng = seeds::rng(900 + i);
        worst = worst.max(grad_check(&inst.v, &inst.chan, &inst.stats, &inst.params, 8, 1e-5, &mut rng).unwrap());
    }
    report(
        "gradient correctness",
        worst < 1e-4,
        &format!("20 scenarios, worst relative error {worst:.2e}"),
        t.elapsed(),
        Some(Duration::from_secs(30)),
    )
}

fn bca_ascent_and_convergence() -> bool {
    let t = Instant::now();
    let cfg = ScenarioConfig {
        normalize_noise: false,
        channel_draws: 50,
        ..ScenarioConfig::default()
    };
    let data = prepare_features(&cfg).unwrap();
    let runs: Vec<_> = (0..cfg.channel_draws)
        .map(|d| {
            let chan = scenario_channel(&cfg, d).unwrap();
            let params = Mcr2Params::new(cfg.eps, &chan).unwrap();
            let v0 = random_init(&chan, &data.stats, &cfg.budgets(), seeds::derive(7, d as u64)).unwrap();
            solve_bca(&v0, &chan, &data.stats, &params, &cfg.solver).unwrap().1
        })
        .collect();
    let monotone = runs
        .iter()
        .all(|r| r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
    let converged = runs.iter().filter(|r| r.converged && r.iterations <= 200).count();
    let to_1e4: Vec<f64> = runs.iter().map(|r| r.iterations_to(1e-4).map_or(f64::INFINITY, |i| i as f64)).collect();
    let med = median(&to_1e4);
    report(
        "BCA ascent and convergence",
        monotone && converged == runs.len() && med <= 40.0,
        &format!(
            "non-decreasing {monotone}, converged to 1e-6 within 200 iterations {converged}/{}, median iterations to 1e-4 {med}",
            runs.len()
        ),
        t.elapsed(),
        Some(Duration::from_secs(300)),
    )
}

fn stationarity_cross_check() -> bool {
    let t = Instant::now();
    let opts = SolverOptions {
        max_iters: 20_000,
        tol: 1e-10,
        ..SolverOptions::default()
    };
    let mut worst_gap = 0f64;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..10 {
        let inst = random_instance_with(Field::Complex, 1, 2, 2, 1, 2, 2, 300 + seed);
        let (_, bca) = solve_bca(&inst.v, &inst.chan, &inst.stats, &inst.params, &opts).unwrap();
        let (_, pga) = solve_pga(&inst.v, &inst.chan, &inst.stats, &inst.params, &opts).unwrap();
        let (b, p) = (bca.final_objective(), pga.final_objective());
        worst_gap = worst_gap.max(relative_change(b, p));
        let mut rng = seeds::rng(seeds::derive_named(seed, "random feasible"));
        let tx: Vec<usize> = inst.v.blocks.iter().map(|b| b.nrows()).collect();
        let best = (0..10_000)
            .map(|_| {
                let v = random_feasible(&tx, &inst.stats, &inst.v.budgets, &mut rng).unwrap();
                delta_r(&v, &inst.chan, &inst.stats, &inst.params).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        worst_margin = worst_margin.min(b.min(p) - best);
    }
    report(
        "stationarity cross-check",
        worst_gap < 0.01 && worst_margin > 0.0,
        &format!("max BCA/PGA relative gap {worst_gap:.2e}, min margin over best of 10^4 random precoders {worst_margin:.3e}"),
        t.elapsed(),
        None,
    )
}

/// Root of `‖(M + λI)^{-1} t‖² = budget` by nested dense grids, with the
/// norm from a direct solve.
fn grid_root(q: &WhitenedQcqp) -> f64 {
    let n = q.t.len();
    let excess = |lam: f64| {
        let m = &q.m + CMat::identity(n, n) * c(lam);
        let v = m.lu().solve(&q.t).expect("regular");
        v.norm_squared() - q.budget
    };
    if excess(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, q.t.norm() / q.budget.sqrt());
    for _ in 0..6 {
        let pts = 200;
        let step = (hi - lo) / pts as f64;
        let mut bracket = (lo, hi);
        for i in 1..=pts {
            let x = lo + step * i as f64;
            if excess(x) <= 0.0 {
                bracket = (x - step, x);
                break;
            }
        }
        (lo, hi) = bracket;
    }
    0.5 * (lo + hi)
}

fn bisection_oracle() -> bool {
    let t = Instant::now();
    let mut rng = seeds::rng(seeds::derive_named(0, "qcqp"));
    let mut worst = 0f64;
    let mut zero_cases = 0;
    for i in 0..100 {
        let n = 2 + i % 7;
        let g = gaussian_matrix(n, n, Field::Complex, &mut rng);
        let m = hermitize(&(&g * g.adjoint() + CMat::identity(n, n) * c(0.05)));
        let t_vec: CVec = DVector::from_iterator(n, gaussian_matrix(n, 1, Field::Complex, &mut rng).iter().cloned());
        let budget = 10f64.powf(-2.0 + 3.0 * (i as f64 / 100.0));
        let q = WhitenedQcqp { m, t: t_vec, budget };
        let lam = q.solve(1e-12).lambda;
        let oracle = grid_root(&q);
        if oracle == 0.0 {
            zero_cases += 1;
            worst = worst.max(lam);
        } else {
            worst = worst.max((lam - oracle).abs() / oracle);
        }
    }
    // Every BCA step on two-device problems with 4 transmit and 8 receive antennas.
    let mut slack = 0f64;
    let mut feasible = true;
    for seed in 0..10 {
        let inst = random_instance_with(Field::Complex, 2, 4, 8, 1, 4, 3, 40 + seed);
        let (v, r) = solve_bca(&inst.v, &inst.chan, &inst.stats, &inst.params, &SolverOptions::default()).unwrap();
        slack = slack.max(r.max_slackness);
        feasible &= v.is_feasible(&inst.stats);
    }
    report(
        "bisection oracle",
        worst < 1e-6 && slack < 1e-6 && feasible,
        &format!("100 subproblems ({zero_cases} with λ = 0), worst relative λ error {worst:.2e}; max complementary-slackness gap {slack:.2e}"),
        t.elapsed(),
        None,
    )
}

fn dominance_config() -> ScenarioConfig {
    ScenarioConfig {
        p0_dbm: -15.0,
        channel_draws: 100,
        schemes: vec![Scheme::Mcr2, Scheme::Lmmse, Scheme::Iwf, Scheme::Random],
        keep_traces: false,
        ..ScenarioConfig::default()
    }
}

fn scheme_dominance() -> bool {
    let t = Instant::now();
    let cfg = dominance_config();
    let rec = run_scenario(&cfg).unwrap();
    let ours = rec.series(Scheme::Mcr2, "delta_r");
    let acc = rec.aggregate(Scheme::Mcr2, "accuracy").unwrap().mean;
    let mut pass = true;
    let mut parts = vec![format!("mcr2 accuracy {acc:.4}")];
    for s in [Scheme::Lmmse, Scheme::Iwf, Scheme::Random] {
        let theirs = rec.series(s, "delta_r");
        let wins = ours.iter().zip(&theirs).filter(|(a, b)| a >= b).count() as f64 / ours.len() as f64;
        let a = rec.aggregate(s, "accuracy").unwrap();
        let nmse_wins = rec
            .series(Scheme::Mcr2, "nmse")
            .iter()
            .zip(rec.series(s, "nmse"))
            .filter(|(a, b)| **a <= *b)
            .count();
        pass &= wins >= 0.95 && acc >= a.mean - a.stderr;
        parts.push(format!(
            "vs {s}: ΔR wins {:.0}%, accuracy {:.4} ± {:.4}, lower NMSE on {nmse_wins} draws",
            100.0 * wins,
            a.mean,
            a.stderr
        ));
    }
    report("scheme dominance", pass, &parts.join("; "), t.elapsed(), Some(Duration::from_secs(900)))
}

fn accuracy_tracks_delta_r() -> bool {
    let t = Instant::now();
    let mut rhos = Vec::new();
    for seed in 0..10 {
        let cfg = ScenarioConfig {
            seed,
            test_samples: 4000,
            noise_trials: 5,
            ..dominance_config()
        };
        let data = prepare_features(&cfg).unwrap();
        let tr = monotonicity_study(&cfg, &data, 0, 20).unwrap();
        rhos.push(spearman(&tr.delta_r, &tr.accuracy));
    }
    let good = rhos.iter().filter(|&&r| r >= 0.9).count();
    let shown: Vec<String> = rhos.iter().map(|r| format!("{r:.3}")).collect();
    report(
        "accuracy monotone in ΔR",
        good >= 8,
        &format!("Spearman ≥ 0.9 on {good}/10 seeds ({})", shown.join(", ")),
        t.elapsed(),
        None,
    )
}

fn sphere_experiment_direction() -> bool {
    let t = Instant::now();
    let low = sphere_experiment(&SphereConfig {
        snr_db: 5.0,
        ..SphereConfig::default()
    })
    .unwrap();
    let high = sphere_experiment(&SphereConfig {
        snr_db: 30.0,
        ..SphereConfig::default()
    })
    .unwrap();
    let (m, sm) = mean_stderr(&low.accuracies(Scheme::Mcr2));
    let (i, si) = mean_stderr(&low.accuracies(Scheme::Identity));
    let se = (sm * sm + si * si).sqrt();
    let (v_lo, v_hi) = (median(&low.volumes(Scheme::Mcr2)), median(&high.volumes(Scheme::Mcr2)));
    report(
        "sphere experiment",
        m - i > 2.0 * se && v_hi > v_lo,
        &format!(
            "5 dB accuracy mcr2 {m:.4} vs identity {i:.4} (margin {:.4}, 2·stderr {:.4}); median mcr2 volume 30 dB {v_hi:.4e} vs 5 dB {v_lo:.4e}",
            m - i,
            2.0 * se
        ),
        t.elapsed(),
        Some(Duration::from_secs(600)),
    )
}

fn lmmse_consistency() -> bool {
    let t = Instant::now();
    let inst = random_instance(Field::Complex, 2, 2, 4, 1, 77);
    let analytic = lmmse_mse(&inst.v, &inst.chan, &inst.stats).unwrap();
    let cov_half = psd_sqrt(&inst.stats.cov);
    let n = inst.stats.cov.nrows();
    let mut rng = seeds::rng(seeds::derive_named(77, "lmmse monte carlo"));
    let draws = 100_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let w = gaussian_matrix(n, 1, Field::Complex, &mut rng);
        let z: CVec = (&cov_half * w).column(0).into_owned();
        let y = transmit_with(&inst.chan, &inst.v, &z, &mut rng).unwrap();
        acc += (lmmse_detect(&y, &inst.v, &inst.chan, &inst.stats).unwrap() - z).norm_squared();
    }
    let mc = acc / draws as f64;
    let rel = (mc - analytic).abs() / analytic;

    let mut lmmse_ok = true;
    let mut iwf_ok = true;
    for seed in 0..20 {
        let inst = random_instance(if seed % 2 == 0 { Field::Complex } else { Field::Real }, 2, 3, 4, 1, 200 + seed);
        let opts = SolverOptions { seed, ..SolverOptions::default() };
        match lmmse_precoder(&inst.chan, &inst.stats, &inst.v.budgets, &opts) {
            Ok((_, r)) => lmmse_ok &= r.trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()),
            Err(_) => lmmse_ok = false,
        }
        match iterative_water_filling(&inst.chan, &inst.v.budgets, &opts) {
            Ok(o) => iwf_ok &= o.report.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()),
            Err(_) => iwf_ok = false,
        }
    }
    report(
        "LMMSE consistency",
        rel < 0.02 && lmmse_ok && iwf_ok,
        &format!(
            "analytic MSE {analytic:.5} vs Monte-Carlo {mc:.5} (relative {rel:.2e}); LMMSE surrogate non-increasing {lmmse_ok}; IWF sum rate non-decreasing {iwf_ok}"
        ),
        t.elapsed(),
        None,
    )
}

fn determinism() -> bool {
    let t = Instant::now();
    let cfg = ScenarioConfig {
        channel_draws: 4,
        test_samples: 300,
        schemes: vec![Scheme::Mcr2, Scheme::Mcr2Pga, Scheme::Lmmse, Scheme::Iwf, Scheme::Random, Scheme::Identity],
        ..ScenarioConfig::default()
    };
    let sphere = SphereConfig {
        channel_draws: 4,
        ..SphereConfig::default()
    };
    let produce = || {
        let dir = tempfile::tempdir().unwrap();
        write_run(&run_scenario(&cfg).unwrap(), &dir.path().join("run")).unwrap();
        let points = sweep(&cfg, SweepAxis::Power, &[-10.0, 0.0]).unwrap();
        write_sweep(&points, SweepAxis::Power, &dir.path().join("sweep")).unwrap();
        write_sphere(&sphere_experiment(&sphere).unwrap(), &dir.path().join("sphere")).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for sub in ["run", "sweep", "sphere"] {
            for e in std::fs::read_dir(dir.path().join(sub)).unwrap() {
                let e = e.unwrap();
                files.push((format!("{sub}/{}", e.file_name().to_string_lossy()), std::fs::read(e.path()).unwrap()));
            }
        }
        files.sort();
        files
    };
    let (a, b) = (produce(), produce());
    let same = a == b;
    report(
        "determinism",
        same,
        &format!("{} artifacts compared byte for byte, identical {same}", a.len()),
        t.elapsed(),
        None,
    )
}

fn main() {
    let criteria: [fn() -> bool; 10] = [
        lemma_identities,
        gradient_correctness,
        bca_ascent_and_convergence,
        stationarity_cross_check,
        bisection_oracle,
        scheme_dominance,
        accuracy_tracks_delta_r,
        sphere_experiment_direction,
        lmmse_consistency,
        determinism,
    ];
    let failed = criteria.iter().filter(|f| !f()).count();
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
