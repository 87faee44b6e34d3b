//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. The learning checks train real agents and take
//! tens of minutes on one core. Pass a substring to run a subset.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use climrl::ebm::{
    diffusion, ebm_step, equilibrium, fit_static_baseline, make_ebm_env, static_baseline_params, weighted_rmse,
    Climatology, EbmParams, EbmState, EbmVariant, LatGrid, INITIAL_TEMP_C,
};
use climrl::env::{run_episode, Env, Mode, Transition};
use climrl::eval::{area_wrmse, composite_rank, steps_to_threshold, threshold, MetricRecord, ZonalBands};
use climrl::fedrl::{decompose, fed_train, fedavg, AggregationPolicy, FedSetup, FedTopology, ParentEbm};
use climrl::io::{default_hyperparameters, inference_seed, parse_experiment_id};
use climrl::nn::{Layout, Mlp, ParamVector};
use climrl::rce::{column_enthalpy, convective_adjustment, ColumnGrid, RceEnv, RceVariant, ReferenceProfile, N_LEV};
use climrl::rl::train::StopAt;
use climrl::rl::{
    discounted_returns, gae, make_agent, ppo_surrogate, train, truncated_target_quantiles, Algo, AlgoConfig,
    ReplayBuffer,
};
use climrl::scbc::{denormalize_temp, normalize_temp, scbc_step, ScbcEnv, ScbcParams, ScbcState, Variant};
use climrl::seeded_rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!(
            "{what} took {:.1}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        )
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn hyper(exp: &str, algo: Algo) -> AlgoConfig {
    default_hyperparameters(&parse_experiment_id(exp).unwrap(), algo)
}

fn scbc_fixed_points() -> Outcome {
    let start = Instant::now();
    let settle = |variant| {
        let p = ScbcParams::for_variant(variant);
        let mut s = ScbcState {
            temp: normalize_temp(321.75),
            t: 0,
        };
        for _ in 0..200 {
            s = scbc_step(s, 0.0, &p);
        }
        denormalize_temp(s.temp)
    };
    let plain = settle(Variant::V1);
    let corrected = settle(Variant::V0);
    ensure((plain - 380.0).abs() < 0.5, || {
        format!("uncorrected settles at {plain:.3} K")
    })?;
    ensure((corrected - 358.07).abs() < 1.0, || {
        format!("corrected settles at {corrected:.3} K")
    })?;
    within(start.elapsed(), Duration::from_secs(1), "integration")?;
    Ok(format!("{plain:.3} K and {corrected:.3} K"))
}

/// Largest |T - To| after each action, and the mean applied heating.
fn scbc_inference(algo: Algo, seed: u64) -> Result<(f64, f64), String> {
    let cfg = hyper("scbc-v1-optim-L-60k", algo);
    let mut env = ScbcEnv::variant(Variant::V1);
    let mut agent = make_agent(algo, 1, 1, &cfg, seed).map_err(|e| e.to_string())?;
    train(&mut env, agent.as_mut(), 60_000, seed, &mut ()).map_err(|e| e.to_string())?;
    let ep = run_episode(&mut env, agent.as_mut(), Mode::Infer, inference_seed(seed)).map_err(|e| e.to_string())?;
    let to = env.params().t_observed_k;
    let dev = ep
        .transitions
        .iter()
        .map(|t| (denormalize_temp(t.next_state[0]) - to).abs())
        .fold(0.0, f64::max);
    let mean_u = ep.infos.iter().map(|i| i.params[0]).sum::<f64>() / ep.infos.len() as f64;
    Ok((dev, mean_u))
}

fn scbc_control_law() -> Outcome {
    let mut report = Vec::new();
    for algo in [Algo::Ddpg, Algo::Tqc] {
        let mut passed = Vec::new();
        let mut log = Vec::new();
        for seed in 1..=10 {
            let start = Instant::now();
            let (dev, mean_u) = scbc_inference(algo, seed)?;
            within(
                start.elapsed(),
                Duration::from_secs(300),
                &format!("{algo} seed {seed}"),
            )?;
            log.push(format!("s{seed}: dev {dev:.3} K, u {mean_u:.3}"));
            if dev < 0.5 && (mean_u + 0.2).abs() < 0.05 {
                passed.push(seed);
                if passed.len() == 3 {
                    break;
                }
            }
        }
        ensure(passed.len() == 3, || format!("{algo}: {}", log.join("; ")))?;
        report.push(format!("{algo} seeds {passed:?}"));
    }
    Ok(report.join(", "))
}

fn scbc_thresholds() -> Outcome {
    let start = Instant::now();
    let limit = threshold("scbc-v1").unwrap();
    let mut report = Vec::new();
    for algo in [Algo::Ddpg, Algo::Td3, Algo::Tqc] {
        let cfg = hyper("scbc-v1-optim-L-60k", algo);
        let mut crossed = 0;
        for seed in 1..=10 {
            let mut env = ScbcEnv::variant(Variant::V1);
            let mut agent = make_agent(algo, 1, 1, &cfg, seed).map_err(|e| e.to_string())?;
            let curve = train(&mut env, agent.as_mut(), 60_000, seed, &mut StopAt(limit)).map_err(|e| e.to_string())?;
            if steps_to_threshold(&curve, limit).unwrap().is_some() {
                crossed += 1;
            }
        }
        report.push(format!("{algo} {crossed}/10"));
        if crossed >= 7 {
            within(start.elapsed(), Duration::from_secs(3600), "threshold runs")?;
            return Ok(report.join(", "));
        }
    }
    Err(report.join(", "))
}

fn ebm_skill() -> Outcome {
    let grid = LatGrid::standard();
    let canonical = EbmParams::canonical();
    let clim = Climatology::new(equilibrium(&canonical, &grid).unwrap(), "canonical").unwrap();
    let (a, b) = fit_static_baseline(&clim, &canonical, &grid).map_err(|e| e.to_string())?;
    ensure((a - 210.0).abs() < 0.5 && (b - 2.0).abs() < 0.01, || {
        format!("fit gave A={a}, B={b}")
    })?;

    let clim = Climatology::synthetic();
    let base = static_baseline_params(&clim, &grid).map_err(|e| e.to_string())?;
    let baseline = weighted_rmse(&equilibrium(&base, &grid).unwrap(), &clim.temps, &grid);
    let mut log = Vec::new();
    for algo in [Algo::Tqc, Algo::Ddpg] {
        let cfg = hyper("ebm-v1-optim-L-20k", algo);
        for seed in 1..=10 {
            let start = Instant::now();
            let mut env = make_ebm_env(EbmVariant::V1, clim.clone()).unwrap();
            let mut agent = make_agent(algo, env.obs_dim(), env.action_dim(), &cfg, seed).map_err(|e| e.to_string())?;
            train(&mut env, agent.as_mut(), 20_000, seed, &mut ()).map_err(|e| e.to_string())?;
            run_episode(&mut env, agent.as_mut(), Mode::Infer, inference_seed(seed)).map_err(|e| e.to_string())?;
            within(
                start.elapsed(),
                Duration::from_secs(600),
                &format!("{algo} seed {seed}"),
            )?;
            let rmse = weighted_rmse(env.temperature().unwrap(), &clim.temps, &grid);
            log.push(format!("{algo} s{seed} {rmse:.3}"));
            if rmse < baseline {
                return Ok(format!(
                    "A={a:.3}, B={b:.4}; baseline {baseline:.3}, {}",
                    log.join(", ")
                ));
            }
        }
    }
    Err(format!("baseline {baseline:.3}; {}", log.join(", ")))
}

fn federated_convergence() -> Outcome {
    let clim = Climatology::synthetic();
    let limit = threshold("ebm-v1").unwrap();
    let single_cfg = hyper("ebm-v1", Algo::Ddpg);
    let fed_cfg = hyper("ebm-v2-a2-fed05", Algo::Ddpg);
    let setup = FedSetup::new(FedTopology::V2, 2, clim.clone()).map_err(|e| e.to_string())?;
    let as_steps = |n: Option<usize>| n.map_or(f64::INFINITY, |n| n as f64);
    let (mut single, mut fed) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        let mut env = make_ebm_env(EbmVariant::V1, clim.clone()).unwrap();
        let mut agent = make_agent(Algo::Ddpg, env.obs_dim(), env.action_dim(), &single_cfg, seed).unwrap();
        let curve = train(&mut env, agent.as_mut(), 10_000, seed, &mut StopAt(limit)).map_err(|e| e.to_string())?;
        single.push(as_steps(steps_to_threshold(&curve, limit).unwrap()));
        let out = fed_train(
            &setup,
            Algo::Ddpg,
            &fed_cfg,
            AggregationPolicy::every(5).unwrap(),
            50,
            seed,
        )
        .map_err(|e| e.to_string())?;
        fed.push(as_steps(steps_to_threshold(&out.curve, limit).unwrap()));
    }
    let (ms, mf) = (median(single.clone()), median(fed.clone()));
    let detail = format!("median steps fed05 {mf} vs single {ms} (fed {fed:?}, single {single:?})");
    ensure(mf <= ms, || detail.clone())?;

    let out = fed_train(
        &setup,
        Algo::Ddpg,
        &fed_cfg,
        AggregationPolicy::every(5).unwrap(),
        20,
        1,
    )
    .map_err(|e| e.to_string())?;
    ensure(out.history.len() == 4, || {
        format!("{} rounds in 20 episodes", out.history.len())
    })?;
    Ok(format!("{detail}; 4 rounds in 20 episodes"))
}

fn pv(flat: Vec<f64>) -> ParamVector {
    ParamVector {
        layouts: vec![vec![1, flat.len() - 1]],
        flat,
    }
}

fn fedavg_invariants() -> Outcome {
    let mut rng = seeded_rng(11);
    for _ in 0..500 {
        let len = rng.random_range(2..40);
        let k = rng.random_range(1..8);
        let rows: Vec<ParamVector> = (0..k)
            .map(|_| pv((0..len).map(|_| rng.random_range(-1e3..1e3)).collect()))
            .collect();
        let same: Vec<&ParamVector> = std::iter::repeat_n(&rows[0], k).collect();
        ensure(fedavg(&same).unwrap() == rows[0], || "identity is not bit-exact".into())?;

        let refs: Vec<&ParamVector> = rows.iter().collect();
        let avg = fedavg(&refs).unwrap();
        let mut shuffled = refs.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        ensure(fedavg(&shuffled).unwrap() == avg, || {
            "permutation changed the average".into()
        })?;

        let others: Vec<ParamVector> = (0..k)
            .map(|_| pv((0..len).map(|_| rng.random_range(-1e3..1e3)).collect()))
            .collect();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let mixed: Vec<ParamVector> = rows
            .iter()
            .zip(&others)
            .map(|(x, y)| pv(x.flat.iter().zip(&y.flat).map(|(p, q)| a * p + b * q).collect()))
            .collect();
        let lhs = fedavg(&mixed.iter().collect::<Vec<_>>()).unwrap();
        let other_avg = fedavg(&others.iter().collect::<Vec<_>>()).unwrap();
        for i in 0..len {
            let rhs = a * avg.flat[i] + b * other_avg.flat[i];
            ensure((lhs.flat[i] - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), || {
                format!("linearity off by {}", lhs.flat[i] - rhs)
            })?;
        }
    }

    let grid = LatGrid::standard();
    let canonical = EbmParams::canonical();
    let clim = Climatology::new(equilibrium(&canonical, &grid).unwrap(), "canonical").unwrap();
    let mut worst: f64 = 0.0;
    for n in [2, 6] {
        let regions = decompose(&grid, n).unwrap();
        let mut parent = ParentEbm::new(&regions, &clim).map_err(|e| e.to_string())?;
        parent.reset();
        let mut single = EbmState::isothermal(INITIAL_TEMP_C, &grid);
        for _ in 0..200 {
            let actions = (0..n)
                .map(|i| {
                    let m = regions.region(i).len();
                    let mut v = vec![canonical.a[0]; m];
                    v.extend(vec![canonical.b[0]; m]);
                    v.extend([canonical.alpha0, canonical.alpha2, canonical.d]);
                    v
                })
                .collect();
            parent.step_physical(actions).map_err(|e| e.to_string())?;
            single = ebm_step(&single, &canonical, &grid).unwrap();
            for (p, s) in parent.temperature().unwrap().iter().zip(&single.temps) {
                worst = worst.max((p - s).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("v3 assembly drifts by {worst:e}"))?;
    Ok(format!("500 random trials; v3 assembly max deviation {worst:e}"))
}

/// Central differences of `sum(c * f(x))` against the analytic backward pass.
fn gradient_check(sizes: &[usize], seed: u64) -> Result<f64, String> {
    let mut rng = seeded_rng(seed);
    let net = Mlp::new(Layout::new(sizes.to_vec()).unwrap(), 1.0, &mut rng);
    let batch = |cols: usize, rng: &mut climrl::Rng| Array2::from_shape_fn((3, cols), |_| rng.random_range(-1.0..1.0));
    let x = batch(sizes[0], &mut rng);
    let c = batch(*sizes.last().unwrap(), &mut rng);
    let loss = |n: &Mlp, x: &Array2<f64>| (n.forward(x.view()).unwrap() * &c).sum();
    let tape = net.forward_tape(x.view()).unwrap();
    let mut g = vec![0.0; net.params().len()];
    let gx = net.backward(&tape, c.view(), &mut g).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, numeric: f64| {
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3));
    };
    for i in (0..g.len()).step_by((g.len() / 300).max(1)) {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        compare(g[i], (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h));
    }
    for ((r, col), analytic) in gx.indexed_iter() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[[r, col]] += h;
        xm[[r, col]] -= h;
        compare(*analytic, (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h));
    }
    Ok(worst)
}

fn numerical_kernels() -> Outcome {
    let envs: Vec<(&str, Box<dyn Env>)> = vec![
        ("scbc-v1", Box::new(ScbcEnv::variant(Variant::V1))),
        (
            "rce-v0",
            Box::new(RceEnv::new(RceVariant::V0, ReferenceProfile::synthetic()).unwrap()),
        ),
        (
            "rce17-v0",
            Box::new(RceEnv::new(RceVariant::V17, ReferenceProfile::synthetic()).unwrap()),
        ),
        (
            "ebm-v0",
            Box::new(make_ebm_env(EbmVariant::V0, Climatology::synthetic()).unwrap()),
        ),
        (
            "ebm-v1",
            Box::new(make_ebm_env(EbmVariant::V1, Climatology::synthetic()).unwrap()),
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut n_arch = 0;
    for (name, env) in &envs {
        for arch in ["optim-L", "homo-64L"] {
            let cfg = hyper(&format!("{name}-{arch}"), Algo::Tqc);
            let (o, a) = (env.obs_dim(), env.action_dim());
            let with = |input: usize, output: usize| {
                let mut s = vec![input];
                s.extend(&cfg.hidden);
                s.push(output);
                s
            };
            for sizes in [
                with(o, a),
                with(o, 2 * a),
                with(o + a, 1),
                with(o + a, cfg.n_quantiles),
                with(o, 1),
            ] {
                worst = worst.max(gradient_check(&sizes, n_arch as u64)?);
                n_arch += 1;
            }
        }
    }
    ensure(worst <= 1e-4, || format!("finite-difference mismatch {worst:e}"))?;

    let grid = LatGrid::standard();
    let mut rng = seeded_rng(5);
    let mut leak: f64 = 0.0;
    for _ in 0..50 {
        let t: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-40.0..40.0)).collect();
        let d = rng.random_range(0.55..0.65);
        let tend = diffusion(&t, d, &grid);
        let net: f64 = tend.iter().zip(grid.cos_centers()).map(|(x, c)| x * c).sum();
        let scale: f64 = tend.iter().zip(grid.cos_centers()).map(|(x, c)| (x * c).abs()).sum();
        leak = leak.max(net.abs() / scale);
    }
    ensure(leak <= 1e-10, || format!("diffusion leaks {leak:e}"))?;

    let col = ColumnGrid::standard();
    let mut drift: f64 = 0.0;
    for _ in 0..200 {
        let temps: Vec<f64> = (0..N_LEV)
            .map(|k| 200.0 + 6.0 * k as f64 + rng.random_range(-25.0..25.0))
            .collect();
        let ts = rng.random_range(280.0..320.0);
        let gamma: Vec<f64> = (0..N_LEV).map(|_| rng.random_range(5.5..9.8)).collect();
        let before = column_enthalpy(&temps, ts, &col);
        let (adj, s) = convective_adjustment(&temps, ts, &gamma, &col).map_err(|e| e.to_string())?;
        drift = drift.max((column_enthalpy(&adj, s, &col) - before).abs() / before.abs());
        let (again, s2) = convective_adjustment(&adj, s, &gamma, &col).map_err(|e| e.to_string())?;
        let moved = again
            .iter()
            .zip(&adj)
            .map(|(a, b)| (a - b).abs())
            .fold((s2 - s).abs(), f64::max);
        ensure(moved < 1e-10, || {
            format!("second adjustment moved a level by {moved:e}")
        })?;
    }
    ensure(drift <= 1e-8, || format!("adjustment enthalpy drift {drift:e}"))?;
    Ok(format!(
        "{n_arch} networks, worst gradient error {worst:.1e}; diffusion leak {leak:.1e}; enthalpy drift {drift:.1e}"
    ))
}

fn micro_oracles() -> Outcome {
    let r = discounted_returns(&[1.0, 1.0, 1.0], 0.5);
    ensure(r == [1.75, 1.5, 1.0], || format!("discounted returns {r:?}"))?;

    let mut rng = seeded_rng(3);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..80);
        let pooled: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let keep = rng.random_range(1..n);
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        if mean(truncated_target_quantiles(&pooled, keep)) > mean(truncated_target_quantiles(&pooled, n)) {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} truncation violations"))?;

    for _ in 0..1000 {
        let adv = rng.random_range(-10.0..10.0);
        let (clipped, plain) = ppo_surrogate(1.0, adv, rng.random_range(0.05..0.5));
        ensure(clipped == plain, || format!("ratio 1: {clipped} vs {plain}"))?;
    }

    for _ in 0..500 {
        let n = rng.random_range(1..30);
        let gamma = rng.random_range(0.0..0.999);
        let rew: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let last = rng.random_range(-5.0..5.0);
        let mut nv = v[1..].to_vec();
        nv.push(last);
        let no = vec![false; n];
        let td = gae(&rew, &v, &nv, &no, &no, gamma, 0.0);
        for t in 0..n {
            let want = rew[t] + gamma * nv[t] - v[t];
            ensure((td[t] - want).abs() < 1e-12, || {
                format!("λ=0 step {t}: {} vs {want}", td[t])
            })?;
        }
        let mc = gae(&rew, &v, &nv, &no, &no, gamma, 1.0);
        for t in 0..n {
            let ret: f64 = rew[t..]
                .iter()
                .enumerate()
                .map(|(k, r)| gamma.powi(k as i32) * r)
                .sum::<f64>()
                + gamma.powi((n - t) as i32) * last;
            let want = ret - v[t];
            ensure((mc[t] - want).abs() < 1e-9, || {
                format!("λ=1 step {t}: {} vs {want}", mc[t])
            })?;
        }
    }

    let mut buffer = ReplayBuffer::new(20);
    for i in 0..20 {
        buffer.push(Transition {
            state: vec![i as f64],
            action: vec![0.0],
            reward: 0.0,
            next_state: vec![0.0],
            done: false,
        });
    }
    let mut counts = [0usize; 20];
    for _ in 0..5_000 {
        for i in buffer.sample_indices(16, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = 5_000.0 * 16.0 / 20.0;
    let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(chi2);
    ensure(p > 0.01, || format!("replay χ² {chi2:.1}, p {p:.4}"))?;
    Ok(format!("truncation 0/10000 violations; replay χ² p = {p:.3}"))
}

#[allow(clippy::approx_constant)]
fn evaluation_suite() -> Outcome {
    let table = [
        ("scbc-v0", -0.25),
        ("scbc-v1", -2.718),
        ("scbc-v2", -(160.0 + 2.718)),
        ("rce-v0", -43900.0),
        ("rce17-v0", -43700.0),
        ("rce17-v1", -43650.0),
        ("ebm-v0", -10000.0),
        ("ebm-v1", -30000.0),
        ("ebm-v2", -30000.0),
        ("ebm-v3", -30000.0),
    ];
    for (env, want) in table {
        ensure(threshold(env) == Some(want), || {
            format!("{env}: {:?} != {want}", threshold(env))
        })?;
    }

    // steps: a 3000, b 1000, c never -> ranks 2, 1, 3
    // variance: a 0.5, b 0.5, c none -> 1.5, 1.5, 3
    // delta: a 4, b -1, c 4 -> 1.5, 3, 1.5; b is penalised
    let rec = |n, var, delta, penalty| MetricRecord {
        n_to_threshold: n,
        var_after_threshold: var,
        asymptotic_delta: delta,
        penalty,
    };
    let rows = composite_rank(&[
        ("a".into(), rec(Some(3000), Some(0.5), 4.0, false)),
        ("b".into(), rec(Some(1000), Some(0.5), -1.0, true)),
        ("c".into(), rec(None, None, 4.0, false)),
    ])
    .map_err(|e| e.to_string())?;
    let sums: Vec<(&str, f64)> = rows.iter().map(|r| (r.name.as_str(), r.rank_sum)).collect();
    ensure(sums == [("a", 5.0), ("b", 6.5), ("c", 7.5)], || {
        format!("composite ranks {sums:?}")
    })?;

    let grid = LatGrid::standard();
    let bands = ZonalBands::standard(&grid);
    let mut rng = seeded_rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t: Vec<f64> = (0..96).map(|_| rng.random_range(-40.0..40.0)).collect();
        let o: Vec<f64> = (0..96).map(|_| rng.random_range(-40.0..40.0)).collect();
        let got = area_wrmse(&t, &o, &bands).map_err(|e| e.to_string())?;
        for (b, r) in bands.ranges.iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for j in r.clone() {
                let w = grid.centers_deg()[j].to_radians().cos();
                num += w * (t[j] - o[j]) * (t[j] - o[j]);
                den += w;
            }
            worst = worst.max((got[b] - (num / den).sqrt()).abs());
        }
    }
    ensure(worst <= 1e-12, || {
        format!("area_wrmse differs from oracle by {worst:e}")
    })?;
    Ok(format!(
        "thresholds exact; ranks {sums:?}; area_wrmse max error {worst:.1e}"
    ))
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let checks: [Check; 9] = [
        ("scbc_fixed_points", scbc_fixed_points),
        ("scbc_control_law", scbc_control_law),
        ("scbc_thresholds", scbc_thresholds),
        ("ebm_baseline_and_skill", ebm_skill),
        ("federated_convergence", federated_convergence),
        ("fedavg_invariants", fedavg_invariants),
        ("numerical_kernels", numerical_kernels),
        ("micro_oracles", micro_oracles),
        ("evaluation_suite", evaluation_suite),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
