//! Acceptance run: every criterion at its stated tolerance and time budget,
//! one PASS/FAIL line each. Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gapcal_core::atomize::{refinement_sweep, Component, ContinuousSpec, FReading, FieldTable, Mixture, Primitive};
use gapcal_core::chain::{resolvent_from_rates, resolvent_inverse_power, simulate, MixtureState};
use gapcal_core::model::{Instance, TimeLaw};
use gapcal_core::random::RandomFamily;
use gapcal_core::solvers::{fixed_point_residual, max_kill_rate, solve, verify_solution, Problem, SolverConfig};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ex_a() -> Instance {
    Instance::new(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25], vec![0.0], vec![0.0], TimeLaw::exponential(1.0))
}

fn ex_b() -> Instance {
    Instance::new(vec![0.0, 1.0, 2.0], vec![0.25, 0.5, 0.25], vec![0.0], vec![1.0], TimeLaw::exponential(1.0))
}

const TS: [f64; 3] = [0.1, 1.0, 10.0];

fn family(n: usize, seed: u64, fam: &RandomFamily, law: impl Fn(usize) -> TimeLaw) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| fam.sample(&mut rng, law(i))).collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn closed_form() -> Check {
    let inst = ex_b();
    let sol = solve(&inst, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let got = [sol.lambda[1], sol.alpha, sol.beta, sol.x0];
    let want = [1.0, 2.0 / 3.0, 1.0, 0.0];
    let err = sup_diff(&got, &want);
    ensure(err < 1e-10, || format!("(lambda_2, alpha, beta, x0) = {got:?}"))?;
    let oracle = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0];
    let rates = inst.rates().map_err(|e| e.to_string())?;
    let n = resolvent_from_rates(&rates, &sol.lambda, 1.0).map_err(|e| e.to_string())?;
    let res = resolvent_inverse_power(&n, &sol.start(), 1).map_err(|e| e.to_string())?.sup_distance(&oracle);
    ensure(res < 1e-12, || format!("resolvent marginal off by {res:e}"))?;
    let mc = simulate(&inst, &sol.lambda, &sol.start(), 1_000_000, 20240601).map_err(|e| e.to_string())?;
    let tv = mc.tv_distance(&oracle);
    ensure(tv < 5e-3, || format!("Monte Carlo TV {tv:e}"))?;
    Ok(format!("solution error {err:.1e}, resolvent {res:.1e}, MC TV {tv:.1e}"))
}

fn exponential_sweep() -> Check {
    let insts = family(200, 2, &RandomFamily::default(), |i| TimeLaw::exponential(TS[i % 3]));
    let mut worst: f64 = 0.0;
    for (i, inst) in insts.iter().enumerate() {
        let sol = solve(inst, &SolverConfig::default()).map_err(|e| format!("instance {i}: {e}"))?;
        let rep = verify_solution(inst, &sol, None, 1e-10).map_err(|e| format!("instance {i}: {e}"))?;
        let fwd = rep.forward_residual.unwrap_or(f64::NAN);
        ensure(fwd < 1e-10, || format!("instance {i}: residual {fwd:e}"))?;
        worst = worst.max(fwd);
    }
    Ok(format!("200 instances, worst residual {worst:.1e}"))
}

fn staged_fixed_point() -> Check {
    let rs = [2, 4, 8];
    let insts = family(200, 3, &RandomFamily::default(), |i| TimeLaw::gamma(TS[i % 3], rs[(i / 3) % 3]));
    let cfg = SolverConfig::default();
    let (mut fp_worst, mut marg_worst, mut one_worst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (i, inst) in insts.iter().enumerate() {
        let r = inst.law.stages().unwrap_or(1);
        let t = inst.law.t;
        let sol = solve(inst, &cfg).map_err(|e| format!("instance {i}: {e}"))?;
        let pb = Problem::new(inst, cfg.anchor_quantile).map_err(|e| e.to_string())?;
        let fp = fixed_point_residual(&pb, &sol.lambda, r, t);
        ensure(fp < 1e-8, || format!("instance {i} (r={r}, t={t}): fixed-point residual {fp:e}"))?;
        let rep = verify_solution(inst, &sol, None, 1e-8).map_err(|e| e.to_string())?;
        ensure(rep.passed, || format!("instance {i}: marginal deviation {:e}", rep.deviation))?;
        let kl = max_kill_rate(&pb.rates, &sol.lambda);
        let bound = (1.0 + kl * t / r as f64).powi(-(r as i32));
        ensure(sol.alpha >= bound * (1.0 - 1e-12), || format!("instance {i}: alpha {} below {bound}", sol.alpha))?;
        fp_worst = fp_worst.max(fp);
        marg_worst = marg_worst.max(rep.deviation);

        let one = solve(&inst.with_law(TimeLaw::gamma(t, 1)), &cfg).map_err(|e| e.to_string())?;
        let exp = solve(&inst.with_law(TimeLaw::exponential(t)), &cfg).map_err(|e| e.to_string())?;
        let d = sup_diff(&one.lambda, &exp.lambda).max((one.alpha - exp.alpha).abs());
        ensure(d < 1e-10, || format!("instance {i}: r = 1 differs from exponential by {d:e}"))?;
        one_worst = one_worst.max(d);
    }
    Ok(format!("200 instances, worst fixed point {fp_worst:.1e}, marginal {marg_worst:.1e}, r=1 gap {one_worst:.1e}"))
}

fn deterministic_time() -> Check {
    let fam = RandomFamily { m_max: 6, ..RandomFamily::default() };
    let mut insts = vec![ex_a().with_law(TimeLaw::deterministic(1.0)), ex_b().with_law(TimeLaw::deterministic(1.0))];
    insts.extend(family(50, 4, &fam, |i| TimeLaw::deterministic(TS[i % 3])));
    let cfg = SolverConfig::default();
    let mut worst: f64 = 0.0;
    for (i, inst) in insts.iter().enumerate() {
        let sol = solve(inst, &cfg).map_err(|e| format!("instance {i}: {e}"))?;
        let rep = verify_solution(inst, &sol, None, 1e-6).map_err(|e| e.to_string())?;
        ensure(rep.passed, || format!("instance {i}: residual {:e}", rep.deviation))?;
        let kl = max_kill_rate(&inst.rates().map_err(|e| e.to_string())?, &sol.lambda);
        let bound = (-inst.law.t * kl).exp();
        ensure(sol.alpha >= bound * (1.0 - 1e-12), || format!("instance {i}: alpha {} below {bound}", sol.alpha))?;
        worst = worst.max(rep.deviation);
    }
    Ok(format!("{} instances, worst residual {worst:.1e}", insts.len()))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn drift_equivalence() -> Check {
    let insts = family(50, 5, &RandomFamily::default(), |i| TimeLaw::exponential(TS[i % 3]));
    let mut worst: f64 = 0.0;
    let mut anchor_worst: f64 = 0.0;
    for (i, inst) in insts.iter().enumerate() {
        let cfg = SolverConfig::default();
        let sol = solve(inst, &cfg).map_err(|e| e.to_string())?;
        let kappa = sol.kappa.clone();
        let eps = |j: usize| kappa[j] - kappa[j - 1];
        let kt = inst.rates().map_err(|e| e.to_string())?.kt;
        let killing = (1..inst.m() - 1).map(|j| kt[j] / (eps(j + 1) * eps(j))).collect();
        let free = Instance::new(kappa.clone(), inst.pmf.0.clone(), vec![0.0; inst.m() - 2], killing, inst.law);
        let fsol = solve(&free, &cfg).map_err(|e| format!("instance {i} drift-free: {e}"))?;
        let d = sol.lambda.iter().zip(&fsol.lambda).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
        ensure(d < 1e-10, || format!("instance {i}: lambda differs by {d:e}"))?;
        worst = worst.max(d);

        for q in [0.125, 0.375] {
            let other = solve(inst, &SolverConfig { anchor_quantile: q, ..cfg.clone() }).map_err(|e| e.to_string())?;
            ensure(other.l == sol.l, || format!("instance {i}: split index moves with anchor {q}"))?;
            let d = sol
                .lambda
                .iter()
                .zip(&other.lambda)
                .map(|(a, b)| rel(*a, *b))
                .chain([rel(sol.alpha, other.alpha), (sol.beta - other.beta).abs()])
                .fold(0.0, f64::max);
            ensure(d < 1e-10, || format!("instance {i}: anchor {q} changes the solution by {d:e}"))?;
            anchor_worst = anchor_worst.max(d);
        }
    }
    Ok(format!("50 instances, lambda gap {worst:.1e}, anchor gap {anchor_worst:.1e}"))
}

fn stochastic_inverse() -> Check {
    let fam = RandomFamily { m_max: 6, ..RandomFamily::default() };
    let insts = family(100, 6, &fam, |i| TimeLaw::exponential(TS[i % 3]));
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    use rand::Rng;
    let mut worst_sum: f64 = 0.0;
    for (i, inst) in insts.iter().enumerate() {
        let m = inst.m();
        let rates = inst.rates().map_err(|e| e.to_string())?;
        let mut lambda = vec![0.0; m];
        for l in &mut lambda[1..m - 1] {
            *l = rng.random_range(0.05..20.0);
        }
        let s = inst.law.t;
        let n = resolvent_from_rates(&rates, &lambda, s).map_err(|e| e.to_string())?;
        let floor: f64 = (1..m - 1).map(|j| rates.down[j] / (1.0 + rates.kt[j])).product();
        for p in [1, 2, 5] {
            for k in 0..m {
                let row = resolvent_inverse_power(&n, &MixtureState::point(m, k), p).map_err(|e| e.to_string())?;
                ensure(row.0.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)), || format!("instance {i}: entry outside [0, 1]"))?;
                let sum_err = (row.total() - 1.0).abs();
                ensure(sum_err < 1e-10, || format!("instance {i}: row sums to 1 + {sum_err:e}"))?;
                ensure(row.cemetery() < 1.0 - floor, || format!("instance {i}: cemetery {} above bound {}", row.cemetery(), 1.0 - floor))?;
                worst_sum = worst_sum.max(sum_err);
            }
        }
        let j = 1 + i % (m - 2);
        let mut cols = vec![];
        for big in [1e2, 1e4, 1e6] {
            let mut l = lambda.clone();
            l[j] = big;
            let n = resolvent_from_rates(&rates, &l, s).map_err(|e| e.to_string())?;
            let inv = n.restriction().lu().try_inverse().ok_or("singular restriction")?;
            cols.push(inv.column(j).amax());
        }
        ensure(cols.windows(2).all(|w| w[1] < w[0]), || format!("instance {i}: column {j} does not shrink: {cols:?}"))?;
        ensure(cols[2] < 1e-3 * cols[0], || format!("instance {i}: column {j} does not vanish: {cols:?}"))?;
    }
    Ok(format!("100 instances, worst row-sum error {worst_sum:.1e}"))
}

fn refinement() -> Check {
    let spec = ContinuousSpec {
        measure: Mixture(vec![Component { weight: 1.0, primitive: Primitive::Uniform { lo: 0.0, hi: 1.0 } }]),
        drift: FieldTable::default(),
        killing: FieldTable::default(),
        law: TimeLaw::deterministic(1.0),
    };
    let rep = refinement_sweep(&spec, 3, 6, &SolverConfig::default(), FReading::Literal).map_err(|e| e.to_string())?;
    for l in &rep.levels {
        ensure(l.converged && l.residual < 1e-6, || format!("level {}: residual {:e}", l.level, l.residual))?;
    }
    let sups: Vec<f64> = rep.discrepancies.iter().map(|d| d.sup).collect();
    ensure(rep.decreasing, || format!("discrepancies {sups:?}"))?;
    let worst = rep.levels.iter().map(|l| l.residual).fold(0.0, f64::max);
    Ok(format!("N = 3..6, worst residual {worst:.1e}, discrepancies {}", sups.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(" > ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Check); 7] = [
        ("closed-form instance", 5, closed_form),
        ("exponential exactness", 10, exponential_sweep),
        ("staged fixed point", 60, staged_fixed_point),
        ("deterministic time", 120, deterministic_time),
        ("drift equivalence", 60, drift_equivalence),
        ("stochastic inverse", 60, stochastic_inverse),
        ("refinement sweep", 300, refinement),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = run();
        let took = start.elapsed();
        if outcome.is_ok() && took > Duration::from_secs(*budget) {
            outcome = Err(format!("took {took:.2?}, budget {budget} s"));
        }
        match outcome {
            Ok(detail) => println!("PASS  {}. {name}: {detail} [{took:.2?}]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}. {name}: {detail} [{took:.2?}]", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
