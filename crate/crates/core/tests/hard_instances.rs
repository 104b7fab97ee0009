//! Instances that defeat the plain solver paths.

use gapcal_core::model::Instance;
use gapcal_core::solvers::{fixed_point_residual, solve, verify_solution, Problem, SolverConfig};

/// Stiff fixed point: a one-ulp change of the largest intensity moves the
/// fixed-point map by far more than the tolerance.
const STIFF: &str = r#"{"states":[-0.29600140157716304,1.099111957359408,3.030051475779692,5.010181447521048,5.728878733384679,5.943927798870382,7.1453988030671,8.771851189900556,10.529099739827103],"probs":[0.055107384550063636,0.19255249862883345,0.11977236614105018,0.16227044037131635,0.1941990717491207,0.11367337115427298,0.04014760569403595,0.0802729139866081,0.04200434772469852],"drift":[-0.1575905022209495,0.46509316066900835,0.4039919820536065,0.9634304334734579,-0.5034544785933329,-0.4063648602899848,0.14694644781009042],"killing":[0.6097929539373568,0.6027373791283948,1.0064528425190735,0.10219532940223708,0.24863722457616388,1.6217056044039064,1.88360461895864],"t":0.1,"law":{"kind":"gamma","r":8}}"#;

/// Heavy killing: Newton from the exponential solution diverges for every
/// stage count, so the solution is reached by continuation in the killing.
const HEAVY_KILLING: &str = r#"{"states":[0.21443373309012514,0.8606286677196355,2.4235958582895885,3.3704280438351475,4.275251716427677,6.149675348043997,7.371898969347404,9.298894284768604,10.302122810997872],"probs":[0.06245507047174449,0.07242930689818634,0.1723629087190147,0.22366963568884957,0.13945630321029187,0.08522210823894366,0.028840335531313276,0.09572378399904428,0.11984054724261184],"drift":[1.3927554709179049,0.24052832103327584,0.6793524430055089,0.00714438227385063,0.044541998276650355,0.10046954985701331,0.0024345434582267525],"killing":[1.9648548641097063,0.786562885756191,1.6024105108875375,0.29025797456351254,1.434541507141168,1.245148239283063,1.6542688516132311],"t":1.0,"law":{"kind":"gamma","r":4}}"#;

fn check(json: &str, r: u32) {
    let inst: Instance = serde_json::from_str(json).unwrap();
    let sol = solve(&inst, &SolverConfig::default()).unwrap();
    let pb = Problem::new(&inst, 0.25).unwrap();
    assert!(fixed_point_residual(&pb, &sol.lambda, r, inst.law.t) < 1e-8);
    let rep = verify_solution(&inst, &sol, None, 1e-8).unwrap();
    assert!(rep.passed, "deviation {}", rep.deviation);
}

#[test]
fn stiff_fixed_point() {
    check(STIFF, 8);
}

#[test]
fn heavy_killing() {
    check(HEAVY_KILLING, 4);
}

#[test]
fn heavy_killing_fixed_time() {
    let mut inst: Instance = serde_json::from_str(HEAVY_KILLING).unwrap();
    inst.law = gapcal_core::model::TimeLaw::deterministic(1.0);
    let sol = solve(&inst, &SolverConfig::default()).unwrap();
    assert!(sol.diagnostics.converged && sol.diagnostics.residual < 1e-6);
}
