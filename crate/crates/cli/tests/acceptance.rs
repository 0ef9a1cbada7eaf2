//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and a
//! closing count. With `ODTR_ACCEPTANCE_STRICT=1` any failure also makes the
//! process exit nonzero.
//!
//! Set `ODTR_ACCEPTANCE_SMOKE=1` to run the simulation criteria with 20
//! replications; in that mode only their orderings are checked.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use odtr::candidates::{union_candidates, CandidateOutput};
use odtr::direct::{fit_owl, iptw_misclassification_risk, OwlSpec};
use odtr::linalg::expit;
use odtr::nuisance::{fit_treatment_mechanism, pseudo_outcome_value};
use odtr::simulation::{ExperimentReport, MethodSummary};
use odtr::superlearner::combine;
use odtr::{
    dgp_sample, make_folds, monte_carlo_truth, rng, run_experiment, valid_configs, CandidatePool, Dataset, Dgp,
    DgpSpec, EnsembleConfig, EvalSample, ExperimentSpec, Library, Metalearner, RiskKind, TmleEvaluator,
};
use rand::Rng;

const SEED: u64 = 1;
const TRUTH_DRAWS: usize = 1_000_000;
const TRUTH_TOL: f64 = 0.003;
const PHI_0_1: f64 = 0.539827837;
const SIM_N: usize = 1000;
const SIM_REPS: usize = 200;
const SMOKE_REPS: usize = 20;
const ML_ACCURACY_FLOOR: f64 = 0.68;
const PARAMETRIC_ACCURACY_CEILING: f64 = 0.62;
const DGP2_PARAMETRIC_TARGET: f64 = 0.907;
const DGP2_PARAMETRIC_TOL: f64 = 0.04;
const DOMINANCE_DATASETS: usize = 50;
const DOMINANCE_N: usize = 200;
const SCORE_TOL: f64 = 1e-8;
const DR_N: usize = 100_000;
const DR_TOL: f64 = 0.02;
const OWL_DATASETS: usize = 20;
const OWL_N: usize = 40;
const OWL_GAP: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| !v.is_empty() && v != "0")
}

fn smoke() -> bool {
    flag("ODTR_ACCEPTANCE_SMOKE")
}

fn reps() -> usize {
    if smoke() {
        SMOKE_REPS
    } else {
        SIM_REPS
    }
}

fn report(id: u32, name: &str, started: Instant, o: &Outcome) {
    let mut out = std::io::stdout().lock();
    let tag = if o.pass { "PASS" } else { "FAIL" };
    writeln!(out, "{tag} [{id:>2}] {name} ({:.1}s): {}", started.elapsed().as_secs_f64(), o.detail).unwrap();
    out.flush().unwrap();
}

fn truth_constants() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let table = [(Dgp::One, 0.5626, 0.550, 0.4638, 0.4643), (Dgp::Two, 0.5595, 0.540, 0.5152, 0.5000)];
    for (dgp, opt_value, opt_frac, treat_all, treat_none) in table {
        let opt = monte_carlo_truth(dgp, |w| dgp.optimal_assignment(w), TRUTH_DRAWS, SEED).unwrap();
        let all = monte_carlo_truth(dgp, |_| 1, TRUTH_DRAWS, SEED).unwrap();
        let none = monte_carlo_truth(dgp, |_| 0, TRUTH_DRAWS, SEED).unwrap();
        for (label, got, want) in [
            ("E[Y_d*]", opt.value, opt_value),
            ("E[d*]", opt.fraction_treated, opt_frac),
            ("E[Y_1]", all.value, treat_all),
            ("E[Y_0]", none.value, treat_none),
        ] {
            let ok = (got - want).abs() <= TRUTH_TOL;
            pass &= ok;
            lines.push(format!("dgp{dgp} {label}={got:.4} (want {want}{})", if ok { "" } else { " !" }));
        }
    }
    outcome(pass, lines.join(", "))
}

fn closed_form_rule() -> Outcome {
    let mut rng = rng::stream(SEED, "acceptance-closed-form", &[]);
    let mut disagreements = 0usize;
    for _ in 0..TRUTH_DRAWS {
        let w: Vec<f64> = (0..4).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let by_blip = u8::from(Dgp::Two.true_blip(&w) > 0.0);
        let closed = u8::from(w[0] > -0.1);
        disagreements += usize::from(by_blip != closed);
    }
    let t = monte_carlo_truth(Dgp::Two, |w| u8::from(w[0] > -0.1), TRUTH_DRAWS, SEED).unwrap();
    let ok = disagreements == 0 && (t.fraction_treated - PHI_0_1).abs() <= TRUTH_TOL;
    outcome(
        ok,
        format!(
            "blip-sign vs W1 > -0.1 disagreements {disagreements}; fraction treated {:.4} (Phi(0.1) = {PHI_0_1:.4})",
            t.fraction_treated
        ),
    )
}

fn experiment(dgp: Dgp, configs: Vec<EnsembleConfig>) -> ExperimentReport {
    let spec = ExperimentSpec { dgp, n: SIM_N, reps: reps(), configs, seed: SEED, eval: EvalSample::default() };
    run_experiment(&spec).expect("experiment runs")
}

fn summary<'a>(r: &'a ExperimentReport, c: &EnsembleConfig) -> &'a MethodSummary {
    r.summary(&c.label()).expect("configured method")
}

fn dgp1_ordering(r: &ExperimentReport) -> Outcome {
    let mut ml = Vec::new();
    let mut parametric = Vec::new();
    for c in valid_configs() {
        let s = summary(r, &c);
        if c.library.has_ml() {
            ml.push((c.label(), s.mean_accuracy));
        } else {
            parametric.push((c.label(), s.mean_accuracy));
        }
    }
    let ml_min = ml.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let par_max = parametric.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let failures: usize = r.summaries.iter().map(|s| s.failed).sum();
    let pass =
        if smoke() { ml_min > par_max } else { ml_min >= ML_ACCURACY_FLOOR && par_max <= PARAMETRIC_ACCURACY_CEILING };
    outcome(
        pass,
        format!(
            "{} reps; ML-containing accuracy min {ml_min:.4} (floor {ML_ACCURACY_FLOOR}), parametric-only max {par_max:.4} \
             (ceiling {PARAMETRIC_ACCURACY_CEILING}); failed fits {failures}",
            r.reps
        ),
    )
}

fn dgp2_ordering() -> Outcome {
    let configs: Vec<EnsembleConfig> = [Library::ParametricBlip, Library::ParametricPlusMlBlip, Library::MlBlip]
        .into_iter()
        .map(|l| EnsembleConfig::new(l, Metalearner::Discrete, RiskKind::Mse))
        .collect();
    let r = experiment(Dgp::Two, configs.clone());
    let acc: Vec<f64> = configs.iter().map(|c| summary(&r, c).mean_accuracy).collect();
    let ordered = acc[0] > acc[1] && acc[1] > acc[2];
    let near = (acc[0] - DGP2_PARAMETRIC_TARGET).abs() <= DGP2_PARAMETRIC_TOL;
    let pass = if smoke() { ordered } else { ordered && near };
    outcome(
        pass,
        format!(
            "{} reps; discrete/mse accuracy parametric {:.4} > parametric+ML {:.4} > ML {:.4}: {ordered}; \
             parametric within {DGP2_PARAMETRIC_TOL} of {DGP2_PARAMETRIC_TARGET}: {near}",
            r.reps, acc[0], acc[1], acc[2]
        ),
    )
}

fn risk_contrast(r: &ExperimentReport) -> Outcome {
    let eyd = summary(
        r,
        &EnsembleConfig::new(Library::ParametricPlusMlBlip, Metalearner::Discrete, RiskKind::MeanOutcomeUnderRule),
    );
    let mse = summary(r, &EnsembleConfig::new(Library::ParametricPlusMlBlip, Metalearner::Discrete, RiskKind::Mse));
    outcome(
        eyd.mean_regret > mse.mean_regret,
        format!("{} reps; mean regret E[Yd] risk {:.5} vs MSE risk {:.5}", r.reps, eyd.mean_regret, mse.mean_regret),
    )
}

fn small_dataset(k: usize) -> Dataset {
    let dgp = if k.is_multiple_of(2) { Dgp::One } else { Dgp::Two };
    dgp_sample(DgpSpec { dgp, n: DOMINANCE_N, seed: rng::derive_seed(SEED, "acceptance-small", &[k as u64]) }).unwrap()
}

/// Criteria 6 and 7 share the pooled fits of the same small datasets.
fn dominance_and_score() -> (Outcome, Outcome) {
    let continuous: Vec<EnsembleConfig> =
        valid_configs().into_iter().filter(|c| c.metalearner != Metalearner::Discrete).collect();
    let mut ensembles = 0usize;
    let mut dominance_violations = Vec::new();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut rules_checked = 0usize;
    let mut worst_score = 0.0f64;
    for k in 0..DOMINANCE_DATASETS {
        let data = small_dataset(k);
        let seed = rng::derive_seed(SEED, "acceptance-small-fit", &[k as u64]);
        let folds = make_folds(data.n(), 10, seed).unwrap();
        let specs = union_candidates(&Library::ALL, data.p());
        let pool = CandidatePool::build(&data, folds, &specs, seed).unwrap();
        for c in &continuous {
            let fit = pool.fit(c.with_seed(seed)).unwrap();
            ensembles += 1;
            let best_vertex = fit.candidate_cv_risks.iter().copied().fold(f64::INFINITY, f64::min);
            worst_margin = worst_margin.max(fit.cv_risk - best_vertex);
            if fit.cv_risk > best_vertex + 1e-12 {
                dominance_violations.push(format!("dataset {k} {}: {} > {}", c.label(), fit.cv_risk, best_vertex));
            }
        }
        let tmle = TmleEvaluator::new(pool.cv());
        let mut rules: Vec<Vec<u8>> = pool.predictions(pool.names()).rule;
        for c in &continuous {
            let fit = pool.fit(c.with_seed(seed)).unwrap();
            let members = pool.predictions(&fit.candidate_names);
            let outputs: Vec<CandidateOutput> =
                members.blip.into_iter().zip(members.rule).map(|(blip, rule)| CandidateOutput { blip, rule }).collect();
            let (cv_rule, _) = combine(c.metalearner, &fit.alpha, &outputs).unwrap();
            rules.push(cv_rule.into_inner());
        }
        for rule in &rules {
            for f in tmle.evaluate_detailed(rule).folds {
                worst_score = worst_score.max(f.score.abs());
            }
            rules_checked += 1;
        }
    }
    let dominance = outcome(
        dominance_violations.is_empty(),
        format!(
            "{ensembles} continuous ensembles on {DOMINANCE_DATASETS} datasets (n = {DOMINANCE_N}); \
             max(cv_risk - best vertex risk) = {worst_margin:.3e}; violations {:?}",
            dominance_violations
        ),
    );
    let score = outcome(
        worst_score < SCORE_TOL,
        format!("{rules_checked} rules x 10 folds; max |mean H (Y - Q_eps)| = {worst_score:.3e} (tol {SCORE_TOL:e})"),
    );
    (dominance, score)
}

fn double_robustness() -> Outcome {
    let data = dgp_sample(DgpSpec { dgp: Dgp::Two, n: DR_N, seed: SEED }).unwrap();
    let ybar = data.y().iter().sum::<f64>() / data.n() as f64;
    let w1: Vec<f64> = data.w().column(0).iter().copied().collect();
    let mut sorted = w1.clone();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..10).map(|k| sorted[k * sorted.len() / 10]).collect();
    let mut sum_d = [0.0; 10];
    let mut sum_b = [0.0; 10];
    let mut count = [0usize; 10];
    for i in 0..data.n() {
        let k = edges.iter().filter(|&&e| w1[i] >= e).count();
        sum_d[k] += pseudo_outcome_value(data.a()[i], data.y()[i], 0.5, ybar, ybar, ybar);
        sum_b[k] += Dgp::Two.true_blip(&data.row(i));
        count[k] += 1;
    }
    let gaps: Vec<f64> = (0..10).map(|k| (sum_d[k] - sum_b[k]) / count[k] as f64).collect();
    let worst = gaps.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:+.4}")).collect();
    outcome(worst <= DR_TOL, format!("n = {DR_N}; decile gaps [{}]; max {worst:.4} (tol {DR_TOL})", shown.join(" ")))
}

fn owl_brute_force() -> Outcome {
    let mut compared = 0usize;
    let mut mismatches = Vec::new();
    for k in 0..OWL_DATASETS {
        let mut rng = rng::stream(SEED, "acceptance-owl", &[k as u64]);
        let effect: f64 = rng.gen_range(-2.5..2.5);
        let modifier: f64 = rng.gen_range(-3.0..3.0);
        let mut w = DMatrix::zeros(OWL_N, 1);
        let mut a = Vec::with_capacity(OWL_N);
        let mut y = Vec::with_capacity(OWL_N);
        for i in 0..OWL_N {
            let wi = f64::from(u8::from(rng.gen::<f64>() < 0.5));
            let ai = u8::from(rng.gen::<f64>() < 0.5);
            let p = expit(-0.3 + 0.5 * wi + f64::from(ai) * (effect + modifier * wi));
            w[(i, 0)] = wi;
            a.push(ai);
            y.push(f64::from(u8::from(rng.gen::<f64>() < p)));
        }
        let data = Dataset::from_parts(w, a, y).unwrap();
        let g = fit_treatment_mechanism(&data).unwrap();
        let mut risks: Vec<((u8, u8), f64)> = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .into_iter()
            .map(|(d0, d1)| {
                let rule: Vec<u8> = (0..OWL_N).map(|i| if data.w()[(i, 0)] == 0.0 { d0 } else { d1 }).collect();
                ((d0, d1), iptw_misclassification_risk(&data, &g, &rule))
            })
            .collect();
        risks.sort_by(|x, y| x.1.total_cmp(&y.1));
        if risks[1].1 - risks[0].1 <= OWL_GAP {
            continue;
        }
        compared += 1;
        let fit = fit_owl(&OwlSpec::default(), &data, &g, rng::derive_seed(SEED, "owl", &[k as u64])).unwrap();
        let at = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let got = fit.model.predict(&at).into_inner();
        if (got[0], got[1]) != risks[0].0 {
            mismatches.push(format!(
                "dataset {k}: owl {:?} vs best {:?} (gap {:.3})",
                got,
                risks[0].0,
                risks[1].1 - risks[0].1
            ));
        }
    }
    outcome(
        mismatches.is_empty() && compared > 0,
        format!("{compared} of {OWL_DATASETS} datasets had a gap > {OWL_GAP}; mismatches {mismatches:?}"),
    )
}

fn determinism() -> Outcome {
    let tmp = std::env::temp_dir().join(format!("odtr-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let run = |threads: &str, dir: &str| -> Result<(), String> {
        let cfg = tmp.join(format!("{dir}.json"));
        let body = format!(
            r#"{{"mode":"simulate","dgp":1,"n":200,"reps":4,"seed":{SEED},"folds":5,"eval_n":2000,"output_dir":{:?}}}"#,
            tmp.join(dir)
        );
        std::fs::write(&cfg, body).map_err(|e| e.to_string())?;
        let o = Command::new(env!("CARGO_BIN_EXE_odtr"))
            .args(["--threads", threads, "simulate", "--config"])
            .arg(&cfg)
            .env_remove("ODTR_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        if o.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&o.stderr).into_owned())
        }
    };
    let compare = |a: &Path, b: &Path| -> Vec<String> {
        ["summary.csv", "replications.csv", "manifest.json"]
            .into_iter()
            .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
            .map(String::from)
            .collect()
    };
    let result = run("1", "one").and_then(|_| run("2", "two"));
    let o = match result {
        Err(e) => outcome(false, format!("simulate failed: {e}")),
        Ok(()) => {
            let differing = compare(&tmp.join("one"), &tmp.join("two"));
            outcome(
                differing.is_empty(),
                format!("all 19 configurations, 4 reps, --threads 1 vs 2; differing files {differing:?}"),
            )
        }
    };
    let _ = std::fs::remove_dir_all(&tmp);
    o
}

fn check(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    report(id, name, t, &o);
    o.pass
}

fn main() {
    let mode = if smoke() { "smoke" } else { "full" };
    println!("acceptance suite ({mode} mode, seed {SEED})");
    let mut results = Vec::new();
    results.push(check(1, "truth constants", truth_constants));
    results.push(check(2, "closed-form DGP-2 rule", closed_form_rule));

    let t = Instant::now();
    let dgp1 = experiment(Dgp::One, valid_configs());
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "      DGP-1 study: {} configurations x {} reps in {:.0}s",
        valid_configs().len(),
        dgp1.reps,
        t.elapsed().as_secs_f64()
    )
    .unwrap();
    for s in &dgp1.summaries {
        writeln!(out, "        {:<58} accuracy {:.4} regret {:+.5}", s.method, s.mean_accuracy, s.mean_regret).unwrap();
    }
    drop(out);
    results.push(check(3, "DGP-1 ML vs parametric accuracy", || dgp1_ordering(&dgp1)));
    results.push(check(4, "DGP-2 discrete/MSE library ordering", dgp2_ordering));
    results.push(check(5, "discrete risk contrast on DGP 1", || risk_contrast(&dgp1)));
    let t = Instant::now();
    let (dominance, score) = dominance_and_score();
    report(6, "vertex dominance", t, &dominance);
    report(7, "TMLE score equation", t, &score);
    results.extend([dominance.pass, score.pass]);
    results.push(check(8, "double robustness by decile", double_robustness));
    results.push(check(9, "OWL brute-force agreement", owl_brute_force));
    results.push(check(10, "determinism across thread counts", determinism));

    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria passed, {failed} failed", results.len() - failed, results.len());
    if failed > 0 && flag("ODTR_ACCEPTANCE_STRICT") {
        std::process::exit(1);
    }
}
